//! Naive vs fast kernel benchmark: median timings, metered temporaries and
//! an inline equivalence verdict per row.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{compute_update, LearningParams, Rule, UpdateImpl};
use crate::tensor::{relative_frobenius_error, threads, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Relative Frobenius tolerance for naive/fast agreement.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-4,
            Precision::F64 => 1e-10,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!(
                "precision must be f32 or f64, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub rule: Rule,
    #[serde(rename = "impl")]
    pub update_impl: UpdateImpl,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub reps: usize,
    pub median_ns: u64,
    pub peak_elems: usize,
    /// Naive median time over this row's median time.
    pub speedup: f64,
    pub equiv_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu: String,
    pub precision: Precision,
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn detect(precision: Precision) -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|text| {
                text.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|s| s.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu,
            precision,
            threads: threads(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn all_equivalent(&self) -> bool {
        self.rows.iter().all(|r| r.equiv_ok)
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub rules: Vec<Rule>,
    pub reps: usize,
    pub precision: Precision,
    pub seed: u64,
    pub eta: f64,
    pub temperature: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            rules: vec![Rule::Swta, Rule::Hpca],
            reps: 5,
            precision: Precision::F64,
            seed: 0,
            eta: 1e-2,
            temperature: 1.0,
        }
    }
}

/// Parses `"BxNxS,BxNxS,…"`.
pub fn parse_grid(spec: &str) -> Result<Vec<(usize, usize, usize)>> {
    spec.split(',')
        .map(|item| {
            let dims: Vec<usize> = item
                .trim()
                .split(['x', 'X'])
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad grid entry {item:?}, expected BxNxS")))?;
            match dims[..] {
                [b, n, s] if b > 0 && n > 0 && s > 0 => Ok((b, n, s)),
                _ => Err(Error::Config(format!(
                    "bad grid entry {item:?}, expected BxNxS"
                ))),
            }
        })
        .collect()
}

fn median(mut samples: Vec<u64>) -> u64 {
    samples.sort_unstable();
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2
    }
}

struct Timed<T: Element> {
    delta: Tensor<T>,
    peak: usize,
    median_ns: u64,
}

fn run<T: Element>(
    w: &Tensor<T>,
    x: &Tensor<T>,
    params: &LearningParams,
    form: UpdateImpl,
    reps: usize,
) -> Result<Timed<T>> {
    let warm = compute_update(w, x, params, form)?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let out = compute_update(w, x, params, form)?;
        times.push(start.elapsed().as_nanos() as u64);
        drop(out);
    }
    Ok(Timed {
        delta: warm.delta_w,
        peak: warm.peak_temp_elements,
        median_ns: if reps == 0 { 0 } else { median(times) },
    })
}

fn bench_case<T: Element>(
    rule: Rule,
    (b, n, s): (usize, usize, usize),
    options: &BenchOptions,
) -> Result<[BenchRow; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ ((b * 1_000_003 + n * 1009 + s) as u64));
    let w = Tensor::<f64>::randn([1, n, s], 1.0 / (s as f64).sqrt(), &mut rng)?.cast::<T>();
    let x = Tensor::<f64>::randn([b, 1, s], 1.0, &mut rng)?.cast::<T>();
    let params = LearningParams {
        rule,
        eta: options.eta,
        temperature: options.temperature,
        center_inputs: false,
    };
    let naive = run(&w, &x, &params, UpdateImpl::Naive, options.reps)?;
    let fast = run(&w, &x, &params, UpdateImpl::Fast, options.reps)?;
    let rel_err = relative_frobenius_error(&fast.delta, &naive.delta)?;
    let equiv_ok = rel_err <= options.precision.tolerance();
    let row = |form, t: &Timed<T>| BenchRow {
        rule,
        update_impl: form,
        b,
        n,
        s,
        reps: options.reps,
        median_ns: t.median_ns,
        peak_elems: t.peak,
        speedup: naive.median_ns as f64 / t.median_ns.max(1) as f64,
        equiv_ok,
    };
    Ok([row(UpdateImpl::Naive, &naive), row(UpdateImpl::Fast, &fast)])
}

/// Times both forms of every rule on every grid point. Each pair runs on
/// identical seeded inputs; the first call of each form is an untimed
/// warm-up whose output feeds the equivalence check.
pub fn bench_kernels(
    grid: &[(usize, usize, usize)],
    options: &BenchOptions,
) -> Result<BenchReport> {
    if options.reps < 5 {
        return Err(Error::Config(format!(
            "bench needs at least 5 reps, got {}",
            options.reps
        )));
    }
    let mut rows = Vec::new();
    for &rule in &options.rules {
        for &point in grid {
            let pair = match options.precision {
                Precision::F32 => bench_case::<f32>(rule, point, options)?,
                Precision::F64 => bench_case::<f64>(rule, point, options)?,
            };
            rows.extend(pair);
        }
    }
    Ok(BenchReport {
        environment: Environment::detect(options.precision),
        rows,
    })
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[BenchRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    reader
        .deserialize()
        .map(|row| row.map_err(csv_error))
        .collect()
}

pub fn write_json(path: impl AsRef<Path>, report: &BenchReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::CorruptFile(e.to_string())
    }
}

/// Fixed-width text table of bench rows.
pub fn render_table(rows: &[BenchRow]) -> String {
    let header = [
        "rule",
        "impl",
        "B",
        "N",
        "S",
        "reps",
        "median_ms",
        "peak_elems",
        "speedup",
        "equiv",
    ];
    let cells: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.rule.as_str().into(),
                r.update_impl.as_str().into(),
                r.b.to_string(),
                r.n.to_string(),
                r.s.to_string(),
                r.reps.to_string(),
                format!("{:.3}", r.median_ns as f64 / 1e6),
                r.peak_elems.to_string(),
                format!("{:.2}x", r.speedup),
                if r.equiv_ok { "ok" } else { "FAIL" }.into(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, fields: &[&str]| {
        let parts: Vec<String> = fields
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, w))| {
                if i < 2 {
                    format!("{f:<w$}")
                } else {
                    format!("{f:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    for row in &cells {
        let fields: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &fields);
    }
    out
}
