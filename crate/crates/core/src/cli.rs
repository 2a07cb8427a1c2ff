//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or
//! configuration, 3 numeric failure or equivalence violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{
    bench_kernels, parse_grid, read_csv, render_table, write_csv, write_json, BenchOptions,
    Precision,
};
use crate::config::{build_stack, load_weights, ExperimentConfig};
use crate::data::{holdout_split, split_regime, Dataset, Regime, SplitTag};
use crate::error::Error;
use crate::pipeline::{
    evaluate, extract_features, load_checkpoint, pretrain, save_checkpoint, train_probe,
    Checkpoint, LayerRecord, RngState, Stack,
};
use crate::rules::Rule;
use crate::tensor::{set_threads, Tensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const THREADS_ENV: &str = "FASTHEBB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fasthebb",
    version,
    about = "Hebbian pretraining with batch-contracted update kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unsupervised Hebbian pretraining from a config file.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a linear probe on the labeled fraction of the training set.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Labeled percentage: 1, 2, 3, 4, 5, 10, 25 or 100.
        #[arg(long)]
        regime: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the checkpoint with the probe; defaults to `--ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-k accuracy of the probe on the test set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        topk: usize,
    },
    /// Time naive vs fast update kernels.
    Bench {
        /// Comma-separated `BxNxS` sizes.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["swta", "hpca", "both"], default_value = "both")]
        rule: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value = "f64")]
        precision: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Render a bench CSV as a table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteWeights | Error::EquivalenceViolation { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Runs the CLI with explicit arguments (the first is the program name) and
/// output streams, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let _ = write!(err, "{}", usage());
        return EXIT_USAGE;
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => set_threads(n),
            _ => {
                let _ = writeln!(
                    err,
                    "error: {THREADS_ENV} must be a positive integer, got {v:?}"
                );
                return EXIT_USAGE;
            }
        },
        Err(_) => set_threads(1),
    }
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn usage() -> String {
    use clap::CommandFactory;
    Cli::command().render_help().to_string()
}

type CliResult = crate::error::Result<i32>;

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Pretrain { config, out: path } => cmd_pretrain(&config, &path, out),
        Command::Probe {
            ckpt,
            regime,
            seed,
            out: path,
        } => cmd_probe(&ckpt, regime, seed, path.as_deref().unwrap_or(&ckpt), out),
        Command::Eval { ckpt, topk } => cmd_eval(&ckpt, topk, out),
        Command::Bench {
            grid,
            out: path,
            rule,
            reps,
            precision,
            seed,
            json,
        } => {
            let rules = match rule.as_str() {
                "both" => vec![Rule::Swta, Rule::Hpca],
                r => vec![r.parse()?],
            };
            let options = BenchOptions {
                rules,
                reps,
                precision: precision.parse::<Precision>()?,
                seed,
                ..BenchOptions::default()
            };
            let report = bench_kernels(&parse_grid(&grid)?, &options)?;
            write_csv(&path, &report.rows)?;
            if let Some(json) = json {
                write_json(json, &report)?;
            }
            let env = &report.environment;
            writeln!(
                out,
                "{} | {:?} | {} thread(s)",
                env.cpu, env.precision, env.threads
            )?;
            write!(out, "{}", render_table(&report.rows))?;
            Ok(verdict(report.all_equivalent(), out)?)
        }
        Command::Report { input } => {
            let rows = read_csv(&input)?;
            write!(out, "{}", render_table(&rows))?;
            Ok(verdict(rows.iter().all(|r| r.equiv_ok), out)?)
        }
    }
}

fn verdict(all_ok: bool, out: &mut dyn Write) -> std::io::Result<i32> {
    if all_ok {
        Ok(EXIT_OK)
    } else {
        writeln!(out, "equivalence check failed for at least one row")?;
        Ok(EXIT_NUMERIC)
    }
}

fn cmd_pretrain(
    config_path: &std::path::Path,
    ckpt: &std::path::Path,
    out: &mut dyn Write,
) -> CliResult {
    let config = ExperimentConfig::load(config_path)?;
    let (train, _) = config.load_data()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stack = build_stack(
        &config.layers,
        train.sample_shape(),
        &config.train,
        &mut rng,
    )?;
    let shuffle_seed: u64 = rng.gen();
    let (stack, report) = pretrain(stack, train.unlabeled(), &config.train, shuffle_seed)?;
    for epoch in &report.epochs {
        let metrics: Vec<String> = epoch
            .layer_metrics
            .iter()
            .map(|m| format!("{m:.6}"))
            .collect();
        writeln!(
            out,
            "epoch {:>3}  metric {}",
            epoch.epoch,
            metrics.join(" ")
        )?;
    }
    writeln!(out, "convergence epochs {:?}", report.convergence_epochs)?;
    let checkpoint = Checkpoint {
        layers: stack
            .hebb_layers()
            .map(|l| LayerRecord {
                rule: l.params.rule,
                weights: l.weights().clone(),
            })
            .collect(),
        probe: None,
        config: config.to_text()?,
        rng: RngState::capture(&rng),
    };
    save_checkpoint(ckpt, &checkpoint)?;
    writeln!(out, "wrote {}", ckpt.display())?;
    Ok(EXIT_OK)
}

/// Config, stack with the checkpoint weights, and the train/test data.
fn restore(
    checkpoint: &Checkpoint,
) -> crate::error::Result<(ExperimentConfig, Stack, Dataset, Dataset)> {
    let config = ExperimentConfig::parse(&checkpoint.config)?;
    let (train, test) = config.load_data()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stack = build_stack(
        &config.layers,
        train.sample_shape(),
        &config.train,
        &mut rng,
    )?;
    for (record, layer) in checkpoint.layers.iter().zip(stack.hebb_layers()) {
        if record.rule != layer.params.rule {
            return Err(Error::CorruptFile(
                "checkpoint rule does not match its config".into(),
            ));
        }
    }
    load_weights(
        &mut stack,
        checkpoint
            .layers
            .iter()
            .map(|l| l.weights.clone())
            .collect(),
    )?;
    Ok((config, stack, train, test))
}

fn features(stack: &Stack, ds: &Dataset, batch: usize) -> crate::error::Result<Option<Tensor>> {
    extract_features(stack, ds.unlabeled(), batch)
}

fn cmd_probe(
    ckpt: &std::path::Path,
    percent: u32,
    seed: u64,
    dest: &std::path::Path,
    out: &mut dyn Write,
) -> CliResult {
    let regime = Regime::new(percent, seed)?;
    let mut checkpoint = load_checkpoint(ckpt)?;
    let (config, stack, train, _) = restore(&checkpoint)?;
    let (fit, val) = holdout_split(
        &train,
        config.train.val_fraction,
        SplitTag::Val,
        config.seed,
    );
    let (labeled, _) = split_regime(&fit, &regime);
    let batch = config.train.batch_size;
    let Some(x) = features(&stack, &labeled, batch)? else {
        return Err(Error::EmptyLabeledSet);
    };
    let vx = features(&stack, &val, batch)?;
    let val_pair = vx.as_ref().map(|vx| (vx, val.labels()));
    let (probe, report) = train_probe(
        (&x, labeled.labels()),
        val_pair,
        train.class_count(),
        &config.train,
        seed,
    )?;
    writeln!(
        out,
        "labeled {} of {} ({}%), validation {}",
        labeled.len(),
        fit.len(),
        percent,
        val.len()
    )?;
    if let Some(acc) = report.val_accuracy.get(report.best_epoch) {
        writeln!(
            out,
            "best epoch {}  val accuracy {acc:.4}",
            report.best_epoch
        )?;
    }
    checkpoint.probe = Some(probe);
    save_checkpoint(dest, &checkpoint)?;
    writeln!(out, "wrote {}", dest.display())?;
    Ok(EXIT_OK)
}

fn cmd_eval(ckpt: &std::path::Path, k: usize, out: &mut dyn Write) -> CliResult {
    let checkpoint = load_checkpoint(ckpt)?;
    let Some(probe) = checkpoint.probe.clone() else {
        return Err(Error::Config(
            "checkpoint has no probe; run `probe` first".into(),
        ));
    };
    let (config, stack, _, test) = restore(&checkpoint)?;
    let Some(x) = features(&stack, &test, config.train.batch_size)? else {
        return Err(Error::Config("test set is empty".into()));
    };
    let acc = evaluate(&probe, &x, test.labels(), k)?;
    writeln!(
        out,
        "top-{k} accuracy {acc:.4} on {} test samples",
        test.len()
    )?;
    Ok(EXIT_OK)
}
