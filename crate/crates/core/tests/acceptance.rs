//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    abs_cosine, conv_oracle, flat, greedy_match_error, patch_rows, probe_accuracy, rel_frobenius,
    rows, second_moment_eigen,
};
use fasthebb::bench::{bench_kernels, BenchOptions};
use fasthebb::data::{
    holdout_split, synth_cluster_images, synth_clusters, synth_gaussian, ClusterSpec, Covariance,
    ImageClusterSpec, Regime, SplitTag,
};
use fasthebb::layers::{hebb_update, ConvGeometry, HebbLayer, Stage};
use fasthebb::pipeline::{pretrain, softmax_cross_entropy, Stack, TrainConfig};
use fasthebb::rules::{batch_metric, compute_update, LearningParams, Rule, UpdateImpl};
use fasthebb::tensor::set_threads;
use fasthebb::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn seeded_inputs(b: usize, n: usize, s: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::randn([1, n, s], 1.0 / (s as f64).sqrt(), &mut rng).unwrap();
    let x = Tensor::randn([b, 1, s], 1.0, &mut rng).unwrap();
    (w, x)
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut cases = 0;
    for b in [1, 2, 7, 16] {
        for n in [1, 3, 8] {
            for s in [1, 5, 32] {
                for seed in 0..10 {
                    let (w, x) = seeded_inputs(b, n, s, seed);
                    let xs: Vec<Vec<f64>> = x.data().chunks(s).map(|r| r.to_vec()).collect();
                    for rule in [Rule::Swta, Rule::Hpca] {
                        let params = LearningParams {
                            rule,
                            eta: 0.5,
                            temperature: 1.0,
                            center_inputs: false,
                        };
                        let naive = compute_update(&w, &x, &params, UpdateImpl::Naive)
                            .unwrap()
                            .delta_w;
                        let fast = compute_update(&w, &x, &params, UpdateImpl::Fast)
                            .unwrap()
                            .delta_w;
                        worst = worst.max(rel_frobenius(fast.data(), naive.data()));
                        let oracle = match rule {
                            Rule::Swta => common::swta_oracle(&rows(&w), &xs, 0.5, 1.0),
                            Rule::Hpca => common::hpca_oracle(&rows(&w), &xs, 0.5),
                        };
                        worst_oracle = worst_oracle.max(rel_frobenius(fast.data(), &flat(&oracle)));
                        cases += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{cases} cases, max fast/naive rel err {worst:.2e} (≤ 1e-10), max fast/scalar-oracle {worst_oracle:.2e}"),
    )
}

fn hpca_fixed_point() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (_, x) = seeded_inputs(64, 1, 8, 1000 + seed);
        let xs: Vec<Vec<f64>> = x.data().chunks(8).map(|r| r.to_vec()).collect();
        let (_, vectors) = second_moment_eigen(&xs);
        let w = Tensor::new([1, 4, 8], vectors[..4].concat()).unwrap();
        for form in [UpdateImpl::Naive, UpdateImpl::Fast] {
            let dw = compute_update(&w, &x, &LearningParams::hpca(1.0), form)
                .unwrap()
                .delta_w;
            worst = worst.max(dw.frobenius_norm() / w.frobenius_norm());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max ‖ΔW‖/‖W‖ {worst:.2e} over 10 seeds (≤ 1e-10), η = 1"),
    )
}

fn hpca_convergence() -> Outcome {
    let rates = [1e-3, 2e-3, 5e-3, 1e-2];
    let mut min_cos = vec![f64::INFINITY; rates.len()];
    let mut selected_ok = true;
    let mut picks = Vec::new();
    for seed in 0..5 {
        let cov = Covariance::rotated_2d(9.0, 1.0, 0.6).unwrap();
        let ds = synth_gaussian(500, &cov, 50 + seed).unwrap();
        let xs: Vec<Vec<f64>> = ds.pixels().chunks(2).map(|r| r.to_vec()).collect();
        let top = second_moment_eigen(&xs).1.remove(0);
        let all = Tensor::new([500, 1, 2], ds.pixels().to_vec()).unwrap();
        let mut best: Option<(f64, f64, f64)> = None;
        for (i, &lr) in rates.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer =
                HebbLayer::dense(1, 2, LearningParams::hpca(lr), UpdateImpl::Fast, &mut rng)
                    .unwrap();
            let config = TrainConfig {
                hebb_lr: lr,
                ..TrainConfig::default()
            };
            let (stack, _) = pretrain(
                Stack::new(vec![Stage::Hebb(layer)]),
                ds.unlabeled(),
                &config,
                seed,
            )
            .unwrap();
            let trained = stack.hebb_layers().next().unwrap();
            let cos = abs_cosine(trained.weights().data(), &top);
            let residual = batch_metric(trained.weights(), &all, &trained.params).unwrap();
            min_cos[i] = min_cos[i].min(cos);
            if best.is_none_or(|(r, _, _)| residual < r) {
                best = Some((residual, cos, lr));
            }
        }
        let (_, cos, lr) = best.unwrap();
        picks.push(lr);
        selected_ok &= cos >= 0.99;
    }
    let sweep: Vec<String> = rates
        .iter()
        .zip(&min_cos)
        .map(|(lr, c)| format!("lr {lr:.0e}: min |cos| {c:.4}"))
        .collect();
    outcome(
        selected_ok,
        format!(
            "5 seeds; {}; lowest-residual lr per seed {picks:?} reaches |cos| ≥ 0.99",
            sweep.join(", ")
        ),
    )
}

fn swta_clustering() -> Outcome {
    let separation = 0.4 * std::f64::consts::SQRT_2;
    let spec = ClusterSpec {
        clusters: 3,
        num: 600,
        dims: 3,
        separation,
        sigma: separation / 10.0,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (ds, centroids) = synth_clusters(&spec, 70 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = HebbLayer::dense(
            3,
            3,
            LearningParams::swta(0.5, 0.05),
            UpdateImpl::Fast,
            &mut rng,
        )
        .unwrap();
        let (stack, _) = pretrain(
            Stack::new(vec![Stage::Hebb(layer)]),
            ds.unlabeled(),
            &TrainConfig::default(),
            seed,
        )
        .unwrap();
        let w = stack.hebb_layers().next().unwrap().weights().clone();
        worst = worst.max(greedy_match_error(&rows(&w), &centroids) / separation);
    }
    outcome(
        worst <= 0.1,
        format!("worst matched centroid error {worst:.4}·separation over 5 seeds (≤ 0.1), separation = 10σ"),
    )
}

fn speedup_floor() -> Outcome {
    set_threads(1);
    let (b, n, s) = (8192, 96, 75);
    let report = bench_kernels(&[(b, n, s)], &BenchOptions::default()).unwrap();
    let mut pass = report.all_equivalent();
    let mut parts = Vec::new();
    for rule in [Rule::Swta, Rule::Hpca] {
        let naive = report
            .rows
            .iter()
            .find(|r| r.rule == rule && r.update_impl == UpdateImpl::Naive)
            .unwrap();
        let fast = report
            .rows
            .iter()
            .find(|r| r.rule == rule && r.update_impl == UpdateImpl::Fast)
            .unwrap();
        let ok = fast.speedup >= 5.0
            && fast.peak_elems <= n * (b + s) + n * n
            && naive.peak_elems >= b * n * s;
        pass &= ok;
        parts.push(format!(
            "{}: {:.1}x, peak fast {} / naive {}",
            rule.as_str(),
            fast.speedup,
            fast.peak_elems,
            naive.peak_elems
        ));
    }
    outcome(
        pass,
        format!(
            "(8192,96,75) 1 thread; {}; bounds: speedup ≥ 5, fast ≤ {}, naive ≥ {}",
            parts.join("; "),
            n * (b + s) + n * n,
            b * n * s
        ),
    )
}

fn conv_reduction() -> Outcome {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..20 {
        let k = rng.gen_range(1..4);
        let dims = (
            rng.gen_range(1..4),
            rng.gen_range(1..4),
            rng.gen_range(k..9),
            rng.gen_range(k..9),
        );
        let (stride, pad, neurons) = (
            rng.gen_range(1..3),
            rng.gen_range(0..k),
            rng.gen_range(1..6),
        );
        let (b, c, h, w) = dims;
        let images = Tensor::randn([b, c, h, w], 1.0, &mut rng).unwrap();
        for params in [LearningParams::swta(0.3, 0.5), LearningParams::hpca(0.3)] {
            let layer = HebbLayer::conv(
                neurons,
                ConvGeometry::square(k, c, stride, pad),
                params,
                UpdateImpl::Fast,
                &mut rng,
            )
            .unwrap();
            let patches = patch_rows(images.data(), dims, (k, k), stride, pad);
            let x = Tensor::new([patches.len(), 1, c * k * k], patches.concat()).unwrap();
            let dense = compute_update(layer.weights(), &x, &params, UpdateImpl::Fast)
                .unwrap()
                .delta_w;
            exact &= hebb_update(&layer, &images).unwrap().delta_w == dense;
            let (expect, _, _) = conv_oracle(
                images.data(),
                dims,
                layer.weights().data(),
                neurons,
                (k, k),
                stride,
                pad,
            );
            let got = layer.forward(&images).unwrap();
            for (g, e) in got.data().iter().zip(&expect) {
                worst = worst.max((g - e).abs());
            }
        }
    }
    outcome(
        exact && worst <= 1e-12,
        format!("20 cases × 2 rules: update bitwise equal = {exact}, max forward error {worst:.2e} (≤ 1e-12)"),
    )
}

fn probe_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let w = Tensor::randn([3, 5], 0.5, &mut rng).unwrap();
    let bias = vec![0.1, -0.3, 0.2];
    let x = Tensor::randn([8, 5], 1.0, &mut rng).unwrap();
    let labels = [0, 1, 2, 1, 0, 2, 2, 1];
    let decay = 0.05;
    let loss = |w: &Tensor, b: &[f64]| softmax_cross_entropy(w, b, &x, &labels, decay).unwrap().0;
    let (_, gw, gb) = softmax_cross_entropy(&w, &bias, &x, &labels, decay).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let bump = |d: f64| {
            let mut data = w.data().to_vec();
            data[i] += d;
            Tensor::new([3, 5], data).unwrap()
        };
        let fd = (loss(&bump(eps), &bias) - loss(&bump(-eps), &bias)) / (2.0 * eps);
        worst = worst.max((fd - gw.data()[i]).abs());
    }
    for i in 0..3 {
        let bump = |d: f64| {
            let mut b = bias.clone();
            b[i] += d;
            b
        };
        let fd = (loss(&w, &bump(eps)) - loss(&w, &bump(-eps))) / (2.0 * eps);
        worst = worst.max((fd - gb[i]).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("max |analytic − central FD| {worst:.2e} (≤ 1e-6), ε = 1e-6"),
    )
}

fn semi_supervised_gap(hebb_lr: f64) -> (f64, f64) {
    let (mut hebb, mut random) = (0.0, 0.0);
    for seed in 0..5 {
        let spec = ImageClusterSpec {
            classes: 10,
            num: 2000,
            channels: 1,
            height: 8,
            width: 8,
            amplitude: 0.3,
            noise: 0.25,
        };
        let ds = synth_cluster_images(&spec, 800 + seed).unwrap();
        let (train, test) = holdout_split(&ds, 0.2, SplitTag::Test, seed);
        let config = TrainConfig {
            hebb_lr,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = HebbLayer::dense(
            16,
            64,
            LearningParams::hpca(hebb_lr),
            UpdateImpl::Fast,
            &mut rng,
        )
        .unwrap();
        let stack = Stack::new(vec![Stage::Hebb(layer)]);
        let regime = Regime::new(5, seed).unwrap();
        hebb += probe_accuracy(stack.clone(), &train, &test, &config, regime, Some(seed)) / 5.0;
        random += probe_accuracy(stack, &train, &test, &config, regime, None) / 5.0;
    }
    (hebb, random)
}

fn semi_supervised_trend() -> Outcome {
    let (hebb, random) = semi_supervised_gap(1e-2);
    let (hebb_slow, random_slow) = semi_supervised_gap(1e-3);
    let gap = 100.0 * (hebb - random);
    outcome(
        gap >= 5.0,
        format!(
            "5% labels, 5 seeds: HPCA {:.1}% vs random init {:.1}% (gap {gap:.1} points, ≥ 5) at hebb lr 1e-2; \
             at hebb lr 1e-3 the gap is {:.1} points",
            100.0 * hebb,
            100.0 * random,
            100.0 * (hebb_slow - random_slow)
        ),
    )
}

fn run_cli(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fasthebb"))
        .args(args)
        .env("FASTHEBB_THREADS", threads)
        .output()
        .expect("spawn fasthebb")
}

fn stable_columns(csv: &str) -> Vec<String> {
    // Drops median_ns and speedup.
    csv.lines()
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            cells
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != 6 && *i != 8)
                .map(|(_, c)| *c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut identical = true;
    let mut ok = true;
    for (name, threads) in [("clusters", "1"), ("images", "2")] {
        let config = configs.join(format!("{name}.toml"));
        let mut checkpoints = Vec::new();
        for run in 0..2 {
            let ckpt = dir.path().join(format!("{name}-{run}.ckpt"));
            let ckpt_s = ckpt.to_str().unwrap();
            let t = if run == 0 { "1" } else { threads };
            ok &= run_cli(
                &[
                    "pretrain",
                    "--config",
                    config.to_str().unwrap(),
                    "--out",
                    ckpt_s,
                ],
                t,
            )
            .status
            .success();
            ok &= run_cli(
                &["probe", "--ckpt", ckpt_s, "--regime", "5", "--seed", "3"],
                t,
            )
            .status
            .success();
            checkpoints.push(std::fs::read(&ckpt).unwrap_or_default());
        }
        identical &= !checkpoints[0].is_empty() && checkpoints[0] == checkpoints[1];
    }
    let mut reports = Vec::new();
    for run in 0..2 {
        let csv = dir.path().join(format!("bench-{run}.csv"));
        ok &= run_cli(
            &[
                "bench",
                "--grid",
                "1x1x1,7x3x5,16x8x32",
                "--out",
                csv.to_str().unwrap(),
            ],
            "1",
        )
        .status
        .success();
        reports.push(stable_columns(
            &std::fs::read_to_string(&csv).unwrap_or_default(),
        ));
    }
    identical &= !reports[0].is_empty() && reports[0] == reports[1];
    outcome(
        ok && identical,
        format!("pretrain+probe checkpoints (clusters, conv images; 1 vs 2 threads) and bench CSV: identical = {identical}, all runs exit 0 = {ok}"),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "oracle equivalence",
            Duration::from_secs(30),
            oracle_equivalence,
        ),
        ("HPCA fixed point", Duration::from_secs(5), hpca_fixed_point),
        (
            "HPCA convergence",
            Duration::from_secs(60),
            hpca_convergence,
        ),
        ("SWTA clustering", Duration::from_secs(60), swta_clustering),
        ("speedup floor", Duration::from_secs(120), speedup_floor),
        (
            "conv/dense reduction",
            Duration::from_secs(10),
            conv_reduction,
        ),
        (
            "probe gradient check",
            Duration::from_secs(1),
            probe_gradient,
        ),
        (
            "semi-supervised trend",
            Duration::from_secs(300),
            semi_supervised_trend,
        ),
        ("determinism", Duration::from_secs(300), determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} {} {name}: {} [{:.2} s, budget {} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
