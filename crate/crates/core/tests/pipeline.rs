mod common;

use common::{abs_cosine, greedy_match_error, rows, second_moment_eigen};
use fasthebb::data::{synth_clusters, synth_gaussian, ClusterSpec, Covariance};
use fasthebb::layers::{HebbLayer, Stage};
use fasthebb::pipeline::{
    evaluate, load_checkpoint, pretrain, save_checkpoint, train_probe, Checkpoint, LayerRecord,
    LayerSchedule, LinearProbe, RngState, Stack, TrainConfig,
};
use fasthebb::rules::{LearningParams, UpdateImpl};
use fasthebb::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(n: usize, s: usize, params: LearningParams, seed: u64) -> HebbLayer {
    HebbLayer::dense(
        n,
        s,
        params,
        UpdateImpl::Fast,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn hpca_layer_finds_the_top_eigenvector() {
    let ds = synth_gaussian(500, &Covariance::diagonal(&[9.0, 1.0]).unwrap(), 4).unwrap();
    let xs: Vec<Vec<f64>> = ds.pixels().chunks(2).map(|r| r.to_vec()).collect();
    let top = second_moment_eigen(&xs).1.remove(0);
    let config = TrainConfig {
        hebb_lr: 1e-2,
        ..TrainConfig::default()
    };
    let stack = Stack::new(vec![Stage::Hebb(dense(
        2,
        2,
        LearningParams::hpca(1e-2),
        1,
    ))]);
    let (stack, report) = pretrain(stack, ds.unlabeled(), &config, 2).unwrap();
    let w = stack.hebb_layers().next().unwrap().weights();
    assert!(abs_cosine(&w.data()[..2], &top) >= 0.99);
    assert_eq!(report.epochs.len(), 20);
    assert!(report.convergence_epochs[0] <= 20);
}

#[test]
fn swta_layer_finds_the_centroids() {
    let spec = ClusterSpec {
        clusters: 3,
        num: 600,
        dims: 3,
        separation: 0.6,
        sigma: 0.06,
    };
    let (ds, centroids) = synth_clusters(&spec, 3).unwrap();
    let stack = Stack::new(vec![Stage::Hebb(dense(
        3,
        3,
        LearningParams::swta(0.5, 0.05),
        6,
    ))]);
    let (stack, _) = pretrain(stack, ds.unlabeled(), &TrainConfig::default(), 0).unwrap();
    let w = stack.hebb_layers().next().unwrap().weights().clone();
    assert!(greedy_match_error(&rows(&w), &centroids) <= 0.1 * spec.separation);
}

fn two_layer_stack() -> Stack {
    Stack::new(vec![
        Stage::Hebb(dense(4, 3, LearningParams::hpca(0.01), 1)),
        Stage::Relu,
        Stage::Hebb(dense(2, 4, LearningParams::swta(0.1, 0.5), 2)),
    ])
}

#[test]
fn pretraining_is_deterministic() {
    let (ds, _) = synth_clusters(
        &ClusterSpec {
            clusters: 3,
            num: 90,
            dims: 3,
            separation: 1.0,
            sigma: 0.2,
        },
        1,
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (a, ra) = pretrain(two_layer_stack(), ds.unlabeled(), &config, 5).unwrap();
    let (b, rb) = pretrain(two_layer_stack(), ds.unlabeled(), &config, 5).unwrap();
    assert_eq!(ra, rb);
    for (la, lb) in a.hebb_layers().zip(b.hebb_layers()) {
        assert_eq!(la.weights(), lb.weights());
    }
    let (c, _) = pretrain(two_layer_stack(), ds.unlabeled(), &config, 6).unwrap();
    assert_ne!(
        a.hebb_layers().next().unwrap().weights(),
        c.hebb_layers().next().unwrap().weights()
    );
}

#[test]
fn sequential_schedule_trains_one_layer_at_a_time() {
    let (ds, _) = synth_clusters(
        &ClusterSpec {
            clusters: 2,
            num: 40,
            dims: 3,
            separation: 1.0,
            sigma: 0.2,
        },
        2,
    )
    .unwrap();
    let config = TrainConfig {
        epochs: 2,
        schedule: LayerSchedule::Sequential,
        ..TrainConfig::default()
    };
    let initial = two_layer_stack();
    let (trained, report) = pretrain(initial.clone(), ds.unlabeled(), &config, 0).unwrap();
    assert_eq!(report.epochs.len(), 4);
    assert!(report.epochs[0].layer_metrics[1].is_nan());
    assert!(report.epochs[3].layer_metrics[0].is_nan());
    for (before, after) in initial.hebb_layers().zip(trained.hebb_layers()) {
        assert_ne!(before.weights(), after.weights());
    }
}

#[test]
fn separable_features_are_learned_with_default_settings() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let class = i % 2;
        let sign = if class == 0 { -1.0 } else { 1.0 };
        data.push(sign * rng.gen_range(0.2..2.0));
        data.push(rng.gen_range(-2.0..2.0));
        labels.push(class);
    }
    let x = Tensor::new([200, 2], data).unwrap();
    let (probe, _) = train_probe((&x, &labels), None, 2, &TrainConfig::default(), 0).unwrap();
    assert!(evaluate(&probe, &x, &labels, 1).unwrap() >= 0.99);
}

#[test]
fn zero_features_predict_the_majority_class() {
    let x = Tensor::zeros([20, 3]).unwrap();
    let labels: Vec<usize> = (0..20).map(|i| if i < 13 { 2 } else { i % 2 }).collect();
    let config = TrainConfig {
        probe_lr: 0.05,
        ..TrainConfig::default()
    };
    let (probe, _) = train_probe((&x, &labels), None, 3, &config, 0).unwrap();
    assert!((evaluate(&probe, &x, &labels, 1).unwrap() - 13.0 / 20.0).abs() < 1e-12);
}

#[test]
fn evaluate_examples() {
    let mut probe = LinearProbe::zeros(3, 3).unwrap();
    probe.weights = Tensor::new([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let perfect = Tensor::new([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(evaluate(&probe, &perfect, &[0, 1, 2], 1).unwrap(), 1.0);
    // Ranks of the true class: 1st, 2nd (tie broken toward class 0), 3rd.
    let mixed = Tensor::new([3, 3], vec![0.9, 0.5, 0.1, 0.4, 0.4, 0.0, 0.7, 0.8, 0.2]).unwrap();
    assert_eq!(evaluate(&probe, &mixed, &[0, 1, 2], 1).unwrap(), 1.0 / 3.0);
    assert_eq!(evaluate(&probe, &mixed, &[0, 1, 2], 2).unwrap(), 2.0 / 3.0);
    assert_eq!(evaluate(&probe, &mixed, &[0, 1, 2], 3).unwrap(), 1.0);
}

#[test]
fn early_stopping_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::randn([60, 4], 1.0, &mut rng).unwrap();
    let labels: Vec<usize> = x
        .data()
        .chunks(4)
        .map(|r| usize::from(r[0] + 0.3 * r[1] > 0.0))
        .collect();
    let vx = Tensor::randn([30, 4], 1.0, &mut rng).unwrap();
    let vy: Vec<usize> = vx
        .data()
        .chunks(4)
        .map(|r| usize::from(r[0] + 0.3 * r[1] > 0.0))
        .collect();
    let config = TrainConfig {
        probe_lr: 0.02,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (pa, ra) = train_probe((&x, &labels), Some((&vx, &vy)), 2, &config, 11).unwrap();
    let (pb, rb) = train_probe((&x, &labels), Some((&vx, &vy)), 2, &config, 11).unwrap();
    assert_eq!(ra.best_epoch, rb.best_epoch);
    assert_eq!(pa, pb);
    let best = ra.val_accuracy.iter().cloned().fold(0.0, f64::max);
    assert_eq!(ra.val_accuracy[ra.best_epoch], best);
    assert_eq!(evaluate(&pa, &vx, &vy, 1).unwrap(), best);
}

#[test]
fn checkpoint_file_round_trip() {
    let stack = two_layer_stack();
    let checkpoint = Checkpoint {
        layers: stack
            .hebb_layers()
            .map(|l| LayerRecord {
                rule: l.params.rule,
                weights: l.weights().clone(),
            })
            .collect(),
        probe: Some(LinearProbe::zeros(2, 2).unwrap()),
        config: "seed = 1\n".into(),
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(1)),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &checkpoint).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), checkpoint);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CorruptFile(_))));
    std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::BadMagic { .. })
    ));
}
