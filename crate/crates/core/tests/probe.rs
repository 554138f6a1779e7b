use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gist_core::classifier::{train_linear_probe, LinearProbe, ProbeConfig, Scorer};

fn clusters(per_class: usize, classes: usize, d: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            let mut x: Vec<f64> = (0..d).map(|_| r.gen_range(-spread..spread)).collect();
            x[c] += 1.0;
            xs.push(x);
            ys.push(c);
        }
    }
    (xs, ys)
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

#[test]
fn separable_clusters_are_learned() {
    let (xs, ys) = clusters(30, 4, 8, 0.2, 1);
    let cfg = ProbeConfig { epochs: 100, ..Default::default() };
    let t = train_linear_probe(&xs, &ys, &names(4), &cfg).unwrap();
    let correct = xs.iter().zip(&ys).filter(|(x, &y)| t.probe.predict(x).unwrap() == y).count();
    assert_eq!(correct, xs.len());
    assert_eq!(t.epoch_losses.len(), 100);
}

#[test]
fn full_batch_is_invariant_to_duplication() {
    let (xs, ys) = clusters(5, 3, 6, 0.5, 2);
    let cfg = ProbeConfig { epochs: 50, batch_size: 64, ..Default::default() };
    let once = train_linear_probe(&xs, &ys, &names(3), &cfg).unwrap().probe;
    let xs2: Vec<_> = xs.iter().chain(&xs).cloned().collect();
    let ys2: Vec<_> = ys.iter().chain(&ys).copied().collect();
    let twice = train_linear_probe(&xs2, &ys2, &names(3), &cfg).unwrap().probe;
    for x in &xs {
        let (a, b) = (once.scores(x).unwrap(), twice.scores(x).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
    }
}

#[test]
fn plain_full_batch_descent_never_increases_loss() {
    let (xs, ys) = clusters(10, 3, 5, 0.8, 3);
    let cfg = ProbeConfig {
        epochs: 200,
        batch_size: 64,
        momentum: 0.0,
        learning_rate: 0.05,
        ..Default::default()
    };
    let t = train_linear_probe(&xs, &ys, &names(3), &cfg).unwrap();
    for w in t.epoch_losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(t.epoch_losses[0] < (3.0f64).ln());
}

#[test]
fn same_seed_same_probe() {
    let (xs, ys) = clusters(40, 3, 5, 0.8, 4);
    let cfg = ProbeConfig { epochs: 20, batch_size: 16, ..Default::default() };
    let a = train_linear_probe(&xs, &ys, &names(3), &cfg).unwrap();
    let b = train_linear_probe(&xs, &ys, &names(3), &cfg).unwrap();
    assert_eq!(a.probe, b.probe);
}

#[test]
fn early_stopping_only_when_asked() {
    let (xs, ys) = clusters(10, 2, 4, 0.1, 5);
    let fixed = train_linear_probe(&xs, &ys, &names(2), &ProbeConfig { epochs: 300, ..Default::default() }).unwrap();
    assert_eq!(fixed.epoch_losses.len(), 300);
    let cfg = ProbeConfig {
        epochs: 300,
        early_stopping_patience: Some(1),
        ..Default::default()
    };
    let stopped = train_linear_probe(&xs, &ys, &names(2), &cfg).unwrap();
    assert!(stopped.epoch_losses.len() <= 300);
}

#[test]
fn missing_class_is_named() {
    let (xs, ys) = clusters(5, 2, 4, 0.1, 6);
    let err = train_linear_probe(&xs, &ys, &names(3), &ProbeConfig::default()).unwrap_err();
    assert!(err.to_string().contains("c2"), "{err}");
}

#[test]
fn save_and_load_roundtrip() {
    let (xs, ys) = clusters(10, 3, 4, 0.3, 7);
    let t = train_linear_probe(&xs, &ys, &names(3), &ProbeConfig { epochs: 10, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("probe");
    t.probe.save(&stem).unwrap();
    let back = LinearProbe::load(&stem).unwrap();
    for x in &xs {
        // weights are stored as f32
        for (a, b) in t.probe.scores(x).unwrap().iter().zip(back.scores(x).unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
