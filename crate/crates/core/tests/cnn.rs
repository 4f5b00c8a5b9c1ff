use proptest::prelude::*;
use qcnn_core::cnn::{
    build_template_network, classify, forward, load_model, misclassification_rate, save_model, train, Parameters,
    Provenance, TrainerConfig,
};
use qcnn_core::datasets::{build_training_set, TrainingSetSpec};
use qcnn_core::numerics::RngState;

mod common;

use common::{gradient_check, random_params, record};

#[test]
fn backward_matches_finite_differences() {
    for n in 1..=4 {
        let spec = build_template_network(n, None).unwrap();
        let mut rng = RngState::with_stream(20, n as u64);
        let mut worst = 0.0_f64;
        let mut skipped = 0;
        for _ in 0..25 {
            let p = random_params(&spec, &mut rng);
            let x: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 2.0)).collect();
            let r = record(&x, rng.coin());
            let (rel, s) = gradient_check(&spec, &p, &r, 1e-5);
            worst = worst.max(rel);
            skipped += s;
        }
        assert!(worst <= 1e-4, "n = {n}: worst relative error {worst:e}");
        assert!(skipped < 25 * spec.parameter_count() / 100, "n = {n}: {skipped} coordinates skipped");
    }
}

#[test]
fn classify_follows_tie_rule() {
    let spec = build_template_network(2, None).unwrap();
    let p = Parameters::zeros(&spec);
    assert!(!classify(&spec, &p, &[1.0, 2.0]).unwrap());
}

#[test]
fn constant_classifier_rates() {
    // Zero parameters accept everything.
    let spec = build_template_network(2, None).unwrap();
    let p = Parameters::zeros(&spec);
    let ok: Vec<_> = (0..10).map(|i| record(&[i as f64, 0.0], false)).collect();
    let bad: Vec<_> = (0..10).map(|i| record(&[i as f64, 0.0], true)).collect();
    assert_eq!(misclassification_rate(&spec, &p, &ok).unwrap(), 0.0);
    assert_eq!(misclassification_rate(&spec, &p, &bad).unwrap(), 1.0);
    assert!(misclassification_rate(&spec, &p, &[]).is_err());
}

#[test]
fn constant_label_stream_is_fit() {
    let spec = build_template_network(1, None).unwrap();
    let mut rng = RngState::new(5);
    let data: Vec<_> = (0..2000).map(|_| record(&[rng.normal(0.0, 3.0)], true)).collect();
    let cfg = TrainerConfig {
        epochs: 30,
        batch_size: 64,
        learning_rate: 1e-2,
        ..TrainerConfig::default()
    };
    let (p, report) = train(&spec, &data, &cfg).unwrap();
    assert!(report.final_loss.is_finite() && report.final_loss >= 0.0);
    let low = data.iter().map(|r| forward(&spec, &p, r.values()).unwrap()[1]).fold(1.0, f64::min);
    assert!(low >= 0.99, "{low} {report:?}");
}

#[test]
fn training_is_deterministic_and_learns() {
    let spec = build_template_network(2, None).unwrap();
    let data = build_training_set(&TrainingSetSpec::new(1, 2, 1000), &RngState::new(3))
        .unwrap()
        .collect_records::<f64>(1);
    let cfg = TrainerConfig {
        epochs: 3,
        batch_size: 128,
        seed: 17,
        ..TrainerConfig::default()
    };
    let (p1, r1) = train(&spec, &data, &cfg).unwrap();
    let (p2, r2) = train(&spec, &data, &TrainerConfig { workers: 3, ..cfg.clone() }).unwrap();
    assert_eq!(r1.checksum, r2.checksum);
    assert_eq!(p1, p2);
    assert!(r1.validation_error.iter().copied().fold(1.0, f64::min) < 0.5);
}

#[test]
fn saved_model_loads_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = build_template_network(3, None).unwrap();
    let p = random_params(&spec, &mut RngState::new(1));
    let path = dir.path().join("m.qcnn");
    save_model(&path, &spec, &p, Provenance::default()).unwrap();
    let (spec2, p2) = load_model(&path).unwrap();
    assert_eq!(spec2, spec);
    assert!(p.as_slice().iter().zip(p2.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(dir.path().join("m.json").exists());
    // A 3-input model cannot classify pairs.
    assert!(classify(&spec2, &p2, &[0.0, 1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn softmax_sums_to_one(seed in any::<u64>(), n in 1usize..=4, scale in 0.1f64..50.0) {
        let spec = build_template_network(n, None).unwrap();
        let mut rng = RngState::new(seed);
        let p = random_params(&spec, &mut rng);
        let x: Vec<f64> = (0..n).map(|_| rng.normal(0.0, scale)).collect();
        let probs = forward(&spec, &p, &x).unwrap();
        prop_assert!(probs[0] >= 0.0 && probs[1] >= 0.0);
        prop_assert!((probs[0] + probs[1] - 1.0).abs() < 1e-9);
        prop_assert_eq!(forward(&spec, &p, &x).unwrap(), probs);
    }
}
