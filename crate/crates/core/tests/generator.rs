//! Counterfactual generator: S-blind encoding, arm construction, synthesis,
//! and the distribution-matching penalty.

mod common;

use exoc_core::generator::{
    generate_counterfactuals, pair_count, synthesize_dataset, train_generator, GeneratorModel,
    GeneratorSpec,
};
use exoc_core::sources::{self, SourceKind};
use exoc_core::trainer::{ObjectiveKind, TrainConfig};

fn trained(rows: usize, epochs: usize) -> (exoc_core::dataio::TabularDataset, GeneratorModel) {
    let data = sources::generate(SourceKind::LawLike, rows, 3).unwrap();
    let cfg = TrainConfig::new(ObjectiveKind::Generator, epochs, 3);
    let out = train_generator(&data, GeneratorSpec::default(), &cfg, None).unwrap();
    (data, out.model)
}

#[test]
fn pair_counts() {
    for (k, want) in [(2, 1), (3, 3), (4, 6)] {
        assert_eq!(pair_count(k), want);
    }
}

#[test]
fn warmup_ramps_linearly() {
    let spec = GeneratorSpec { tau: 2.0, warmup_epochs: 4, ..GeneratorSpec::default() };
    let got: Vec<f64> = (0..6).map(|e| spec.tau_at(e)).collect();
    assert_eq!(got, [0.0, 0.5, 1.0, 1.5, 2.0, 2.0]);
    assert_eq!(GeneratorSpec::default().tau_at(0), 1.0);
}

#[test]
fn encoding_ignores_sensitive_attribute() {
    let (data, model) = trained(200, 5);
    let flipped = data
        .with_sensitive(data.s().iter().map(|s| (s + 1) % 3).collect())
        .unwrap();
    let a = generate_counterfactuals(&model, &data, 1).unwrap();
    let b = generate_counterfactuals(&model, &flipped, 1).unwrap();
    for (x, y) in a.arms.iter().zip(&b.arms) {
        assert_eq!(x.raw_x(), y.raw_x());
        assert_eq!(x.raw_y(), y.raw_y());
    }
}

#[test]
fn one_arm_per_sensitive_value() {
    let (data, model) = trained(200, 2);
    let cf = generate_counterfactuals(&model, &data, 1).unwrap();
    assert_eq!(cf.n_arms(), 3);
    for (s, arm) in cf.arms.iter().enumerate() {
        assert_eq!(arm.len(), data.len());
        assert!(arm.s().iter().all(|&v| v == s));
        assert_eq!(arm.row_ids(), data.row_ids());
    }
    assert_eq!(cf.factual_s, data.s());
}

#[test]
fn untrained_generator_refuses() {
    let data = sources::generate(SourceKind::LawLike, 50, 3).unwrap();
    let model = GeneratorModel::new(GeneratorSpec::default(), &data, 1).unwrap();
    assert!(generate_counterfactuals(&model, &data, 1).is_err());
    assert!(synthesize_dataset(&model, 10, 1).is_err());
}

#[test]
fn synthesis_follows_training_frequencies() {
    let (_, model) = trained(2000, 1);
    let n = 50_000;
    let (data, cf) = synthesize_dataset(&model, n, 5).unwrap();
    assert_eq!(data.len(), n);
    assert_eq!(cf.len(), n);
    for (g, want) in model.s_freq.iter().enumerate() {
        let got = data.s().iter().filter(|&&s| s == g).count() as f64 / n as f64;
        assert!((got - want).abs() < 0.02, "group {g}: {got} vs {want}");
    }
    let (again, _) = synthesize_dataset(&model, n, 5).unwrap();
    assert_eq!(again.raw_y(), data.raw_y());
    let (other, _) = synthesize_dataset(&model, n, 6).unwrap();
    assert_ne!(other.raw_y(), data.raw_y());
}

#[test]
fn penalty_lowers_latent_mmd() {
    let m = common::generator_latent_mmd(&[0.0, 0.5, 1.0], 150);
    assert!(m[2] < m[0], "tau=1 {} vs tau=0 {}", m[2], m[0]);
    assert!(m.windows(2).all(|w| w[1] <= w[0]), "{m:?}");
}
