//! Reverse-mode gradients against central finite differences.

mod common;

use common::{check, random_network_error, random_tensor, TOL};
use exoc_core::causal::{build_model, Batch, CausalModelSpec};
use exoc_core::generator::{mmd2_op_with, GeneratorModel, GeneratorSpec};
use exoc_core::noise::{NoiseStream, Purpose};
use exoc_core::optim::ParameterStore;
use exoc_core::sources::{self, SourceKind};
use exoc_core::trainer::{ObjectiveKind, StepContext, Trainable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_small_networks() {
    for case in 0..24 {
        let worst = random_network_error(case);
        assert!(worst < TOL, "case {case}: relative error {worst:e}");
    }
}

#[test]
fn causal_model_losses() {
    let data = sources::generate(SourceKind::LawLike, 6, 3).unwrap();
    let adult = sources::generate(SourceKind::AdultLike, 6, 3).unwrap();
    let specs = [
        (CausalModelSpec::fair_k(), &data),
        (CausalModelSpec::exoc(), &data),
        (CausalModelSpec { hidden: 3, ..CausalModelSpec::exoc() }, &adult),
        (
            CausalModelSpec {
                control_target: exoc_core::causal::ControlTarget::PredictedY,
                aux_to_features: true,
                hidden: 3,
                ..CausalModelSpec::exoc()
            },
            &data,
        ),
    ];
    for (i, (spec, ds)) in specs.iter().enumerate() {
        let model = build_model(spec, &ds.schema, 5 + i as u64).unwrap();
        let batch = Batch::from_dataset(ds).unwrap();
        let noise = model.draw_noise(batch.len(), &mut NoiseStream::new(1, Purpose::Reparameterization, 0, 0));
        let exoc = spec.variant == exoc_core::causal::Variant::Exoc;
        let worst = check(&model.params, |g, p| {
            let terms = model.forward(g, p, &batch, &noise).unwrap();
            if exoc {
                model.total_loss(g, &terms, 1.2, 3.0).unwrap()
            } else {
                terms.elbo
            }
        });
        assert!(worst < TOL, "model {i}: relative error {worst:e}");
    }
}

#[test]
fn generator_loss() {
    let data = sources::generate(SourceKind::LawLike, 12, 4).unwrap();
    // The penalty bandwidth is a value-level constant, so the penalty is
    // checked on its own below at a fixed bandwidth.
    let spec = GeneratorSpec {
        latent_dim: 2,
        hidden: 3,
        tau: 0.0,
        ..GeneratorSpec::default()
    };
    let model = GeneratorModel::new(spec, &data, 2).unwrap();
    let batch = Batch::from_dataset(&data).unwrap();
    let ctx = StepContext {
        seed: 9,
        epoch: 0,
        batch: 0,
        gamma: 1.0,
        scale: None,
        objective: ObjectiveKind::Generator,
    };
    let worst = check(model.params(), |g, p| model.batch_loss(g, p, &batch, ctx).unwrap().0);
    assert!(worst < TOL, "relative error {worst:e}");
}

#[test]
fn mmd_penalty_at_fixed_bandwidth() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..4 {
        let mut store = ParameterStore::new();
        store.insert("a", random_tensor(&mut rng, 3 + case, 2)).unwrap();
        store.insert("b", random_tensor(&mut rng, 2 + case, 2)).unwrap();
        let sigma = 0.5 + case as f64 * 0.4;
        let worst = check(&store, |g, p| {
            let (a, b) = (p.get("a").unwrap().clone(), p.get("b").unwrap().clone());
            mmd2_op_with(g, &a, &b, sigma).unwrap()
        });
        assert!(worst < TOL, "case {case}: relative error {worst:e}");
    }
}
