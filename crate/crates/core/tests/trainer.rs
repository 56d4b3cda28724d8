//! Training loop: determinism, checkpoint resume, and failure handling.

use exoc_core::causal::{build_model, CausalModel, CausalModelSpec};
use exoc_core::sources::{self, SourceKind};
use exoc_core::trainer::{self, Checkpoint, ObjectiveKind, TrainConfig};
use exoc_core::Error;

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: Some(64),
        ..TrainConfig::new(ObjectiveKind::ElboWithControl, epochs, 4)
    }
}

fn model(data: &exoc_core::dataio::TabularDataset) -> CausalModel {
    build_model(&CausalModelSpec::exoc(), &data.schema, 4).unwrap()
}

#[test]
fn identical_runs_are_bitwise_equal() {
    let data = sources::generate(SourceKind::LawLike, 200, 1).unwrap();
    let a = trainer::train(model(&data), &data, &config(20), None).unwrap();
    let b = trainer::train(model(&data), &data, &config(20), None).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log.records, b.log.records);
}

#[test]
fn resume_continues_exactly() {
    let data = sources::generate(SourceKind::LawLike, 200, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let whole = trainer::train(model(&data), &data, &config(100), None).unwrap();
    trainer::train(model(&data), &data, &config(50), Some(&path)).unwrap();
    let resumed = trainer::resume::<CausalModel>(&path, &data, 50).unwrap();
    assert_eq!(resumed.model, whole.model);
    assert_eq!(resumed.log.records, whole.log.records);
    assert_eq!(resumed.checkpoint.epochs_done, 100);

    let again = trainer::resume::<CausalModel>(&path, &data, 0).unwrap();
    assert_eq!(again.model, resumed.model);
    assert_eq!(again.checkpoint.epochs_done, 100);
}

#[test]
fn schema_mismatch_names_both() {
    let law = sources::generate(SourceKind::LawLike, 100, 1).unwrap();
    let adult = sources::generate(SourceKind::AdultLike, 100, 1).unwrap();
    let err = trainer::train(model(&law), &adult, &config(1), None).unwrap_err();
    match err {
        Error::SchemaMismatch { expected, found } => {
            assert_eq!(expected, law.schema.signature());
            assert_eq!(found, adult.schema.signature());
        }
        e => panic!("unexpected error {e}"),
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    trainer::train(model(&law), &law, &config(1), Some(&path)).unwrap();
    let err = trainer::resume::<CausalModel>(&path, &adult, 1).unwrap_err();
    assert!(matches!(err, Error::SchemaMismatch { .. }));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let data = sources::generate(SourceKind::LawLike, 100, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    trainer::train(model(&data), &data, &config(1), Some(&path)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    // JSON has no NaN; a non-finite parameter is written as null.
    v["epochs_done"] = serde_json::Value::Null;
    std::fs::write(&path, v.to_string()).unwrap();
    let err = Checkpoint::<CausalModel>::load(&path).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
    assert!(err.to_string().contains("ck.json"));
}

#[test]
fn divergence_keeps_last_good_state() {
    let data = sources::generate(SourceKind::LawLike, 100, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let mut cfg = config(200);
    cfg.adam.lr = 1e300;
    let err = trainer::train(model(&data), &data, &cfg, Some(&path)).unwrap_err();
    let Error::Diverged { epoch, .. } = err else {
        panic!("expected divergence, got {err}");
    };
    let ck = Checkpoint::<CausalModel>::load(&path).unwrap();
    assert_eq!(ck.epochs_done, epoch);
    assert!(ck.model.params.iter().all(|(_, t)| t.all_finite()));
}

#[test]
fn log_kl_is_nonnegative() {
    let data = sources::generate(SourceKind::LawLike, 200, 2).unwrap();
    let out = trainer::train(model(&data), &data, &config(30), None).unwrap();
    assert!(out.log.min_kl() >= -1e-9);
    let (head, tail) = out.log.head_tail_means(0.1).unwrap();
    assert!(tail < head);
}
