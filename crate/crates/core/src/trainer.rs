//! Seeded training loop with checkpointing and per-epoch loss logging.
//!
//! All randomness comes from counter-keyed noise streams, so a run split
//! into resumed segments reproduces an unbroken run bit for bit.

use std::borrow::Cow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::autodiff::{Graph, Ops, Var};
use crate::causal::{control_loss, Batch, CausalModel, Variant};
use crate::dataio::{Schema, TabularDataset};
use crate::error::{Error, Result};
use crate::noise::{NoiseStream, Purpose};
use crate::optim::{adam_step, AdamConfig, AdamState, BoundParams, ParameterStore};

/// Rows above which training switches from full batch to minibatches.
pub const FULL_BATCH_LIMIT: usize = 4096;
pub const MINIBATCH_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Negative ELBO only.
    Elbo,
    /// Negative ELBO plus the normalised control loss.
    ElboWithControl,
    /// Generator reconstruction plus distribution-matching penalty.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` picks full batch up to 4096 rows, else 1024.
    pub batch_size: Option<usize>,
    pub gamma: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many epochs; 0 writes only at the end.
    pub checkpoint_interval: usize,
    pub objective: ObjectiveKind,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveKind, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: None,
            gamma: 1.2,
            seed,
            adam: AdamConfig::default(),
            checkpoint_interval: 0,
            objective,
        }
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::contract(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > rows {
                return Err(Error::contract(format!(
                    "batch size {b} outside 1..={rows}"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_batch(&self, rows: usize) -> usize {
        match self.batch_size {
            Some(b) => b,
            None if rows <= FULL_BATCH_LIMIT => rows,
            None => MINIBATCH_SIZE,
        }
    }
}

/// Per-step context handed to the objective.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
    pub gamma: f64,
    pub scale: Option<f64>,
    pub objective: ObjectiveKind,
}

/// Loss components of one step, as plain values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepParts {
    pub elbo: f64,
    pub control: f64,
    pub kl: f64,
}

/// A model the loop can optimise.
pub trait Trainable: Clone + Serialize + DeserializeOwned {
    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;
    fn schema(&self) -> &Schema;
    /// Header of the control column in the training log.
    fn control_label(&self) -> &'static str;
    /// Name and value of the hyperparameter echoed in every log row.
    fn log_hyper(&self, config: &TrainConfig) -> (&'static str, f64);
    /// Frozen loss scale computed on the first batch, if the objective uses one.
    fn initial_scale(&self, batch: &Batch, ctx: StepContext) -> Result<Option<f64>>;
    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &BoundParams<Var>,
        batch: &Batch,
        ctx: StepContext,
    ) -> Result<(Var, StepParts)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub control: f64,
    pub total: f64,
    pub kl: f64,
}

/// Loss history. Wall-clock timings live beside the records but are written
/// to a separate file, so the CSV stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub control_label: String,
    pub hyper: (String, f64),
    pub records: Vec<EpochRecord>,
    pub seconds: Vec<f64>,
    pub r_scale: Option<f64>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        artifacts::write_csv_atomic(path, |w| {
            w.write_record([
                "epoch",
                "elbo",
                self.control_label.as_str(),
                "total",
                "kl",
                self.hyper.0.as_str(),
            ])?;
            for r in &self.records {
                w.write_record([
                    r.epoch.to_string(),
                    format!("{:?}", r.elbo),
                    format!("{:?}", r.control),
                    format!("{:?}", r.total),
                    format!("{:?}", r.kl),
                    format!("{:?}", self.hyper.1),
                ])?;
            }
            Ok(())
        })
    }

    /// Timing sidecar: per-epoch seconds and the frozen scale.
    pub fn write_timing(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Timing<'a> {
            seconds_per_epoch: &'a [f64],
            total_seconds: f64,
            r_scale: Option<f64>,
        }
        artifacts::write_json_atomic(
            path,
            &Timing {
                seconds_per_epoch: &self.seconds,
                total_seconds: self.seconds.iter().sum(),
                r_scale: self.r_scale,
            },
        )
    }

    /// Mean total loss over the first and last `frac` of epochs.
    pub fn head_tail_means(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let k = ((n as f64 * frac).floor() as usize).max(1);
        let mean = |rs: &[EpochRecord]| rs.iter().map(|r| r.total).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.records[..k]), mean(&self.records[n - k..])))
    }

    pub fn min_kl(&self) -> f64 {
        self.records.iter().map(|r| r.kl).fold(f64::INFINITY, f64::min)
    }
}

const CHECKPOINT_FORMAT: u32 = 1;

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format: u32,
    pub model: M,
    pub adam: AdamState,
    pub r_scale: Option<f64>,
    pub epochs_done: usize,
    pub config: TrainConfig,
    pub log: TrainLog,
}

impl<M: Trainable> Checkpoint<M> {
    pub fn save(&self, path: &Path) -> Result<()> {
        artifacts::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("unsupported checkpoint format {}", ck.format),
            });
        }
        Ok(ck)
    }
}

/// The result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub log: TrainLog,
    pub checkpoint: Checkpoint<M>,
}

fn check_schema(expected: &Schema, found: &Schema) -> Result<()> {
    if expected != found {
        return Err(Error::SchemaMismatch {
            expected: expected.signature(),
            found: found.signature(),
        });
    }
    Ok(())
}

/// Row indices of each batch in `epoch`.
pub fn batch_plan(rows: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..rows).collect();
    if batch >= rows {
        return vec![idx];
    }
    NoiseStream::new(seed, Purpose::BatchOrder, epoch, 0).shuffle(&mut idx);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Train `model` from its current parameters for `config.epochs` epochs.
/// With `checkpoint` set, state is written at the configured interval and
/// at the end; on divergence the last good state is written there.
pub fn train<M: Trainable>(
    model: M,
    data: &TabularDataset,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome<M>> {
    check_schema(model.schema(), &data.schema)?;
    config.validate(data.len())?;
    let batch = Batch::from_dataset(data)?;
    let bsize = config.effective_batch(batch.len());
    let first = batch_plan(batch.len(), bsize, config.seed, 0).remove(0);
    let ctx = StepContext {
        seed: config.seed,
        epoch: 0,
        batch: 0,
        gamma: config.gamma,
        scale: None,
        objective: config.objective,
    };
    let first_batch = if first.len() == batch.len() {
        Cow::Borrowed(&batch)
    } else {
        Cow::Owned(batch.rows(&first)?)
    };
    let r_scale = model.initial_scale(&first_batch, ctx)?;
    let state = Checkpoint {
        format: CHECKPOINT_FORMAT,
        adam: AdamState::new(config.adam, model.params()),
        log: TrainLog {
            control_label: model.control_label().to_string(),
            hyper: {
                let (k, v) = model.log_hyper(config);
                (k.to_string(), v)
            },
            records: Vec::new(),
            seconds: Vec::new(),
            r_scale,
        },
        model,
        r_scale,
        epochs_done: 0,
        config: config.clone(),
    };
    run(state, &batch, config.epochs, checkpoint)
}

/// Continue a checkpointed run for `remaining` more epochs.
pub fn resume<M: Trainable>(
    path: &Path,
    data: &TabularDataset,
    remaining: usize,
) -> Result<TrainOutcome<M>> {
    let mut state: Checkpoint<M> = Checkpoint::load(path)?;
    check_schema(state.model.schema(), &data.schema)?;
    let batch = Batch::from_dataset(data)?;
    let until = state.epochs_done + remaining;
    state.config.epochs = until;
    run(state, &batch, until, Some(path))
}

fn run<M: Trainable>(
    mut state: Checkpoint<M>,
    data: &Batch,
    until: usize,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome<M>> {
    let config = state.config.clone();
    let bsize = config.effective_batch(data.len());
    while state.epochs_done < until {
        let epoch = state.epochs_done;
        let good = state.clone();
        match run_epoch(&mut state, data, bsize, epoch) {
            Ok(()) => {}
            Err(e) => {
                if let Some(p) = checkpoint {
                    good.save(p)?;
                }
                log::error!("training diverged at epoch {epoch}: {e}");
                return Err(Error::Diverged {
                    epoch,
                    source: Box::new(e),
                });
            }
        }
        state.epochs_done += 1;
        if let Some(p) = checkpoint {
            let every = config.checkpoint_interval;
            if every > 0 && state.epochs_done % every == 0 && state.epochs_done < until {
                state.save(p)?;
            }
        }
    }
    if let Some(p) = checkpoint {
        state.save(p)?;
    }
    Ok(TrainOutcome {
        model: state.model.clone(),
        log: state.log.clone(),
        checkpoint: state,
    })
}

fn run_epoch<M: Trainable>(
    state: &mut Checkpoint<M>,
    data: &Batch,
    bsize: usize,
    epoch: usize,
) -> Result<()> {
    let start = Instant::now();
    let cfg = &state.config;
    let plan = batch_plan(data.len(), bsize, cfg.seed, epoch as u64);
    let mut sums = EpochRecord {
        epoch,
        elbo: 0.0,
        control: 0.0,
        total: 0.0,
        kl: 0.0,
    };
    for (b, idx) in plan.iter().enumerate() {
        let batch = if idx.len() == data.len() {
            Cow::Borrowed(data)
        } else {
            Cow::Owned(data.rows(idx)?)
        };
        let ctx = StepContext {
            seed: cfg.seed,
            epoch: epoch as u64,
            batch: b as u64,
            gamma: cfg.gamma,
            scale: state.r_scale,
            objective: cfg.objective,
        };
        let mut g = Graph::new();
        let p = state.model.params().bind(&mut g);
        let (loss, parts) = state.model.batch_loss(&mut g, &p, &batch, ctx)?;
        let total = g.value(&loss).item()?;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                head: "total".into(),
            });
        }
        let grads = p.gradients(&g.backward(loss)?);
        if let Some((name, _)) = grads.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::NonFiniteLoss {
                head: format!("gradient of {name}"),
            });
        }
        adam_step(state.model.params_mut(), &grads, &mut state.adam)?;
        let w = idx.len() as f64 / data.len() as f64;
        sums.elbo += w * parts.elbo;
        sums.control += w * parts.control;
        sums.total += w * total;
        sums.kl += w * parts.kl;
    }
    state.log.records.push(sums);
    state.log.seconds.push(start.elapsed().as_secs_f64());
    Ok(())
}

impl Trainable for CausalModel {
    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn control_label(&self) -> &'static str {
        "l_c"
    }

    fn log_hyper(&self, config: &TrainConfig) -> (&'static str, f64) {
        ("gamma", config.gamma)
    }

    fn initial_scale(&self, batch: &Batch, ctx: StepContext) -> Result<Option<f64>> {
        match ctx.objective {
            ObjectiveKind::ElboWithControl => {
                let noise = self.draw_noise(
                    batch.len(),
                    &mut NoiseStream::for_step(ctx.seed, ctx.epoch, ctx.batch),
                );
                Ok(Some(self.normalization_scale(batch, &noise)?))
            }
            _ => Ok(None),
        }
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &BoundParams<Var>,
        batch: &Batch,
        ctx: StepContext,
    ) -> Result<(Var, StepParts)> {
        let mut stream = NoiseStream::for_step(ctx.seed, ctx.epoch, ctx.batch);
        let terms = self.elbo_loss(g, p, batch, &mut stream)?;
        let mut parts = StepParts {
            elbo: g.value(&terms.elbo).item()?,
            control: 0.0,
            kl: g.value(&terms.kl).item()?,
        };
        if self.spec.variant == Variant::Exoc {
            let (a, b) = self.control_pair(&terms)?;
            let lc = control_loss(g, a, b)?;
            parts.control = g.value(&lc).item()?;
        }
        let loss = match ctx.objective {
            ObjectiveKind::Elbo => terms.elbo.clone(),
            ObjectiveKind::ElboWithControl => {
                let r = ctx
                    .scale
                    .ok_or_else(|| Error::contract("normalisation scale not initialised"))?;
                self.total_loss(g, &terms, ctx.gamma, r)?
            }
            ObjectiveKind::Generator => {
                return Err(Error::contract("causal models use an ELBO objective"))
            }
        };
        Ok((loss, parts))
    }
}

/// Default file names for a training run in `dir`.
pub fn run_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.checkpoint.json")),
        dir.join(format!("{stem}.trainlog.csv")),
        dir.join(format!("{stem}.timing.json")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_rule() {
        let c = TrainConfig::new(ObjectiveKind::Elbo, 1, 0);
        assert_eq!(c.effective_batch(4096), 4096);
        assert_eq!(c.effective_batch(4097), 1024);
        let plan = batch_plan(2500, 1024, 3, 0);
        assert_eq!(plan.iter().map(Vec::len).collect::<Vec<_>>(), vec![1024, 1024, 452]);
        let mut all: Vec<usize> = plan.concat();
        all.sort();
        assert_eq!(all, (0..2500).collect::<Vec<_>>());
        assert_eq!(plan, batch_plan(2500, 1024, 3, 0));
        assert_ne!(plan, batch_plan(2500, 1024, 3, 1));
    }

    #[test]
    fn config_rejects_zero_epochs() {
        let c = TrainConfig::new(ObjectiveKind::Elbo, 0, 0);
        assert!(c.validate(10).is_err());
        let mut c = TrainConfig::new(ObjectiveKind::Elbo, 1, 0);
        c.batch_size = Some(11);
        assert!(c.validate(10).is_err());
    }
}
