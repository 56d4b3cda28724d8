//! Counterfactual data generator.
//!
//! A Gaussian encoder q(H | X, Y) that never sees the sensitive attribute,
//! and a decoder p(X, Y | H, S). Training minimises the reconstruction loss
//! plus `τ/N_p` times the summed MMD² between the encoder means of every pair
//! of sensitive groups, which pushes H towards independence from S.
//! Counterfactuals decode the same H under every value of S.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::autodiff::{Eval, Graph, Ops, Var};
use crate::causal::Batch;
use crate::dataio::{encoded_column_names, onehot, Schema, Standardization, TabularDataset, TaskKind};
use crate::error::{Error, Result};
use crate::heads::{FeatureHead, TargetHead};
use crate::metrics;
use crate::nn::{self, GaussianEncoder, Mlp};
use crate::noise::{NoiseStream, Purpose};
use crate::optim::{BoundParams, ParameterStore};
use crate::par::Execution;
use crate::tensor::{self, Tensor};
use crate::trainer::{self, ObjectiveKind, StepContext, StepParts, TrainConfig, TrainOutcome, Trainable};

/// Number of unordered pairs of distinct sensitive values.
pub fn pair_count(n_sensitive: usize) -> usize {
    n_sensitive * n_sensitive.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub hidden: usize,
    pub tau: f64,
    /// Rows per sensitive group entering the penalty each step.
    pub max_group: usize,
    /// Epochs over which the penalty weight ramps linearly up to `tau`.
    #[serde(default)]
    pub warmup_epochs: usize,
}

impl GeneratorSpec {
    /// Penalty weight in effect during `epoch`.
    pub fn tau_at(&self, epoch: u64) -> f64 {
        if epoch >= self.warmup_epochs as u64 {
            self.tau
        } else {
            self.tau * epoch as f64 / self.warmup_epochs as f64
        }
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            latent_dim: 8,
            hidden: 32,
            tau: 1.0,
            max_group: 256,
            warmup_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub spec: GeneratorSpec,
    pub schema: Schema,
    pub params: ParameterStore,
    pub seed: u64,
    pub trained: bool,
    /// Sensitive-value frequencies of the training data.
    pub s_freq: Vec<f64>,
    /// Training statistics, so generated rows can be reported in original units.
    pub stats: Standardization,
}

impl GeneratorModel {
    pub fn new(spec: GeneratorSpec, data: &TabularDataset, seed: u64) -> Result<Self> {
        let k = data.n_sensitive();
        if k < 2 {
            return Err(Error::contract("generator needs at least two sensitive values"));
        }
        if !(spec.tau >= 0.0 && spec.tau.is_finite()) || spec.latent_dim == 0 || spec.hidden == 0 {
            return Err(Error::contract(format!("invalid generator spec {spec:?}")));
        }
        let mut s_freq = vec![0.0; k];
        for &s in data.s() {
            s_freq[s] += 1.0;
        }
        s_freq.iter_mut().for_each(|f| *f /= data.len() as f64);
        let mut m = GeneratorModel {
            spec,
            schema: data.schema.clone(),
            params: ParameterStore::new(),
            seed,
            trained: false,
            s_freq,
            stats: data.stats().clone(),
        };
        let mut store = ParameterStore::new();
        m.encoder().register(&mut store, seed)?;
        m.x_decoder().register(&mut store, seed)?;
        m.y_decoder().register(&mut store, seed)?;
        m.feature_head().register(&mut store)?;
        m.target_head().register(&mut store)?;
        m.params = store;
        Ok(m)
    }

    fn encoder(&self) -> GaussianEncoder {
        GaussianEncoder::new(
            "gen.enc",
            self.schema.encoded_width() + 1,
            self.spec.hidden,
            self.spec.latent_dim,
        )
    }

    fn x_decoder(&self) -> Mlp {
        Mlp::new(
            "gen.dec.x",
            self.spec.latent_dim + self.schema.n_sensitive(),
            self.spec.hidden,
            self.schema.encoded_width(),
        )
    }

    fn y_decoder(&self) -> Mlp {
        Mlp::new(
            "gen.dec.y",
            self.spec.latent_dim + self.schema.n_sensitive(),
            self.spec.hidden,
            1,
        )
    }

    fn feature_head(&self) -> FeatureHead {
        FeatureHead::new("gen.dec.x", &self.schema)
    }

    fn target_head(&self) -> TargetHead {
        TargetHead::new("gen.dec.y", self.schema.task())
    }

    pub fn n_sensitive(&self) -> usize {
        self.schema.n_sensitive()
    }

    /// Encoder means for the rows of `x`, `y` (modelling scale).
    pub fn encode(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        let mut e = Eval;
        let p = self.params.bind(&mut e);
        let inp = tensor::concat_cols(&[x, y])?;
        Ok(self.encoder().forward(&mut e, &p, &inp)?.mean)
    }

    /// Decoder locations for latent rows `h` under sensitive values `s`.
    fn decode_loc(&self, h: &Tensor, s: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut e = Eval;
        let p = self.params.bind(&mut e);
        let inp = tensor::concat_cols(&[h, &onehot(s, self.n_sensitive())])?;
        let xloc = self.x_decoder().forward(&mut e, &p, &inp)?;
        let yloc = self.y_decoder().forward(&mut e, &p, &inp)?;
        Ok((xloc, yloc))
    }

    /// Head means of the decoder: continuous values, class probabilities,
    /// and the regression value or positive-class probability.
    pub fn decode_mean(&self, h: &Tensor, s: &[usize]) -> Result<(Tensor, Vec<f64>)> {
        let (xloc, yloc) = self.decode_loc(h, s)?;
        Ok((
            self.feature_head().mean(&xloc),
            self.target_head().mean(&yloc).into_data(),
        ))
    }

    /// Reconstruction loss, penalty and their per-step combination.
    fn loss<O: Ops>(
        &self,
        ops: &mut O,
        p: &BoundParams<O::Value>,
        batch: &Batch,
        ctx: StepContext,
    ) -> Result<(O::Value, StepParts)> {
        let n = batch.len();
        let x = ops.constant(batch.x.clone());
        let y = ops.constant(batch.y.clone());
        let s = ops.constant(batch.s_onehot.clone());
        let xy = ops.concat_cols(&[x, y])?;
        let q = self.encoder().forward(ops, p, &xy)?;
        let eps = NoiseStream::new(ctx.seed, Purpose::Reparameterization, ctx.epoch, ctx.batch)
            .normal(n, self.spec.latent_dim);
        let h = nn::reparameterize(ops, &q, eps)?;
        let kl = nn::kl_standard_normal(ops, &q)?;
        let hs = ops.concat_cols(&[h, s])?;
        let xloc = self.x_decoder().forward(ops, p, &hs)?;
        let yloc = self.y_decoder().forward(ops, p, &hs)?;
        let llx = self.feature_head().log_likelihood(ops, p, &xloc, &batch.x)?;
        let lly = self.target_head().log_likelihood(ops, p, &yloc, &batch.y)?;
        let ll = ops.add(&llx, &lly)?;
        let per_row = ops.sub(&kl, &ll)?;
        let recon = ops.mean(&per_row)?;
        let kl_mean = ops.mean(&kl)?;

        let mut parts = StepParts {
            elbo: ops.value(&recon).item()?,
            control: 0.0,
            kl: ops.value(&kl_mean).item()?,
        };
        let penalty = self.penalty(ops, &q.mean, &batch.s, ctx)?;
        let total = match penalty {
            Some(pen) => {
                parts.control = ops.value(&pen).item()?;
                let tau = self.spec.tau_at(ctx.epoch);
                if tau > 0.0 {
                    let w = ops.scale(&pen, tau)?;
                    ops.add(&recon, &w)?
                } else {
                    recon
                }
            }
            None => recon,
        };
        Ok((total, parts))
    }

    /// `(1/N_p) Σ MMD²(H|s, H|s̃)` over pairs present in the batch.
    fn penalty<O: Ops>(
        &self,
        ops: &mut O,
        h: &O::Value,
        s: &[usize],
        ctx: StepContext,
    ) -> Result<Option<O::Value>> {
        let k = self.n_sensitive();
        let mut stream = NoiseStream::new(ctx.seed, Purpose::PenaltySubsample, ctx.epoch, ctx.batch);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &v) in s.iter().enumerate() {
            groups[v].push(i);
        }
        for g in groups.iter_mut() {
            if g.len() > self.spec.max_group {
                stream.shuffle(g);
                g.truncate(self.spec.max_group);
                g.sort_unstable();
            }
        }
        let n = s.len();
        let selected: Vec<Option<O::Value>> = groups
            .iter()
            .map(|g| {
                if g.is_empty() {
                    return Ok(None);
                }
                let mut sel = Tensor::zeros(&[g.len(), n]);
                for (r, &i) in g.iter().enumerate() {
                    sel.data_mut()[r * n + i] = 1.0;
                }
                let sel = ops.constant(sel);
                ops.matmul(&sel, h).map(Some)
            })
            .collect::<Result<_>>()?;
        let mut acc: Option<O::Value> = None;
        for a in 0..k {
            for b in a + 1..k {
                let (Some(ga), Some(gb)) = (&selected[a], &selected[b]) else {
                    log::debug!("sensitive pair ({a}, {b}) absent from batch; term skipped");
                    continue;
                };
                let term = mmd2_op(ops, ga, gb)?;
                acc = Some(match acc {
                    None => term,
                    Some(t) => ops.add(&t, &term)?,
                });
            }
        }
        acc.map(|t| ops.scale(&t, 1.0 / pair_count(k) as f64))
            .transpose()
    }

    /// Mean pairwise MMD² between the encoder means of the sensitive groups
    /// of `data`, with the median-heuristic bandwidth.
    pub fn latent_group_mmd(&self, data: &TabularDataset) -> Result<f64> {
        let h = self.encode(data.x(), &data.y_column()?)?;
        let k = self.n_sensitive();
        let groups: Vec<Vec<usize>> = (0..k)
            .map(|g| (0..data.len()).filter(|&i| data.s()[i] == g).collect())
            .collect();
        let mut total = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                if groups[a].is_empty() || groups[b].is_empty() {
                    continue;
                }
                let ha = h.select_rows(&groups[a])?;
                let hb = h.select_rows(&groups[b])?;
                let sigma = metrics::median_bandwidth(&ha, &hb);
                total += metrics::mmd2_rows(&ha, &hb, sigma, Execution::default())?.max(0.0);
            }
        }
        Ok(total / pair_count(k) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifacts::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Differentiable biased MMD² with a median-heuristic RBF bandwidth. The
/// bandwidth is computed from current values and treated as a constant.
pub fn mmd2_op<O: Ops>(ops: &mut O, a: &O::Value, b: &O::Value) -> Result<O::Value> {
    let sigma = metrics::median_bandwidth(ops.value(a), ops.value(b));
    mmd2_op_with(ops, a, b, sigma)
}

/// [`mmd2_op`] at a fixed bandwidth.
pub fn mmd2_op_with<O: Ops>(ops: &mut O, a: &O::Value, b: &O::Value, sigma: f64) -> Result<O::Value> {
    let inv = -1.0 / (2.0 * sigma * sigma);
    let kmean = |ops: &mut O, u: &O::Value, v: &O::Value| -> Result<O::Value> {
        let u2 = ops.square(u)?;
        let u2 = ops.row_sums(&u2)?;
        let v2 = ops.square(v)?;
        let v2 = ops.row_sums(&v2)?;
        let v2t = ops.transpose(&v2)?;
        let vt = ops.transpose(v)?;
        let uv = ops.matmul(u, &vt)?;
        let cross = ops.scale(&uv, -2.0)?;
        let d = ops.add(&u2, &v2t)?;
        let d = ops.add(&d, &cross)?;
        let z = ops.scale(&d, inv)?;
        let kmat = ops.exp(&z)?;
        ops.mean(&kmat)
    };
    let kaa = kmean(ops, a, a)?;
    let kbb = kmean(ops, b, b)?;
    let kab = kmean(ops, a, b)?;
    let kab2 = ops.scale(&kab, -2.0)?;
    let t = ops.add(&kaa, &kbb)?;
    ops.add(&t, &kab2)
}

impl Trainable for GeneratorModel {
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
        "penalty"
    }

    fn log_hyper(&self, _config: &TrainConfig) -> (&'static str, f64) {
        ("tau", self.spec.tau)
    }

    fn initial_scale(&self, _batch: &Batch, _ctx: StepContext) -> Result<Option<f64>> {
        Ok(None)
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        p: &BoundParams<Var>,
        batch: &Batch,
        ctx: StepContext,
    ) -> Result<(Var, StepParts)> {
        if ctx.objective != ObjectiveKind::Generator {
            return Err(Error::contract("generator trains with the generator objective"));
        }
        self.loss(g, p, batch, ctx)
    }
}

/// Train a fresh generator on `data`.
pub fn train_generator(
    data: &TabularDataset,
    spec: GeneratorSpec,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome<GeneratorModel>> {
    let model = GeneratorModel::new(spec, data, config.seed)?;
    let mut out = trainer::train(model, data, config, checkpoint)?;
    out.model.trained = true;
    Ok(out)
}

/// Each individual decoded under every sensitive value.
#[derive(Debug, Clone)]
pub struct CounterfactualSet {
    pub seed: u64,
    /// `arms[s]`: every individual with S forced to `s`, rows aligned with
    /// `factual_s`.
    pub arms: Vec<TabularDataset>,
    pub factual_s: Vec<usize>,
}

impl CounterfactualSet {
    pub fn len(&self) -> usize {
        self.factual_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factual_s.is_empty()
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(CounterfactualSet {
            seed: self.seed,
            arms: self.arms.iter().map(|a| a.subset(idx)).collect::<Result<_>>()?,
            factual_s: idx.iter().map(|&i| self.factual_s[i]).collect(),
        })
    }

    /// The same records expressed with another dataset's statistics.
    pub fn restandardize(&self, like: &TabularDataset) -> Self {
        CounterfactualSet {
            seed: self.seed,
            arms: self
                .arms
                .iter()
                .map(|a| a.restandardize(like.stats()))
                .collect(),
            factual_s: self.factual_s.clone(),
        }
    }

    /// Columns: id, arm, encoded features (original units), target, factual.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let schema = &self.arms[0].schema;
        let labels = &schema.sensitive().categories;
        artifacts::write_csv_atomic(path, |w| {
            let mut header = vec!["id".to_string(), "arm".to_string()];
            header.extend(encoded_column_names(schema));
            header.push(schema.target().name.clone());
            header.push("factual".into());
            w.write_record(&header)?;
            for i in 0..self.len() {
                for (s, arm) in self.arms.iter().enumerate() {
                    let mut rec = vec![arm.row_ids()[i].to_string(), labels[s].clone()];
                    rec.extend(arm.raw_x().row(i).iter().map(|v| format!("{v:?}")));
                    rec.push(format!("{:?}", arm.raw_y()[i]));
                    rec.push(u8::from(self.factual_s[i] == s).to_string());
                    w.write_record(&rec)?;
                }
            }
            Ok(())
        })
    }
}

fn arms_from_latent(
    model: &GeneratorModel,
    h: &Tensor,
    like: &TabularDataset,
    row_ids: &[usize],
) -> Result<Vec<TabularDataset>> {
    let n = h.rows();
    (0..model.n_sensitive())
        .map(|s| {
            let forced = vec![s; n];
            let (x, y) = model.decode_mean(h, &forced)?;
            let raw_x = model.stats.destandardize_x(&x);
            let raw_y = y.iter().map(|&v| model.stats.destandardize_y(v)).collect();
            like.with_raw_rows(raw_x, raw_y, forced, row_ids.to_vec())
        })
        .collect()
}

/// Counterfactual arms for the individuals of `data`, decoded from the
/// encoder mean with head means (no sampling).
pub fn generate_counterfactuals(
    model: &GeneratorModel,
    data: &TabularDataset,
    seed: u64,
) -> Result<CounterfactualSet> {
    if !model.trained {
        return Err(Error::contract("generator has not been trained"));
    }
    if model.schema != data.schema {
        return Err(Error::SchemaMismatch {
            expected: model.schema.signature(),
            found: data.schema.signature(),
        });
    }
    // The encoder works on the generator's training scale.
    let own = data.restandardize(&model.stats);
    let h = model.encode(own.x(), &own.y_column()?)?;
    Ok(CounterfactualSet {
        seed,
        arms: arms_from_latent(model, &h, data, data.row_ids())?,
        factual_s: data.s().to_vec(),
    })
}

/// `n` synthetic individuals: H from the prior, S from the training
/// frequencies, a noisy factual record, and mean-decoded arms for every S.
/// The returned dataset is standardised on its own statistics.
pub fn synthesize_dataset(
    model: &GeneratorModel,
    n: usize,
    seed: u64,
) -> Result<(TabularDataset, CounterfactualSet)> {
    if n == 0 {
        return Err(Error::contract("synthesis size must be >= 1"));
    }
    if !model.trained {
        return Err(Error::contract("generator has not been trained"));
    }
    let mut stream = NoiseStream::new(seed, Purpose::Synthesis, 0, 0);
    let h = stream.normal(n, model.spec.latent_dim);
    let s: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rand::Rng::random(stream.rng());
            let mut acc = 0.0;
            for (k, f) in model.s_freq.iter().enumerate() {
                acc += f;
                if u < acc {
                    return k;
                }
            }
            model.s_freq.len() - 1
        })
        .collect();
    let (xloc, yloc) = model.decode_loc(&h, &s)?;
    let x = model.feature_head().sample(&xloc, &model.params, stream.rng())?;
    let mut y = model
        .target_head()
        .sample(&yloc, &model.params, stream.rng())?
        .into_data();
    if model.schema.task() == TaskKind::Regression {
        y.iter_mut()
            .for_each(|v| *v = model.stats.destandardize_y(*v));
    }
    let raw_x = model.stats.destandardize_x(&x);
    let ids: Vec<usize> = (0..n).collect();
    let raw = TabularDataset::from_raw(model.schema.clone(), raw_x, y, s.clone(), ids.clone())?;
    let stats = raw.fit_standardization();
    let data = raw.restandardize(&stats);
    let arms = arms_from_latent(model, &h, &data, &ids)?;
    Ok((
        data,
        CounterfactualSet {
            seed,
            arms,
            factual_s: s,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts() {
        assert_eq!(pair_count(2), 1);
        assert_eq!(pair_count(3), 3);
        assert_eq!(pair_count(4), 6);
    }

    #[test]
    fn mmd_op_matches_metric() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.5, -1.0], vec![2.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 1.0], vec![-0.5, 0.3]]).unwrap();
        let mut e = Eval;
        let v = mmd2_op(&mut e, &a, &b).unwrap().item().unwrap();
        let sigma = metrics::median_bandwidth(&a, &b);
        let r = metrics::mmd2_rows(&a, &b, sigma, Execution::Sequential).unwrap();
        assert!((v - r).abs() < 1e-12);
    }
}
