//! Latent-variable causal models: the Fair-K baseline graph and the graph
//! with an auxiliary node S′ (parent of S and Y) and a control node S″
//! (descendant of Y).
//!
//! Both are trained by amortised variational inference. Root latents (K, S′)
//! have standard-normal priors; S″ has the conditional prior p(S″ | Y). The
//! negative ELBO is the batch mean of the single-sample reconstruction term
//! plus closed-form Gaussian KL terms.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph, Ops, Var};
use crate::dataio::{Schema, TabularDataset, TaskKind};
use crate::error::{Error, Result};
use crate::heads::{FeatureHead, TargetHead};
use crate::nn::{self, GaussianEncoder, GaussianParams, Mlp};
use crate::noise::NoiseStream;
use crate::optim::{BoundParams, ParameterStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FairK,
    Exoc,
}

/// What the auxiliary node is pulled towards by the control loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlTarget {
    /// The control node S″.
    SDoublePrime,
    /// The model's own posterior-mean prediction of Y.
    PredictedY,
}

/// Graph nodes, observed and latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    K,
    SPrime,
    SDoublePrime,
    X,
    S,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalModelSpec {
    pub variant: Variant,
    pub dim_k: usize,
    pub dim_s_prime: usize,
    pub dim_s_dprime: usize,
    /// Hidden width of every guide and decoder network.
    pub hidden: usize,
    pub control_target: ControlTarget,
    /// Adds the S′ → X arrow to the feature decoder.
    #[serde(default)]
    pub aux_to_features: bool,
    /// What the control loss compares.
    #[serde(default)]
    pub control_input: ControlInput,
}

/// Whether the control loss sees posterior means or reparameterised samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlInput {
    Means,
    #[default]
    Samples,
}

impl CausalModelSpec {
    pub fn fair_k() -> Self {
        CausalModelSpec {
            variant: Variant::FairK,
            dim_k: 1,
            dim_s_prime: 1,
            dim_s_dprime: 1,
            hidden: 16,
            control_target: ControlTarget::SDoublePrime,
            aux_to_features: false,
            control_input: ControlInput::Samples,
        }
    }

    pub fn exoc() -> Self {
        CausalModelSpec {
            variant: Variant::Exoc,
            ..CausalModelSpec::fair_k()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_k == 0 || self.hidden == 0 {
            return Err(Error::contract("latent and hidden dims must be >= 1"));
        }
        if self.variant == Variant::Exoc {
            if self.dim_s_prime == 0 || self.dim_s_dprime == 0 {
                return Err(Error::contract("S′ and S″ dims must be >= 1"));
            }
            if self.dim_s_prime != self.dim_s_dprime {
                return Err(Error::contract(format!(
                    "control loss compares S′ and S″ elementwise: dim_s_prime {} != dim_s_dprime {}",
                    self.dim_s_prime, self.dim_s_dprime
                )));
            }
            if self.control_target == ControlTarget::PredictedY && self.dim_s_prime != 1 {
                return Err(Error::contract(
                    "the predicted-Y control target needs dim_s_prime = 1",
                ));
            }
        }
        Ok(())
    }

    /// Parents of `node` in the generative model.
    pub fn decoder_parents(&self, node: Node) -> Vec<Node> {
        use Node::*;
        match (self.variant, node) {
            (Variant::FairK, X) | (Variant::FairK, Y) => vec![K, S],
            (Variant::FairK, _) => vec![],
            (Variant::Exoc, X) if self.aux_to_features => vec![K, SPrime],
            (Variant::Exoc, X) => vec![K],
            (Variant::Exoc, S) => vec![SPrime],
            (Variant::Exoc, Y) => vec![K, SPrime],
            (Variant::Exoc, SDoublePrime) => vec![Y],
            (Variant::Exoc, K) | (Variant::Exoc, SPrime) => vec![],
        }
    }

    /// Conditioning set of the guide for a latent node.
    pub fn guide_inputs(&self, latent: Node) -> Vec<Node> {
        use Node::*;
        match latent {
            K | SPrime => vec![X, Y, S],
            SDoublePrime => vec![Y],
            _ => vec![],
        }
    }

    pub fn latents(&self) -> Vec<Node> {
        match self.variant {
            Variant::FairK => vec![Node::K],
            Variant::Exoc => vec![Node::K, Node::SPrime, Node::SDoublePrime],
        }
    }
}

/// One batch of observed data on the modelling scale.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub s_onehot: Tensor,
    pub s: Vec<usize>,
}

impl Batch {
    pub fn from_dataset(ds: &TabularDataset) -> Result<Self> {
        Ok(Batch {
            x: ds.x().clone(),
            y: ds.y_column()?,
            s_onehot: ds.s_onehot(),
            s: ds.s().to_vec(),
        })
    }

    pub fn rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(Batch {
            x: self.x.select_rows(idx)?,
            y: self.y.select_rows(idx)?,
            s_onehot: self.s_onehot.select_rows(idx)?,
            s: idx.iter().map(|&i| self.s[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Standard-normal draws for the reparameterised latents of one batch.
#[derive(Debug, Clone)]
pub struct LatentNoise {
    pub k: Tensor,
    pub s_prime: Option<Tensor>,
    pub s_dprime: Option<Tensor>,
}

impl LatentNoise {
    pub fn rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(LatentNoise {
            k: self.k.select_rows(idx)?,
            s_prime: self.s_prime.as_ref().map(|t| t.select_rows(idx)).transpose()?,
            s_dprime: self.s_dprime.as_ref().map(|t| t.select_rows(idx)).transpose()?,
        })
    }
}

/// Everything one forward pass produces. Scalars are batch means.
pub struct ElboTerms<V> {
    /// Negative ELBO.
    pub elbo: V,
    /// Sum of the closed-form KL terms.
    pub kl: V,
    pub s_prime_mean: Option<V>,
    pub s_dprime_mean: Option<V>,
    /// Posterior-mean prediction of Y, `batch × 1`.
    pub y_hat: Option<V>,
    pub k_sample: V,
    pub s_prime_sample: Option<V>,
    pub s_dprime_sample: Option<V>,
}

/// Posterior means for a dataset.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub k: Tensor,
    pub s_prime: Option<Tensor>,
    pub s_dprime: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalModel {
    pub spec: CausalModelSpec,
    pub schema: Schema,
    pub params: ParameterStore,
    pub seed: u64,
}

fn tag_head<T>(head: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { op } => Error::NonFiniteLoss {
            head: format!("{head} ({op})"),
        },
        other => other,
    })
}

impl CausalModel {
    pub fn width_of(&self, node: Node) -> usize {
        match node {
            Node::K => self.spec.dim_k,
            Node::SPrime => self.spec.dim_s_prime,
            Node::SDoublePrime => self.spec.dim_s_dprime,
            Node::X => self.schema.encoded_width(),
            Node::S => self.schema.n_sensitive(),
            Node::Y => 1,
        }
    }

    fn input_width(&self, nodes: &[Node]) -> usize {
        nodes.iter().map(|n| self.width_of(*n)).sum()
    }

    fn guide(&self, latent: Node) -> GaussianEncoder {
        let (prefix, dim) = match latent {
            Node::K => ("guide.k", self.spec.dim_k),
            Node::SPrime => ("guide.s_prime", self.spec.dim_s_prime),
            _ => ("guide.s_dprime", self.spec.dim_s_dprime),
        };
        let input = self.input_width(&self.spec.guide_inputs(latent));
        GaussianEncoder::new(prefix, input, self.spec.hidden, dim)
    }

    fn x_decoder(&self) -> Mlp {
        let input = self.input_width(&self.spec.decoder_parents(Node::X));
        Mlp::new("dec.x", input, self.spec.hidden, self.schema.encoded_width())
    }

    fn y_decoder(&self) -> Mlp {
        let input = self.input_width(&self.spec.decoder_parents(Node::Y));
        Mlp::new("dec.y", input, self.spec.hidden, 1)
    }

    fn s_decoder(&self) -> Mlp {
        Mlp::new(
            "dec.s",
            self.spec.dim_s_prime,
            self.spec.hidden,
            self.schema.n_sensitive(),
        )
    }

    /// Conditional prior p(S″ | Y).
    fn sdd_prior(&self) -> GaussianEncoder {
        GaussianEncoder::new("dec.s_dprime", 1, self.spec.hidden, self.spec.dim_s_dprime)
    }

    fn feature_head(&self) -> FeatureHead {
        FeatureHead::new("dec.x", &self.schema)
    }

    fn target_head(&self) -> TargetHead {
        TargetHead::new("dec.y", self.schema.task())
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if &self.schema != schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.signature(),
                found: schema.signature(),
            });
        }
        Ok(())
    }

    pub fn draw_noise(&self, n: usize, stream: &mut NoiseStream) -> LatentNoise {
        let k = stream.normal(n, self.spec.dim_k);
        let exoc = self.spec.variant == Variant::Exoc;
        let s_prime = exoc.then(|| stream.normal(n, self.spec.dim_s_prime));
        // Drawn last so the other streams do not depend on this setting.
        let s_dprime = (exoc && self.spec.control_input == ControlInput::Samples)
            .then(|| stream.normal(n, self.spec.dim_s_dprime));
        LatentNoise { k, s_prime, s_dprime }
    }

    fn concat<O: Ops>(ops: &mut O, parts: Vec<O::Value>) -> Result<O::Value> {
        if parts.len() == 1 {
            Ok(parts.into_iter().next().expect("one part"))
        } else {
            ops.concat_cols(&parts)
        }
    }

    /// Forward pass with explicit noise. Every scalar is a batch mean, so the
    /// value on a batch equals the mean of the per-individual values.
    pub fn forward<O: Ops>(
        &self,
        ops: &mut O,
        p: &BoundParams<O::Value>,
        batch: &Batch,
        noise: &LatentNoise,
    ) -> Result<ElboTerms<O::Value>> {
        let x = ops.constant(batch.x.clone());
        let y = ops.constant(batch.y.clone());
        let s = ops.constant(batch.s_onehot.clone());
        let obs = Self::concat(ops, vec![x, y.clone(), s.clone()])?;

        let qk = tag_head("guide.k", self.guide(Node::K).forward(ops, p, &obs))?;
        let k = nn::reparameterize(ops, &qk, noise.k.clone())?;
        let mut kl = tag_head("kl.k", nn::kl_standard_normal(ops, &qk))?;

        let mut s_prime_mean = None;
        let mut s_dprime_mean = None;
        let mut s_prime_sample = None;
        let mut s_dprime_sample = None;
        let mut y_hat = None;

        let neg_ll = match self.spec.variant {
            Variant::FairK => {
                let inp = Self::concat(ops, vec![k.clone(), s.clone()])?;
                let xloc = self.x_decoder().forward(ops, p, &inp)?;
                let llx = tag_head(
                    "dec.x",
                    self.feature_head().log_likelihood(ops, p, &xloc, &batch.x),
                )?;
                let yloc = self.y_decoder().forward(ops, p, &inp)?;
                let lly = tag_head(
                    "dec.y",
                    self.target_head().log_likelihood(ops, p, &yloc, &batch.y),
                )?;
                let ll = ops.add(&llx, &lly)?;
                ops.neg(&ll)?
            }
            Variant::Exoc => {
                let qsp = tag_head(
                    "guide.s_prime",
                    self.guide(Node::SPrime).forward(ops, p, &obs),
                )?;
                let sp_noise = noise
                    .s_prime
                    .clone()
                    .ok_or_else(|| Error::contract("missing S′ noise"))?;
                let sp = nn::reparameterize(ops, &qsp, sp_noise)?;
                let kl_sp = tag_head("kl.s_prime", nn::kl_standard_normal(ops, &qsp))?;
                kl = ops.add(&kl, &kl_sp)?;

                let qsdd = tag_head(
                    "guide.s_dprime",
                    self.guide(Node::SDoublePrime).forward(ops, p, &y),
                )?;
                let psdd = tag_head("dec.s_dprime", self.sdd_prior().forward(ops, p, &y))?;
                let kl_sdd = tag_head("kl.s_dprime", nn::kl_gaussians(ops, &qsdd, &psdd))?;
                kl = ops.add(&kl, &kl_sdd)?;

                let x_in = if self.spec.aux_to_features {
                    Self::concat(ops, vec![k.clone(), sp.clone()])?
                } else {
                    k.clone()
                };
                let xloc = self.x_decoder().forward(ops, p, &x_in)?;
                let llx = tag_head(
                    "dec.x",
                    self.feature_head().log_likelihood(ops, p, &xloc, &batch.x),
                )?;

                let slog = self.s_decoder().forward(ops, p, &sp)?;
                let lls = tag_head("dec.s", nn::categorical_log_likelihood(ops, &s, &slog))?;

                let y_in = Self::concat(ops, vec![k.clone(), sp.clone()])?;
                let yloc = self.y_decoder().forward(ops, p, &y_in)?;
                let lly = tag_head(
                    "dec.y",
                    self.target_head().log_likelihood(ops, p, &yloc, &batch.y),
                )?;

                let ll = ops.add(&llx, &lls)?;
                let ll = ops.add(&ll, &lly)?;
                let neg_ll = ops.neg(&ll)?;

                if self.spec.control_target == ControlTarget::PredictedY {
                    let mean_in = Self::concat(ops, vec![qk.mean.clone(), qsp.mean.clone()])?;
                    let loc = self.y_decoder().forward(ops, p, &mean_in)?;
                    y_hat = Some(self.target_head().mean_op(ops, &loc)?);
                }
                if let Some(eps) = noise.s_dprime.clone() {
                    s_dprime_sample = Some(nn::reparameterize(ops, &qsdd, eps)?);
                }
                s_prime_mean = Some(qsp.mean);
                s_dprime_mean = Some(qsdd.mean);
                s_prime_sample = Some(sp);
                neg_ll
            }
        };

        let per_row = ops.add(&neg_ll, &kl)?;
        let elbo = tag_head("elbo", ops.mean(&per_row))?;
        let kl = ops.mean(&kl)?;
        Ok(ElboTerms {
            elbo,
            kl,
            s_prime_mean,
            s_dprime_mean,
            y_hat,
            k_sample: k,
            s_prime_sample,
            s_dprime_sample,
        })
    }

    /// The two arguments of the control loss for this model's configuration.
    pub fn control_pair<'a, V>(&self, t: &'a ElboTerms<V>) -> Result<(&'a V, &'a V)> {
        let samples = self.spec.control_input == ControlInput::Samples;
        let sp = if samples { &t.s_prime_sample } else { &t.s_prime_mean }
            .as_ref()
            .ok_or_else(|| Error::contract("control loss needs the auxiliary node"))?;
        let other = match self.spec.control_target {
            ControlTarget::SDoublePrime if samples => t.s_dprime_sample.as_ref(),
            ControlTarget::SDoublePrime => t.s_dprime_mean.as_ref(),
            ControlTarget::PredictedY => t.y_hat.as_ref(),
        }
        .ok_or_else(|| Error::contract("control target missing from forward pass"))?;
        Ok((sp, other))
    }

    /// Tracked negative ELBO for one batch and one noise stream.
    pub fn elbo_loss(
        &self,
        g: &mut Graph,
        p: &BoundParams<Var>,
        batch: &Batch,
        stream: &mut NoiseStream,
    ) -> Result<ElboTerms<Var>> {
        let noise = self.draw_noise(batch.len(), stream);
        self.forward(g, p, batch, &noise)
    }

    /// `L_ELBO + γ·R·L_c` on the tape.
    pub fn total_loss<O: Ops>(
        &self,
        ops: &mut O,
        terms: &ElboTerms<O::Value>,
        gamma: f64,
        r_scale: f64,
    ) -> Result<O::Value> {
        if self.spec.variant == Variant::FairK {
            return Err(Error::contract(
                "total loss needs the auxiliary and control nodes; Fair-K has neither",
            ));
        }
        if !(gamma > 0.0 && r_scale > 0.0) {
            return Err(Error::contract(format!(
                "gamma and R must be positive, got {gamma} and {r_scale}"
            )));
        }
        let (a, b) = self.control_pair(terms)?;
        let lc = control_loss(ops, a, b)?;
        let w = ops.scale(&lc, gamma * r_scale)?;
        ops.add(&terms.elbo, &w)
    }

    /// Negative ELBO and control loss values without recording.
    pub fn loss_values(&self, batch: &Batch, noise: &LatentNoise) -> Result<(f64, Option<f64>)> {
        let mut e = Eval;
        let p = self.params.bind(&mut e);
        let t = self.forward(&mut e, &p, batch, noise)?;
        let lc = match self.spec.variant {
            Variant::FairK => None,
            Variant::Exoc => {
                let (a, b) = self.control_pair(&t)?;
                Some(control_loss(&mut e, a, b)?.item()?)
            }
        };
        Ok((t.elbo.item()?, lc))
    }

    /// Guide means for every individual; no sampling.
    pub fn infer_posterior(&self, ds: &TabularDataset) -> Result<Posterior> {
        self.check_schema(&ds.schema)?;
        let batch = Batch::from_dataset(ds)?;
        let mut e = Eval;
        let p = self.params.bind(&mut e);
        let obs = tensor_concat(&[&batch.x, &batch.y, &batch.s_onehot])?;
        let k = self.guide(Node::K).forward(&mut e, &p, &obs)?.mean;
        let (s_prime, s_dprime) = match self.spec.variant {
            Variant::FairK => (None, None),
            Variant::Exoc => (
                Some(self.guide(Node::SPrime).forward(&mut e, &p, &obs)?.mean),
                Some(self.guide(Node::SDoublePrime).forward(&mut e, &p, &batch.y)?.mean),
            ),
        };
        for t in std::iter::once(&k).chain(s_prime.iter()).chain(s_dprime.iter()) {
            if !t.all_finite() {
                return Err(Error::NonFiniteLoss {
                    head: "posterior".into(),
                });
            }
        }
        Ok(Posterior {
            k,
            s_prime,
            s_dprime,
        })
    }

    /// Guide posterior for K as mean and log-variance (used by tests of the
    /// reparameterisation identity).
    pub fn k_posterior(&self, batch: &Batch) -> Result<GaussianParams<Tensor>> {
        let mut e = Eval;
        let p = self.params.bind(&mut e);
        let obs = tensor_concat(&[&batch.x, &batch.y, &batch.s_onehot])?;
        self.guide(Node::K).forward(&mut e, &p, &obs)
    }
}

fn tensor_concat(parts: &[&Tensor]) -> Result<Tensor> {
    crate::tensor::concat_cols(parts)
}

/// Parameters for `spec` on `schema`, initialised from `seed`.
pub fn build_model(spec: &CausalModelSpec, schema: &Schema, seed: u64) -> Result<CausalModel> {
    spec.validate()?;
    schema.validate()?;
    let mut model = CausalModel {
        spec: spec.clone(),
        schema: schema.clone(),
        params: ParameterStore::new(),
        seed,
    };
    let mut store = ParameterStore::new();
    model.guide(Node::K).register(&mut store, seed)?;
    model.x_decoder().register(&mut store, seed)?;
    model.y_decoder().register(&mut store, seed)?;
    model.feature_head().register(&mut store)?;
    model.target_head().register(&mut store)?;
    if spec.variant == Variant::Exoc {
        model.guide(Node::SPrime).register(&mut store, seed)?;
        model.guide(Node::SDoublePrime).register(&mut store, seed)?;
        model.s_decoder().register(&mut store, seed)?;
        model.sdd_prior().register(&mut store, seed)?;
    }
    model.params = store;
    Ok(model)
}

/// `(1/D) Σ_i ‖a_i − b_i‖²`. A single-column `b` broadcasts only when `a`
/// is also a single column.
pub fn control_loss<O: Ops>(ops: &mut O, a: &O::Value, b: &O::Value) -> Result<O::Value> {
    let (sa, sb) = (ops.value(a).shape().to_vec(), ops.value(b).shape().to_vec());
    if sa != sb {
        return Err(Error::Shape {
            op: "control_loss",
            left: sa,
            right: sb,
        });
    }
    let d = ops.sub(a, b)?;
    let d2 = ops.square(&d)?;
    let rs = ops.row_sums(&d2)?;
    ops.mean(&rs)
}

/// `|L_ELBO| / (|L_c| + 1e-12)`.
pub fn normalization_scale(elbo: f64, control: f64) -> f64 {
    elbo.abs() / (control.abs() + 1e-12)
}

impl CausalModel {
    /// Scale R from the untrained model on its first batch.
    pub fn normalization_scale(&self, batch: &Batch, noise: &LatentNoise) -> Result<f64> {
        match self.loss_values(batch, noise)? {
            (elbo, Some(lc)) => Ok(normalization_scale(elbo, lc)),
            (_, None) => Err(Error::contract("Fair-K has no control loss to normalise")),
        }
    }

    pub fn task(&self) -> TaskKind {
        self.schema.task()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{ColumnKind, ColumnSpec};

    pub(crate) fn schema() -> Schema {
        Schema {
            name: "toy".into(),
            columns: vec![
                ColumnSpec::with_categories("race", ColumnKind::Sensitive, &["a", "b", "c"]),
                ColumnSpec::continuous("gpa"),
                ColumnSpec::continuous("lsat"),
                ColumnSpec {
                    name: "fya".into(),
                    kind: ColumnKind::ContinuousTarget,
                    categories: vec![],
                },
            ],
            standardize_target: true,
        }
    }

    fn batch() -> Batch {
        Batch {
            x: Tensor::from_rows(&[vec![0.1, -0.3], vec![1.2, 0.4], vec![-0.7, 0.9]]).unwrap(),
            y: Tensor::column(vec![0.2, -1.0, 0.5]).unwrap(),
            s_onehot: crate::dataio::onehot(&[0, 2, 1], 3),
            s: vec![0, 2, 1],
        }
    }

    #[test]
    fn fairk_has_no_auxiliary_params() {
        let m = build_model(&CausalModelSpec::fair_k(), &schema(), 1).unwrap();
        assert!(m.params.names().all(|n| !n.contains("s_prime") && !n.contains("s_dprime")));
        assert!(m.params.names().all(|n| !n.starts_with("dec.s.")));
        let e = build_model(&CausalModelSpec::exoc(), &schema(), 1).unwrap();
        assert!(e.params.names().any(|n| n.contains("s_prime")));
    }

    #[test]
    fn mismatched_aux_dims_rejected() {
        let spec = CausalModelSpec {
            dim_s_prime: 4,
            dim_s_dprime: 3,
            ..CausalModelSpec::exoc()
        };
        assert!(build_model(&spec, &schema(), 1).is_err());
        let spec = CausalModelSpec {
            dim_s_prime: 2,
            dim_s_dprime: 2,
            control_target: ControlTarget::PredictedY,
            ..CausalModelSpec::exoc()
        };
        assert!(build_model(&spec, &schema(), 1).is_err());
    }

    #[test]
    fn init_deterministic() {
        let a = build_model(&CausalModelSpec::exoc(), &schema(), 5).unwrap();
        let b = build_model(&CausalModelSpec::exoc(), &schema(), 5).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn exoc_target_parents_exclude_s() {
        let spec = CausalModelSpec::exoc();
        assert_eq!(spec.decoder_parents(Node::Y), vec![Node::K, Node::SPrime]);
        assert!(!spec.decoder_parents(Node::Y).contains(&Node::S));
        assert_eq!(spec.decoder_parents(Node::S), vec![Node::SPrime]);
        assert_eq!(spec.decoder_parents(Node::SDoublePrime), vec![Node::Y]);
        let fk = CausalModelSpec::fair_k();
        assert_eq!(fk.decoder_parents(Node::Y), vec![Node::K, Node::S]);
    }

    #[test]
    fn control_loss_values() {
        let mut e = Eval;
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(control_loss(&mut e, &a, &b).unwrap().item().unwrap(), 5.0);
        assert_eq!(control_loss(&mut e, &a, &a).unwrap().item().unwrap(), 0.0);
        let a2 = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let b2 = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(control_loss(&mut e, &a2, &b2).unwrap().item().unwrap(), 5.0);
        assert!(control_loss(&mut e, &a, &a2).is_err());
    }

    #[test]
    fn normalization_scale_values() {
        assert!((normalization_scale(100.0, 4.0) - 25.0).abs() < 1e-9);
        let r = normalization_scale(3.0, 0.0);
        assert!(r.is_finite() && (r - 3e12).abs() < 1.0);
    }

    #[test]
    fn batch_value_is_mean_of_rows() {
        let m = build_model(&CausalModelSpec::exoc(), &schema(), 3).unwrap();
        let b = batch();
        let noise = m.draw_noise(3, &mut NoiseStream::for_step(9, 0, 0));
        let (full, _) = m.loss_values(&b, &noise).unwrap();
        let mut acc = 0.0;
        for i in 0..3 {
            let (v, _) = m
                .loss_values(&b.rows(&[i]).unwrap(), &noise.rows(&[i]).unwrap())
                .unwrap();
            acc += v;
        }
        assert!((full - acc / 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_rules() {
        let m = build_model(&CausalModelSpec::exoc(), &schema(), 3).unwrap();
        let b = batch();
        let noise = m.draw_noise(3, &mut NoiseStream::for_step(9, 0, 0));
        let mut e = Eval;
        let p = m.params.bind(&mut e);
        let t = m.forward(&mut e, &p, &b, &noise).unwrap();
        let elbo = t.elbo.item().unwrap();
        let tiny = m.total_loss(&mut e, &t, 1e-15, 1.0).unwrap().item().unwrap();
        assert!((tiny - elbo).abs() < 1e-12);
        let (a, c) = m.control_pair(&t).unwrap();
        let lc = control_loss(&mut e, a, c).unwrap().item().unwrap();
        let tot = m.total_loss(&mut e, &t, 1.5, 0.5).unwrap().item().unwrap();
        assert!((tot - (elbo + 0.75 * lc)).abs() < 1e-12);
        assert!(m.total_loss(&mut e, &t, 0.0, 1.0).is_err());

        let fk = build_model(&CausalModelSpec::fair_k(), &schema(), 3).unwrap();
        let p = fk.params.bind(&mut e);
        let nf = fk.draw_noise(3, &mut NoiseStream::for_step(9, 0, 0));
        let t = fk.forward(&mut e, &p, &b, &nf).unwrap();
        assert!(matches!(fk.total_loss(&mut e, &t, 1.2, 1.0), Err(Error::Contract(_))));
    }
}
