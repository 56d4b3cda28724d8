//! Likelihood heads for observed columns.
//!
//! A decoder network emits one "location" column per encoded feature (the
//! Gaussian mean for continuous columns, the logits for each categorical
//! block) plus one for the target. Heads turn locations into per-row
//! log-likelihoods, head means, or samples.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Ops;
use crate::dataio::{Schema, TaskKind};
use crate::error::{Error, Result};
use crate::nn;
use crate::optim::{BoundParams, ParameterStore};
use crate::tensor::Tensor;

/// Feature-matrix likelihood: Gaussian for continuous columns, categorical
/// for each one-hot block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHead {
    pub prefix: String,
    pub width: usize,
    pub continuous: Vec<usize>,
    pub blocks: Vec<(usize, usize)>,
}

impl FeatureHead {
    pub fn new(prefix: impl Into<String>, schema: &Schema) -> Self {
        let mut continuous = Vec::new();
        let mut blocks = Vec::new();
        for b in schema.feature_blocks() {
            if b.categorical {
                blocks.push((b.offset, b.width));
            } else {
                continuous.push(b.offset);
            }
        }
        FeatureHead {
            prefix: prefix.into(),
            width: schema.encoded_width(),
            continuous,
            blocks,
        }
    }

    fn log_std_name(&self) -> String {
        format!("{}.log_std", self.prefix)
    }

    pub fn register(&self, store: &mut ParameterStore) -> Result<()> {
        if !self.continuous.is_empty() {
            store.insert(self.log_std_name(), Tensor::zeros(&[self.continuous.len()]))?;
        }
        Ok(())
    }

    fn select(&self, cols: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(&[self.width, cols.len()]);
        let k = cols.len();
        for (j, &c) in cols.iter().enumerate() {
            t.data_mut()[c * k + j] = 1.0;
        }
        t
    }

    /// Per-row log-likelihood of `x` (constant, `batch × width`).
    pub fn log_likelihood<O: Ops>(
        &self,
        ops: &mut O,
        p: &BoundParams<O::Value>,
        loc: &O::Value,
        x: &Tensor,
    ) -> Result<O::Value> {
        let mut total: Option<O::Value> = None;
        let mut acc = |ops: &mut O, term: O::Value| -> Result<()> {
            total = Some(match total.take() {
                None => term,
                Some(t) => ops.add(&t, &term)?,
            });
            Ok(())
        };
        if !self.continuous.is_empty() {
            let sel = self.select(&self.continuous);
            let xc = crate::tensor::matmul(x, &sel)?;
            let selv = ops.constant(sel);
            let mean = ops.matmul(loc, &selv)?;
            let xc = ops.constant(xc);
            let ls = p.get(&self.log_std_name())?;
            let ll = nn::gaussian_log_density(ops, &xc, &mean, ls)?;
            acc(ops, ll)?;
        }
        for &(off, w) in &self.blocks {
            let cols: Vec<usize> = (off..off + w).collect();
            let sel = self.select(&cols);
            let xb = crate::tensor::matmul(x, &sel)?;
            let selv = ops.constant(sel);
            let logits = ops.matmul(loc, &selv)?;
            let xb = ops.constant(xb);
            let ll = nn::categorical_log_likelihood(ops, &xb, &logits)?;
            acc(ops, ll)?;
        }
        total.ok_or_else(|| Error::contract("feature head with no columns"))
    }

    /// Head means: the location for continuous columns, class probabilities
    /// for categorical blocks.
    pub fn mean(&self, loc: &Tensor) -> Tensor {
        let mut out = loc.clone();
        let (r, w) = out.dims();
        for &(off, bw) in &self.blocks {
            for i in 0..r {
                let row = &mut out.data_mut()[i * w + off..i * w + off + bw];
                softmax_in_place(row);
            }
        }
        out
    }

    /// One draw: Gaussian noise on continuous columns, a categorical draw
    /// (one-hot) per block.
    pub fn sample<R: Rng>(&self, loc: &Tensor, params: &ParameterStore, rng: &mut R) -> Result<Tensor> {
        let mut out = self.mean(loc);
        let (r, w) = out.dims();
        let stds: Vec<f64> = if self.continuous.is_empty() {
            vec![]
        } else {
            params
                .get(&self.log_std_name())?
                .data()
                .iter()
                .map(|l| l.exp())
                .collect()
        };
        for i in 0..r {
            for (j, &c) in self.continuous.iter().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                out.data_mut()[i * w + c] += stds[j] * z;
            }
            for &(off, bw) in &self.blocks {
                let row = &mut out.data_mut()[i * w + off..i * w + off + bw];
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut pick = bw - 1;
                for (k, pk) in row.iter().enumerate() {
                    cum += pk;
                    if u < cum {
                        pick = k;
                        break;
                    }
                }
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if k == pick { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(out)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Target likelihood: Gaussian with a learned scale for regression,
/// Bernoulli on a logit for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetHead {
    pub prefix: String,
    pub task: TaskKind,
}

impl TargetHead {
    pub fn new(prefix: impl Into<String>, task: TaskKind) -> Self {
        TargetHead {
            prefix: prefix.into(),
            task,
        }
    }

    fn log_std_name(&self) -> String {
        format!("{}.log_std", self.prefix)
    }

    pub fn register(&self, store: &mut ParameterStore) -> Result<()> {
        if self.task == TaskKind::Regression {
            store.insert(self.log_std_name(), Tensor::zeros(&[1]))?;
        }
        Ok(())
    }

    /// Per-row log-likelihood of `y` (`batch × 1`).
    pub fn log_likelihood<O: Ops>(
        &self,
        ops: &mut O,
        p: &BoundParams<O::Value>,
        loc: &O::Value,
        y: &Tensor,
    ) -> Result<O::Value> {
        let yv = ops.constant(y.clone());
        match self.task {
            TaskKind::Regression => {
                let ls = p.get(&self.log_std_name())?;
                nn::gaussian_log_density(ops, &yv, loc, ls)
            }
            TaskKind::Classification => nn::bernoulli_log_likelihood(ops, &yv, loc),
        }
    }

    /// Head mean on the tape: identity or sigmoid.
    pub fn mean_op<O: Ops>(&self, ops: &mut O, loc: &O::Value) -> Result<O::Value> {
        match self.task {
            TaskKind::Regression => Ok(loc.clone()),
            TaskKind::Classification => ops.sigmoid(loc),
        }
    }

    pub fn mean(&self, loc: &Tensor) -> Tensor {
        match self.task {
            TaskKind::Regression => loc.clone(),
            TaskKind::Classification => loc.map(crate::tensor::sigmoid_scalar),
        }
    }

    pub fn sample<R: Rng>(&self, loc: &Tensor, params: &ParameterStore, rng: &mut R) -> Result<Tensor> {
        let mut out = self.mean(loc);
        match self.task {
            TaskKind::Regression => {
                let sd = params.get(&self.log_std_name())?.item()?.exp();
                for v in out.data_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sd * z;
                }
            }
            TaskKind::Classification => {
                for v in out.data_mut() {
                    let u: f64 = rng.random();
                    *v = if u < *v { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(out)
    }
}
