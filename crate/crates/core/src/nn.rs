//! Small feed-forward blocks shared by the causal models and the generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Ops;
use crate::error::Result;
use crate::optim::{BoundParams, ParameterStore};
use crate::tensor::Tensor;

/// Hidden-layer nonlinearity. Softplus is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Softplus,
    Sigmoid,
}

/// A one-hidden-layer perceptron `in → hidden → out` stored under `prefix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
}

/// Fan-in scaled uniform initialisation, `U(-1/√fan_in, 1/√fan_in)`.
pub fn init_uniform(rng: &mut ChaCha8Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

/// Deterministic RNG for parameter initialisation of one named block.
pub fn init_rng(seed: u64, prefix: &str) -> ChaCha8Rng {
    // FNV-1a over the block name keeps each block's stream independent of
    // registration order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in prefix.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            prefix: prefix.into(),
            input,
            hidden,
            output,
            activation: Activation::Softplus,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn register(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        let mut rng = init_rng(seed, &self.prefix);
        store.insert(
            self.name("w1"),
            init_uniform(&mut rng, self.input, &[self.input, self.hidden]),
        )?;
        store.insert(
            self.name("b1"),
            init_uniform(&mut rng, self.input, &[self.hidden]),
        )?;
        store.insert(
            self.name("w2"),
            init_uniform(&mut rng, self.hidden, &[self.hidden, self.output]),
        )?;
        store.insert(
            self.name("b2"),
            init_uniform(&mut rng, self.hidden, &[self.output]),
        )?;
        Ok(())
    }

    pub fn forward<O: Ops>(
        &self,
        ops: &mut O,
        p: &BoundParams<O::Value>,
        x: &O::Value,
    ) -> Result<O::Value> {
        let h = ops.affine(x, p.get(&self.name("w1"))?, p.get(&self.name("b1"))?)?;
        let h = match self.activation {
            Activation::Softplus => ops.softplus(&h)?,
            Activation::Sigmoid => ops.sigmoid(&h)?,
        };
        ops.affine(&h, p.get(&self.name("w2"))?, p.get(&self.name("b2"))?)
    }
}

/// A diagonal-Gaussian amortised posterior: one MLP emitting `[mean | logvar]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEncoder {
    pub net: Mlp,
    pub dim: usize,
}

/// Posterior mean and log-variance for a batch, each `batch × dim`.
pub struct GaussianParams<V> {
    pub mean: V,
    pub logvar: V,
}

impl GaussianEncoder {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, dim: usize) -> Self {
        GaussianEncoder {
            net: Mlp::new(prefix, input, hidden, 2 * dim),
            dim,
        }
    }

    pub fn register(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        self.net.register(store, seed)
    }

    pub fn forward<O: Ops>(
        &self,
        ops: &mut O,
        p: &BoundParams<O::Value>,
        x: &O::Value,
    ) -> Result<GaussianParams<O::Value>> {
        let out = self.net.forward(ops, p, x)?;
        // Split columns with two constant selector matrices so the split is
        // an ordinary matmul on the tape.
        let (sel_mean, sel_logvar) = selectors(2 * self.dim, self.dim);
        let sm = ops.constant(sel_mean);
        let sl = ops.constant(sel_logvar);
        Ok(GaussianParams {
            mean: ops.matmul(&out, &sm)?,
            logvar: ops.matmul(&out, &sl)?,
        })
    }
}

fn selectors(total: usize, dim: usize) -> (Tensor, Tensor) {
    let mut a = Tensor::zeros(&[total, dim]);
    let mut b = Tensor::zeros(&[total, dim]);
    for j in 0..dim {
        a.data_mut()[j * dim + j] = 1.0;
        b.data_mut()[(dim + j) * dim + j] = 1.0;
    }
    (a, b)
}

/// `mean + exp(½·logvar) · noise`.
pub fn reparameterize<O: Ops>(
    ops: &mut O,
    g: &GaussianParams<O::Value>,
    noise: Tensor,
) -> Result<O::Value> {
    let half = ops.scale(&g.logvar, 0.5)?;
    let std = ops.exp(&half)?;
    let eps = ops.constant(noise);
    let scaled = ops.mul(&std, &eps)?;
    ops.add(&g.mean, &scaled)
}

/// Per-row `KL(N(μ, e^{logvar}) ‖ N(0, I))`, shape `batch × 1`.
pub fn kl_standard_normal<O: Ops>(
    ops: &mut O,
    g: &GaussianParams<O::Value>,
) -> Result<O::Value> {
    // ½ Σ (μ² + e^{lv} − lv − 1)
    let mu2 = ops.square(&g.mean)?;
    let var = ops.exp(&g.logvar)?;
    let a = ops.add(&mu2, &var)?;
    let b = ops.sub(&a, &g.logvar)?;
    let c = ops.add_scalar(&b, -1.0)?;
    let s = ops.row_sums(&c)?;
    ops.scale(&s, 0.5)
}

/// Per-row `KL(N(μq, e^{lq}) ‖ N(μp, e^{lp}))`, shape `batch × 1`.
pub fn kl_gaussians<O: Ops>(
    ops: &mut O,
    q: &GaussianParams<O::Value>,
    p: &GaussianParams<O::Value>,
) -> Result<O::Value> {
    // ½ Σ (lp − lq + (e^{lq} + (μq − μp)²) / e^{lp} − 1)
    let d = ops.sub(&q.mean, &p.mean)?;
    let d2 = ops.square(&d)?;
    let vq = ops.exp(&q.logvar)?;
    let num = ops.add(&vq, &d2)?;
    let neg_lp = ops.neg(&p.logvar)?;
    let inv_vp = ops.exp(&neg_lp)?;
    let ratio = ops.mul(&num, &inv_vp)?;
    let lr = ops.sub(&p.logvar, &q.logvar)?;
    let t = ops.add(&lr, &ratio)?;
    let t = ops.add_scalar(&t, -1.0)?;
    let s = ops.row_sums(&t)?;
    ops.scale(&s, 0.5)
}

/// Per-row Gaussian log-density summed over columns, shape `batch × 1`.
/// `log_std` broadcasts against `x`.
pub fn gaussian_log_density<O: Ops>(
    ops: &mut O,
    x: &O::Value,
    mean: &O::Value,
    log_std: &O::Value,
) -> Result<O::Value> {
    // −½ z² − log σ − ½ log 2π,  z = (x − μ)/σ
    let diff = ops.sub(x, mean)?;
    let neg_ls = ops.neg(log_std)?;
    let inv_std = ops.exp(&neg_ls)?;
    let z = ops.mul(&diff, &inv_std)?;
    let z2 = ops.square(&z)?;
    let half = ops.scale(&z2, -0.5)?;
    let t = ops.sub(&half, log_std)?;
    let t = ops.add_scalar(&t, -0.5 * (2.0 * std::f64::consts::PI).ln())?;
    ops.row_sums(&t)
}

/// Per-row Bernoulli log-likelihood from logits, shape `batch × 1`.
pub fn bernoulli_log_likelihood<O: Ops>(
    ops: &mut O,
    y: &O::Value,
    logits: &O::Value,
) -> Result<O::Value> {
    // y·l − softplus(l)
    let yl = ops.mul(y, logits)?;
    let sp = ops.softplus(logits)?;
    let t = ops.sub(&yl, &sp)?;
    ops.row_sums(&t)
}

/// Per-row categorical log-likelihood of one-hot (or soft) targets.
pub fn categorical_log_likelihood<O: Ops>(
    ops: &mut O,
    onehot: &O::Value,
    logits: &O::Value,
) -> Result<O::Value> {
    let lp = ops.log_softmax(logits)?;
    let t = ops.mul(onehot, &lp)?;
    ops.row_sums(&t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;

    #[test]
    fn kl_zero_when_q_equals_prior() {
        let mut e = Eval;
        let g = GaussianParams {
            mean: Tensor::zeros(&[3, 2]),
            logvar: Tensor::zeros(&[3, 2]),
        };
        let kl = kl_standard_normal(&mut e, &g).unwrap();
        assert_eq!(kl.data(), &[0.0, 0.0, 0.0]);
        let kl2 = kl_gaussians(&mut e, &g, &g).unwrap();
        assert_eq!(kl2.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn kl_closed_form_value() {
        // KL(N(1, e^{0.5}) ‖ N(0,1)) = ½(1 + e^{0.5} − 0.5 − 1)
        let mut e = Eval;
        let g = GaussianParams {
            mean: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            logvar: Tensor::matrix(1, 1, vec![0.5]).unwrap(),
        };
        let kl = kl_standard_normal(&mut e, &g).unwrap().item().unwrap();
        assert!((kl - 0.5 * (0.5f64.exp() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_matches_formula() {
        let mut e = Eval;
        let x = Tensor::matrix(1, 2, vec![0.3, -1.2]).unwrap();
        let mu = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let ls = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let ld = gaussian_log_density(&mut e, &x, &mu, &ls).unwrap().item().unwrap();
        let c = (2.0 * std::f64::consts::PI).ln();
        let expected = -0.5 * (0.09 + c) - 0.5 * (1.44 + c);
        assert!((ld - expected).abs() < 1e-14);
    }

    #[test]
    fn reparameterization_identity() {
        let mut e = Eval;
        let g = GaussianParams {
            mean: Tensor::matrix(1, 2, vec![0.5, -0.5]).unwrap(),
            logvar: Tensor::matrix(1, 2, vec![0.2, -1.0]).unwrap(),
        };
        let noise = Tensor::matrix(1, 2, vec![1.5, -0.25]).unwrap();
        let z = reparameterize(&mut e, &g, noise).unwrap();
        let expected = [0.5 + (0.1f64).exp() * 1.5, -0.5 + (-0.5f64).exp() * -0.25];
        for (a, b) in z.data().iter().zip(expected) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn mlp_init_deterministic_per_seed() {
        let mlp = Mlp::new("enc", 3, 4, 2);
        let mut a = ParameterStore::new();
        let mut b = ParameterStore::new();
        mlp.register(&mut a, 9).unwrap();
        mlp.register(&mut b, 9).unwrap();
        assert_eq!(a, b);
        let mut c = ParameterStore::new();
        mlp.register(&mut c, 10).unwrap();
        assert_ne!(a, c);
    }
}
