//! Approximate counterfactual-fairness bounds for the linear-Gaussian case.
//!
//! For Fair-K, `Y = αS + βK` and the counterfactual difference between
//! interventions `s` and `s*` is `α(s* − s) + β(k₁ − k₀)` with
//! `k ~ N(μ_K, σ_K²)`. With the auxiliary node, `Y = α̃S′ + β̃K` and the
//! difference is `α̃(s′₁ − s′₀) + β̃(k̃₁ − k̃₀)`. Each bound applies the
//! three-sigma rule to the random part.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseStream, Purpose};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCaseParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_k: f64,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub sigma_k_t: f64,
    pub sigma_s_prime_t: f64,
    pub s: f64,
    pub s_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundVariant {
    /// Fair-K graph.
    A,
    /// Graph with the auxiliary node.
    B,
}

impl LinearCaseParams {
    pub fn unit() -> Self {
        LinearCaseParams {
            alpha: 1.0,
            beta: 1.0,
            sigma_k: 1.0,
            alpha_t: 1.0,
            beta_t: 1.0,
            sigma_k_t: 1.0,
            sigma_s_prime_t: 1.0,
            s: 0.0,
            s_star: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_k", self.sigma_k),
            ("sigma_k_t", self.sigma_k_t),
            ("sigma_s_prime_t", self.sigma_s_prime_t),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `|α(s* − s)| + 3√2·|β|·σ_K`.
pub fn delta_a(p: &LinearCaseParams) -> Result<f64> {
    p.validate()?;
    Ok((p.alpha * (p.s_star - p.s)).abs() + 3.0 * 2f64.sqrt() * p.beta.abs() * p.sigma_k)
}

/// `3·√(2(α̃²σ̃²_{S′} + β̃²σ̃²_K))`.
pub fn delta_b(p: &LinearCaseParams) -> Result<f64> {
    p.validate()?;
    let v = p.alpha_t.powi(2) * p.sigma_s_prime_t.powi(2) + p.beta_t.powi(2) * p.sigma_k_t.powi(2);
    Ok(3.0 * (2.0 * v).sqrt())
}

/// Whether the Fair-K bound is the looser of the two for these parameters.
pub fn fairk_bound_looser(p: &LinearCaseParams) -> Result<bool> {
    Ok(delta_a(p)? > delta_b(p)?)
}

const MC_BLOCK: usize = 4096;

/// Fraction of simulated counterfactual differences within the bound.
/// Draws are generated in fixed blocks, each with its own keyed stream, so
/// the result is identical in sequential and parallel mode.
pub fn monte_carlo_coverage(
    p: &LinearCaseParams,
    variant: BoundVariant,
    n: usize,
    seed: u64,
) -> Result<f64> {
    monte_carlo_coverage_with(p, variant, n, seed, Execution::default())
}

pub fn monte_carlo_coverage_with(
    p: &LinearCaseParams,
    variant: BoundVariant,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if n < 10_000 {
        return Err(Error::contract(format!("coverage needs n >= 10000, got {n}")));
    }
    let bound = match variant {
        BoundVariant::A => delta_a(p)?,
        BoundVariant::B => delta_b(p)?,
    };
    // Means cancel in the differences; only the spreads matter.
    let (shift, w1, sd1, w2, sd2) = match variant {
        BoundVariant::A => (p.alpha * (p.s_star - p.s), p.beta, p.sigma_k, 0.0, 1.0),
        BoundVariant::B => (0.0, p.alpha_t, p.sigma_s_prime_t, p.beta_t, p.sigma_k_t),
    };
    let n1 = Normal::new(0.0, sd1).map_err(|e| Error::contract(e.to_string()))?;
    let n2 = Normal::new(0.0, sd2).map_err(|e| Error::contract(e.to_string()))?;
    let blocks = n.div_ceil(MC_BLOCK);
    let hits: usize = exec
        .map_range(blocks, |b| {
            let mut rng: ChaCha8Rng = {
                let mut s = NoiseStream::new(seed, Purpose::MonteCarlo, b as u64, 0);
                ChaCha8Rng::from_rng(s.rng())
            };
            let lo = b * MC_BLOCK;
            let hi = (lo + MC_BLOCK).min(n);
            (lo..hi)
                .filter(|_| {
                    let d1 = n1.sample(&mut rng) - n1.sample(&mut rng);
                    let d2 = n2.sample(&mut rng) - n2.sample(&mut rng);
                    (shift + w1 * d1 + w2 * d2).abs() <= bound
                })
                .count()
        })
        .into_iter()
        .sum();
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let p = LinearCaseParams::unit();
        assert!((delta_a(&p).unwrap() - (1.0 + 3.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((delta_b(&p).unwrap() - 6.0).abs() < 1e-12);
        let q = LinearCaseParams { beta: 0.0, alpha: 2.5, ..p };
        assert_eq!(delta_a(&q).unwrap(), 2.5);
        let r = LinearCaseParams { s: 1.0, s_star: 0.0, ..p };
        assert_eq!(delta_a(&r).unwrap(), delta_a(&p).unwrap());
        let t = LinearCaseParams { alpha_t: -1.0, ..p };
        assert_eq!(delta_b(&t).unwrap(), 6.0);
        assert!(delta_a(&LinearCaseParams { sigma_k: 0.0, ..p }).is_err());
    }

    #[test]
    fn degenerate_coverage_is_one() {
        let p = LinearCaseParams { beta: 0.0, ..LinearCaseParams::unit() };
        assert_eq!(monte_carlo_coverage(&p, BoundVariant::A, 10_000, 1).unwrap(), 1.0);
        assert!(monte_carlo_coverage(&p, BoundVariant::A, 9_999, 1).is_err());
    }
}
