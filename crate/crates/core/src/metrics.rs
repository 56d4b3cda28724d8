//! Performance and distributional fairness metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::dataio::TaskKind;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::tensor::Tensor;

fn check_aligned(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::contract(format!(
            "metric inputs must be aligned and nonempty: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Fraction of scores on the correct side of 0.5 (a score of exactly 0.5
/// counts as class 1).
pub fn accuracy(scores: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(scores, truth)?;
    let hits = scores
        .iter()
        .zip(truth)
        .filter(|(s, t)| (**s >= 0.5) == (**t >= 0.5))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    /// Median pairwise distance of the pooled sample (1 if that is 0).
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportScale {
    /// Raw MMD².
    Unit,
    /// MMD² times the mean of the two sample sizes.
    SampleSize,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdOptions {
    pub bandwidth: BandwidthPolicy,
    pub report_scale: ReportScale,
}

impl Default for MmdOptions {
    fn default() -> Self {
        MmdOptions {
            bandwidth: BandwidthPolicy::Median,
            report_scale: ReportScale::SampleSize,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median Euclidean distance over distinct pairs of the pooled rows.
pub fn median_bandwidth(a: &Tensor, b: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..a.rows())
        .map(|i| a.row(i))
        .chain((0..b.rows()).map(|i| b.row(i)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    let m = median(d);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn kernel_mean(a: &Tensor, b: &Tensor, inv: f64, exec: Execution) -> f64 {
    let (n, m) = (a.rows(), b.rows());
    let sum = exec.block_sum(n, 64, |i| {
        let ra = a.row(i);
        (0..m).map(|j| (-sq_dist(ra, b.row(j)) * inv).exp()).sum()
    });
    sum / (n * m) as f64
}

/// Biased (V-statistic) MMD² between the rows of `a` and `b` under an RBF
/// kernel `exp(−d²/(2σ²))`.
pub fn mmd2_rows(a: &Tensor, b: &Tensor, sigma: f64, exec: Execution) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 || a.is_empty() || b.is_empty() {
        return Err(Error::contract("mmd needs two nonempty samples"));
    }
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "mmd",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(kernel_mean(a, a, inv, exec) + kernel_mean(b, b, inv, exec) - 2.0 * kernel_mean(a, b, inv, exec))
}

/// Reported MMD between two 1-D samples: `max(MMD², 0)` times the report scale.
pub fn mmd(a: &[f64], b: &[f64], opts: MmdOptions) -> Result<f64> {
    mmd_with(a, b, opts, Execution::default())
}

pub fn mmd_with(a: &[f64], b: &[f64], opts: MmdOptions, exec: Execution) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("mmd needs two nonempty samples"));
    }
    let ta = Tensor::column(a.to_vec())?;
    let tb = Tensor::column(b.to_vec())?;
    let sigma = match opts.bandwidth {
        BandwidthPolicy::Median => median_bandwidth(&ta, &tb),
        BandwidthPolicy::Fixed(s) => s,
    };
    let raw = mmd2_rows(&ta, &tb, sigma, exec)?.max(0.0);
    let scale = match opts.report_scale {
        ReportScale::Unit => 1.0,
        ReportScale::SampleSize => 0.5 * (a.len() + b.len()) as f64,
        ReportScale::Fixed(c) => c,
    };
    Ok(raw * scale)
}

/// Exact 1-D Wasserstein-1 distance: the integral of `|F_a⁻¹ − F_b⁻¹|`
/// over the merged grid of quantile breakpoints.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("wasserstein1 needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    let (n, m) = (a.len(), b.len());
    // Walk breakpoints i/n and j/m in exact integer arithmetic (·n·m).
    let (mut i, mut j) = (0usize, 0usize);
    let (mut pos, total) = (0usize, n * m);
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

/// Predictions for every individual under every counterfactual arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub task: TaskKind,
    /// `arms[s][i]`: prediction for individual `i` with the sensitive
    /// attribute forced to `s`.
    pub arms: Vec<Vec<f64>>,
}

impl PredictionSet {
    pub fn new(task: TaskKind, arms: Vec<Vec<f64>>) -> Result<Self> {
        let n = arms.first().map(Vec::len).unwrap_or(0);
        if n == 0 || arms.iter().any(|a| a.len() != n) {
            return Err(Error::contract("every arm needs a prediction for every individual"));
        }
        if task == TaskKind::Classification
            && arms.iter().flatten().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::contract("classification scores must lie in [0, 1]"));
        }
        Ok(PredictionSet { task, arms })
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Divergence {
    Mmd(MmdOptions),
    Wasserstein,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub arm_a: usize,
    pub arm_b: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDivergence {
    pub mean: f64,
    pub pairs: Vec<PairValue>,
}

/// `metric` on each unordered arm pair, averaged over the `|S|(|S|−1)/2` pairs.
pub fn pairwise_cf_divergence(
    predictions: &PredictionSet,
    metric: Divergence,
) -> Result<PairwiseDivergence> {
    pairwise_cf_divergence_with(predictions, metric, Execution::default())
}

pub fn pairwise_cf_divergence_with(
    predictions: &PredictionSet,
    metric: Divergence,
    exec: Execution,
) -> Result<PairwiseDivergence> {
    let k = predictions.n_arms();
    if k < 2 {
        return Err(Error::contract(format!("need at least 2 arms, got {k}")));
    }
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
        .collect();
    let values = exec.map(&pairs, |&(a, b)| {
        let (x, y) = (&predictions.arms[a], &predictions.arms[b]);
        match metric {
            // Pair-level parallelism already saturates the pool.
            Divergence::Mmd(o) => mmd_with(x, y, o, Execution::Sequential),
            Divergence::Wasserstein => wasserstein1(x, y),
        }
    });
    let mut out = Vec::with_capacity(pairs.len());
    for (&(a, b), v) in pairs.iter().zip(values) {
        out.push(PairValue {
            arm_a: a,
            arm_b: b,
            value: v?,
        });
    }
    let mean = out.iter().map(|p| p.value).sum::<f64>() / out.len() as f64;
    Ok(PairwiseDivergence { mean, pairs: out })
}

/// Metrics of one method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub task: TaskKind,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
    pub mmd: PairwiseDivergence,
    pub wass: PairwiseDivergence,
}

impl MetricsReport {
    /// Task metrics on the factual arm plus pairwise fairness on all arms.
    pub fn evaluate(
        method: &str,
        seed: u64,
        config_hash: &str,
        factual_pred: &[f64],
        factual_truth: &[f64],
        predictions: &PredictionSet,
        mmd_opts: MmdOptions,
    ) -> Result<Self> {
        let task = predictions.task;
        let (r, m, a) = match task {
            TaskKind::Regression => (
                Some(rmse(factual_pred, factual_truth)?),
                Some(mae(factual_pred, factual_truth)?),
                None,
            ),
            TaskKind::Classification => (None, None, Some(accuracy(factual_pred, factual_truth)?)),
        };
        Ok(MetricsReport {
            method: method.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            task,
            rmse: r,
            mae: m,
            accuracy: a,
            mmd: pairwise_cf_divergence(predictions, Divergence::Mmd(mmd_opts))?,
            wass: pairwise_cf_divergence(predictions, Divergence::Wasserstein)?,
        })
    }

    pub fn csv_header() -> [&'static str; 8] {
        ["method", "seed", "config_hash", "rmse", "mae", "accuracy", "mmd", "wass"]
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        vec![
            self.method.clone(),
            self.seed.to_string(),
            self.config_hash.clone(),
            opt(self.rmse),
            opt(self.mae),
            opt(self.accuracy),
            format!("{:?}", self.mmd.mean),
            format!("{:?}", self.wass.mean),
        ]
    }

    pub fn write_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
        artifacts::write_csv_atomic(path, |w| {
            w.write_record(Self::csv_header())?;
            for r in reports {
                w.write_record(r.csv_row())?;
            }
            Ok(())
        })
    }

    pub fn write_json(reports: &[MetricsReport], path: &Path) -> Result<()> {
        artifacts::write_json_atomic(path, &reports)
    }
}
