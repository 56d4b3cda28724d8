//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use exoc_core::autodiff::{Graph, Ops};
use exoc_core::nn::{self, Activation, GaussianEncoder, Mlp};
use exoc_core::optim::{BoundParams, ParameterStore};
use exoc_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients from
/// turning rounding noise into huge ratios.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Largest relative error over every scalar of every parameter.
pub fn check<F>(store: &ParameterStore, loss: F) -> f64
where
    F: Fn(&mut Graph, &BoundParams<exoc_core::autodiff::Var>) -> exoc_core::autodiff::Var,
{
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let root = loss(&mut g, &p);
    let grads = p.gradients(&g.backward(root).unwrap());

    let value_at = |s: &ParameterStore| {
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let v = loss(&mut g, &p);
        g.value(&v).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let n = store.get(&name).unwrap().len();
        for i in 0..n {
            let mut plus = store.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += H;
            let mut minus = store.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= H;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * H);
            let analytic = grads[&name].data()[i];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect())
        .unwrap()
}

/// Worst gradient error of one random single-hidden-layer network with a
/// loss head chosen by `case`.
pub fn random_network_error(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11 + case);
    let input = rng.random_range(1..5);
    let hidden = rng.random_range(1..7);
    let output = rng.random_range(1..4);
    let rows = rng.random_range(1..6);
    let mut mlp = Mlp::new("net", input, hidden, output);
    if case % 2 == 1 {
        mlp.activation = Activation::Sigmoid;
    }
    let enc = GaussianEncoder::new("enc", input, hidden, output);
    let mut store = ParameterStore::new();
    mlp.register(&mut store, case).unwrap();
    enc.register(&mut store, case).unwrap();
    store
        .insert("log_std", random_tensor(&mut rng, 1, output).reshape(vec![output]).unwrap())
        .unwrap();
    let x = random_tensor(&mut rng, rows, input);
    let target = random_tensor(&mut rng, rows, output);
    let labels = Tensor::matrix(
        rows,
        output,
        (0..rows * output).map(|i| f64::from(u8::from(i % output == 0))).collect(),
    )
    .unwrap();
    let eps = random_tensor(&mut rng, rows, output);
    let head = case % 4;

    check(&store, |g, p| {
        let xv = g.constant(x.clone());
        let out = mlp.forward(g, p, &xv).unwrap();
        let ll = match head {
            0 => {
                let t = g.constant(target.clone());
                nn::gaussian_log_density(g, &t, &out, p.get("log_std").unwrap()).unwrap()
            }
            1 => {
                let l = g.constant(labels.clone());
                nn::bernoulli_log_likelihood(g, &l, &out).unwrap()
            }
            2 => {
                let l = g.constant(labels.clone());
                nn::categorical_log_likelihood(g, &l, &out).unwrap()
            }
            _ => {
                let q = enc.forward(g, p, &xv).unwrap();
                let z = nn::reparameterize(g, &q, eps.clone()).unwrap();
                let kl = nn::kl_standard_normal(g, &q).unwrap();
                let t = g.constant(target.clone());
                let ll = nn::gaussian_log_density(g, &t, &z, p.get("log_std").unwrap()).unwrap();
                let d = g.sub(&ll, &kl).unwrap();
                let m = g.mul(&d, &out).unwrap();
                g.row_sums(&m).unwrap()
            }
        };
        g.mean(&ll).unwrap()
    })
}

/// Exact W₁ between equal-size samples: the cheapest perfect matching,
/// found by enumerating every permutation.
pub fn w1_matching(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    fn go(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, i + 1, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

/// Biased MMD² as an explicit double sum over all pairs.
pub fn mmd2_double_sum(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let k = |x: f64, y: f64| (-(x - y).powi(2) / (2.0 * sigma * sigma)).exp();
    let mean = |u: &[f64], v: &[f64]| {
        let mut s = 0.0;
        for &x in u {
            for &y in v {
                s += k(x, y);
            }
        }
        s / (u.len() * v.len()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

/// Median of pooled pairwise distances, 1 when that median is 0.
pub fn median_distance(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut d = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push((pooled[i] - pooled[j]).abs());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let m = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if m > 0.0 { m } else { 1.0 }
}

pub fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

/// W₁ as the integral of `|F_a − F_b|` between consecutive pooled points.
pub fn w1_cdf_integral(a: &[f64], b: &[f64]) -> f64 {
    let mut grid: Vec<f64> = a.iter().chain(b).copied().collect();
    grid.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    grid.windows(2)
        .map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

/// Worst deviations of the library metrics from the oracles over `trials`
/// random draws: (matching W₁, CDF W₁, double-sum MMD, invariants).
pub fn metric_oracle_errors(trials: usize, seed: u64) -> [f64; 4] {
    use exoc_core::metrics::{self, BandwidthPolicy, MmdOptions, ReportScale};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..trials {
        let n = rng.random_range(1..=6);
        let (a, b) = (random_sample(&mut rng, n), random_sample(&mut rng, n));
        let w = metrics::wasserstein1(&a, &b).unwrap();
        worst[0] = worst[0].max((w - w1_matching(&a, &b)).abs());

        let m = rng.random_range(1..=6);
        let c = random_sample(&mut rng, m);
        let w = metrics::wasserstein1(&a, &c).unwrap();
        worst[1] = worst[1].max((w - w1_cdf_integral(&a, &c)).abs());

        let (p, q) = (rng.random_range(1..=10), rng.random_range(1..=10));
        let (x, y) = (random_sample(&mut rng, p), random_sample(&mut rng, q));
        let unit = |bandwidth| MmdOptions { bandwidth, report_scale: ReportScale::Unit };
        let sigma = rng.random_range(0.2..3.0);
        let got = metrics::mmd(&x, &y, unit(BandwidthPolicy::Fixed(sigma))).unwrap();
        worst[2] = worst[2].max((got - mmd2_double_sum(&x, &y, sigma).max(0.0)).abs());
        let got = metrics::mmd(&x, &y, unit(BandwidthPolicy::Median)).unwrap();
        let want = mmd2_double_sum(&x, &y, median_distance(&x, &y)).max(0.0);
        worst[2] = worst[2].max((got - want).abs());

        let shift = rng.random_range(-5.0..5.0);
        let scale = rng.random_range(-4.0..4.0);
        let w_ab = metrics::wasserstein1(&a, &c).unwrap();
        let w_ba = metrics::wasserstein1(&c, &a).unwrap();
        let moved = |s: &[f64]| s.iter().map(|v| v + shift).collect::<Vec<_>>();
        let scaled = |s: &[f64]| s.iter().map(|v| v * scale).collect::<Vec<_>>();
        let w_t = metrics::wasserstein1(&moved(&a), &moved(&c)).unwrap();
        let w_s = metrics::wasserstein1(&scaled(&a), &scaled(&c)).unwrap();
        let self_d = metrics::wasserstein1(&a, &a).unwrap();
        for e in [
            (w_ab - w_ba).abs(),
            (w_ab - w_t).abs(),
            (w_s - scale.abs() * w_ab).abs(),
            self_d,
        ] {
            worst[3] = worst[3].max(e);
        }
    }
    worst
}

/// Latent group MMD of generators trained on the same 1000 Law-like rows
/// and seed, one per penalty weight.
pub fn generator_latent_mmd(taus: &[f64], epochs: usize) -> Vec<f64> {
    use exoc_core::generator::{train_generator, GeneratorSpec};
    use exoc_core::sources::{self, SourceKind};
    use exoc_core::trainer::{ObjectiveKind, TrainConfig};
    let data = sources::generate(SourceKind::LawLike, 1000, 7).unwrap();
    let cfg = TrainConfig {
        batch_size: Some(250),
        ..TrainConfig::new(ObjectiveKind::Generator, epochs, 7)
    };
    taus.iter()
        .map(|&tau| {
            let spec = GeneratorSpec { tau, ..GeneratorSpec::default() };
            let out = train_generator(&data, spec, &cfg, None).unwrap();
            out.model.latent_group_mmd(&data).unwrap()
        })
        .collect()
}
