//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. The
//! process fails if any criterion outside `KNOWN_FAILING` fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use exoc_core::baselines::Method;
use exoc_core::bounds::{delta_a, delta_b, monte_carlo_coverage, BoundVariant, LinearCaseParams};
use exoc_core::experiment::{
    self, ablate_control_prepared, ablate_gamma_prepared, bound_parameter_sets, prepare_all, run_prepared,
    ExperimentConfig, Preset, Prepared, RunManifest, CONTROL_LABELS,
};
use exoc_core::generator::pair_count;
use exoc_core::trainer::TrainLog;

/// Criteria expected to fail at desk scale; see the README.
const KNOWN_FAILING: &[usize] = &[3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn desk(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        out: out.to_path_buf(),
        ..ExperimentConfig::preset(Preset::Desk)
    }
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        epochs: 2,
        generator_epochs: 2,
        synthetic_rows: 300,
        ..desk(dir.path())
    };
    let prep = prepare_all(&cfg, &mut RunManifest::open(&cfg)).unwrap();
    let mut worst = 0.0f64;
    for d in &prep.seeds {
        let fit = experiment::fit_method(&cfg, Method::Constant, &d.train, d.seed, cfg.gamma, &cfg.exoc).unwrap();
        let r = experiment::evaluate(&cfg, "Constant", &fit.predictor, d).unwrap();
        worst = worst.max(r.mmd.mean.abs()).max(r.wass.mean.abs());
    }
    outcome(worst <= 1e-12, format!("max |MMD|, |Wass| over {} seeds = {worst:e}", prep.seeds.len()))
}

struct Shared {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    prep: Prepared,
    logs: Vec<(String, TrainLog)>,
    run_out: PathBuf,
}

fn criterion_2(shared: &mut Option<Shared>) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run_out = dir.path().join("run");
    let cfg = desk(&run_out);
    let mut manifest = RunManifest::open(&cfg);
    let prep = prepare_all(&cfg, &mut manifest).unwrap();
    let s = run_prepared(&cfg, &prep, &mut manifest).unwrap();
    let m = |label| s.table.mean(label, "MMD").unwrap();
    let (full, unaware, fairk, exoc) = (m("Full"), m("Unaware"), m("Fair-K"), m("EXOC"));
    let constant_zero = s
        .outcomes
        .iter()
        .flat_map(|o| &o.reports)
        .filter(|r| r.method == "Constant")
        .all(|r| r.mmd.mean.abs() <= 1e-12 && r.wass.mean.abs() <= 1e-12);
    let ratio = unaware / exoc;
    let pass = s.failures.is_empty()
        && full > unaware
        && unaware > fairk
        && exoc <= fairk
        && ratio >= 2.0
        && constant_zero;
    let logs = s.outcomes.iter().flat_map(|o| o.logs.clone()).collect();
    *shared = Some(Shared { _dir: dir, cfg, prep, logs, run_out });
    outcome(
        pass,
        format!(
            "MMD Full {full:.3} > Unaware {unaware:.3} > Fair-K {fairk:.3} >= EXOC {exoc:.3}; Unaware/EXOC {ratio:.2}"
        ),
    )
}

fn criterion_3(shared: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { out: dir.path().to_path_buf(), ..shared.cfg.clone() };
    let mut manifest = RunManifest::open(&cfg);
    let a = ablate_gamma_prepared(&cfg, &shared.prep, &[1.0, 1.4, 1.8], &mut manifest).unwrap();
    shared.logs.extend(a.outcomes.iter().flat_map(|o| o.logs.clone()));
    let detail = a
        .verdicts
        .iter()
        .map(|v| {
            let series: Vec<String> = a
                .grid
                .iter()
                .map(|g| format!("{:.3}", a.table.mean(&format!("gamma={g}"), &v.metric).unwrap_or(f64::NAN)))
                .collect();
            format!(
                "{} [{}] spearman {} ({} inversions)",
                v.metric,
                series.join(", "),
                v.spearman.map(|r| format!("{r:.2}")).unwrap_or_else(|| "n/a".into()),
                v.inversions
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(a.failures.is_empty() && a.verdicts.iter().all(|v| v.holds(1)), detail)
}

fn criterion_4() -> Outcome {
    let unit = LinearCaseParams::unit();
    let (da, db) = (delta_a(&unit).unwrap(), delta_b(&unit).unwrap());
    let closed = (da - (1.0 + 3.0 * 2f64.sqrt())).abs() < 1e-9 && (db - 6.0).abs() < 1e-9;
    let mut min_cov = 1.0f64;
    for (i, p) in bound_parameter_sets(20, 1).iter().enumerate() {
        for v in [BoundVariant::A, BoundVariant::B] {
            min_cov = min_cov.min(monte_carlo_coverage(p, v, 100_000, 1 + i as u64).unwrap());
        }
    }
    outcome(
        closed && min_cov >= 0.995,
        format!("delta_a {da:.6}, delta_b {db:.6}; min coverage {min_cov:.4} over 20 sets x 2 variants"),
    )
}

fn criterion_5() -> Outcome {
    let worst = (0..24).map(common::random_network_error).fold(0.0f64, f64::max);
    outcome(worst < common::TOL, format!("max relative error {worst:.2e} over 24 networks"))
}

fn criterion_6() -> Outcome {
    let [matching, cdf, mmd, inv] = common::metric_oracle_errors(200, 17);
    outcome(
        matching < 1e-9 && cdf < 1e-9 && mmd < 1e-12 && inv < 1e-9,
        format!("W1 vs matching {matching:.1e}, vs CDF {cdf:.1e}; MMD vs double sum {mmd:.1e}; invariants {inv:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let m = common::generator_latent_mmd(&[0.0, 1.0], 150);
    let pairs = [(2, 1), (3, 3), (4, 6)].iter().all(|&(k, n)| pair_count(k) == n);
    outcome(
        m[1] < m[0] && pairs,
        format!("latent MMD tau=0 {:.4}, tau=1 {:.4}; N_p for |S|=2,3,4 ok: {pairs}", m[0], m[1]),
    )
}

fn criterion_8(shared: &Shared) -> Outcome {
    let mut bad = Vec::new();
    let mut min_kl = f64::INFINITY;
    for (label, log) in &shared.logs {
        min_kl = min_kl.min(log.min_kl());
        match log.head_tail_means(0.1) {
            Some((head, tail)) if tail < head => {}
            _ => bad.push(label.clone()),
        }
    }
    outcome(
        bad.is_empty() && min_kl >= -1e-9,
        format!("{} logs; min KL {min_kl:.3e}; non-decreasing: {bad:?}", shared.logs.len()),
    )
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9(shared: &Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { out: dir.path().to_path_buf(), ..shared.cfg.clone() };
    experiment::run(&cfg).unwrap();
    let files = csv_files(dir.path());
    let differing: Vec<_> = files
        .iter()
        .filter(|f| std::fs::read(dir.path().join(f)).ok() != std::fs::read(shared.run_out.join(f)).ok())
        .collect();
    let same_set = files == csv_files(&shared.run_out);
    outcome(
        differing.is_empty() && same_set && !files.is_empty(),
        format!("{} CSVs compared, {} differ, same file set: {same_set}", files.len(), differing.len()),
    )
}

fn criterion_10(shared: &Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        out: dir.path().to_path_buf(),
        gamma: 1e-15,
        epochs: 30,
        ..shared.cfg.clone()
    };
    let a = ablate_control_prepared(&cfg, &shared.prep, &mut RunManifest::open(&cfg)).unwrap();
    let both = CONTROL_LABELS.iter().all(|l| a.table.rows.iter().any(|r| r.label == *l));
    let gap = a
        .pairs
        .iter()
        .map(|p| (p.epoch0_s_dprime - p.epoch0_predicted_y).abs())
        .fold(0.0f64, f64::max);
    outcome(
        both && a.failures.is_empty() && gap <= 1e-9,
        format!("both variants present: {both}; max epoch-0 loss gap {gap:.2e} over {} seeds", a.pairs.len()),
    )
}

fn main() {
    let mut shared = None;
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let report = |n: usize, started: Instant, o: Outcome, results: &mut Vec<(usize, Outcome)>| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let known = if !o.pass && KNOWN_FAILING.contains(&n) { " (known failing)" } else { "" };
        println!("criterion {n}: {tag}{known} [{:.1}s] {}", started.elapsed().as_secs_f64(), o.detail);
        results.push((n, o));
    };
    let t = Instant::now();
    report(1, t, criterion_1(), &mut results);
    let t = Instant::now();
    report(2, t, criterion_2(&mut shared), &mut results);
    let mut shared = shared.expect("criterion 2 prepares shared state");
    let t = Instant::now();
    report(3, t, criterion_3(&mut shared), &mut results);
    let t = Instant::now();
    report(4, t, criterion_4(), &mut results);
    let t = Instant::now();
    report(5, t, criterion_5(), &mut results);
    let t = Instant::now();
    report(6, t, criterion_6(), &mut results);
    let t = Instant::now();
    report(7, t, criterion_7(), &mut results);
    let t = Instant::now();
    report(8, t, criterion_8(&shared), &mut results);
    let t = Instant::now();
    report(9, t, criterion_9(&shared), &mut results);
    let t = Instant::now();
    report(10, t, criterion_10(&shared), &mut results);

    let unexpected: Vec<usize> = results
        .iter()
        .filter(|(n, o)| !o.pass && !KNOWN_FAILING.contains(n))
        .map(|(n, _)| *n)
        .collect();
    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
