//! The experimental protocol: prepare splits, train the counterfactual
//! generator, synthesise data per seed, fit every method, and evaluate
//! performance on factual rows and fairness across counterfactual arms.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts;
use rand::Rng;

use crate::baselines::{self, Method, Predictor};
use crate::bounds::{self, BoundVariant, LinearCaseParams};
use crate::causal::{CausalModelSpec, ControlTarget};
use crate::dataio::{self, Schema, SplitBundle, SplitIndices, SplitRatios, TabularDataset, TaskKind};
use crate::error::{Error, Result};
use crate::generator::{self, CounterfactualSet, GeneratorModel, GeneratorSpec};
use crate::metrics::{MetricsReport, MmdOptions, PredictionSet};
use crate::noise::{NoiseStream, Purpose};
use crate::par::Execution;
use crate::sources::{self, SourceKind};
use crate::trainer::{ObjectiveKind, TrainConfig, TrainLog};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Paper,
}

/// Where evaluation data and counterfactuals come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluation {
    /// Synthesise a dataset per seed from the generator, with ground-truth arms.
    Synthetic,
    /// Use the source split directly; arms come from the generator.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub id: String,
    /// CSV file; when absent the built-in source model is sampled.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema_path: Option<PathBuf>,
    pub source: SourceKind,
    pub source_rows: usize,
    pub source_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub evaluation: Evaluation,
    pub gamma: f64,
    pub epochs: usize,
    pub generator_epochs: usize,
    /// Minibatch size for the latent-variable models; `None` follows the
    /// default batching rule.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub generator_batch_size: Option<usize>,
    pub seeds: Vec<u64>,
    pub synthetic_rows: usize,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub generator: GeneratorSpec,
    pub fairk: CausalModelSpec,
    pub exoc: CausalModelSpec,
    pub mmd: MmdOptions,
    pub gamma_grid: Vec<f64>,
    pub out: PathBuf,
    /// Run independent seeds concurrently.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = preset == Preset::Desk;
        ExperimentConfig {
            dataset: DatasetConfig {
                id: "law".into(),
                path: None,
                schema_path: None,
                source: SourceKind::LawLike,
                source_rows: if desk { 4000 } else { 20_412 },
                source_seed: 2024,
            },
            evaluation: Evaluation::Synthetic,
            gamma: 1.2,
            epochs: if desk { 500 } else { 8000 },
            generator_epochs: if desk { 500 } else { 8000 },
            batch_size: if desk { Some(128) } else { None },
            generator_batch_size: if desk { Some(256) } else { None },
            seeds: if desk { vec![1, 2, 3] } else { vec![1, 2, 3, 4, 5] },
            synthetic_rows: if desk { 2000 } else { 20_412 },
            split: SplitRatios::default(),
            split_seed: 7,
            generator: GeneratorSpec {
                warmup_epochs: if desk { 250 } else { 4000 },
                ..GeneratorSpec::default()
            },
            fairk: CausalModelSpec::fair_k(),
            exoc: CausalModelSpec::exoc(),
            mmd: MmdOptions::default(),
            gamma_grid: vec![1.0, 1.2, 1.4, 1.6, 1.8, 2.0],
            out: PathBuf::from("out"),
            parallel: true,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::contract("at least one seed is required"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::contract(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.epochs == 0 || self.generator_epochs == 0 {
            return Err(Error::contract("epochs must be >= 1"));
        }
        if self.synthetic_rows < 10 {
            return Err(Error::contract("synthetic_rows must be >= 10"));
        }
        self.fairk.validate()?;
        self.exoc.validate()?;
        Ok(())
    }

    /// Hash of every setting except the output directory and scheduling.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.parallel = true;
        let text = serde_json::to_string(&c).expect("config serialises");
        artifacts::sha256_hex(text.as_bytes())[..16].to_string()
    }

    fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    fn train_config(&self, objective: ObjectiveKind, seed: u64, gamma: f64) -> TrainConfig {
        let mut c = TrainConfig::new(objective, self.epochs, seed);
        c.gamma = gamma;
        c.batch_size = self.batch_size;
        c
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }
}

/// Paths of every artifact a run produced, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        RunManifest {
            version: VERSION.to_string(),
            config_hash: cfg.hash(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join("manifest.json")
    }

    /// Load the manifest in `out`, or start a new one if absent or stale.
    pub fn open(cfg: &ExperimentConfig) -> Self {
        let fresh = Self::new(cfg);
        match std::fs::read_to_string(Self::path(&cfg.out)) {
            Ok(text) => match serde_json::from_str::<RunManifest>(&text) {
                Ok(m) if m.config_hash == fresh.config_hash => m,
                _ => fresh,
            },
            Err(_) => fresh,
        }
    }

    /// Record `path` (relative to `out`) with its current hash.
    pub fn add(&mut self, out: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(out).unwrap_or(path);
        self.artifacts
            .insert(rel.to_string_lossy().into_owned(), artifacts::sha256_file(path)?);
        Ok(())
    }

    /// Every listed artifact exists and matches its hash.
    pub fn verify(&self, out: &Path) -> Result<()> {
        for (rel, hash) in &self.artifacts {
            let p = out.join(rel);
            let found = artifacts::sha256_file(&p)?;
            if &found != hash {
                return Err(Error::contract(format!("artifact {rel} changed on disk")));
            }
        }
        Ok(())
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        self.verify(out)?;
        artifacts::write_json_atomic(&Self::path(out), self)
    }
}

fn write_log(log: &TrainLog, dir: &Path, stem: &str, manifest: &mut RunManifest, out: &Path) -> Result<()> {
    let csv = dir.join(format!("{stem}.trainlog.csv"));
    log.write_csv(&csv)?;
    log.write_timing(&dir.join(format!("{stem}.timing.json")))?;
    manifest.add(out, &csv)
}

/// The source dataset: a CSV when configured, else the built-in model.
pub fn load_source(cfg: &ExperimentConfig) -> Result<TabularDataset> {
    match &cfg.dataset.path {
        Some(path) => {
            let schema = match &cfg.dataset.schema_path {
                Some(p) => Schema::from_json_file(p)?,
                None => cfg.dataset.source.schema(),
            };
            let ds = dataio::load_csv(path, &schema)?;
            log::info!(
                "loaded {} rows from {} ({} dropped missing, {} dropped sensitive)",
                ds.report.source_rows,
                path.display(),
                ds.report.dropped_missing,
                ds.report.dropped_sensitive
            );
            Ok(ds)
        }
        None => sources::generate(cfg.dataset.source, cfg.dataset.source_rows, cfg.dataset.source_seed),
    }
}

pub fn prepare(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<SplitBundle> {
    let source = load_source(cfg)?;
    let bundle = dataio::split(&source, cfg.split, cfg.split_seed)?;
    let path = cfg.out.join("splits.json");
    artifacts::write_json_atomic(&path, &bundle.indices)?;
    manifest.add(&cfg.out, &path)?;
    Ok(bundle)
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<SplitBundle> {
    let source = load_source(cfg)?;
    let path = cfg.out.join("splits.json");
    match std::fs::read_to_string(&path) {
        Ok(text) => {
            let idx: SplitIndices = serde_json::from_str(&text)?;
            if idx.train.len() + idx.val.len() + idx.test.len() != source.len() {
                return Err(Error::contract(format!(
                    "{} does not match the source size {}",
                    path.display(),
                    source.len()
                )));
            }
            dataio::split_with(&source, idx)
        }
        Err(_) => dataio::split(&source, cfg.split, cfg.split_seed),
    }
}

/// Train the generator on the training split; seeded by the first seed.
pub fn train_generator(
    cfg: &ExperimentConfig,
    bundle: &SplitBundle,
    manifest: &mut RunManifest,
) -> Result<GeneratorModel> {
    let mut tc = TrainConfig::new(ObjectiveKind::Generator, cfg.generator_epochs, cfg.seeds[0]);
    tc.gamma = cfg.gamma;
    tc.batch_size = cfg.generator_batch_size;
    let ck = cfg.out.join("generator.checkpoint.json");
    let out = generator::train_generator(&bundle.train, cfg.generator.clone(), &tc, None)?;
    out.model.save(&ck)?;
    manifest.add(&cfg.out, &ck)?;
    write_log(&out.log, &cfg.out, "generator", manifest, &cfg.out)?;
    Ok(out.model)
}

/// Load the generator checkpoint when it was trained with this config.
pub fn load_or_train_generator(
    cfg: &ExperimentConfig,
    bundle: &SplitBundle,
    manifest: &mut RunManifest,
) -> Result<GeneratorModel> {
    let ck = cfg.out.join("generator.checkpoint.json");
    if manifest.artifacts.contains_key("generator.checkpoint.json") && ck.exists() {
        let model = GeneratorModel::load(&ck)?;
        if model.schema == bundle.train.schema && model.spec == cfg.generator {
            return Ok(model);
        }
    }
    train_generator(cfg, bundle, manifest)
}

/// Evaluation data for one seed: a training set, a test set, and the
/// counterfactual arms of the test individuals.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub arms: CounterfactualSet,
}

pub fn seed_data(
    cfg: &ExperimentConfig,
    bundle: &SplitBundle,
    gen: &GeneratorModel,
    seed: u64,
    manifest: Option<&mut RunManifest>,
) -> Result<SeedData> {
    let dir = cfg.seed_dir(seed);
    match cfg.evaluation {
        Evaluation::Synthetic => {
            let (data, cf) = generator::synthesize_dataset(gen, cfg.synthetic_rows, seed)?;
            if let Some(m) = manifest {
                let p = dir.join("synthetic.csv");
                data.write_csv(&p)?;
                m.add(&cfg.out, &p)?;
                let p = dir.join("counterfactuals.csv");
                cf.write_csv(&p)?;
                m.add(&cfg.out, &p)?;
            }
            let split = dataio::split(&data, cfg.split, seed)?;
            let arms = cf.subset(&split.indices.test)?.restandardize(&split.train);
            Ok(SeedData {
                seed,
                train: split.train,
                test: split.test,
                arms,
            })
        }
        Evaluation::Observed => {
            let arms = generator::generate_counterfactuals(gen, &bundle.test, seed)?;
            if let Some(m) = manifest {
                let p = dir.join("counterfactuals.csv");
                arms.write_csv(&p)?;
                m.add(&cfg.out, &p)?;
            }
            Ok(SeedData {
                seed,
                train: bundle.train.clone(),
                test: bundle.test.clone(),
                arms,
            })
        }
    }
}

/// A fitted method with its training log, if it has one.
pub struct Fit {
    pub predictor: Predictor,
    pub log: Option<TrainLog>,
}

pub fn fit_method(
    cfg: &ExperimentConfig,
    method: Method,
    train: &TabularDataset,
    seed: u64,
    gamma: f64,
    exoc: &CausalModelSpec,
) -> Result<Fit> {
    Ok(match method {
        Method::Constant => Fit {
            predictor: baselines::fit_constant(train)?,
            log: None,
        },
        Method::Full => Fit {
            predictor: baselines::fit_full(train)?,
            log: None,
        },
        Method::Unaware => Fit {
            predictor: baselines::fit_unaware(train)?,
            log: None,
        },
        Method::FairK => {
            let tc = cfg.train_config(ObjectiveKind::Elbo, seed, gamma);
            let (p, log) = baselines::fit_latent(train, &cfg.fairk, &tc)?;
            Fit {
                predictor: p,
                log: Some(log),
            }
        }
        Method::Exoc => {
            let tc = cfg.train_config(ObjectiveKind::ElboWithControl, seed, gamma);
            let (p, log) = baselines::fit_latent(train, exoc, &tc)?;
            Fit {
                predictor: p,
                log: Some(log),
            }
        }
    })
}

/// Performance on the factual test rows and fairness across the arms.
pub fn evaluate(
    cfg: &ExperimentConfig,
    label: &str,
    predictor: &Predictor,
    data: &SeedData,
) -> Result<MetricsReport> {
    let factual = predictor.predict(&data.test)?;
    let arms = data
        .arms
        .arms
        .iter()
        .map(|a| predictor.predict(a))
        .collect::<Result<Vec<_>>>()?;
    let preds = PredictionSet::new(data.test.task(), arms)?;
    MetricsReport::evaluate(
        label,
        data.seed,
        &cfg.hash(),
        &factual,
        data.test.y(),
        &preds,
        cfg.mmd,
    )
}

/// Everything one seed produced.
pub struct SeedOutcome {
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
    pub logs: Vec<(String, TrainLog)>,
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    data: &SeedData,
    methods: &[Method],
) -> Result<SeedOutcome> {
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    for &m in methods {
        log::info!("seed {}: fitting {}", data.seed, m.label());
        let fit = fit_method(cfg, m, &data.train, data.seed, cfg.gamma, &cfg.exoc)?;
        reports.push(evaluate(cfg, m.label(), &fit.predictor, data)?);
        if let Some(l) = fit.log {
            logs.push((m.label().to_string(), l));
        }
    }
    Ok(SeedOutcome {
        seed: data.seed,
        reports,
        logs,
    })
}

/// Shared setup for every experiment verb.
pub struct Prepared {
    pub bundle: SplitBundle,
    pub generator: GeneratorModel,
    pub seeds: Vec<SeedData>,
}

pub fn prepare_all(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<Prepared> {
    cfg.validate()?;
    let bundle = prepare(cfg, manifest)?;
    let generator = load_or_train_generator(cfg, &bundle, manifest)?;
    let mut seeds = Vec::new();
    for &s in &cfg.seeds {
        seeds.push(seed_data(cfg, &bundle, &generator, s, Some(manifest))?);
    }
    Ok(Prepared {
        bundle,
        generator,
        seeds,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn fmt_pm(v: &[f64]) -> String {
    let (m, s) = mean_std(v);
    format!("{m:.3}±{s:.3}")
}

/// One row per method, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub columns: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub key: String,
    pub column_order: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn metric_columns(task: TaskKind) -> Vec<String> {
        match task {
            TaskKind::Regression => vec!["RMSE", "MAE", "MMD", "Wass"],
            TaskKind::Classification => vec!["Accuracy", "MMD", "Wass"],
        }
        .into_iter()
        .map(String::from)
        .collect()
    }

    /// Aggregate reports by label, preserving first-seen order.
    pub fn from_reports(key: &str, task: TaskKind, reports: &[MetricsReport]) -> Self {
        let mut rows: Vec<TableRow> = Vec::new();
        for r in reports {
            let row = match rows.iter_mut().position(|x| x.label == r.method) {
                Some(i) => &mut rows[i],
                None => {
                    rows.push(TableRow {
                        label: r.method.clone(),
                        columns: BTreeMap::new(),
                    });
                    rows.last_mut().expect("just pushed")
                }
            };
            let mut put = |k: &str, v: Option<f64>| {
                if let Some(v) = v {
                    row.columns.entry(k.to_string()).or_default().push(v);
                }
            };
            put("RMSE", r.rmse);
            put("MAE", r.mae);
            put("Accuracy", r.accuracy);
            put("MMD", Some(r.mmd.mean));
            put("Wass", Some(r.wass.mean));
        }
        Table {
            key: key.to_string(),
            column_order: Self::metric_columns(task),
            rows,
        }
    }

    pub fn mean(&self, label: &str, column: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.label == label)
            .and_then(|r| r.columns.get(column))
            .map(|v| mean_std(v).0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        artifacts::write_csv_atomic(path, |w| {
            let mut header = vec![self.key.clone()];
            header.extend(self.column_order.iter().cloned());
            w.write_record(&header)?;
            for r in &self.rows {
                let mut rec = vec![r.label.clone()];
                for c in &self.column_order {
                    rec.push(r.columns.get(c).map(|v| fmt_pm(v)).unwrap_or_default());
                }
                w.write_record(&rec)?;
            }
            Ok(())
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} | {} |\n", self.key, self.column_order.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.column_order.len() + 1)));
        for r in &self.rows {
            let cells: Vec<String> = self
                .column_order
                .iter()
                .map(|c| r.columns.get(c).map(|v| fmt_pm(v)).unwrap_or_default())
                .collect();
            s.push_str(&format!("| {} | {} |\n", r.label, cells.join(" | ")));
        }
        s
    }
}

/// Result of a multi-seed verb.
pub struct RunSummary {
    pub table: Table,
    pub outcomes: Vec<SeedOutcome>,
    pub failures: Vec<(u64, String)>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

fn collect(
    cfg: &ExperimentConfig,
    results: Vec<(u64, Result<SeedOutcome>)>,
) -> Result<(Vec<SeedOutcome>, Vec<(u64, String)>)> {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::contract(format!(
            "all {} seeds failed; first error: {}",
            cfg.seeds.len(),
            failures.first().map(|f| f.1.as_str()).unwrap_or("none")
        )));
    }
    Ok((ok, failures))
}

fn persist_outcomes(
    cfg: &ExperimentConfig,
    outcomes: &[SeedOutcome],
    stem: &str,
    manifest: &mut RunManifest,
) -> Result<Vec<MetricsReport>> {
    let mut all = Vec::new();
    for o in outcomes {
        let dir = cfg.seed_dir(o.seed);
        let p = dir.join(format!("{stem}.metrics.csv"));
        MetricsReport::write_csv(&o.reports, &p)?;
        manifest.add(&cfg.out, &p)?;
        MetricsReport::write_json(&o.reports, &dir.join(format!("{stem}.metrics.json")))?;
        for (label, log) in &o.logs {
            let file = format!("{stem}.{}", label.to_lowercase().replace(['-', ' ', '='], "_"));
            write_log(log, &dir, &file, manifest, &cfg.out)?;
        }
        all.extend(o.reports.iter().cloned());
    }
    Ok(all)
}

fn finish_table(
    cfg: &ExperimentConfig,
    table: &Table,
    stem: &str,
    manifest: &mut RunManifest,
) -> Result<()> {
    let p = cfg.out.join(format!("{stem}.csv"));
    table.write_csv(&p)?;
    manifest.add(&cfg.out, &p)?;
    artifacts::write_atomic(&cfg.out.join(format!("{stem}.md")), table.to_markdown().as_bytes())?;
    manifest.save(&cfg.out)
}

/// Fit every method on every seed and aggregate.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let mut manifest = RunManifest::open(cfg);
    let prep = prepare_all(cfg, &mut manifest)?;
    run_prepared(cfg, &prep, &mut manifest)
}

pub fn run_prepared(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    manifest: &mut RunManifest,
) -> Result<RunSummary> {
    let results = cfg.execution().map(&prep.seeds, |d| {
        (d.seed, run_one_seed(cfg, d, &Method::ALL))
    });
    let (outcomes, failures) = collect(cfg, results)?;
    let reports = persist_outcomes(cfg, &outcomes, "run", manifest)?;
    let p = cfg.out.join("results.csv");
    MetricsReport::write_csv(&reports, &p)?;
    manifest.add(&cfg.out, &p)?;
    let table = Table::from_reports("method", prep.bundle.train.task(), &reports);
    finish_table(cfg, &table, "table", manifest)?;
    Ok(RunSummary {
        table,
        outcomes,
        failures,
    })
}

/// Spearman rank correlation (average ranks for ties). `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Adjacent pairs (in the given order) that move against `direction`
/// (+1 for increasing, −1 for decreasing).
pub fn inversions(values: &[f64], direction: f64) -> usize {
    values
        .windows(2)
        .filter(|w| (w[1] - w[0]) * direction < 0.0)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub metric: String,
    pub spearman: Option<f64>,
    pub expected_sign: f64,
    pub inversions: usize,
    pub verdict: String,
}

impl TrendVerdict {
    fn new(metric: &str, x: &[f64], y: &[f64], expected_sign: f64) -> Self {
        let rho = spearman(x, y);
        let verdict = match rho {
            None => "no trend".to_string(),
            Some(r) if r * expected_sign > 0.0 => "expected direction".to_string(),
            Some(_) => "against expected direction".to_string(),
        };
        TrendVerdict {
            metric: metric.to_string(),
            spearman: rho,
            expected_sign,
            inversions: inversions(y, expected_sign),
            verdict,
        }
    }

    pub fn holds(&self, max_inversions: usize) -> bool {
        matches!(self.spearman, Some(r) if r * self.expected_sign > 0.0)
            && self.inversions <= max_inversions
    }
}

pub struct GammaAblation {
    pub grid: Vec<f64>,
    pub table: Table,
    pub outcomes: Vec<SeedOutcome>,
    pub verdicts: Vec<TrendVerdict>,
    pub failures: Vec<(u64, String)>,
}

fn gamma_label(g: f64) -> String {
    format!("gamma={g}")
}

/// EXOC at every γ on every seed, with monotonicity verdicts.
pub fn ablate_gamma(cfg: &ExperimentConfig, grid: &[f64]) -> Result<GammaAblation> {
    let mut manifest = RunManifest::open(cfg);
    let prep = prepare_all(cfg, &mut manifest)?;
    ablate_gamma_prepared(cfg, &prep, grid, &mut manifest)
}

pub fn ablate_gamma_prepared(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    grid: &[f64],
    manifest: &mut RunManifest,
) -> Result<GammaAblation> {
    if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::contract("gamma grid must be nonempty and positive"));
    }
    let results = cfg.execution().map(&prep.seeds, |d| {
        let r = (|| {
            let mut reports = Vec::new();
            let mut logs = Vec::new();
            for &g in grid {
                log::info!("seed {}: EXOC at gamma {g}", d.seed);
                let fit = fit_method(cfg, Method::Exoc, &d.train, d.seed, g, &cfg.exoc)?;
                reports.push(evaluate(cfg, &gamma_label(g), &fit.predictor, d)?);
                if let Some(l) = fit.log {
                    logs.push((gamma_label(g), l));
                }
            }
            Ok(SeedOutcome {
                seed: d.seed,
                reports,
                logs,
            })
        })();
        (d.seed, r)
    });
    let (outcomes, failures) = collect(cfg, results)?;
    let reports = persist_outcomes(cfg, &outcomes, "gamma", manifest)?;
    let task = prep.bundle.train.task();
    let table = Table::from_reports("gamma", task, &reports);
    let series = |col: &str| -> Vec<f64> {
        grid.iter()
            .map(|g| table.mean(&gamma_label(*g), col).unwrap_or(f64::NAN))
            .collect()
    };
    let perf = match task {
        TaskKind::Regression => TrendVerdict::new("RMSE", grid, &series("RMSE"), 1.0),
        TaskKind::Classification => TrendVerdict::new("Accuracy", grid, &series("Accuracy"), -1.0),
    };
    let verdicts = vec![TrendVerdict::new("MMD", grid, &series("MMD"), -1.0), perf];
    let p = cfg.out.join("gamma_verdicts.csv");
    artifacts::write_csv_atomic(&p, |w| {
        w.write_record(["metric", "spearman", "expected_sign", "inversions", "verdict"])?;
        for v in &verdicts {
            w.write_record([
                v.metric.clone(),
                v.spearman.map(|r| format!("{r:?}")).unwrap_or_default(),
                format!("{:?}", v.expected_sign),
                v.inversions.to_string(),
                v.verdict.clone(),
            ])?;
        }
        Ok(())
    })?;
    manifest.add(&cfg.out, &p)?;
    finish_table(cfg, &table, "gamma_table", manifest)?;
    Ok(GammaAblation {
        grid: grid.to_vec(),
        table,
        outcomes,
        verdicts,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub seed: u64,
    pub epoch0_s_dprime: f64,
    pub epoch0_predicted_y: f64,
}

pub struct ControlAblation {
    pub table: Table,
    pub outcomes: Vec<SeedOutcome>,
    pub pairs: Vec<ControlPair>,
    pub failures: Vec<(u64, String)>,
}

pub const CONTROL_LABELS: [&str; 2] = ["EXOC (S'')", "EXOC (Y-hat)"];

/// EXOC with each control target on every seed.
pub fn ablate_control(cfg: &ExperimentConfig) -> Result<ControlAblation> {
    let mut manifest = RunManifest::open(cfg);
    let prep = prepare_all(cfg, &mut manifest)?;
    ablate_control_prepared(cfg, &prep, &mut manifest)
}

pub fn ablate_control_prepared(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    manifest: &mut RunManifest,
) -> Result<ControlAblation> {
    let targets = [ControlTarget::SDoublePrime, ControlTarget::PredictedY];
    let results = cfg.execution().map(&prep.seeds, |d| {
        let r = (|| {
            let mut reports = Vec::new();
            let mut logs = Vec::new();
            for (t, label) in targets.iter().zip(CONTROL_LABELS) {
                let spec = CausalModelSpec {
                    control_target: *t,
                    ..cfg.exoc.clone()
                };
                let fit = fit_method(cfg, Method::Exoc, &d.train, d.seed, cfg.gamma, &spec)?;
                reports.push(evaluate(cfg, label, &fit.predictor, d)?);
                if let Some(l) = fit.log {
                    logs.push((label.to_string(), l));
                }
            }
            Ok(SeedOutcome {
                seed: d.seed,
                reports,
                logs,
            })
        })();
        (d.seed, r)
    });
    let (outcomes, failures) = collect(cfg, results)?;
    let pairs = outcomes
        .iter()
        .map(|o| ControlPair {
            seed: o.seed,
            epoch0_s_dprime: o.logs[0].1.records[0].total,
            epoch0_predicted_y: o.logs[1].1.records[0].total,
        })
        .collect::<Vec<_>>();
    let reports = persist_outcomes(cfg, &outcomes, "control", manifest)?;
    let table = Table::from_reports("control", prep.bundle.train.task(), &reports);
    let p = cfg.out.join("control_epoch0.csv");
    artifacts::write_csv_atomic(&p, |w| {
        w.write_record(["seed", "epoch0_total_s_dprime", "epoch0_total_predicted_y"])?;
        for c in &pairs {
            w.write_record([
                c.seed.to_string(),
                format!("{:?}", c.epoch0_s_dprime),
                format!("{:?}", c.epoch0_predicted_y),
            ])?;
        }
        Ok(())
    })?;
    manifest.add(&cfg.out, &p)?;
    finish_table(cfg, &table, "control_table", manifest)?;
    Ok(ControlAblation {
        table,
        outcomes,
        pairs,
        failures,
    })
}

/// One row of the bounds table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub params: LinearCaseParams,
    pub delta_a: f64,
    pub delta_b: f64,
    pub fairk_looser: bool,
    pub coverage_a: f64,
    pub coverage_b: f64,
}

/// Random linear-case parameter sets; the first two are fixed examples.
pub fn bound_parameter_sets(count: usize, seed: u64) -> Vec<LinearCaseParams> {
    let mut rng = NoiseStream::new(seed, Purpose::MonteCarlo, u64::MAX, 0);
    let rng = rng.rng();
    let unit = LinearCaseParams::unit();
    let mut sets = vec![unit, LinearCaseParams { alpha: 10.0, ..unit }];
    while sets.len() < count.max(2) {
        let mut coef = || rng.random_range(-3.0..3.0);
        let (alpha, beta, alpha_t, beta_t) = (coef(), coef(), coef(), coef());
        let mut sd = || rng.random_range(0.1..3.0);
        let (sigma_k, sigma_k_t, sigma_s_prime_t) = (sd(), sd(), sd());
        sets.push(LinearCaseParams {
            alpha,
            beta,
            sigma_k,
            alpha_t,
            beta_t,
            sigma_k_t,
            sigma_s_prime_t,
            s: 0.0,
            s_star: 1.0,
        });
    }
    sets.truncate(count.max(1));
    sets
}

pub fn bounds_table(sets: &[LinearCaseParams], draws: usize, seed: u64) -> Result<Vec<BoundRow>> {
    sets.iter()
        .enumerate()
        .map(|(i, p)| {
            let s = seed.wrapping_add(i as u64);
            Ok(BoundRow {
                params: *p,
                delta_a: bounds::delta_a(p)?,
                delta_b: bounds::delta_b(p)?,
                fairk_looser: bounds::fairk_bound_looser(p)?,
                coverage_a: bounds::monte_carlo_coverage(p, BoundVariant::A, draws, s)?,
                coverage_b: bounds::monte_carlo_coverage(p, BoundVariant::B, draws, s)?,
            })
        })
        .collect()
}

pub fn write_bounds_csv(rows: &[BoundRow], path: &Path) -> Result<()> {
    artifacts::write_csv_atomic(path, |w| {
        w.write_record([
            "alpha", "beta", "sigma_k", "alpha_t", "beta_t", "sigma_k_t", "sigma_s_prime_t", "s",
            "s_star", "delta_a", "delta_b", "fairk_looser", "coverage_a", "coverage_b",
        ])?;
        for r in rows {
            let p = &r.params;
            let mut rec: Vec<String> = [
                p.alpha, p.beta, p.sigma_k, p.alpha_t, p.beta_t, p.sigma_k_t, p.sigma_s_prime_t,
                p.s, p.s_star, r.delta_a, r.delta_b,
            ]
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
            rec.push(r.fairk_looser.to_string());
            rec.push(format!("{:?}", r.coverage_a));
            rec.push(format!("{:?}", r.coverage_b));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

/// Collect whatever tables exist in `out` into one markdown document.
pub fn report(out: &Path) -> Result<String> {
    let mut doc = String::from("# Results\n\n");
    let mut found = false;
    for (stem, title) in [
        ("table", "Method comparison"),
        ("gamma_table", "Control-loss weight"),
        ("control_table", "Control target"),
    ] {
        if let Ok(md) = std::fs::read_to_string(out.join(format!("{stem}.md"))) {
            doc.push_str(&format!("## {title}\n\n{md}\n"));
            found = true;
        }
    }
    for (file, title) in [
        ("gamma_verdicts.csv", "Trend verdicts"),
        ("control_epoch0.csv", "Epoch-0 losses by control target"),
        ("bounds.csv", "Analytic bounds"),
    ] {
        if let Ok(text) = std::fs::read_to_string(out.join(file)) {
            doc.push_str(&format!("## {title}\n\n```\n{text}```\n\n"));
            found = true;
        }
    }
    if !found {
        return Err(Error::contract(format!("no results found in {}", out.display())));
    }
    doc.push_str(
        "Values are mean±sample std over seeds. MMD is scaled by the mean arm size. \
         CLAIRE is not implemented and has no row. Counterfactual arms come from \
         the trained generator, including for observed data.\n",
    );
    artifacts::write_atomic(&out.join("report.md"), doc.as_bytes())?;
    Ok(doc)
}
