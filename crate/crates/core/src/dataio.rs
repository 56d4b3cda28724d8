//! Tabular dataset loading, standardisation and seeded splitting.
//!
//! The schema is data: a JSON document listing the columns, their roles and,
//! for categorical columns, the accepted labels. Exactly one column is the
//! sensitive attribute and exactly one is the target.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    BinaryTarget,
    ContinuousTarget,
    Sensitive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Accepted labels for categorical and sensitive columns. For a binary
    /// target, `[negative, positive]`; when absent the cell must read 0 or 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn continuous(name: &str) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Continuous,
            categories: vec![],
        }
    }

    pub fn with_categories(name: &str, kind: ColumnKind, cats: &[&str]) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
            categories: cats.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    /// Standardise a continuous target with training statistics.
    #[serde(default = "default_true")]
    pub standardize_target: bool,
}

fn default_true() -> bool {
    true
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let sensitive: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Sensitive)
            .collect();
        let targets = self
            .columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::BinaryTarget | ColumnKind::ContinuousTarget))
            .count();
        if sensitive.len() != 1 {
            return Err(Error::Schema(format!(
                "`{}` needs exactly one sensitive column, found {}",
                self.name,
                sensitive.len()
            )));
        }
        if targets != 1 {
            return Err(Error::Schema(format!(
                "`{}` needs exactly one target column, found {targets}",
                self.name
            )));
        }
        if sensitive[0].categories.len() < 2 {
            return Err(Error::Schema(format!(
                "sensitive column `{}` needs at least two categories",
                sensitive[0].name
            )));
        }
        for c in &self.columns {
            match c.kind {
                ColumnKind::Categorical if c.categories.len() < 2 => {
                    return Err(Error::Schema(format!(
                        "categorical column `{}` needs at least two categories",
                        c.name
                    )))
                }
                ColumnKind::BinaryTarget if !(c.categories.is_empty() || c.categories.len() == 2) => {
                    return Err(Error::Schema(format!(
                        "binary target `{}` takes zero or two labels",
                        c.name
                    )))
                }
                _ => {}
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.columns.iter().find(|c| !seen.insert(&c.name)) {
            return Err(Error::Schema(format!("duplicate column `{}`", dup.name)));
        }
        Ok(())
    }

    pub fn task(&self) -> TaskKind {
        if self.columns.iter().any(|c| c.kind == ColumnKind::BinaryTarget) {
            TaskKind::Classification
        } else {
            TaskKind::Regression
        }
    }

    pub fn sensitive(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Sensitive)
            .expect("validated schema")
    }

    pub fn target(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| matches!(c.kind, ColumnKind::BinaryTarget | ColumnKind::ContinuousTarget))
            .expect("validated schema")
    }

    pub fn n_sensitive(&self) -> usize {
        self.sensitive().categories.len()
    }

    /// Non-sensitive feature columns in schema order.
    pub fn features(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Continuous | ColumnKind::Categorical))
    }

    /// Feature blocks laid out in the encoded matrix.
    pub fn feature_blocks(&self) -> Vec<FeatureBlock> {
        let mut offset = 0;
        self.features()
            .map(|c| {
                let width = match c.kind {
                    ColumnKind::Categorical => c.categories.len(),
                    _ => 1,
                };
                let b = FeatureBlock {
                    name: c.name.clone(),
                    offset,
                    width,
                    categorical: c.kind == ColumnKind::Categorical,
                };
                offset += width;
                b
            })
            .collect()
    }

    pub fn encoded_width(&self) -> usize {
        self.feature_blocks().iter().map(|b| b.width).sum()
    }

    /// Short human-readable identity used in mismatch errors.
    pub fn signature(&self) -> String {
        let cols: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{}:{:?}", c.name, c.kind))
            .collect();
        format!("{}[{}]", self.name, cols.join(","))
    }
}

/// One column's slice of the encoded feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureBlock {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub categorical: bool,
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Indexed by encoded column; categorical columns carry (0, 1).
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardization {
    fn identity(width: usize) -> Self {
        Standardization {
            means: vec![0.0; width],
            stds: vec![1.0; width],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    /// Modelling-scale features back to original units.
    pub fn destandardize_x(&self, x: &Tensor) -> Tensor {
        let (n, w) = x.dims();
        let mut out = x.clone();
        for i in 0..n {
            for j in 0..w {
                let v = &mut out.data_mut()[i * w + j];
                *v = *v * self.stds[j] + self.means[j];
            }
        }
        out
    }

    pub fn destandardize_y(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

/// Counts reported by [`load_csv`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub source_rows: usize,
    pub dropped_missing: usize,
    pub dropped_sensitive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub schema: Schema,
    /// Encoded features in original units (continuous raw, categorical one-hot).
    raw_x: Tensor,
    raw_y: Vec<f64>,
    x: Tensor,
    y: Vec<f64>,
    s: Vec<usize>,
    /// Stable identifiers linking rows back to their source (and to
    /// counterfactual arms for synthetic data).
    row_ids: Vec<usize>,
    stats: Standardization,
    pub report: LoadReport,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "?" || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// Read a CSV with a header row and encode it according to `schema`.
/// Continuous features are standardised over the loaded rows.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<TabularDataset> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let i = index.get(c.name.as_str()).ok_or_else(|| Error::Load {
            row: 0,
            column: c.name.clone(),
            message: "column not present in header".into(),
        })?;
        col_idx.push(*i);
    }

    let blocks = schema.feature_blocks();
    let width = schema.encoded_width();
    let sens = schema.sensitive();
    let mut report = LoadReport::default();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ss = Vec::new();
    let mut ids = Vec::new();

    'rows: for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row_no = r + 1;
        report.source_rows += 1;
        let cells: Vec<&str> = col_idx.iter().map(|&i| rec.get(i).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            report.dropped_missing += 1;
            continue;
        }
        let mut xrow = vec![0.0; width];
        let mut y = f64::NAN;
        let mut s = usize::MAX;
        let mut block = blocks.iter();
        for (spec, cell) in schema.columns.iter().zip(&cells) {
            let err = |message: String| Error::Load {
                row: row_no,
                column: spec.name.clone(),
                message,
            };
            match spec.kind {
                ColumnKind::Sensitive => match sens.categories.iter().position(|l| l == cell) {
                    Some(i) => s = i,
                    None => {
                        report.dropped_sensitive += 1;
                        continue 'rows;
                    }
                },
                ColumnKind::Continuous => {
                    let b = block.next().expect("block per feature");
                    xrow[b.offset] = parse_num(cell).map_err(err)?;
                }
                ColumnKind::Categorical => {
                    let b = block.next().expect("block per feature");
                    let i = spec
                        .categories
                        .iter()
                        .position(|l| l == cell)
                        .ok_or_else(|| err(format!("unknown category `{cell}`")))?;
                    xrow[b.offset + i] = 1.0;
                }
                ColumnKind::ContinuousTarget => y = parse_num(cell).map_err(err)?,
                ColumnKind::BinaryTarget => {
                    y = if spec.categories.is_empty() {
                        match parse_num(cell).map_err(err)? {
                            v if v == 0.0 || v == 1.0 => v,
                            v => return Err(err(format!("binary target must be 0 or 1, got {v}"))),
                        }
                    } else {
                        match spec.categories.iter().position(|l| l == cell) {
                            Some(i) => i as f64,
                            None => return Err(err(format!("unknown label `{cell}`"))),
                        }
                    }
                }
            }
        }
        xs.extend(xrow);
        ys.push(y);
        ss.push(s);
        ids.push(ids.len());
    }
    if ys.is_empty() {
        return Err(Error::Load {
            row: report.source_rows,
            column: sens.name.clone(),
            message: "no rows left after filtering".into(),
        });
    }
    let n = ys.len();
    let raw_x = Tensor::matrix(n, width, xs)?;
    let mut ds = TabularDataset::from_raw(schema.clone(), raw_x, ys, ss, ids)?;
    ds.report = report;
    let stats = ds.fit_standardization();
    Ok(ds.restandardize(&stats))
}

fn parse_num(cell: &str) -> std::result::Result<f64, String> {
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("cannot parse `{cell}` as a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value `{cell}`"))
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TabularDataset {
    /// Build from original-unit rows; standardisation starts as identity.
    pub fn from_raw(
        schema: Schema,
        raw_x: Tensor,
        raw_y: Vec<f64>,
        s: Vec<usize>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = raw_y.len();
        let width = schema.encoded_width();
        if raw_x.rows() != n || raw_x.cols() != width || s.len() != n || row_ids.len() != n {
            return Err(Error::contract(format!(
                "dataset parts disagree: x {:?}, y {n}, s {}, ids {}, width {width}",
                raw_x.shape(),
                s.len(),
                row_ids.len()
            )));
        }
        let k = schema.n_sensitive();
        if let Some(bad) = s.iter().find(|&&v| v >= k) {
            return Err(Error::contract(format!("sensitive index {bad} out of range {k}")));
        }
        Ok(TabularDataset {
            x: raw_x.clone(),
            y: raw_y.clone(),
            raw_x,
            raw_y,
            s,
            row_ids,
            stats: Standardization::identity(width),
            report: LoadReport {
                source_rows: n,
                ..LoadReport::default()
            },
            schema,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn task(&self) -> TaskKind {
        self.schema.task()
    }

    pub fn n_sensitive(&self) -> usize {
        self.schema.n_sensitive()
    }

    /// Standardised feature matrix.
    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn raw_x(&self) -> &Tensor {
        &self.raw_x
    }

    /// Target on the modelling scale (standardised for regression when the
    /// schema asks for it).
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn raw_y(&self) -> &[f64] {
        &self.raw_y
    }

    pub fn s(&self) -> &[usize] {
        &self.s
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn stats(&self) -> &Standardization {
        &self.stats
    }

    pub fn y_column(&self) -> Result<Tensor> {
        Tensor::column(self.y.clone())
    }

    pub fn s_onehot(&self) -> Tensor {
        onehot(&self.s, self.n_sensitive())
    }

    /// Statistics of this dataset's own continuous columns (and target).
    pub fn fit_standardization(&self) -> Standardization {
        let width = self.schema.encoded_width();
        let mut st = Standardization::identity(width);
        for b in self.schema.feature_blocks().iter().filter(|b| !b.categorical) {
            let col = (0..self.len()).map(|i| self.raw_x.get(i, b.offset));
            let (m, sd) = mean_std(col);
            st.means[b.offset] = m;
            st.stds[b.offset] = if sd > 0.0 { sd } else { 1.0 };
        }
        if self.task() == TaskKind::Regression && self.schema.standardize_target {
            let (m, sd) = mean_std(self.raw_y.iter().copied());
            st.target_mean = m;
            st.target_std = if sd > 0.0 { sd } else { 1.0 };
        }
        st
    }

    /// A copy whose modelling-scale values use `stats`.
    pub fn restandardize(&self, stats: &Standardization) -> Self {
        let (n, w) = self.raw_x.dims();
        let mut x = self.raw_x.clone();
        for i in 0..n {
            for j in 0..w {
                let v = &mut x.data_mut()[i * w + j];
                *v = (*v - stats.means[j]) / stats.stds[j];
            }
        }
        let y = self
            .raw_y
            .iter()
            .map(|v| (v - stats.target_mean) / stats.target_std)
            .collect();
        TabularDataset {
            x,
            y,
            stats: stats.clone(),
            ..self.clone()
        }
    }

    /// Inverse of the feature standardisation for one modelling-scale matrix.
    pub fn destandardize_x(&self, x: &Tensor) -> Tensor {
        self.stats.destandardize_x(x)
    }

    pub fn destandardize_y(&self, y: f64) -> f64 {
        self.stats.destandardize_y(y)
    }

    /// Rows by position, keeping this dataset's statistics.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let raw_x = self.raw_x.select_rows(idx)?;
        let mut ds = TabularDataset::from_raw(
            self.schema.clone(),
            raw_x,
            idx.iter().map(|&i| self.raw_y[i]).collect(),
            idx.iter().map(|&i| self.s[i]).collect(),
            idx.iter().map(|&i| self.row_ids[i]).collect(),
        )?;
        ds.report = self.report;
        Ok(ds.restandardize(&self.stats))
    }

    /// New rows given on the modelling scale, sharing schema and statistics.
    pub fn with_modelled_rows(
        &self,
        x: Tensor,
        y: Vec<f64>,
        s: Vec<usize>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let raw_x = self.destandardize_x(&x);
        let raw_y = y.iter().map(|&v| self.destandardize_y(v)).collect();
        let ds = TabularDataset::from_raw(self.schema.clone(), raw_x, raw_y, s, row_ids)?;
        Ok(ds.restandardize(&self.stats))
    }

    /// Rows given in original units, sharing schema and statistics.
    pub fn with_raw_rows(
        &self,
        raw_x: Tensor,
        raw_y: Vec<f64>,
        s: Vec<usize>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let ds = TabularDataset::from_raw(self.schema.clone(), raw_x, raw_y, s, row_ids)?;
        Ok(ds.restandardize(&self.stats))
    }

    /// The same individuals with the sensitive attribute replaced.
    pub fn with_sensitive(&self, s: Vec<usize>) -> Result<Self> {
        let ds = TabularDataset::from_raw(
            self.schema.clone(),
            self.raw_x.clone(),
            self.raw_y.clone(),
            s,
            self.row_ids.clone(),
        )?;
        Ok(ds.restandardize(&self.stats))
    }

    /// Write in the schema's own column layout, so [`load_csv`] reads it back.
    /// Categorical cells take the label of the largest encoded entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::artifacts::write_csv_atomic(path, |w| self.fill_csv(w))
    }

    fn fill_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let blocks = self.schema.feature_blocks();
        for i in 0..self.len() {
            let row = self.raw_x.row(i);
            let mut block = blocks.iter();
            let mut rec = Vec::with_capacity(self.schema.columns.len());
            for c in &self.schema.columns {
                rec.push(match c.kind {
                    ColumnKind::Sensitive => c.categories[self.s[i]].clone(),
                    ColumnKind::Continuous => {
                        format!("{:?}", row[block.next().expect("block").offset])
                    }
                    ColumnKind::Categorical => {
                        let b = block.next().expect("block");
                        c.categories[argmax(&row[b.offset..b.offset + b.width])].clone()
                    }
                    ColumnKind::ContinuousTarget => format!("{:?}", self.raw_y[i]),
                    ColumnKind::BinaryTarget => {
                        let label = usize::from(self.raw_y[i] >= 0.5);
                        if c.categories.is_empty() {
                            label.to_string()
                        } else {
                            c.categories[label].clone()
                        }
                    }
                });
            }
            w.write_record(&rec)?;
        }
        Ok(())
    }
}

/// Column names of the encoded matrix (`name=label` for one-hot columns).
pub fn encoded_column_names(schema: &Schema) -> Vec<String> {
    let mut out = Vec::new();
    for c in schema.features() {
        match c.kind {
            ColumnKind::Categorical => {
                out.extend(c.categories.iter().map(|l| format!("{}={l}", c.name)))
            }
            _ => out.push(c.name.clone()),
        }
    }
    out
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn onehot(idx: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[idx.len().max(1), k]);
    for (i, &s) in idx.iter().enumerate() {
        t.data_mut()[i * k + s] = 1.0;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: TabularDataset,
    pub val: TabularDataset,
    pub test: TabularDataset,
    pub indices: SplitIndices,
}

/// Seeded permutation of `0..n` cut into train/val/test. Validation and test
/// sizes are floors; the remainder goes to train.
pub fn split_indices(n: usize, ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split ratios must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    if n < 10 {
        return Err(Error::contract(format!("refusing to split {n} rows (< 10)")));
    }
    let n_val = (n as f64 * val + 1e-9).floor() as usize;
    let n_test = (n as f64 * test + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(SplitIndices {
        seed,
        ratios,
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_val].to_vec(),
        test: perm[n_train + n_val..].to_vec(),
    })
}

/// Split and standardise all three parts with training statistics.
pub fn split(dataset: &TabularDataset, ratios: SplitRatios, seed: u64) -> Result<SplitBundle> {
    let indices = split_indices(dataset.len(), ratios, seed)?;
    split_with(dataset, indices)
}

pub fn split_with(dataset: &TabularDataset, indices: SplitIndices) -> Result<SplitBundle> {
    let train = dataset.subset(&indices.train)?;
    let stats = train.fit_standardization();
    Ok(SplitBundle {
        train: train.restandardize(&stats),
        val: dataset.subset(&indices.val)?.restandardize(&stats),
        test: dataset.subset(&indices.test)?.restandardize(&stats),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn law_schema() -> Schema {
        Schema {
            name: "toy".into(),
            columns: vec![
                ColumnSpec::with_categories(
                    "race",
                    ColumnKind::Sensitive,
                    &["White", "Black", "Asian"],
                ),
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

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn five_rows_standardized_by_hand() {
        let f = write(
            "race,gpa,lsat,fya\n\
             White,3.0,30,0.5\n\
             Black,2.0,20,-0.5\n\
             Asian,4.0,40,1.0\n\
             White,3.5,35,0.0\n\
             Black,2.5,25,-1.0\n",
        );
        let ds = load_csv(f.path(), &law_schema()).unwrap();
        assert_eq!(ds.len(), 5);
        // gpa: mean 3.0, population variance (0+1+1+0.25+0.25)/5 = 0.5
        let sd = 0.5f64.sqrt();
        let expected = [0.0, -1.0 / sd, 1.0 / sd, 0.5 / sd, -0.5 / sd];
        for (i, e) in expected.iter().enumerate() {
            assert!((ds.x().get(i, 0) - e).abs() < 1e-12);
            // lsat is gpa × 10, so it standardises identically
            assert!((ds.x().get(i, 1) - e).abs() < 1e-12);
        }
        assert_eq!(ds.s(), &[0, 1, 2, 0, 1]);
        let col: Vec<f64> = (0..5).map(|i| ds.x().get(i, 0)).collect();
        let m: f64 = col.iter().sum::<f64>() / 5.0;
        let v: f64 = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 5.0;
        assert!(m.abs() < 1e-9 && (v.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_schema_label_dropped() {
        let f = write("race,gpa,lsat,fya\nWhite,3,30,0\nOther,3,30,0\nBlack,2,20,1\n");
        let ds = load_csv(f.path(), &law_schema()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.report.dropped_sensitive, 1);
        assert_eq!(ds.report.source_rows, 3);
    }

    #[test]
    fn missing_values_dropped_and_counted() {
        let f = write("race,gpa,lsat,fya\nWhite,,30,0\nBlack,2,?,1\nAsian,3,31,0.2\n");
        let ds = load_csv(f.path(), &law_schema()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.report.dropped_missing, 2);
    }

    #[test]
    fn load_errors_carry_coordinates() {
        let f = write("race,gpa,lsat,fya\nWhite,3,30,0\nBlack,abc,20,1\n");
        match load_csv(f.path(), &law_schema()) {
            Err(Error::Load { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "gpa");
            }
            other => panic!("expected load error, got {other:?}"),
        }
        let f = write("race,gpa,fya\nWhite,3,0\n");
        assert!(matches!(load_csv(f.path(), &law_schema()), Err(Error::Load { column, .. }) if column == "lsat"));
        let f = write("race,gpa,lsat,fya\nOther,3,30,0\n");
        assert!(load_csv(f.path(), &law_schema()).is_err());
    }

    #[test]
    fn schema_validation() {
        let mut s = law_schema();
        s.columns.remove(0);
        assert!(s.validate().is_err());
        let mut s = law_schema();
        s.columns[0].categories.truncate(1);
        assert!(s.validate().is_err());
        let json = law_schema().to_json().unwrap();
        let back: Schema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, law_schema());
    }

    #[test]
    fn split_sizes() {
        let r = SplitRatios::default();
        let a = split_indices(100, r, 7).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (80, 10, 10));
        let b = split_indices(103, r, 7).unwrap();
        assert_eq!((b.train.len(), b.val.len(), b.test.len()), (83, 10, 10));
        assert_eq!(split_indices(103, r, 7).unwrap(), b);
        assert!(split_indices(9, r, 7).is_err());
        let bad = SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.2,
        };
        assert!(split_indices(100, bad, 7).is_err());
    }

    #[test]
    fn categorical_and_binary_target() {
        let schema = Schema {
            name: "adult-toy".into(),
            columns: vec![
                ColumnSpec::with_categories("race", ColumnKind::Sensitive, &["W", "B"]),
                ColumnSpec::continuous("age"),
                ColumnSpec::with_categories("sex", ColumnKind::Categorical, &["F", "M"]),
                ColumnSpec::with_categories("income", ColumnKind::BinaryTarget, &["<=50K", ">50K"]),
            ],
            standardize_target: true,
        };
        let f = write("age,sex,race,income\n30,F,W,<=50K\n40,M,B,>50K\n");
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.task(), TaskKind::Classification);
        assert_eq!(ds.y(), &[0.0, 1.0]);
        assert_eq!(ds.x().row(0)[1..], [1.0, 0.0]);
        assert_eq!(ds.x().row(1)[1..], [0.0, 1.0]);
        let f = write("age,sex,race,income\n30,X,W,<=50K\n");
        assert!(load_csv(f.path(), &schema).is_err());
    }
}
