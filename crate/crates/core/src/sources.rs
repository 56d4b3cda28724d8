//! Built-in source data generators shaped like the Law School and Adult
//! tables, for use when no CSV is supplied.
//!
//! Each is a small structural causal model with a latent ability/affluence
//! factor `K`, a race attribute with fixed category frequencies, and
//! race-dependent offsets on every observed column.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{ColumnKind, ColumnSpec, Schema, TabularDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    LawLike,
    AdultLike,
}

pub fn law_schema() -> Schema {
    Schema {
        name: "law".into(),
        columns: vec![
            ColumnSpec::with_categories("race", ColumnKind::Sensitive, &["White", "Black", "Asian"]),
            ColumnSpec::continuous("UGPA"),
            ColumnSpec::continuous("LSAT"),
            ColumnSpec::with_categories("ZFYA", ColumnKind::ContinuousTarget, &[]),
        ],
        standardize_target: true,
    }
}

/// Age, years of education, weekly hours, sex and employer type.
pub fn adult_schema() -> Schema {
    Schema {
        name: "adult".into(),
        columns: vec![
            ColumnSpec::continuous("age"),
            ColumnSpec::continuous("education-num"),
            ColumnSpec::continuous("hours-per-week"),
            ColumnSpec::with_categories("sex", ColumnKind::Categorical, &["Male", "Female"]),
            ColumnSpec::with_categories(
                "workclass",
                ColumnKind::Categorical,
                &["Private", "Self-emp", "Government"],
            ),
            ColumnSpec::with_categories(
                "race",
                ColumnKind::Sensitive,
                &["White", "Black", "Asian-Pac-Islander"],
            ),
            ColumnSpec::with_categories("income", ColumnKind::BinaryTarget, &["<=50K", ">50K"]),
        ],
        standardize_target: true,
    }
}

impl SourceKind {
    pub fn schema(self) -> Schema {
        match self {
            SourceKind::LawLike => law_schema(),
            SourceKind::AdultLike => adult_schema(),
        }
    }

    /// Category frequencies of the sensitive attribute.
    pub fn race_mix(self) -> [f64; 3] {
        match self {
            SourceKind::LawLike => [0.84, 0.09, 0.07],
            SourceKind::AdultLike => [0.87, 0.10, 0.03],
        }
    }
}

fn draw_category<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn z<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` rows from the built-in model, standardised on their own statistics.
pub fn generate(kind: SourceKind, n: usize, seed: u64) -> Result<TabularDataset> {
    if n == 0 {
        return Err(Error::contract("source size must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = kind.schema();
    let width = schema.encoded_width();
    let mut x = Vec::with_capacity(n * width);
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mix = kind.race_mix();
    for _ in 0..n {
        let race = draw_category(&mut rng, &mix);
        let k = z(&mut rng);
        match kind {
            SourceKind::LawLike => {
                const GPA: [f64; 3] = [0.0, 0.0, 0.05];
                const LSAT: [f64; 3] = [0.0, -7.0, -2.5];
                const FYA: [f64; 3] = [0.0, -1.6, -0.5];
                let gpa = 3.2 + 0.30 * k + GPA[race] + 0.25 * z(&mut rng);
                let lsat = 36.0 + 4.0 * k + LSAT[race] + 3.0 * z(&mut rng);
                let fya = 0.85 * k + FYA[race] + 0.55 * z(&mut rng);
                x.extend([gpa, lsat]);
                y.push(fya);
            }
            SourceKind::AdultLike => {
                const EDU: [f64; 3] = [0.0, -1.2, 0.6];
                const HOURS: [f64; 3] = [0.0, -1.5, 0.5];
                const INCOME: [f64; 3] = [0.0, -0.9, -0.1];
                let age = (38.0 + 9.0 * k + 11.0 * z(&mut rng)).clamp(17.0, 90.0);
                let edu = (10.0 + 1.8 * k + EDU[race] + 2.0 * z(&mut rng)).clamp(1.0, 16.0);
                let hours = (40.0 + 4.0 * k + HOURS[race] + 10.0 * z(&mut rng)).clamp(1.0, 99.0);
                let female = usize::from(rng.random::<f64>() < 0.33);
                let wc = draw_category(&mut rng, &[0.74, 0.12, 0.14]);
                let logit = -1.6 + 1.3 * k + INCOME[race] - 0.8 * female as f64
                    + if wc == 1 { 0.3 } else { 0.0 }
                    + 0.5 * z(&mut rng);
                let label = f64::from(u8::from(rng.random::<f64>() < crate::tensor::sigmoid_scalar(logit)));
                x.extend([age, edu, hours]);
                x.extend((0..2).map(|c| f64::from(u8::from(c == female))));
                x.extend((0..3).map(|c| f64::from(u8::from(c == wc))));
                y.push(label);
            }
        }
        s.push(race);
    }
    let raw_x = Tensor::matrix(n, width, x)?;
    let ds = TabularDataset::from_raw(schema, raw_x, y, s, (0..n).collect())?;
    let stats = ds.fit_standardization();
    Ok(ds.restandardize(&stats))
}
