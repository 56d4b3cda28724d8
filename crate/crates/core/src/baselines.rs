//! Predictors compared in the experiments: Constant, Full, Unaware, and the
//! two latent-variable methods (Fair-K and EXOC), which fit a linear head on
//! posterior means of K.

use serde::{Deserialize, Serialize};

use crate::causal::{build_model, CausalModel, CausalModelSpec};
use crate::dataio::{Schema, TabularDataset, TaskKind};
use crate::error::{Error, Result};
use crate::linear::{self, FitOptions, LinearModel};
use crate::tensor::{self, Tensor};
use crate::trainer::{self, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Constant,
    Full,
    Unaware,
    FairK,
    Exoc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Constant,
        Method::Full,
        Method::Unaware,
        Method::FairK,
        Method::Exoc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Constant => "Constant",
            Method::Full => "Full",
            Method::Unaware => "Unaware",
            Method::FairK => "Fair-K",
            Method::Exoc => "EXOC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    /// Regression: the training mean. Classification: the positive-class
    /// frequency, used as the score for every input.
    Constant { score: f64 },
    Linear(LinearModel),
    Latent {
        model: Box<CausalModel>,
        head: LinearModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub method: Method,
    pub schema: Schema,
    pub fitted: Fitted,
}

impl Predictor {
    /// Regression values on the modelling scale, or classification scores.
    pub fn predict(&self, data: &TabularDataset) -> Result<Vec<f64>> {
        if data.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.signature(),
                found: data.schema.signature(),
            });
        }
        match &self.fitted {
            Fitted::Constant { score } => Ok(vec![*score; data.len()]),
            Fitted::Linear(m) => m.predict(&self.design(data)?),
            Fitted::Latent { model, head } => head.predict(&model.infer_posterior(data)?.k),
        }
    }

    fn design(&self, data: &TabularDataset) -> Result<Tensor> {
        match self.method {
            Method::Full => tensor::concat_cols(&[data.x(), &data.s_onehot()]),
            _ => Ok(data.x().clone()),
        }
    }

    /// For classification, the constant class label.
    pub fn constant_class(&self) -> Option<f64> {
        match (&self.fitted, self.schema.task()) {
            (Fitted::Constant { score }, TaskKind::Classification) => {
                Some(if *score >= 0.5 { 1.0 } else { 0.0 })
            }
            _ => None,
        }
    }
}

pub fn fit_constant(train: &TabularDataset) -> Result<Predictor> {
    if train.is_empty() {
        return Err(Error::contract("constant fit needs training targets"));
    }
    let score = train.y().iter().sum::<f64>() / train.len() as f64;
    Ok(Predictor {
        method: Method::Constant,
        schema: train.schema.clone(),
        fitted: Fitted::Constant { score },
    })
}

fn fit_linear(method: Method, train: &TabularDataset) -> Result<Predictor> {
    let mut p = Predictor {
        method,
        schema: train.schema.clone(),
        fitted: Fitted::Constant { score: 0.0 },
    };
    let x = p.design(train)?;
    p.fitted = Fitted::Linear(linear::fit(&x, train.y(), train.task(), FitOptions::default())?);
    Ok(p)
}

/// Linear or logistic regression on features and one-hot S.
pub fn fit_full(train: &TabularDataset) -> Result<Predictor> {
    fit_linear(Method::Full, train)
}

/// Linear or logistic regression on features alone.
pub fn fit_unaware(train: &TabularDataset) -> Result<Predictor> {
    fit_linear(Method::Unaware, train)
}

/// Linear head on posterior means of K.
pub fn downstream_predict(k_means: &Tensor, y_train: &[f64], task: TaskKind) -> Result<LinearModel> {
    if k_means.rows() != y_train.len() {
        return Err(Error::contract(format!(
            "posterior rows {} do not match {} targets",
            k_means.rows(),
            y_train.len()
        )));
    }
    linear::fit(k_means, y_train, task, FitOptions::default())
}

/// Train a latent-variable model, then fit the head on its training posteriors.
pub fn fit_latent(
    train: &TabularDataset,
    spec: &CausalModelSpec,
    config: &TrainConfig,
) -> Result<(Predictor, TrainLog)> {
    let method = match spec.variant {
        crate::causal::Variant::FairK => Method::FairK,
        crate::causal::Variant::Exoc => Method::Exoc,
    };
    let model = build_model(spec, &train.schema, config.seed)?;
    let out = trainer::train(model, train, config, None)?;
    let post = out.model.infer_posterior(train)?;
    let head = downstream_predict(&post.k, train.y(), train.task())?;
    Ok((
        Predictor {
            method,
            schema: train.schema.clone(),
            fitted: Fitted::Latent {
                model: Box::new(out.model),
                head,
            },
        },
        out.log,
    ))
}

/// Fair-K trained on the ELBO alone.
pub fn fit_fairk(train: &TabularDataset, config: &TrainConfig) -> Result<(Predictor, TrainLog)> {
    let mut cfg = config.clone();
    cfg.objective = trainer::ObjectiveKind::Elbo;
    fit_latent(train, &CausalModelSpec::fair_k(), &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{ColumnKind, ColumnSpec};

    fn data(y: Vec<f64>, task: TaskKind) -> TabularDataset {
        let n = y.len();
        let target = match task {
            TaskKind::Regression => ColumnSpec::with_categories("y", ColumnKind::ContinuousTarget, &[]),
            TaskKind::Classification => ColumnSpec::with_categories("y", ColumnKind::BinaryTarget, &[]),
        };
        let schema = Schema {
            name: "t".into(),
            columns: vec![
                ColumnSpec::with_categories("s", ColumnKind::Sensitive, &["a", "b"]),
                ColumnSpec::continuous("x"),
                target,
            ],
            standardize_target: false,
        };
        let x = Tensor::column((0..n).map(|i| i as f64).collect()).unwrap();
        let s = (0..n).map(|i| i % 2).collect();
        TabularDataset::from_raw(schema, x, y, s, (0..n).collect()).unwrap()
    }

    #[test]
    fn constant_regression_is_mean() {
        let p = fit_constant(&data(vec![1.0, 2.0, 3.0], TaskKind::Regression)).unwrap();
        assert_eq!(p.fitted, Fitted::Constant { score: 2.0 });
    }

    #[test]
    fn constant_classification_majority() {
        let y = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let d = data(y.clone(), TaskKind::Classification);
        let p = fit_constant(&d).unwrap();
        assert_eq!(p.constant_class(), Some(1.0));
        let acc = crate::metrics::accuracy(&p.predict(&d).unwrap(), &y).unwrap();
        assert!((acc - 0.7).abs() < 1e-12);
    }

    #[test]
    fn unaware_ignores_s_full_does_not() {
        let y: Vec<f64> = (0..20).map(|i| 0.5 * i as f64 + 3.0 * (i % 2) as f64).collect();
        let d = data(y, TaskKind::Regression);
        let flipped = d.with_sensitive(d.s().iter().map(|s| 1 - s).collect()).unwrap();
        let u = fit_unaware(&d).unwrap();
        assert_eq!(u.predict(&d).unwrap(), u.predict(&flipped).unwrap());
        let f = fit_full(&d).unwrap();
        let (a, b) = (f.predict(&d).unwrap(), f.predict(&flipped).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() > 1.0));
    }
}
