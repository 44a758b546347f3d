//! Regressors mapping QA features to a predicted Dice score, plus the two
//! comparison baselines: a shape-only ensemble and a network that reads the
//! image and segmentation directly.

mod direct;
mod gpr;
mod linear;
mod tree;

pub use direct::{fit_direct_net, DirectNet, DirectNetConfig, DIRECT_BINS};
pub use gpr::{fit_gpr, GprHyper, GprModel};
pub use linear::{fit_bagging, fit_ols, fit_shape_only, BaggedLinear, LinearModel, SHAPE_COLUMN};
pub use tree::{fit_gbt, fit_rf, fit_tree, Boosted, Forest, Tree};

use crate::container::{Container, ContainerError};
use crate::encoders::EncoderError;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("design matrix is empty")]
    Empty,
    #[error("row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("{0} rows but {1} targets")]
    TargetCount(usize, usize),
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
    #[error("target {value} at row {row} is outside [0, 1]")]
    TargetRange { row: usize, value: f64 },
    #[error("{method} needs at least {needed} rows, got {got}")]
    TooFewRows { method: &'static str, needed: usize, got: usize },
    #[error("normal equations are singular even with ridge jitter")]
    Singular,
    #[error("kernel matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("expected {expected} features, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RegressError>;

/// Feature rows with one Dice target each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(RegressError::Empty);
        }
        if rows.len() != targets.len() {
            return Err(RegressError::TargetCount(rows.len(), targets.len()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(RegressError::Empty);
        }
        for (i, (r, &t)) in rows.iter().zip(&targets).enumerate() {
            if r.len() != cols {
                return Err(RegressError::Ragged {
                    row: i,
                    expected: cols,
                    got: r.len(),
                });
            }
            if !t.is_finite() || r.iter().any(|v| !v.is_finite()) {
                return Err(RegressError::NonFinite(i));
            }
            if !(0.0..=1.0).contains(&t) {
                return Err(RegressError::TargetRange { row: i, value: t });
            }
        }
        Ok(Self { rows, targets })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> usize {
        self.rows[0].len()
    }

    /// The same cases restricted to the given columns.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            targets: self.targets.clone(),
        }
    }

    /// Rows picked by index, repeats allowed.
    pub(crate) fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// Feature-based regression methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Bagging,
    Gpr,
    RandomForest,
    GradientBoosting,
    ShapeOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ols,
        Method::Bagging,
        Method::Gpr,
        Method::RandomForest,
        Method::GradientBoosting,
        Method::ShapeOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Bagging => "bagging",
            Method::Gpr => "gpr",
            Method::RandomForest => "random_forest",
            Method::GradientBoosting => "gradient_boosting",
            Method::ShapeOnly => "shape_only",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = RegressError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| RegressError::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressConfig {
    /// Linear fits add this to the diagonal of the standardized normal equations.
    pub ridge: f64,
    pub bagging_estimators: usize,
    /// Bootstrap resample size as a fraction of the rows.
    pub subsample: f64,
    pub forest_trees: usize,
    pub boosting_estimators: usize,
    pub boosting_depth: usize,
    pub boosting_learning_rate: f64,
    pub gpr_restarts: usize,
    pub seed: u64,
}

impl Default for RegressConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-8,
            bagging_estimators: 100,
            subsample: 0.9,
            forest_trees: 100,
            boosting_estimators: 100,
            boosting_depth: 3,
            boosting_learning_rate: 0.1,
            gpr_restarts: 5,
            seed: 0,
        }
    }
}

impl RegressConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ridge >= 0.0
            && self.bagging_estimators > 0
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.forest_trees > 0
            && self.boosting_estimators > 0
            && self.boosting_depth > 0
            && self.boosting_learning_rate > 0.0
            && self.boosting_learning_rate <= 1.0
            && self.gpr_restarts > 0;
        if ok {
            Ok(())
        } else {
            Err(RegressError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// A fitted feature-based regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FittedRegressor {
    Ols(LinearModel),
    Bagging(BaggedLinear),
    Gpr(GprModel),
    RandomForest(Forest),
    GradientBoosting(Boosted),
    ShapeOnly(BaggedLinear),
}

pub fn fit(method: Method, data: &DesignMatrix, config: &RegressConfig) -> Result<FittedRegressor> {
    config.validate()?;
    Ok(match method {
        Method::Ols => FittedRegressor::Ols(fit_ols(data, config.ridge)?),
        Method::Bagging => FittedRegressor::Bagging(fit_bagging(data, config)?),
        Method::Gpr => FittedRegressor::Gpr(fit_gpr(data, config.gpr_restarts)?),
        Method::RandomForest => FittedRegressor::RandomForest(fit_rf(data, config.forest_trees, config.seed)?),
        Method::GradientBoosting => FittedRegressor::GradientBoosting(fit_gbt(
            data,
            config.boosting_estimators,
            config.boosting_depth,
            config.boosting_learning_rate,
        )?),
        Method::ShapeOnly => FittedRegressor::ShapeOnly(fit_shape_only(data, config)?),
    })
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(RegressError::FeatureDim {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

const MODEL_MAGIC: [u8; 4] = *b"SQRG";
const MODEL_VERSION: u32 = 1;

impl FittedRegressor {
    pub fn method(&self) -> Method {
        match self {
            FittedRegressor::Ols(_) => Method::Ols,
            FittedRegressor::Bagging(_) => Method::Bagging,
            FittedRegressor::Gpr(_) => Method::Gpr,
            FittedRegressor::RandomForest(_) => Method::RandomForest,
            FittedRegressor::GradientBoosting(_) => Method::GradientBoosting,
            FittedRegressor::ShapeOnly(_) => Method::ShapeOnly,
        }
    }

    /// Number of features `predict` expects.
    pub fn input_dim(&self) -> usize {
        match self {
            FittedRegressor::Ols(m) => m.input_dim(),
            FittedRegressor::Bagging(m) | FittedRegressor::ShapeOnly(m) => m.input_dim(),
            FittedRegressor::Gpr(m) => m.input_dim(),
            FittedRegressor::RandomForest(m) => m.input_dim(),
            FittedRegressor::GradientBoosting(m) => m.input_dim(),
        }
    }

    /// Unclamped model output.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x)?;
        Ok(match self {
            FittedRegressor::Ols(m) => m.predict(x),
            FittedRegressor::Bagging(m) | FittedRegressor::ShapeOnly(m) => m.predict(x),
            FittedRegressor::Gpr(m) => m.predict(x).0,
            FittedRegressor::RandomForest(m) => m.predict(x),
            FittedRegressor::GradientBoosting(m) => m.predict(x),
        })
    }

    /// Predicted Dice, clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_raw(x)?.clamp(0.0, 1.0))
    }

    /// Predictive standard deviation, for methods that provide one.
    pub fn predict_std(&self, x: &[f64]) -> Result<Option<f64>> {
        check_dim(self.input_dim(), x)?;
        Ok(match self {
            FittedRegressor::Gpr(m) => Some(m.predict(x).1),
            _ => None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut c = Container::new();
        c.push("method", self.method().name().as_bytes().to_vec())
            .push_json("model", self);
        c.encode(MODEL_MAGIC, MODEL_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, MODEL_MAGIC, MODEL_VERSION)?;
        let tag = std::str::from_utf8(c.get("method")?).map_err(|e| RegressError::Format(e.to_string()))?;
        let method: Method = tag.parse()?;
        let model: FittedRegressor = c.get_json("model")?;
        if model.method() != method {
            return Err(RegressError::Format(format!("header says {tag}, payload is {}", model.method().name())));
        }
        Ok(model)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
