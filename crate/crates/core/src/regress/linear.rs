use super::{check_dim, DesignMatrix, RegressConfig, RegressError, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Column of `x_shape` in a full feature row.
pub const SHAPE_COLUMN: usize = 3;

/// Least-squares fit on standardized columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    center: Vec<f64>,
    scale: Vec<f64>,
    /// Coefficients on the standardized columns.
    weights: Vec<f64>,
    intercept: f64,
}

impl LinearModel {
    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .zip(&self.center)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, c), s), w)| w * (v - c) / s)
                .sum::<f64>()
    }

    /// Coefficients in the original feature units.
    pub fn coefficients(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.scale).map(|(w, s)| w / s).collect()
    }

    /// Intercept in the original feature units.
    pub fn intercept(&self) -> f64 {
        self.intercept
            - self
                .coefficients()
                .iter()
                .zip(&self.center)
                .map(|(b, c)| b * c)
                .sum::<f64>()
    }
}

/// Ordinary least squares with an intercept. Columns are centred and scaled
/// to unit variance, `ridge` is added to the diagonal of the normal
/// equations, and the system is solved by Cholesky factorization.
pub fn fit_ols(data: &DesignMatrix, ridge: f64) -> Result<LinearModel> {
    let (n, p) = (data.len(), data.columns());
    if n < p + 2 {
        return Err(RegressError::TooFewRows {
            method: "ols",
            needed: p + 2,
            got: n,
        });
    }
    let rows = data.rows();
    let y = data.targets();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut center = vec![0.0; p];
    let mut scale = vec![0.0; p];
    for j in 0..p {
        center[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - center[j]).powi(2)).sum::<f64>() / n as f64;
        scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let z = DMatrix::from_fn(n, p, |i, j| (rows[i][j] - center[j]) / scale[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.transpose() * &z;
    for j in 0..p {
        gram[(j, j)] += ridge;
    }
    let rhs = z.transpose() * yc;
    let diag: Vec<f64> = (0..p).map(|j| gram[(j, j)]).collect();
    let chol = gram.cholesky().ok_or(RegressError::Singular)?;
    // A pivot lost to cancellation means a column is a combination of the others.
    let l = chol.l_dirty();
    if (0..p).any(|j| l[(j, j)].powi(2) <= 1e-12 * diag[j]) {
        return Err(RegressError::Singular);
    }
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(RegressError::Singular);
    }
    Ok(LinearModel {
        center,
        scale,
        weights: w.iter().copied().collect(),
        intercept: y_mean,
    })
}

/// Mean of linear fits on bootstrap resamples, optionally restricted to a
/// subset of the feature columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaggedLinear {
    input_dim: usize,
    columns: Vec<usize>,
    members: Vec<LinearModel>,
}

impl BaggedLinear {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn members(&self) -> &[LinearModel] {
        &self.members
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let sub: Vec<f64> = self.columns.iter().map(|&c| x[c]).collect();
        self.members.iter().map(|m| m.predict(&sub)).sum::<f64>() / self.members.len() as f64
    }
}

fn bag(data: &DesignMatrix, columns: Vec<usize>, config: &RegressConfig) -> Result<BaggedLinear> {
    config.validate()?;
    let n = data.len();
    let take = (config.subsample * n as f64).ceil() as usize;
    let restricted = data.select_columns(&columns);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let members = (0..config.bagging_estimators)
        .map(|_| {
            let idx: Vec<usize> = (0..take).map(|_| rng.random_range(0..n)).collect();
            fit_ols(&restricted.subset(&idx), config.ridge)
        })
        .collect::<Result<_>>()?;
    Ok(BaggedLinear {
        input_dim: data.columns(),
        columns,
        members,
    })
}

/// Bootstrap aggregation of OLS fits; each member sees `ceil(subsample * n)`
/// rows drawn with replacement.
pub fn fit_bagging(data: &DesignMatrix, config: &RegressConfig) -> Result<BaggedLinear> {
    bag(data, (0..data.columns()).collect(), config)
}

/// [`fit_bagging`] using the shape feature alone.
pub fn fit_shape_only(data: &DesignMatrix, config: &RegressConfig) -> Result<BaggedLinear> {
    check_dim(4, &data.rows()[0])?;
    bag(data, vec![SHAPE_COLUMN], config)
}
