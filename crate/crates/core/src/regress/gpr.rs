use super::{DesignMatrix, RegressError, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

/// Kernel hyperparameters: `signal * exp(-d^2 / (2 length^2)) + noise * [x == x']`
/// on standardized features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

/// Exact Gaussian-process regression with an RBF plus white-noise kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    center: Vec<f64>,
    scale: Vec<f64>,
    train: Vec<Vec<f64>>,
    y_mean: f64,
    alpha: Vec<f64>,
    /// Row-major lower Cholesky factor of the training covariance.
    chol: Vec<f64>,
    pub hyper: GprHyper,
    pub log_marginal_likelihood: f64,
    /// Log marginal likelihood at each optimizer starting point.
    pub start_likelihoods: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kernel(a: &[f64], b: &[f64], h: &GprHyper) -> f64 {
    h.signal_variance * (-sq_dist(a, b) / (2.0 * h.length_scale * h.length_scale)).exp()
}

fn covariance(x: &[Vec<f64>], h: &GprHyper) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel(&x[i], &x[j], h) + if i == j { h.noise_variance } else { 0.0 }
    })
}

fn factor(x: &[Vec<f64>], h: &GprHyper) -> Option<Cholesky<f64, Dyn>> {
    covariance(x, h).cholesky()
}

fn log_likelihood(x: &[Vec<f64>], y: &DVector<f64>, h: &GprHyper) -> Option<f64> {
    let chol = factor(x, h)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let n = y.len() as f64;
    let v = -0.5 * y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    v.is_finite().then_some(v)
}

/// Search box in log space: length scale, signal and noise variance (the
/// variances relative to the target variance).
const LOG_BOUNDS: [(f64, f64); 3] = [(-4.6, 4.6), (-6.9, 4.6), (-11.5, 0.7)];

fn hyper_from(theta: &[f64; 3], y_var: f64) -> GprHyper {
    let t: Vec<f64> = theta
        .iter()
        .zip(LOG_BOUNDS)
        .map(|(v, (lo, hi))| v.clamp(lo, hi))
        .collect();
    GprHyper {
        length_scale: t[0].exp(),
        signal_variance: t[1].exp() * y_var,
        noise_variance: t[2].exp() * y_var,
    }
}

/// Nelder-Mead minimization of `f` from `start`, confined to [`LOG_BOUNDS`]
/// by clamping each vertex.
fn nelder_mead(f: impl Fn(&[f64; 3]) -> f64, start: [f64; 3], iters: usize) -> ([f64; 3], f64) {
    let clamp = |p: [f64; 3]| -> [f64; 3] {
        let mut q = p;
        for (v, (lo, hi)) in q.iter_mut().zip(LOG_BOUNDS) {
            *v = v.clamp(lo, hi);
        }
        q
    };
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let s0 = clamp(start);
    simplex.push((s0, f(&s0)));
    for k in 0..3 {
        let mut p = s0;
        p[k] += 0.5;
        let p = clamp(p);
        simplex.push((p, f(&p)));
    }
    let combine = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        clamp([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])])
    };
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[3].1 - simplex[0].1).abs() < 1e-10 {
            break;
        }
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += p[k] / 3.0;
            }
        }
        let worst = simplex[3];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let contracted = combine(&centroid, &worst.0, 0.5);
            let fc = f(&contracted);
            if fc < worst.1 {
                simplex[3] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = combine(&best, &v.0, 0.5);
                    *v = (p, f(&p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Fits by maximizing the log marginal likelihood from `restarts`
/// deterministic starting points.
pub fn fit_gpr(data: &DesignMatrix, restarts: usize) -> Result<GprModel> {
    let (n, p) = (data.len(), data.columns());
    if n < 5 {
        return Err(RegressError::TooFewRows {
            method: "gpr",
            needed: 5,
            got: n,
        });
    }
    let rows = data.rows();
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        center[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - center[j]).powi(2)).sum::<f64>() / n as f64;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let train: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&center).zip(&scale).map(|((v, c), s)| (v - c) / s).collect())
        .collect();
    let y_mean = data.targets().iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, data.targets().iter().map(|v| v - y_mean));
    let y_var = (y.norm_squared() / n as f64).max(1e-12);

    let objective = |theta: &[f64; 3]| -> f64 {
        log_likelihood(&train, &y, &hyper_from(theta, y_var)).map_or(f64::INFINITY, |v| -v)
    };
    // Starting length scales spread log-uniformly over [0.3, 3].
    let starts: Vec<[f64; 3]> = (0..restarts)
        .map(|k| {
            let t = if restarts > 1 { k as f64 / (restarts - 1) as f64 } else { 0.5 };
            let ls = (0.3f64).ln() + t * (10.0f64).ln();
            let noise = if k % 2 == 0 { (0.1f64).ln() } else { (0.01f64).ln() };
            [ls, 0.0, noise]
        })
        .collect();
    let mut start_likelihoods = Vec::with_capacity(starts.len());
    let mut best: Option<([f64; 3], f64)> = None;
    for s in &starts {
        start_likelihoods.push(-objective(s));
        let (theta, value) = nelder_mead(&objective, *s, 300);
        let (theta, value) = if value <= objective(s) { (theta, value) } else { (*s, objective(s)) };
        if best.is_none_or(|b| value < b.1) {
            best = Some((theta, value));
        }
    }
    let (theta, value) = best.expect("at least one start");
    let mut hyper = hyper_from(&theta, y_var);
    let mut lml = -value;
    let chol = match factor(&train, &hyper) {
        Some(c) => c,
        None => {
            // Raise the noise floor once before giving up.
            hyper.noise_variance = (hyper.noise_variance * 10.0).max(1e-6 * y_var);
            lml = log_likelihood(&train, &y, &hyper).unwrap_or(f64::NEG_INFINITY);
            factor(&train, &hyper).ok_or(RegressError::NotPositiveDefinite)?
        }
    };
    let alpha = chol.solve(&y);
    let l = chol.l();
    Ok(GprModel {
        center,
        scale,
        train,
        y_mean,
        alpha: alpha.iter().copied().collect(),
        chol: (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect(),
        hyper,
        log_marginal_likelihood: lml,
        start_likelihoods,
    })
}

impl GprModel {
    pub fn input_dim(&self) -> usize {
        self.center.len()
    }

    /// Predictive mean and standard deviation of a noisy observation.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let q: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect();
        let k: Vec<f64> = self.train.iter().map(|t| kernel(t, &q, &self.hyper)).collect();
        let mean = self.y_mean + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        // Forward substitution for v = L^-1 k.
        let n = k.len();
        let mut v = vec![0.0; n];
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let s: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            v[i] = (k[i] - s) / self.chol[i * n + i];
        }
        let prior = self.hyper.signal_variance + self.hyper.noise_variance;
        let var = (prior - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        (mean, var.sqrt())
    }
}
