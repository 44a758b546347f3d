//! Overlap metrics, error metrics, correlations and the nonparametric and
//! variance tests used by benchmarking and monitoring.

mod special;

pub use special::{beta_inc, erfc, f_cdf, f_sf, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_sf};

use crate::grid::{LabelMap, NUM_STRUCTURES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("all pairs tied; no informative differences")]
    AllTied,
    #[error("label map dims differ: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),
    #[error("non-finite input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Per-structure Dice scores for labels `1..=9` and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DscReport {
    pub per_structure: [f64; NUM_STRUCTURES],
    pub mean: f64,
}

/// Dice overlap per structure. Empty in both maps scores 1, empty in one scores 0.
pub fn dsc(a: &LabelMap, b: &LabelMap) -> Result<DscReport> {
    if a.dims() != b.dims() {
        return Err(StatsError::DimsMismatch(a.dims(), b.dims()));
    }
    let mut size_a = [0usize; NUM_STRUCTURES + 1];
    let mut size_b = [0usize; NUM_STRUCTURES + 1];
    let mut inter = [0usize; NUM_STRUCTURES + 1];
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        size_a[la as usize] += 1;
        size_b[lb as usize] += 1;
        if la == lb {
            inter[la as usize] += 1;
        }
    }
    let per_structure: [f64; NUM_STRUCTURES] = std::array::from_fn(|i| {
        let l = i + 1;
        match (size_a[l], size_b[l]) {
            (0, 0) => 1.0,
            (sa, sb) => 2.0 * inter[l] as f64 / (sa + sb) as f64,
        }
    });
    let mean = per_structure.iter().sum::<f64>() / NUM_STRUCTURES as f64;
    Ok(DscReport { per_structure, mean })
}

/// Mean absolute error.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(StatsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y_true.len() as f64)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Sizes of each group of tied values.
fn tie_sizes(x: &[f64]) -> Vec<usize> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i + 1;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push(j - i);
        }
        i = j;
    }
    out
}

/// Direction of the alternative hypothesis, stated for the first sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// First sample tends to be larger.
    Greater,
    /// First sample tends to be smaller.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    SignedRankExact,
    SignedRankNormal,
    RankSumExact,
    RankSumNormal,
    AnovaOneway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub alternative: Alternative,
}

/// Combines upper and lower tail probabilities under `alt`.
fn tail_p(upper: f64, lower: f64, alt: Alternative) -> f64 {
    let p = match alt {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => 2.0 * upper.min(lower),
    };
    p.clamp(0.0, 1.0)
}

/// Largest number of nonzero differences handled by exact enumeration.
pub const SIGNED_RANK_EXACT_MAX: usize = 12;

/// Wilcoxon signed-rank test on `a - b`, zero differences dropped.
///
/// Exact for up to [`SIGNED_RANK_EXACT_MAX`] pairs, otherwise a normal
/// approximation with tie and continuity corrections. The statistic is the
/// positive-rank sum.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if d.is_empty() {
        return Err(StatsError::AllTied);
    }
    if d.len() < 5 {
        return Err(StatsError::TooFew { needed: 5, got: d.len() });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    if d.len() <= SIGNED_RANK_EXACT_MAX {
        signed_rank_exact(&ranks, w_plus, alt)
    } else {
        Ok(signed_rank_normal(&abs, w_plus, alt))
    }
}

/// Exact null distribution of the positive-rank sum over all sign patterns.
/// Ranks are doubled so average ranks stay integral.
fn signed_rank_exact(ranks: &[f64], w_plus: f64, alt: Alternative) -> Result<TestResult> {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all = (1u64 << ranks.len()) as f64;
    let w = (2.0 * w_plus).round() as usize;
    let upper = counts[w..].iter().sum::<u64>() as f64 / all;
    let lower = counts[..=w].iter().sum::<u64>() as f64 / all;
    Ok(TestResult {
        statistic: w_plus,
        p_value: tail_p(upper, lower, alt),
        method: TestMethod::SignedRankExact,
        alternative: alt,
    })
}

fn signed_rank_normal(abs: &[f64], w_plus: f64, alt: Alternative) -> TestResult {
    let n = abs.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let ties: f64 = tie_sizes(abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    let sd = var.sqrt();
    let upper = normal_sf((w_plus - mu - 0.5) / sd);
    let lower = normal_cdf((w_plus - mu + 0.5) / sd);
    TestResult {
        statistic: w_plus,
        p_value: tail_p(upper, lower, alt),
        method: TestMethod::SignedRankNormal,
        alternative: alt,
    }
}

/// Largest combined sample size handled exactly by [`rank_sum`] (tie-free data only).
pub const RANK_SUM_EXACT_MAX: usize = 20;

/// Wilcoxon rank-sum (Mann-Whitney) test. The statistic is `U` of the first sample.
///
/// Exact when there are no ties and the samples are small, otherwise a normal
/// approximation with tie and continuity corrections.
pub fn rank_sum(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    for (s, n) in [(a, a.len()), (b, b.len())] {
        if n == 0 {
            return Err(StatsError::TooFew { needed: 1, got: 0 });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let ties = tie_sizes(&pooled);
    if ties.is_empty() && n1 + n2 <= RANK_SUM_EXACT_MAX {
        return Ok(rank_sum_exact(n1, n2, u, alt));
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let mu = f1 * f2 / 2.0;
    let t: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = f1 * f2 / 12.0 * ((n + 1.0) - t / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(TestResult {
            statistic: u,
            p_value: 1.0,
            method: TestMethod::RankSumNormal,
            alternative: alt,
        });
    }
    let sd = var.sqrt();
    let upper = normal_sf((u - mu - 0.5) / sd);
    let lower = normal_cdf((u - mu + 0.5) / sd);
    Ok(TestResult {
        statistic: u,
        p_value: tail_p(upper, lower, alt),
        method: TestMethod::RankSumNormal,
        alternative: alt,
    })
}

/// Exact null distribution of `U` by the standard recurrence on sample sizes.
fn rank_sum_exact(n1: usize, n2: usize, u: f64, alt: Alternative) -> TestResult {
    let max_u = n1 * n2;
    // table[i][j][k]: arrangements of i and j items with U = k.
    let mut prev: Vec<Vec<u64>> = vec![vec![0; max_u + 1]; n2 + 1];
    for row in prev.iter_mut() {
        row[0] = 1;
    }
    for _ in 1..=n1 {
        let mut cur: Vec<Vec<u64>> = vec![vec![0; max_u + 1]; n2 + 1];
        cur[0][0] = 1;
        for j in 1..=n2 {
            for k in 0..=max_u {
                // Largest item from the first sample beats all j of the second.
                let from_first = if k >= j { prev[j][k - j] } else { 0 };
                cur[j][k] = from_first + cur[j - 1][k];
            }
        }
        prev = cur;
    }
    let dist = &prev[n2];
    let all: u64 = dist.iter().sum();
    let k = u.round() as usize;
    let upper = dist[k..].iter().sum::<u64>() as f64 / all as f64;
    let lower = dist[..=k].iter().sum::<u64>() as f64 / all as f64;
    TestResult {
        statistic: u,
        p_value: tail_p(upper, lower, alt),
        method: TestMethod::RankSumExact,
        alternative: alt,
    }
}

/// One-way ANOVA F test.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: groups.len() });
    }
    for g in groups {
        if g.len() < 2 {
            return Err(StatsError::TooFew { needed: 2, got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    if ss_within == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let df1 = k - 1.0;
    let df2 = n as f64 - k;
    let f = (ss_between / df1) / (ss_within / df2);
    Ok(TestResult {
        statistic: f,
        p_value: f_sf(f, df1, df2).clamp(0.0, 1.0),
        method: TestMethod::AnovaOneway,
        alternative: Alternative::Greater,
    })
}
