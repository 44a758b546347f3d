use super::{QaBundle, QaError, Result};
use crate::stats::{mean, rank_sum, std_dev, Alternative, TestResult};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub window: usize,
    pub alpha: f64,
    /// Smallest drop in mean predicted Dice that can raise an alarm.
    pub delta: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 50,
            alpha: 0.05,
            delta: 0.05,
        }
    }
}

/// Minimum window length.
pub const MIN_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Stream position of the newest prediction in the window.
    pub index: usize,
    pub window: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub window_mean: f64,
    /// One-sided rank-sum test that the window sits below the baseline.
    pub test: TestResult,
    pub alarm: bool,
}

/// Sliding-window comparison of incoming predictions with a baseline sample.
#[derive(Clone, Debug)]
pub struct Monitor {
    config: MonitorConfig,
    baseline: Vec<f64>,
    baseline_mean: f64,
    baseline_std: f64,
    window: VecDeque<f64>,
    seen: usize,
}

impl Monitor {
    pub fn new(baseline: Vec<f64>, config: MonitorConfig) -> Result<Self> {
        if config.window < MIN_WINDOW {
            return Err(QaError::InvalidMonitor(format!("window {} < {MIN_WINDOW}", config.window)));
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) || !(config.delta >= 0.0) {
            return Err(QaError::InvalidMonitor(format!("alpha {} delta {}", config.alpha, config.delta)));
        }
        if baseline.is_empty() || baseline.iter().any(|v| !v.is_finite()) {
            return Err(QaError::InvalidMonitor("baseline must be nonempty and finite".into()));
        }
        Ok(Self {
            baseline_mean: mean(&baseline),
            baseline_std: std_dev(&baseline),
            window: VecDeque::with_capacity(config.window),
            config,
            baseline,
            seen: 0,
        })
    }

    /// Adds one prediction; returns a report once the window is full.
    pub fn push(&mut self, y_pred: f64) -> Result<Option<DriftReport>> {
        if self.window.len() == self.config.window {
            self.window.pop_front();
        }
        self.window.push_back(y_pred);
        self.seen += 1;
        if self.window.len() < self.config.window {
            return Ok(None);
        }
        let current: Vec<f64> = self.window.iter().copied().collect();
        let test = rank_sum(&current, &self.baseline, Alternative::Less)?;
        let window_mean = mean(&current);
        let alarm = test.p_value < self.config.alpha && self.baseline_mean - window_mean > self.config.delta;
        Ok(Some(DriftReport {
            index: self.seen - 1,
            window: self.config.window,
            baseline_mean: self.baseline_mean,
            baseline_std: self.baseline_std,
            window_mean,
            test,
            alarm,
        }))
    }
}

/// Runs a monitor seeded with the bundle's baseline over a stream of
/// predicted Dice scores, in order. Streams shorter than the window yield
/// no reports.
pub fn monitor(bundle: &QaBundle, stream: &[f64], config: &MonitorConfig) -> Result<Vec<DriftReport>> {
    let mut m = Monitor::new(bundle.baseline.clone(), config.clone())?;
    let mut out = Vec::new();
    for &y in stream {
        if let Some(r) = m.push(y)? {
            out.push(r);
        }
    }
    Ok(out)
}
