use super::{hex_digest, CasePrediction, Detectors, Flag, QaConfig, QaError, Result};
use crate::container::{bytes_to_f64s, f64s_to_bytes, Container};
use crate::encoders::{TrainedDae, TrainedVae};
use crate::features::{FeatureRow, FeatureVector};
use crate::phantom::SegmenterProfile;
use crate::regress::{FittedRegressor, Method, RegressError};
use crate::stats::{mae, mean, pearson, spearman, std_dev};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const BUNDLE_MAGIC: [u8; 4] = *b"SQAB";
const BUNDLE_VERSION: u32 = 1;

/// Summary written at commissioning time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommissionReport {
    pub profile_id: String,
    pub method: Method,
    pub threshold: f64,
    pub train_cases: usize,
    pub test_cases: usize,
    /// Pearson correlation of each feature with the true Dice on QA_TRAIN;
    /// `None` where a feature is constant.
    pub train_pearson: BTreeMap<String, Option<f64>>,
    pub train_mae: f64,
    pub test_mae: f64,
    pub test_spearman: Option<f64>,
    pub test_accuracy: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

impl CommissionReport {
    pub(crate) fn new(
        profile: &SegmenterProfile,
        config: &QaConfig,
        train: &[FeatureRow],
        train_pred: &[f64],
        test: &[FeatureRow],
        test_pred: &[f64],
        baseline: &[f64],
    ) -> Result<Self> {
        let truth = |rows: &[FeatureRow]| -> Vec<f64> { rows.iter().map(|r| r.dsc_true.unwrap_or(f64::NAN)).collect() };
        let (y_train, y_test) = (truth(train), truth(test));
        let mut train_pearson = BTreeMap::new();
        for (k, name) in FeatureVector::NAMES.iter().enumerate() {
            let x: Vec<f64> = train.iter().map(|r| r.features().to_array()[k]).collect();
            train_pearson.insert(name.to_string(), pearson(&x, &y_train).ok());
        }
        let agree = y_test
            .iter()
            .zip(test_pred)
            .filter(|(t, p)| Flag::classify(**t, config.threshold) == Flag::classify(**p, config.threshold))
            .count();
        Ok(Self {
            profile_id: profile.id.clone(),
            method: config.method,
            threshold: config.threshold,
            train_cases: train.len(),
            test_cases: test.len(),
            train_pearson,
            train_mae: mae(&y_train, train_pred)?,
            test_mae: mae(&y_test, test_pred)?,
            test_spearman: spearman(test_pred, &y_test).ok(),
            test_accuracy: agree as f64 / test.len() as f64,
            baseline_mean: mean(baseline),
            baseline_std: std_dev(baseline),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    threshold: f64,
    profile: SegmenterProfile,
    report_digest: String,
}

/// Everything needed to score new cases for one segmenter.
#[derive(Clone, Debug)]
pub struct QaBundle {
    pub detectors: Detectors,
    pub regressor: FittedRegressor,
    pub threshold: f64,
    pub profile: SegmenterProfile,
    pub report: CommissionReport,
    /// SHA-256 of the report JSON.
    pub report_digest: String,
    /// Predicted Dice of the QA_TEST COMMON cases; the monitor's reference sample.
    pub baseline: Vec<f64>,
}

impl QaBundle {
    pub(crate) fn new(
        detectors: Detectors,
        regressor: FittedRegressor,
        threshold: f64,
        profile: SegmenterProfile,
        report: CommissionReport,
        baseline: Vec<f64>,
    ) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(QaError::InvalidThreshold(threshold));
        }
        let report_digest = hex_digest(report.to_json().as_bytes());
        Ok(Self {
            detectors,
            regressor,
            threshold,
            profile,
            report,
            report_digest,
            baseline,
        })
    }

    /// Regresses and thresholds a feature vector.
    pub fn prediction(
        &self,
        case_id: &str,
        index: usize,
        features: FeatureVector,
    ) -> std::result::Result<CasePrediction, RegressError> {
        let y_pred = self.regressor.predict(&features.to_array())?;
        Ok(CasePrediction {
            case_id: case_id.to_string(),
            index,
            features,
            y_pred,
            flag: Flag::classify(y_pred, self.threshold),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = BundleMeta {
            threshold: self.threshold,
            profile: self.profile.clone(),
            report_digest: self.report_digest.clone(),
        };
        let mut c = Container::new();
        c.push_json("meta", &meta)
            .push("report", self.report.to_json().into_bytes())
            .push("dae", self.detectors.dae.to_bytes())
            .push("vae", self.detectors.vae.to_bytes())
            .push_json("reference", &self.detectors.reference)
            .push("regressor", self.regressor.to_bytes())
            .push("baseline", f64s_to_bytes(&self.baseline));
        c.encode(BUNDLE_MAGIC, BUNDLE_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, BUNDLE_MAGIC, BUNDLE_VERSION)?;
        let meta: BundleMeta = c.get_json("meta")?;
        let computed = hex_digest(c.get("report")?);
        if computed != meta.report_digest {
            return Err(QaError::DigestMismatch {
                stored: meta.report_digest,
                computed,
            });
        }
        if !(meta.threshold > 0.0 && meta.threshold < 1.0) {
            return Err(QaError::InvalidThreshold(meta.threshold));
        }
        Ok(Self {
            detectors: Detectors {
                dae: TrainedDae::from_bytes(c.get("dae")?)?,
                vae: TrainedVae::from_bytes(c.get("vae")?)?,
                reference: c.get_json("reference")?,
            },
            regressor: FittedRegressor::from_bytes(c.get("regressor")?)?,
            threshold: meta.threshold,
            profile: meta.profile,
            report: c.get_json("report")?,
            report_digest: meta.report_digest,
            baseline: bytes_to_f64s("baseline", c.get("baseline")?)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
