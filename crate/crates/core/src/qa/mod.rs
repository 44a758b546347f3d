//! Commissioning, per-case inference, drift monitoring and evaluation.
//!
//! One detector pair (image DAE, shape VAE) plus the common-domain reference
//! serves every segmenter; each segmenter gets its own regressor, packaged
//! with a copy of the detectors as a [`QaBundle`].

mod benchmark;
mod bundle;
mod evaluate;
mod monitor;

pub use benchmark::{run_benchmark, BenchmarkReport, CaseScore, DomainComparison, DomainSummary, NoiseGroup};
pub use bundle::{CommissionReport, QaBundle};
pub use evaluate::{evaluate_framework, FeatureCorrelations, FrameworkSummary, ProfileEvaluation, DIRECT_NET};
pub use monitor::{monitor, DriftReport, Monitor, MonitorConfig};

use crate::container::ContainerError;
use crate::encoders::{train_dae, train_vae, DaeConfig, EncoderError, TrainedDae, TrainedVae, VaeConfig};
use crate::features::{CommonReference, FeatureError, FeatureExtractor, FeatureRow, FeatureVector, ImageFeatures};
use crate::grid::{LabelMap, Volume};
use crate::phantom::{BenchmarkDataset, CaseRecord, DomainKind, PhantomError, Segmenter, SegmenterProfile, Split};
use crate::regress::{self, DesignMatrix, DirectNetConfig, Method, RegressConfig, RegressError};
use crate::stats::{self, StatsError};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("benchmark has no {0:?} cases")]
    MissingDomain(DomainKind),
    #[error("benchmark has no {0:?} cases")]
    MissingSplit(Split),
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("invalid monitor config: {0}")]
    InvalidMonitor(String),
    #[error("no bundles to evaluate")]
    NoBundles,
    #[error("bundle digest mismatch: stored {stored}, computed {computed}")]
    DigestMismatch { stored: String, computed: String },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QaError {
    /// Failures of the numerics (non-finite losses, singular systems,
    /// degenerate statistics) as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            QaError::Encoder(EncoderError::Diverged { .. }) => true,
            QaError::Regress(RegressError::Singular | RegressError::NotPositiveDefinite) => true,
            QaError::Feature(FeatureError::DegenerateLatent) => true,
            QaError::Stats(StatsError::ZeroVariance | StatsError::NonFinite) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, QaError>;

pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Settings for every trained component. [`QaConfig::seeded`] derives all
/// component seeds from one root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    pub seed: u64,
    pub threshold: f64,
    pub method: Method,
    pub dae: DaeConfig,
    pub vae: VaeConfig,
    pub regress: RegressConfig,
    pub direct: DirectNetConfig,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self::seeded(0)
    }
}

impl QaConfig {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            threshold: DEFAULT_THRESHOLD,
            method: Method::Bagging,
            dae: DaeConfig {
                seed: derive_seed(seed, 1),
                ..DaeConfig::default()
            },
            vae: VaeConfig {
                seed: derive_seed(seed, 2),
                ..VaeConfig::default()
            },
            regress: RegressConfig {
                seed: derive_seed(seed, 3),
                ..RegressConfig::default()
            },
            direct: DirectNetConfig {
                seed: derive_seed(seed, 4),
                ..DirectNetConfig::default()
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(QaError::InvalidThreshold(self.threshold));
        }
        Ok(self.regress.validate()?)
    }
}

/// Independent 64-bit seed for component `salt` of a run seeded with `root`.
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(salt);
    rng.next_u64()
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    Good,
    Poor,
}

impl Flag {
    /// GOOD iff `y_pred >= threshold`.
    pub fn classify(y_pred: f64, threshold: f64) -> Self {
        if y_pred >= threshold {
            Flag::Good
        } else {
            Flag::Poor
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_id: String,
    pub index: usize,
    pub features: FeatureVector,
    pub y_pred: f64,
    pub flag: Flag,
}

/// The segmenter-independent half of a bundle.
#[derive(Clone, Debug)]
pub struct Detectors {
    pub dae: TrainedDae,
    pub vae: TrainedVae,
    pub reference: CommonReference,
}

impl Detectors {
    pub fn extractor(&self) -> FeatureExtractor<'_> {
        FeatureExtractor {
            dae: &self.dae,
            vae: &self.vae,
            reference: &self.reference,
        }
    }

    /// Content hash over the serialized models and reference.
    pub fn digest(&self) -> String {
        let mut bytes = self.dae.to_bytes();
        bytes.extend(self.vae.to_bytes());
        bytes.extend(serde_json::to_vec(&self.reference).expect("reference serialises"));
        hex_digest(&bytes)
    }
}

fn split_cases(dataset: &BenchmarkDataset, split: Split) -> Result<Vec<&CaseRecord>> {
    let cases: Vec<_> = dataset.iter_split(split).collect();
    if cases.is_empty() {
        return Err(QaError::MissingSplit(split));
    }
    Ok(cases)
}

/// Trains the DAE on QA_TRAIN volumes and the VAE on QA_TRAIN ground truths,
/// and encodes the QA_TRAIN COMMON cases as the appearance reference.
pub fn train_detectors(dataset: &BenchmarkDataset, config: &QaConfig) -> Result<Detectors> {
    let train = split_cases(dataset, Split::QaTrain)?;
    let volumes: Vec<&Volume> = train.iter().map(|c| &c.volume).collect();
    let truths: Vec<&LabelMap> = train.iter().map(|c| &c.truth).collect();
    log::info!("training DAE on {} volumes", volumes.len());
    let dae = train_dae(&volumes, &config.dae)?;
    log::info!("training VAE on {} label maps", truths.len());
    let vae = train_vae(&truths, &config.vae)?;
    let common: Vec<_> = train.iter().filter(|c| c.domain.kind == DomainKind::Common).collect();
    if common.is_empty() {
        return Err(QaError::MissingDomain(DomainKind::Common));
    }
    let reference = CommonReference::build(&dae, common.iter().map(|c| (&c.volume, &c.truth)))?;
    Ok(Detectors { dae, vae, reference })
}

/// Segmenter calibrated on the dataset's SEG_TRAIN cases.
pub fn fit_segmenter(profile: &SegmenterProfile, dataset: &BenchmarkDataset) -> Result<Segmenter> {
    let seg_train = split_cases(dataset, Split::SegTrain)?;
    Ok(Segmenter::fit(profile, seg_train, &dataset.config.grid)?)
}

/// Image features per case id, shared across segmenters.
pub(crate) type ImageCache = HashMap<String, ImageFeatures>;

/// Segments and featurizes `cases`, recording the true Dice of each.
pub(crate) fn feature_rows(
    extractor: &FeatureExtractor,
    segmenter: &Segmenter,
    cases: &[&CaseRecord],
    cache: &mut ImageCache,
) -> Result<Vec<FeatureRow>> {
    Ok(segment_and_featurize(extractor, segmenter, cases, cache)?.0)
}

/// As [`feature_rows`], also returning the segmentations.
pub(crate) fn segment_and_featurize(
    extractor: &FeatureExtractor,
    segmenter: &Segmenter,
    cases: &[&CaseRecord],
    cache: &mut ImageCache,
) -> Result<(Vec<FeatureRow>, Vec<LabelMap>)> {
    let mut rows = Vec::with_capacity(cases.len());
    let mut preds = Vec::with_capacity(cases.len());
    for case in cases {
        let s_pred = segmenter.segment(&case.volume, &case.truth)?;
        let image = match cache.get(&case.id) {
            Some(f) => *f,
            None => {
                let f = extractor.image_features(&case.volume)?;
                cache.insert(case.id.clone(), f);
                f
            }
        };
        let features = extractor.complete(image, &case.volume, &s_pred)?;
        let dsc_true = stats::dsc(&s_pred, &case.truth)?.mean;
        rows.push(FeatureRow::new(&case.id, case.domain.kind, features, Some(dsc_true)));
        preds.push(s_pred);
    }
    Ok((rows, preds))
}

/// Features and true Dice of one split, segmented with the bundle's profile.
pub fn feature_table(bundle: &QaBundle, dataset: &BenchmarkDataset, split: Split) -> Result<Vec<FeatureRow>> {
    let segmenter = fit_segmenter(&bundle.profile, dataset)?;
    let cases = split_cases(dataset, split)?;
    feature_rows(&bundle.detectors.extractor(), &segmenter, &cases, &mut ImageCache::new())
}

pub(crate) fn design(rows: &[FeatureRow]) -> Result<DesignMatrix> {
    let x = rows.iter().map(|r| r.features().to_array().to_vec()).collect();
    let y = rows.iter().map(|r| r.dsc_true.unwrap_or(f64::NAN)).collect();
    Ok(DesignMatrix::new(x, y)?)
}

/// Full commissioning: trains detectors, then fits the regressor.
pub fn commission(profile: &SegmenterProfile, dataset: &BenchmarkDataset, config: &QaConfig) -> Result<QaBundle> {
    let detectors = train_detectors(dataset, config)?;
    commission_with(&detectors, profile, dataset, config, &mut ImageCache::new())
}

/// Commissioning with an already trained detector pair. `cache` holds image
/// features computed by the same detectors and may be shared across calls.
pub(crate) fn commission_with(
    detectors: &Detectors,
    profile: &SegmenterProfile,
    dataset: &BenchmarkDataset,
    config: &QaConfig,
    cache: &mut ImageCache,
) -> Result<QaBundle> {
    config.validate()?;
    let segmenter = fit_segmenter(profile, dataset)?;
    let extractor = detectors.extractor();
    let train = feature_rows(&extractor, &segmenter, &split_cases(dataset, Split::QaTrain)?, cache)?;
    let test = feature_rows(&extractor, &segmenter, &split_cases(dataset, Split::QaTest)?, cache)?;
    let regressor = regress::fit(config.method, &design(&train)?, &config.regress)?;

    let predict = |rows: &[FeatureRow]| -> Result<Vec<f64>> {
        rows.iter().map(|r| Ok(regressor.predict(&r.features().to_array())?)).collect()
    };
    let train_pred = predict(&train)?;
    let test_pred = predict(&test)?;
    let baseline: Vec<f64> = test
        .iter()
        .zip(&test_pred)
        .filter(|(r, _)| r.domain == DomainKind::Common)
        .map(|(_, &y)| y)
        .collect();
    if baseline.is_empty() {
        return Err(QaError::MissingDomain(DomainKind::Common));
    }
    let report = CommissionReport::new(profile, config, &train, &train_pred, &test, &test_pred, &baseline)?;
    QaBundle::new(detectors.clone(), regressor, config.threshold, profile.clone(), report, baseline)
}

/// Commissions every profile in `bank` against one shared detector pair.
pub fn commission_bank(
    bank: &[SegmenterProfile],
    dataset: &BenchmarkDataset,
    config: &QaConfig,
) -> Result<(Detectors, Vec<QaBundle>)> {
    let detectors = train_detectors(dataset, config)?;
    let mut cache = ImageCache::new();
    let bundles = bank
        .iter()
        .map(|p| {
            log::info!("commissioning {}", p.id);
            commission_with(&detectors, p, dataset, config, &mut cache)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((detectors, bundles))
}

/// Predicts the Dice of one segmentation without ground truth.
///
/// An all-background segmentation scores 0 against every structure the
/// anatomy contains, so it gets `y_pred = 0` instead of a regression that
/// would extrapolate far outside the commissioning range of `x_shape`.
pub fn predict_case(
    bundle: &QaBundle,
    case_id: &str,
    index: usize,
    volume: &Volume,
    s_pred: &LabelMap,
) -> Result<CasePrediction> {
    let features = bundle.detectors.extractor().extract(volume, s_pred)?;
    let mut prediction = bundle.prediction(case_id, index, features)?;
    if s_pred.labels().iter().all(|&l| l == 0) {
        prediction.y_pred = 0.0;
        prediction.flag = Flag::classify(0.0, bundle.threshold);
    }
    Ok(prediction)
}
