use super::{design, fit_segmenter, segment_and_featurize, split_cases, Flag, ImageCache, QaBundle, QaConfig, QaError, Result};
use crate::features::FeatureRow;
use crate::grid::{LabelMap, Volume};
use crate::phantom::{BenchmarkDataset, CaseRecord, DomainKind, Split};
use crate::regress::{self, fit_direct_net, Method};
use crate::stats::{mae, mean, pearson, spearman, std_dev};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Name of the direct image+segmentation network in method tables.
pub const DIRECT_NET: &str = "direct_net";

/// Feature-to-true-Dice correlations on QA_TEST. `None` where undefined
/// (too few cases or a constant input).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelations {
    /// `x_intensity` over COMMON and CE cases.
    pub intensity_common_ce: Option<f64>,
    /// `x_noise` over COMMON and RPV_NOISY cases.
    pub noise_common_rpv: Option<f64>,
    /// `x_shape` over all cases.
    pub shape_all: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEvaluation {
    pub profile_id: String,
    pub method: Method,
    pub test_cases: usize,
    pub mae: f64,
    pub spearman: Option<f64>,
    /// Share of QA_TEST cases whose GOOD/POOR flag matches the true Dice's.
    pub accuracy: f64,
    pub correlations: FeatureCorrelations,
    /// QA_TEST MAE of every method refit on the same QA_TRAIN features.
    pub method_mae: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameworkSummary {
    pub profiles: Vec<ProfileEvaluation>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub accuracy_mean: f64,
    pub method_mean_mae: BTreeMap<String, f64>,
    /// Pearson of `x_shape` with true Dice over QA_TEST cases of all profiles.
    pub shape_pooled: Option<f64>,
}

impl FrameworkSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }
}

fn subset_pearson(rows: &[FeatureRow], keep: impl Fn(&FeatureRow) -> bool, feature: impl Fn(&FeatureRow) -> f64) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| keep(r))
        .map(|r| (feature(r), r.dsc_true.unwrap_or(f64::NAN)))
        .unzip();
    pearson(&x, &y).ok()
}

fn pairs<'a>(cases: &[&'a CaseRecord], seg: &'a [LabelMap]) -> Vec<(&'a Volume, &'a LabelMap)> {
    cases.iter().zip(seg).map(|(c, s)| (&c.volume, s)).collect()
}

fn truths(rows: &[FeatureRow]) -> Vec<f64> {
    rows.iter().map(|r| r.dsc_true.unwrap_or(f64::NAN)).collect()
}

/// Scores every bundle on QA_TEST and refits each regression method, plus
/// the direct network, on the bundle's QA_TRAIN cases for comparison.
pub fn evaluate_framework(bundles: &[QaBundle], dataset: &BenchmarkDataset, config: &QaConfig) -> Result<FrameworkSummary> {
    if bundles.is_empty() {
        return Err(QaError::NoBundles);
    }
    let train_cases = split_cases(dataset, Split::QaTrain)?;
    let test_cases = split_cases(dataset, Split::QaTest)?;
    let mut caches: HashMap<String, ImageCache> = HashMap::new();
    let mut profiles = Vec::with_capacity(bundles.len());
    let mut pooled_shape = (Vec::new(), Vec::new());

    for bundle in bundles {
        log::info!("evaluating {}", bundle.profile.id);
        let cache = caches.entry(bundle.detectors.digest()).or_default();
        let extractor = bundle.detectors.extractor();
        let segmenter = fit_segmenter(&bundle.profile, dataset)?;
        let (train, train_seg) = segment_and_featurize(&extractor, &segmenter, &train_cases, cache)?;
        let (test, test_seg) = segment_and_featurize(&extractor, &segmenter, &test_cases, cache)?;
        let y_test = truths(&test);

        let predictions: Vec<f64> = test
            .iter()
            .map(|r| Ok(bundle.prediction(&r.case_id, 0, r.features())?.y_pred))
            .collect::<Result<_>>()?;
        let agree = y_test
            .iter()
            .zip(&predictions)
            .filter(|(t, p)| Flag::classify(**t, bundle.threshold) == Flag::classify(**p, bundle.threshold))
            .count();

        let mut method_mae = BTreeMap::new();
        let train_design = design(&train)?;
        for method in Method::ALL {
            let score = if method == bundle.regressor.method() {
                mae(&y_test, &predictions)?
            } else {
                let model = regress::fit(method, &train_design, &config.regress)?;
                let p: Vec<f64> = test
                    .iter()
                    .map(|r| model.predict(&r.features().to_array()))
                    .collect::<std::result::Result<_, _>>()?;
                mae(&y_test, &p)?
            };
            method_mae.insert(method.name().to_string(), score);
        }
        let net = fit_direct_net(&pairs(&train_cases, &train_seg), &truths(&train), &config.direct)?;
        let net_pred: Vec<f64> = pairs(&test_cases, &test_seg)
            .into_iter()
            .map(|(v, s)| net.predict(v, s))
            .collect::<std::result::Result<_, _>>()?;
        method_mae.insert(DIRECT_NET.to_string(), mae(&y_test, &net_pred)?);

        let common_or = |k: DomainKind| move |r: &FeatureRow| r.domain == DomainKind::Common || r.domain == k;
        let correlations = FeatureCorrelations {
            intensity_common_ce: subset_pearson(&test, common_or(DomainKind::Ce), |r| r.x_intensity),
            noise_common_rpv: subset_pearson(&test, common_or(DomainKind::RpvNoisy), |r| r.x_noise),
            shape_all: subset_pearson(&test, |_| true, |r| r.x_shape),
        };
        pooled_shape.0.extend(test.iter().map(|r| r.x_shape));
        pooled_shape.1.extend(y_test.iter().copied());

        profiles.push(ProfileEvaluation {
            profile_id: bundle.profile.id.clone(),
            method: bundle.regressor.method(),
            test_cases: test.len(),
            mae: mae(&y_test, &predictions)?,
            spearman: spearman(&predictions, &y_test).ok(),
            accuracy: agree as f64 / test.len() as f64,
            correlations,
            method_mae,
        });
    }

    let maes: Vec<f64> = profiles.iter().map(|p| p.mae).collect();
    let accuracies: Vec<f64> = profiles.iter().map(|p| p.accuracy).collect();
    let mut method_mean_mae = BTreeMap::new();
    for name in profiles[0].method_mae.keys() {
        let v: Vec<f64> = profiles.iter().map(|p| p.method_mae[name]).collect();
        method_mean_mae.insert(name.clone(), mean(&v));
    }
    Ok(FrameworkSummary {
        mae_mean: mean(&maes),
        mae_std: std_dev(&maes),
        accuracy_mean: mean(&accuracies),
        method_mean_mae,
        shape_pooled: pearson(&pooled_shape.0, &pooled_shape.1).ok(),
        profiles,
    })
}
