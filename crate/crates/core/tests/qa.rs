use proptest::prelude::*;
use segqa_core::grid::LabelMap;
use segqa_core::phantom::{generate_benchmark, profile_bank, BenchmarkConfig, BenchmarkDataset, DomainKind, Split};
use segqa_core::qa::*;
use segqa_core::regress::Method;
use std::sync::OnceLock;

struct Fixture {
    dataset: BenchmarkDataset,
    config: QaConfig,
    bundles: Vec<QaBundle>,
}

fn small_benchmark() -> BenchmarkDataset {
    generate_benchmark(&BenchmarkConfig {
        scale: 0.3,
        seed: 5,
        ..BenchmarkConfig::default()
    })
    .unwrap()
}

/// Detectors trained with default settings on a small benchmark; ROBUST,
/// the default ATLAS profile and one THRESHOLD profile.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dataset = small_benchmark();
        let config = QaConfig::seeded(21);
        let bank = profile_bank(3);
        let (_, bundles) = commission_bank(&bank, &dataset, &config).unwrap();
        Fixture {
            dataset,
            config,
            bundles,
        }
    })
}

/// Few epochs everywhere, for tests that only exercise plumbing.
fn quick_config(seed: u64) -> QaConfig {
    let mut c = QaConfig::seeded(seed);
    c.dae.epochs = 2;
    c.vae.epochs = 2;
    c.direct.epochs = 2;
    c.regress.bagging_estimators = 10;
    c.regress.forest_trees = 10;
    c.regress.boosting_estimators = 10;
    c
}

fn without(dataset: &BenchmarkDataset, kind: DomainKind) -> BenchmarkDataset {
    let (cases, splits) = dataset
        .cases
        .iter()
        .zip(&dataset.splits)
        .filter(|(c, _)| c.domain.kind != kind)
        .map(|(c, s)| (c.clone(), *s))
        .unzip();
    BenchmarkDataset {
        config: dataset.config.clone(),
        cases,
        splits,
    }
}

#[test]
fn commissioning_is_deterministic() {
    let dataset = small_benchmark();
    let profile = &profile_bank(1)[0];
    let a = commission(profile, &dataset, &quick_config(3)).unwrap();
    let b = commission(profile, &dataset, &quick_config(3)).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = commission(profile, &dataset, &quick_config(4)).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn commissioning_report_contents() {
    let f = fixture();
    let n_test = f.dataset.iter_split(Split::QaTest).count();
    let n_common = f
        .dataset
        .iter_split(Split::QaTest)
        .filter(|c| c.domain.kind == DomainKind::Common)
        .count();
    for b in &f.bundles {
        let r = &b.report;
        assert_eq!(r.method, Method::Bagging);
        assert_eq!(r.test_cases, n_test);
        assert_eq!(b.baseline.len(), n_common);
        let keys: Vec<&str> = r.train_pearson.keys().map(String::as_str).collect();
        assert_eq!(keys, ["x_appr", "x_intensity", "x_noise", "x_shape"]);
        assert!(r.train_pearson["x_shape"].unwrap() > 0.5, "{}: {:?}", r.profile_id, r.train_pearson);
        assert!(r.test_mae < 0.1, "{} test MAE {}", r.profile_id, r.test_mae);
        assert!((0.0..=1.0).contains(&r.test_accuracy));
    }
}

#[test]
fn invalid_threshold_is_rejected() {
    let dataset = small_benchmark();
    let mut config = quick_config(1);
    config.threshold = 1.0;
    let err = commission(&profile_bank(1)[0], &dataset, &config).unwrap_err();
    assert!(matches!(err, QaError::InvalidThreshold(_)), "{err}");
}

#[test]
fn commissioning_needs_common_cases() {
    let dataset = without(&small_benchmark(), DomainKind::Common);
    let err = commission(&profile_bank(1)[0], &dataset, &quick_config(1)).unwrap_err();
    assert!(matches!(err, QaError::MissingDomain(DomainKind::Common)), "{err}");
}

#[test]
fn bundle_round_trips_bit_exact() {
    let f = fixture();
    let bundle = &f.bundles[0];
    let bytes = bundle.to_bytes();
    let back = QaBundle::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.report, bundle.report);
    assert_eq!(back.baseline, bundle.baseline);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.sqab");
    bundle.save(&path).unwrap();
    let loaded = QaBundle::load(&path).unwrap();
    for case in f.dataset.iter_split(Split::QaTest).take(5) {
        let p0 = predict_case(bundle, &case.id, 0, &case.volume, &case.truth).unwrap();
        let p1 = predict_case(&loaded, &case.id, 0, &case.volume, &case.truth).unwrap();
        assert_eq!(p0.y_pred.to_bits(), p1.y_pred.to_bits());
        assert_eq!(p0, p1);
    }

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(QaBundle::from_bytes(&bad), Err(QaError::Container(_))));
    let mut newer = bytes.clone();
    newer[4] = 9;
    assert!(matches!(QaBundle::from_bytes(&newer), Err(QaError::Container(_))));
    assert!(QaBundle::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn tampered_report_fails_digest_check() {
    let bundle = &fixture().bundles[0];
    let bytes = bundle.to_bytes();
    // Flip one digit inside the stored report JSON.
    let needle = b"\"train_cases\": ";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap() + needle.len();
    let mut bad = bytes.clone();
    bad[at] = if bad[at] == b'1' { b'2' } else { b'1' };
    assert!(matches!(QaBundle::from_bytes(&bad), Err(QaError::DigestMismatch { .. })));
}

#[test]
fn predictions_follow_the_threshold() {
    let f = fixture();
    for b in &f.bundles {
        for (i, case) in f.dataset.iter_split(Split::QaTest).enumerate() {
            let p = predict_case(b, &case.id, i, &case.volume, &case.truth).unwrap();
            assert!((0.0..=1.0).contains(&p.y_pred));
            assert_eq!(p.flag == Flag::Poor, p.y_pred < b.threshold);
            assert_eq!(p.index, i);
        }
    }
}

#[test]
fn robust_common_case_is_good_and_empty_segmentation_is_poor() {
    let f = fixture();
    let robust = f.bundles.iter().find(|b| b.profile.id.starts_with("robust")).unwrap();
    let segmenter = fit_segmenter(&robust.profile, &f.dataset).unwrap();
    let case = f
        .dataset
        .iter_split(Split::QaTest)
        .find(|c| c.domain.kind == DomainKind::Common)
        .unwrap();
    let s_pred = segmenter.segment(&case.volume, &case.truth).unwrap();
    let p = predict_case(robust, &case.id, 0, &case.volume, &s_pred).unwrap();
    assert_eq!(p.flag, Flag::Good, "{p:?}");

    let empty = LabelMap::new(case.truth.dims(), case.truth.spacing(), vec![0; case.truth.len()]).unwrap();
    for b in &f.bundles {
        let p = predict_case(b, &case.id, 0, &case.volume, &empty).unwrap();
        // The reconstruction may leave out a small structure, which then
        // scores 1 under the absent-in-both convention.
        assert!(p.features.x_shape <= 1.0 / 9.0 + 1e-9, "{p:?}");
        assert_eq!(p.y_pred, 0.0);
        assert_eq!(p.flag, Flag::Poor, "{}: {p:?}", b.profile.id);
    }
}

#[test]
fn prediction_rejects_a_foreign_grid() {
    let bundle = &fixture().bundles[0];
    let other = generate_benchmark(&BenchmarkConfig {
        scale: 0.05,
        seed: 1,
        grid: segqa_core::phantom::GridConfig {
            size: 32,
            ..Default::default()
        },
        ..BenchmarkConfig::default()
    })
    .unwrap();
    let case = &other.cases[0];
    assert!(predict_case(bundle, &case.id, 0, &case.volume, &case.truth).is_err());
}

#[test]
fn benchmark_report_shape_and_stability() {
    let f = fixture();
    let profile = &f.bundles[0].profile;
    let a = run_benchmark(profile, &f.dataset).unwrap();
    let b = run_benchmark(profile, &f.dataset).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.domains.len(), 6);
    assert_eq!(a.versus_common.len(), 5);
    let qa_cases = f.dataset.splits.iter().filter(|s| **s != Split::SegTrain).count();
    assert_eq!(a.cases.len(), qa_cases);
    for c in &a.versus_common {
        let d = a.domain(c.domain).unwrap();
        let common = a.domain(DomainKind::Common).unwrap();
        assert!((c.drop - (common.mean - d.mean)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&c.test.p_value));
    }
    let value: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    for key in ["profile_id", "domains", "versus_common", "noise_groups", "noise_anova", "cases"] {
        assert!(value.get(key).is_some(), "missing {key}");
    }

    let missing = without(&f.dataset, DomainKind::Ce);
    assert!(matches!(run_benchmark(profile, &missing), Err(QaError::MissingDomain(DomainKind::Ce))));
}

#[test]
fn framework_summary_is_complete_and_reproducible() {
    let f = fixture();
    let mut config = f.config.clone();
    config.direct.epochs = 3;
    let a = evaluate_framework(&f.bundles, &f.dataset, &config).unwrap();
    let b = evaluate_framework(&f.bundles, &f.dataset, &config).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.profiles.len(), f.bundles.len());
    let names: Vec<&str> = a.method_mean_mae.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        ["bagging", "direct_net", "gpr", "gradient_boosting", "ols", "random_forest", "shape_only"]
    );
    for (p, b) in a.profiles.iter().zip(&f.bundles) {
        assert_eq!(p.profile_id, b.profile.id);
        assert!((p.mae - b.report.test_mae).abs() < 1e-12);
        assert_eq!(p.method_mae["bagging"], p.mae);
    }
    assert!(matches!(evaluate_framework(&[], &f.dataset, &config), Err(QaError::NoBundles)));
}

#[test]
fn monitor_window_precondition() {
    let baseline = vec![0.8, 0.82, 0.85, 0.79, 0.81];
    let config = MonitorConfig {
        window: 10,
        ..MonitorConfig::default()
    };
    let mut m = Monitor::new(baseline.clone(), config.clone()).unwrap();
    for _ in 0..9 {
        assert!(m.push(0.8).unwrap().is_none());
    }
    let r = m.push(0.8).unwrap().unwrap();
    assert_eq!(r.index, 9);
    assert_eq!(r.window, 10);
    assert!(!r.alarm);

    let bad = MonitorConfig {
        window: 9,
        ..MonitorConfig::default()
    };
    assert!(matches!(Monitor::new(baseline.clone(), bad), Err(QaError::InvalidMonitor(_))));
    assert!(Monitor::new(vec![], config.clone()).is_err());
    assert!(Monitor::new(vec![f64::NAN], config).is_err());
}

#[test]
fn monitor_alarms_on_a_clear_drop() {
    let baseline: Vec<f64> = (0..20).map(|i| 0.8 + 0.005 * (i % 7) as f64).collect();
    let config = MonitorConfig {
        window: 10,
        ..MonitorConfig::default()
    };
    let mut m = Monitor::new(baseline.clone(), config).unwrap();
    let stream: Vec<f64> = baseline.iter().cycle().take(10).map(|v| v - 0.2).collect();
    let reports: Vec<_> = stream.iter().filter_map(|&y| m.push(y).unwrap()).collect();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].alarm);
    assert!(reports[0].test.p_value < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn alarm_requires_significance_and_effect(
        baseline in prop::collection::vec(0.3f64..1.0, 3..20),
        stream in prop::collection::vec(0.0f64..1.0, 10..40),
        delta in 0.0f64..0.2,
    ) {
        let config = MonitorConfig { window: 10, alpha: 0.05, delta };
        let mut m = Monitor::new(baseline, config).unwrap();
        for y in stream {
            if let Some(r) = m.push(y).unwrap() {
                let expected = r.test.p_value < 0.05 && r.baseline_mean - r.window_mean > delta;
                prop_assert_eq!(r.alarm, expected);
            }
        }
    }
}
