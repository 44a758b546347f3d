use proptest::prelude::*;
use segqa_core::perturb::{flip_axis, Axis, NOISE_LEVELS};
use segqa_core::phantom::*;
use std::collections::HashSet;

fn small_grid() -> GridConfig {
    GridConfig {
        size: 32,
        ..GridConfig::default()
    }
}

fn present(case: &CaseRecord) -> HashSet<u8> {
    case.truth.labels().iter().copied().filter(|&l| l > 0).collect()
}

#[test]
fn grid_config_is_validated() {
    for grid in [
        GridConfig { size: 24, ..small_grid() },
        GridConfig { spacing: 0.0, ..small_grid() },
        GridConfig { jitter: 0.2, ..small_grid() },
        GridConfig { removal_probability: 1.5, ..small_grid() },
    ] {
        assert!(matches!(generate_case(1, DomainTag::common(), &grid), Err(PhantomError::InvalidConfig(_))));
    }
}

#[test]
fn domain_parameters_are_validated() {
    let grid = small_grid();
    for tag in [
        DomainTag::new(DomainKind::Common, Some(1.0)),
        DomainTag::new(DomainKind::RpvNoisy, Some(0.0)),
        DomainTag::new(DomainKind::Av, Some(-1.0)),
        DomainTag::new(DomainKind::Ce, Some(f64::NAN)),
    ] {
        assert!(matches!(generate_case(1, tag, &grid), Err(PhantomError::InvalidDomain { .. })), "{tag:?}");
    }
}

#[test]
fn common_cases_hold_every_structure() {
    let case = generate_case(17, DomainTag::common(), &small_grid()).unwrap();
    assert_eq!(case.volume.dims(), [32; 3]);
    assert_eq!(case.truth.dims(), [32; 3]);
    let all: HashSet<u8> = STRUCTURES.iter().map(|s| s.label).collect();
    assert_eq!(present(&case), all);
    assert!(case.volume.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(case, generate_case(17, DomainTag::common(), &small_grid()).unwrap());
}

#[test]
fn contrast_cases_brighten_the_common_image() {
    let grid = small_grid();
    let common = generate_case(5, DomainTag::common(), &grid).unwrap();
    let ce = generate_case(5, DomainTag::new(DomainKind::Ce, Some(0.2)), &grid).unwrap();
    assert_eq!(ce.truth, common.truth);
    assert!(ce.volume.data().iter().zip(common.volume.data()).all(|(a, b)| a >= b));
    let mask = common.truth.foreground_mask();
    let gain = |v: &[f32]| v.iter().zip(&mask).filter(|(_, &m)| m).map(|(&x, _)| x as f64).sum::<f64>();
    assert!(gain(ce.volume.data()) > gain(common.volume.data()));
}

#[test]
fn certain_removal_drops_one_structure() {
    let grid = GridConfig {
        removal_probability: 1.0,
        ..small_grid()
    };
    let case = generate_case(8, DomainTag::new(DomainKind::Av, Some(0.0)), &grid).unwrap();
    let removed = case.meta.removed.expect("a structure is removed");
    assert!(!present(&case).contains(&removed));
    assert_eq!(present(&case).len(), STRUCTURES.len() - 1);
}

#[test]
fn prone_acquisition_is_rotated_half_a_turn() {
    let grid = small_grid();
    let supine = generate_case(3, DomainTag::new(DomainKind::Prone, Some(2.0)), &grid).unwrap();
    let raw = generate_prone_unflipped(3, 2.0, &grid).unwrap();
    let (v, l) = flip_axis(&raw.volume, &raw.truth, Axis::Y).unwrap();
    let (v, l) = flip_axis(&v, &l, Axis::X).unwrap();
    assert_eq!(v, supine.volume);
    assert_eq!(l, supine.truth);
}

#[test]
fn missing_parameters_are_drawn_in_range() {
    let grid = small_grid();
    let ranges = [
        (DomainKind::Av, 2.0, 4.0),
        (DomainKind::Ce, 0.10, 0.30),
        (DomainKind::Prone, 1.0, 2.5),
    ];
    for (kind, lo, hi) in ranges {
        let p = generate_case(4, DomainTag::new(kind, None), &grid).unwrap().domain.parameter.unwrap();
        assert!((lo..=hi).contains(&p), "{kind:?} {p}");
    }
    let n = generate_case(4, DomainTag::new(DomainKind::RpvNoisy, None), &grid).unwrap().domain.parameter.unwrap();
    assert!(NOISE_LEVELS.contains(&n));
}

#[test]
fn benchmark_splits_hold_out_a_third() {
    let config = BenchmarkConfig {
        scale: 0.25,
        seed: 2,
        grid: small_grid(),
        ..BenchmarkConfig::default()
    };
    let data = generate_benchmark(&config).unwrap();
    let counts = config.counts.scaled(config.scale);
    assert_eq!(data.iter_split(Split::SegTrain).count(), counts.seg_train);
    let qa: usize = DomainKind::BENCHMARK.iter().map(|&k| counts.get(k)).sum();
    let test = data.iter_split(Split::QaTest).count();
    assert_eq!(data.iter_split(Split::QaTrain).count() + test, qa);
    assert_eq!(test, (qa as f64 / 3.0).round() as usize);
    for &kind in &DomainKind::BENCHMARK {
        let in_qa = data.cases.iter().zip(&data.splits).filter(|(c, s)| c.domain.kind == kind && **s != Split::SegTrain);
        assert_eq!(in_qa.count(), counts.get(kind));
    }
    let ids: HashSet<&str> = data.cases.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids.len(), data.cases.len());
    assert_eq!(data.split_of("common-000"), Some(data.splits[counts.seg_train]));
    assert_eq!(data, generate_benchmark(&config).unwrap());

    let dir = tempfile::tempdir().unwrap();
    write_benchmark(&data, dir.path()).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), data);
}

#[test]
fn benchmark_needs_common_cases() {
    let mut config = BenchmarkConfig::default();
    config.counts.common = 0;
    assert!(matches!(generate_benchmark(&config), Err(PhantomError::MissingCommon)));
}

#[test]
fn profile_bank_is_deterministic_with_unique_ids() {
    let bank = profile_bank(19);
    assert_eq!(bank, profile_bank(19));
    assert_eq!(bank[..2], profile_bank(2)[..]);
    assert_eq!(bank[0].family, Family::Atlas);
    let ids: HashSet<&str> = bank.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids.len(), 19);
    assert!(profile_bank(0).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn deformed_cases_keep_labels_and_range(seed in any::<u64>(), m in 0.0f64..4.0) {
        let grid = GridConfig { removal_probability: 0.0, ..small_grid() };
        let case = generate_case(seed, DomainTag::new(DomainKind::Av, Some(m)), &grid).unwrap();
        let all: HashSet<u8> = STRUCTURES.iter().map(|s| s.label).collect();
        prop_assert!(present(&case).is_subset(&all));
        prop_assert!(case.volume.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
