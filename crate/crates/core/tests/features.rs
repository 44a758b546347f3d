use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segqa_core::encoders::{train_dae, train_vae, DaeConfig, LatentVector, VaeConfig};
use segqa_core::features::*;
use segqa_core::grid::{index, LabelMap, Volume};
use segqa_core::perturb::{add_poisson_noise, contrast_enhance, NoiseLevel, NOISE_LEVELS};
use segqa_core::phantom::{generate_case, DomainKind, DomainTag, GridConfig};

fn reference(latents: Vec<Vec<f32>>, mean: f64) -> CommonReference {
    CommonReference::new(latents.into_iter().map(LatentVector).collect(), mean).unwrap()
}

/// Median of the 27 clamped neighbours by full sort.
fn naive_median(vol: &Volume) -> Vec<f32> {
    let d = vol.dims();
    let mut out = vec![0.0; vol.len()];
    for z in 0..d[2] as i64 {
        for y in 0..d[1] as i64 {
            for x in 0..d[0] as i64 {
                let mut w = Vec::new();
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let c = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
                            w.push(vol.data()[index(d, c(x + dx, d[0]), c(y + dy, d[1]), c(z + dz, d[2]))]);
                        }
                    }
                }
                w.sort_by(f32::total_cmp);
                out[index(d, x as usize, y as usize, z as usize)] = w[13];
            }
        }
    }
    out
}

fn random_volume(seed: u64, dims: [usize; 3]) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Volume::new(dims, [1.0; 3], (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
}

#[test]
fn cosine_of_identical_latents_is_one() {
    let r = reference(vec![vec![1.0, 2.0, -3.0]; 3], 0.0);
    let z = LatentVector(vec![1.0, 2.0, -3.0]);
    assert!((appearance_similarity(&z, &r).unwrap() - 1.0).abs() < 1e-12);
    let scaled = LatentVector(vec![2.5, 5.0, -7.5]);
    assert!((appearance_similarity(&scaled, &r).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn cosine_of_orthogonal_latents_is_zero() {
    let r = reference(vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]], 0.0);
    let z = LatentVector(vec![0.0, 0.0, 4.0]);
    assert_eq!(appearance_similarity(&z, &r).unwrap(), 0.0);
}

#[test]
fn cosine_matches_hand_computed_oracle() {
    let refs = vec![vec![0.3f32, -1.2, 2.0], vec![1.5, 0.25, -0.5], vec![-0.75, 0.5, 1.0]];
    let z = [0.9f32, 0.1, -0.4];
    let mut expected = 0.0;
    for r in &refs {
        let dot = z[0] as f64 * r[0] as f64 + z[1] as f64 * r[1] as f64 + z[2] as f64 * r[2] as f64;
        let nz = (z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt();
        let nr = (r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt();
        expected += dot / (nz * nr) / 3.0;
    }
    let got = appearance_similarity(&LatentVector(z.to_vec()), &reference(refs, 0.0)).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn zero_norm_references_are_excluded() {
    let r = reference(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], 0.0);
    let z = LatentVector(vec![1.0, 0.0]);
    assert!((appearance_similarity(&z, &r).unwrap() - 0.5).abs() < 1e-12);
    assert!(matches!(
        appearance_similarity(&LatentVector(vec![0.0, 0.0]), &r),
        Err(FeatureError::DegenerateLatent)
    ));
}

#[test]
fn reference_needs_two_consistent_latents() {
    assert!(matches!(
        CommonReference::new(vec![LatentVector(vec![1.0])], 0.0),
        Err(FeatureError::TooFewReferences(1))
    ));
    assert!(matches!(
        CommonReference::new(vec![LatentVector(vec![1.0]), LatentVector(vec![1.0, 2.0])], 0.0),
        Err(FeatureError::InconsistentLatents)
    ));
}

proptest! {
    #[test]
    fn appearance_similarity_is_bounded(
        z in prop::collection::vec(-10.0f32..10.0, 4),
        a in prop::collection::vec(-10.0f32..10.0, 4),
        b in prop::collection::vec(-10.0f32..10.0, 4),
    ) {
        let r = reference(vec![a, b], 0.0);
        if let Ok(s) = appearance_similarity(&LatentVector(z), &r) {
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn extra_median_pass_does_not_increase_noise(seed in 0u64..500) {
        let v = random_volume(seed, [5, 4, 6]);
        let filtered = median_filter(&v).unwrap();
        prop_assert!(x_noise(&filtered).unwrap() <= x_noise(&v).unwrap());
        prop_assert!(x_noise(&v).unwrap() >= 0.0);
    }
}

#[test]
fn intensity_offset_of_uniform_volume() {
    let v = Volume::filled([4; 3], [1.0; 3], 0.5).unwrap();
    let mut mask = LabelMap::background([4; 3], [1.0; 3]).unwrap();
    mask.labels_mut()[5] = 3;
    let r = reference(vec![vec![1.0], vec![1.0]], 0.125);
    assert_eq!(x_intensity(&v, &mask, &r).unwrap(), 0.375);
    let empty = LabelMap::background([4; 3], [1.0; 3]).unwrap();
    assert!(matches!(x_intensity(&v, &empty, &r), Err(FeatureError::EmptyMask)));
}

#[test]
fn intensity_recovers_injected_contrast() {
    let grid = GridConfig::default();
    for seed in 0..3 {
        let case = generate_case(seed, DomainTag::common(), &grid).unwrap();
        let own = x_intensity(&case.volume, &case.truth, &reference(vec![vec![1.0]; 2], 0.0)).unwrap();
        let r = reference(vec![vec![1.0]; 2], own);
        assert!(x_intensity(&case.volume, &case.truth, &r).unwrap().abs() < 1e-12);
        let enhanced = contrast_enhance(&case.volume, &case.truth.foreground_mask(), 0.25).unwrap();
        let x = x_intensity(&enhanced, &case.truth, &r).unwrap();
        assert!((x - 0.25).abs() <= 0.02, "seed {seed}: {x}");
    }
}

#[test]
fn median_filter_matches_sort_oracle() {
    for seed in 0..3 {
        let v = random_volume(seed, [16; 3]);
        assert_eq!(median_filter(&v).unwrap().data(), naive_median(&v).as_slice());
    }
    assert!(matches!(
        median_filter(&Volume::filled([2, 5, 5], [1.0; 3], 0.0).unwrap()),
        Err(FeatureError::TooSmall(_))
    ));
}

#[test]
fn noise_of_constant_volume_is_zero() {
    assert_eq!(x_noise(&Volume::filled([6; 3], [1.0; 3], 0.7).unwrap()).unwrap(), 0.0);
}

#[test]
fn noise_of_single_impulse() {
    let mut v = Volume::filled([7; 3], [1.0; 3], 0.25).unwrap();
    let i = index([7; 3], 3, 2, 4);
    v.data_mut()[i] = 0.75;
    let filtered = naive_median(&v);
    let expected: f64 = v
        .data()
        .iter()
        .zip(&filtered)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / v.len() as f64;
    assert_eq!(x_noise(&v).unwrap(), expected);
    // A lone impulse never survives the median, so only its own voxel counts.
    assert_eq!(expected, 0.25 / 343.0);
}

#[test]
fn noise_rises_with_poisson_level() {
    let case = generate_case(4, DomainTag::common(), &GridConfig::default()).unwrap();
    let values: Vec<f64> = NOISE_LEVELS
        .iter()
        .map(|&n| x_noise(&add_poisson_noise(&case.volume, NoiseLevel::new(n).unwrap(), 77).unwrap()).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] < w[1]), "{values:?}");
}

#[test]
fn csv_round_trip_is_exact() {
    let rows = vec![
        FeatureRow::new(
            "common-000",
            DomainKind::Common,
            FeatureVector::from_array([0.987654321012345, -0.0123456789, 1.25e-5, 0.9]),
            Some(0.876543210987654),
        ),
        FeatureRow::new("rpv-001", DomainKind::RpvNoisy, FeatureVector::from_array([0.1, 0.2, 0.3, 0.4]), None),
    ];
    let mut buf = Vec::new();
    write_feature_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("case_id,domain,x_appr,x_intensity,x_noise,x_shape,dsc_true\n"));
    assert_eq!(read_feature_csv(buf.as_slice()).unwrap(), rows);
    let no_target = "case_id,domain,x_appr,x_intensity,x_noise,x_shape\nc1,CE,0.5,0.1,0.01,0.8\n";
    let parsed = read_feature_csv(no_target.as_bytes()).unwrap();
    assert_eq!(parsed[0].dsc_true, None);
    assert_eq!(parsed[0].domain, DomainKind::Ce);
    assert!(read_feature_csv("id,x\n1,2\n".as_bytes()).is_err());
}

#[test]
fn extraction_is_pure_and_shape_feature_bounded() {
    let grid = GridConfig::default();
    let cases: Vec<_> = (0..10)
        .map(|i| generate_case(40 + i, DomainTag::common(), &grid).unwrap())
        .collect();
    let dae = train_dae(
        &cases.iter().map(|c| &c.volume).collect::<Vec<_>>(),
        &DaeConfig {
            epochs: 1,
            ..DaeConfig::default()
        },
    )
    .unwrap();
    let vae = train_vae(
        &cases.iter().map(|c| &c.truth).collect::<Vec<_>>(),
        &VaeConfig {
            epochs: 2,
            ..VaeConfig::default()
        },
    )
    .unwrap();
    let reference = CommonReference::build(&dae, cases.iter().map(|c| (&c.volume, &c.truth))).unwrap();
    assert_eq!(reference.len(), 10);
    let fx = FeatureExtractor {
        dae: &dae,
        vae: &vae,
        reference: &reference,
    };
    let a = fx.extract(&cases[0].volume, &cases[0].truth).unwrap();
    let b = fx.extract(&cases[1].volume, &cases[1].truth).unwrap();
    assert_eq!(fx.extract(&cases[1].volume, &cases[1].truth).unwrap(), b);
    assert_eq!(fx.extract(&cases[0].volume, &cases[0].truth).unwrap(), a);
    for f in [a, b] {
        assert!((-1.0..=1.0).contains(&f.x_appr));
        assert!(f.x_noise >= 0.0);
        assert!((0.0..=1.0).contains(&f.x_shape));
    }
    let empty = LabelMap::background(cases[0].truth.dims(), cases[0].truth.spacing()).unwrap();
    let f = fx.extract(&cases[0].volume, &empty).unwrap();
    assert_eq!(f.x_intensity, 0.0);
    assert!((0.0..=1.0).contains(&f.x_shape));
}
