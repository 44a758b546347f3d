use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segqa_core::grid::{index, LabelMap, Volume};
use segqa_core::perturb::*;

const DIMS: [usize; 3] = [6, 5, 4];

fn random_volume(seed: u64, dims: [usize; 3]) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Volume::new(dims, [1.0, 1.5, 2.0], (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn random_labels(seed: u64, dims: [usize; 3]) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    LabelMap::new(dims, [1.0, 1.5, 2.0], (0..n).map(|_| rng.random_range(0..4u8)).collect()).unwrap()
}

#[test]
fn noise_level_must_be_positive() {
    for n in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(NoiseLevel::new(n), Err(PerturbError::InvalidNoiseLevel(_))));
    }
    assert_eq!(NoiseLevel::new(2.0).unwrap().value(), 2.0);
}

#[test]
fn poisson_noise_is_seeded_and_unbiased() {
    let vol = Volume::filled([20, 20, 20], [1.0; 3], 0.5).unwrap();
    let n = NoiseLevel::new(4.0).unwrap();
    let a = add_poisson_noise(&vol, n, 3).unwrap();
    assert_eq!(a, add_poisson_noise(&vol, n, 3).unwrap());
    assert_ne!(a, add_poisson_noise(&vol, n, 4).unwrap());
    // Level 128 at n = 4: Poisson(32) * 4 has mean 128 and variance 512.
    let m = a.data().iter().map(|&v| v as f64 * DISCRETE_MAX).sum::<f64>() / a.len() as f64;
    let se = (512.0 / a.len() as f64).sqrt();
    assert!((m - 128.0).abs() < 5.0 * se, "mean {m}");
    let var = a.data().iter().map(|&v| (v as f64 * DISCRETE_MAX - m).powi(2)).sum::<f64>() / a.len() as f64;
    assert!((var / 512.0 - 1.0).abs() < 0.15, "variance {var}");
}

#[test]
fn poisson_noise_rejects_non_finite_volumes() {
    let mut vol = Volume::filled(DIMS, [1.0; 3], 0.5).unwrap();
    vol.data_mut()[7] = f32::NAN;
    let n = NoiseLevel::new(1.0).unwrap();
    assert!(matches!(add_poisson_noise(&vol, n, 0), Err(PerturbError::NonFinite)));
}

#[test]
fn small_rates_follow_the_poisson_pmf() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lambda = 2.5;
    let draws = 100_000;
    let mut counts = [0usize; 8];
    for _ in 0..draws {
        let k = sample_poisson(lambda, &mut rng) as usize;
        if k < counts.len() {
            counts[k] += 1;
        }
    }
    let mut pmf = (-lambda as f64).exp();
    for (k, &c) in counts.iter().enumerate() {
        if k > 0 {
            pmf *= lambda / k as f64;
        }
        let se = (pmf * (1.0 - pmf) / draws as f64).sqrt();
        assert!((c as f64 / draws as f64 - pmf).abs() < 5.0 * se, "k = {k}");
    }
    assert_eq!(sample_poisson(0.0, &mut rng), 0.0);
}

#[test]
fn boundary_weights_count_inside_neighbours() {
    let dims = [3, 3, 3];
    let mut mask = vec![false; 27];
    mask[index(dims, 1, 1, 1)] = true;
    let w = boundary_weights(&mask, dims);
    for (i, &wi) in w.iter().enumerate() {
        let expected = if mask[i] { 1.0 } else { 1.0 / 26.0 };
        assert_eq!(wi, expected);
    }
    // A corner voxel sees only 7 neighbours.
    let mut mask = vec![true; 27];
    mask[0] = false;
    assert_eq!(boundary_weights(&mask, dims)[0], 7.0 / 26.0);
}

#[test]
fn contrast_raises_the_mask_and_spares_far_voxels() {
    let vol = Volume::filled([7, 7, 7], [1.0; 3], 0.4).unwrap();
    let mut mask = vec![false; vol.len()];
    mask[index(vol.dims(), 3, 3, 3)] = true;
    let out = contrast_enhance(&vol, &mask, 0.2).unwrap();
    assert!((out.get(3, 3, 3) - 0.6).abs() < 1e-6);
    assert!((out.get(4, 3, 3) - (0.4 + 0.2 / 26.0)).abs() < 1e-6);
    assert_eq!(out.get(0, 0, 0), 0.4);
    assert_eq!(contrast_enhance(&vol, &mask, 0.0).unwrap(), vol);
    assert_eq!(contrast_enhance(&vol, &mask, 0.9).unwrap().get(3, 3, 3), 1.0);
    assert!(matches!(contrast_enhance(&vol, &vec![false; vol.len()], 0.1), Err(PerturbError::EmptyMask)));
    assert!(matches!(contrast_enhance(&vol, &[true], 0.1), Err(PerturbError::MaskLength { .. })));
}

#[test]
fn flip_mirrors_coordinates() {
    let vol = random_volume(1, DIMS);
    let labels = random_labels(2, DIMS);
    for (axis, a) in [(Axis::X, 0), (Axis::Y, 1), (Axis::Z, 2)] {
        let (v, l) = flip_axis(&vol, &labels, axis).unwrap();
        for z in 0..DIMS[2] {
            for y in 0..DIMS[1] {
                for x in 0..DIMS[0] {
                    let mut p = [x, y, z];
                    p[a] = DIMS[a] - 1 - p[a];
                    assert_eq!(v.get(x, y, z), vol.get(p[0], p[1], p[2]));
                    assert_eq!(l.get(x, y, z), labels.get(p[0], p[1], p[2]));
                }
            }
        }
    }
    let other = random_labels(2, [6, 5, 3]);
    assert!(flip_axis(&vol, &other, Axis::X).is_err());
}

#[test]
fn degradation_smears_along_z_only() {
    let dims = [4, 4, 12];
    let data = (0..192).map(|i| (i / 16) as f32 / 11.0).collect::<Vec<_>>();
    let ramp = Volume::new(dims, [1.0; 3], data).unwrap();
    let labels = random_labels(3, dims);
    assert_eq!(resample_degrade(&ramp, &labels, 1.0).unwrap().0, ramp);
    let (v, l) = resample_degrade(&ramp, &labels, 3.0).unwrap();
    assert_eq!(l, labels);
    assert_eq!(v.dims(), dims);
    // Every slice stays constant in-plane and within the ramp's range.
    for z in 0..dims[2] {
        let first = v.get(0, 0, z);
        assert!((0.0..=1.0).contains(&first));
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                assert!((v.get(x, y, z) - first).abs() < 1e-6);
            }
        }
    }
    let flat = Volume::filled(dims, [1.0; 3], 0.3).unwrap();
    assert!(resample_degrade(&flat, &labels, 2.5).unwrap().0.data().iter().all(|&x| (x - 0.3).abs() < 1e-6));
    for f in [0.5, f64::NAN] {
        assert!(matches!(resample_degrade(&ramp, &labels, f), Err(PerturbError::InvalidFactor(_))));
        assert!(matches!(resample_degrade_labels(&labels, f), Err(PerturbError::InvalidFactor(_))));
    }
}

#[test]
fn artifact_saturates_an_implant() {
    let vol = Volume::filled([24, 24, 24], [1.0; 3], 0.3).unwrap();
    let a = insert_artifact(&vol, 9).unwrap();
    assert_eq!(a, insert_artifact(&vol, 9).unwrap());
    assert!(a.data().iter().any(|&v| v == 1.0));
    assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    // Streaks stay inside the implant's slab, so some slice is untouched.
    let untouched = (0..24).any(|z| (0..24).all(|y| (0..24).all(|x| a.get(x, y, z) == 0.3)));
    assert!(untouched);
}

#[test]
fn displacement_peak_matches_magnitude() {
    let u = displacement_field([10, 9, 8], 2.5, 4);
    let peak = (0..u[0].len())
        .map(|i| (0..3).map(|c| (u[c][i] as f64).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    assert!((peak - 2.5).abs() < 1e-5, "peak {peak}");
}

#[test]
fn zero_deformation_is_identity() {
    let vol = random_volume(5, DIMS);
    let labels = random_labels(6, DIMS);
    assert_eq!(deform(&vol, &labels, 0.0, 1).unwrap(), (vol.clone(), labels.clone()));
    assert!(matches!(deform(&vol, &labels, -1.0, 1), Err(PerturbError::InvalidMagnitude(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn double_flip_is_identity(seed in any::<u64>(), axis in 0usize..3) {
        let axis = [Axis::X, Axis::Y, Axis::Z][axis];
        let vol = random_volume(seed, DIMS);
        let labels = random_labels(seed ^ 1, DIMS);
        let (v, l) = flip_axis(&vol, &labels, axis).unwrap();
        prop_assert_eq!(flip_axis(&v, &l, axis).unwrap(), (vol, labels));
    }

    #[test]
    fn poisson_noise_stays_in_unit_range(seed in any::<u64>(), n in 0.01f64..10.0) {
        let vol = random_volume(seed, DIMS);
        let out = add_poisson_noise(&vol, NoiseLevel::new(n).unwrap(), seed).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.dims(), vol.dims());
    }

    #[test]
    fn contrast_is_monotone_in_delta(seed in any::<u64>(), d in 0.0f64..0.5) {
        let vol = random_volume(seed, DIMS);
        let labels = random_labels(seed ^ 2, DIMS);
        let mask = labels.foreground_mask();
        prop_assume!(mask.iter().any(|&m| m));
        let lo = contrast_enhance(&vol, &mask, d).unwrap();
        let hi = contrast_enhance(&vol, &mask, d + 0.1).unwrap();
        prop_assert!(lo.data().iter().zip(hi.data()).all(|(a, b)| a <= b));
        prop_assert!(vol.data().iter().zip(lo.data()).all(|(a, b)| a <= b));
    }

    #[test]
    fn deformation_never_invents_labels(seed in any::<u64>(), m in 0.1f64..3.0) {
        let vol = random_volume(seed, DIMS);
        let labels = random_labels(seed ^ 3, DIMS);
        let (v, l) = deform(&vol, &labels, m, seed).unwrap();
        let before = labels.histogram();
        let after = l.histogram();
        prop_assert!(after.iter().zip(&before).all(|(a, b)| *a == 0 || *b > 0));
        let (lo, hi) = vol.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(v.data().iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6));
    }
}
