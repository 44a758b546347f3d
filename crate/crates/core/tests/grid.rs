use proptest::prelude::*;
use segqa_core::grid::{
    crop_roi, normalize, read_labels, read_volume, resample, resample_labels, write_labels,
    write_volume, GridError, LabelMap, Volume,
};

fn ramp(dims: [usize; 3]) -> Volume {
    let n = dims.iter().product::<usize>();
    Volume::new(dims, [1.0; 3], (0..n).map(|i| i as f32 * 0.37).collect()).unwrap()
}

#[test]
fn constant_volume_resamples_to_constant() {
    let v = Volume::filled([5, 4, 3], [2.0; 3], 0.75).unwrap();
    let r = resample(&v, [0.7, 1.3, 3.1]).unwrap();
    assert!(r.data().iter().all(|&x| x == 0.75));
    assert_eq!(r.spacing(), [0.7, 1.3, 3.1]);
}

#[test]
fn resample_rejects_bad_spacing() {
    let v = ramp([2, 2, 2]);
    assert!(matches!(resample(&v, [1.0, 0.0, 1.0]), Err(GridError::InvalidSpacing(_))));
    assert!(matches!(resample(&v, [1.0, -1.0, 1.0]), Err(GridError::InvalidSpacing(_))));
    assert!(matches!(
        Volume::new([0, 2, 2], [1.0; 3], vec![]),
        Err(GridError::EmptyGrid(_))
    ));
}

#[test]
fn resample_preserves_extent_within_a_voxel() {
    let v = ramp([17, 9, 5]);
    for t in [[0.6, 1.7, 2.2], [3.0, 0.5, 1.0]] {
        let r = resample(&v, t).unwrap();
        for a in 0..3 {
            let before = v.dims()[a] as f64 * v.spacing()[a];
            let after = r.dims()[a] as f64 * t[a];
            assert!((before - after).abs() <= t[a], "axis {a}: {before} vs {after}");
        }
    }
}

#[test]
fn single_voxel_crop_is_centred() {
    let mut labels = vec![0u8; 32 * 32 * 32];
    labels[16 + 32 * (16 + 32 * 16)] = 3;
    let l = LabelMap::new([32; 3], [1.0; 3], labels).unwrap();
    let v = Volume::filled([32; 3], [1.0; 3], 0.5).unwrap();
    let c = crop_roi(&v, &l, [16; 3]).unwrap();
    // 15 spare voxels per axis: 7 before the label, 8 after.
    assert_eq!(c.labels.get(7, 7, 7), 3);
    assert_eq!(c.origin, [9; 3]);
    assert_eq!(c.padded, 0);
}

#[test]
fn exact_fit_crop_is_identity() {
    let v = ramp([6, 5, 4]);
    let l = LabelMap::new([6, 5, 4], [1.0; 3], vec![1; 120]).unwrap();
    let c = crop_roi(&v, &l, [6, 5, 4]).unwrap();
    assert_eq!(c.volume, v);
    assert_eq!(c.labels, l);
}

/// Independent index arithmetic: a box of `roi` voxels centred on `[lo, hi]`
/// counts one pad voxel for every coordinate outside `0..dim`.
fn pad_oracle(dims: [usize; 3], lo: [usize; 3], hi: [usize; 3], roi: [usize; 3]) -> usize {
    let inside: Vec<usize> = (0..3)
        .map(|a| {
            let extent = hi[a] - lo[a] + 1;
            let left = (roi[a] - extent) / 2;
            let start = lo[a] as i64 - left as i64;
            (0..roi[a] as i64)
                .filter(|k| (0..dims[a] as i64).contains(&(start + k)))
                .count()
        })
        .collect();
    roi.iter().product::<usize>() - inside.iter().product::<usize>()
}

#[test]
fn edge_crop_pad_count_matches_oracle() {
    let dims = [20, 18, 16];
    let (lo, hi) = ([0, 14, 2], [3, 17, 5]);
    let mut labels = vec![0u8; dims.iter().product()];
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                labels[x + dims[0] * (y + dims[1] * z)] = 4;
            }
        }
    }
    let l = LabelMap::new(dims, [1.0; 3], labels).unwrap();
    let v = Volume::filled(dims, [1.0; 3], 0.8).unwrap();
    let roi = [12, 10, 8];
    let c = crop_roi(&v, &l, roi).unwrap();
    assert_eq!(c.padded, pad_oracle(dims, lo, hi, roi));
    let zeros = c.volume.data().iter().filter(|&&x| x == 0.0).count();
    assert_eq!(zeros, c.padded);
}

#[test]
fn oversized_box_is_centre_cropped() {
    let l = LabelMap::new([8; 3], [1.0; 3], vec![2; 512]).unwrap();
    let v = ramp([8; 3]);
    let c = crop_roi(&v, &l, [4; 3]).unwrap();
    assert!(c.truncated);
    assert_eq!(c.origin, [2; 3]);
    assert_eq!(c.volume.get(0, 0, 0), v.get(2, 2, 2));
}

#[test]
fn io_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let n = 8 * 8 * 8;
    let data: Vec<f32> = (0..n).map(|i| ((i * 7919) % 1013) as f32 / 1013.0 - 0.3).collect();
    let v = Volume::new([8; 3], [0.5, 1.25, 2.0], data).unwrap();
    let vp = dir.path().join("img.vol");
    write_volume(&v, &vp).unwrap();
    let back = read_volume(&vp).unwrap();
    assert_eq!(back.dims(), v.dims());
    assert_eq!(back.spacing(), v.spacing());
    let bits = |x: &Volume| x.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&v));

    let l = LabelMap::new([8; 3], [1.0; 3], (0..n).map(|i| (i % 10) as u8).collect()).unwrap();
    let lp = dir.path().join("seg.lab");
    write_labels(&l, &lp).unwrap();
    assert_eq!(read_labels(&lp).unwrap(), l);
}

#[test]
fn io_rejects_short_payload_and_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    let vp = dir.path().join("short.vol");
    write_volume(&Volume::filled([2; 3], [1.0; 3], 1.0).unwrap(), &vp).unwrap();
    let bytes = std::fs::read(&vp).unwrap();
    std::fs::write(&vp, &bytes[..28]).unwrap();
    assert!(matches!(
        read_volume(&vp),
        Err(GridError::LengthMismatch { expected: 8, got: 7 })
    ));

    let lp = dir.path().join("bad.lab");
    write_labels(&LabelMap::background([2; 3], [1.0; 3]).unwrap(), &lp).unwrap();
    let mut raw = std::fs::read(&lp).unwrap();
    raw[3] = 10;
    std::fs::write(&lp, raw).unwrap();
    assert!(matches!(read_labels(&lp), Err(GridError::LabelOutOfRange(10))));

    // A label file read as a volume has the wrong dtype.
    assert!(matches!(read_volume(&lp), Err(GridError::UnsupportedDtype(_))));
}

fn small_dims() -> impl Strategy<Value = [usize; 3]> {
    (1usize..7, 1usize..7, 1usize..7).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #[test]
    fn normalize_is_bounded_and_idempotent(
        vals in prop::collection::vec(-1e4f32..1e4, 2..200)
    ) {
        let n = vals.len();
        let v = Volume::new([n, 1, 1], [1.0; 3], vals).unwrap();
        let once = normalize(&v);
        prop_assert!(once.data().iter().all(|x| (0.0..=1.0).contains(x)));
        let lo = once.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = once.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        if lo == 0.0 && hi == 1.0 {
            prop_assert_eq!(normalize(&once), once);
        }
    }

    #[test]
    fn nearest_resample_never_invents_labels(
        dims in small_dims(),
        seed in any::<u64>(),
        t in (0.3f64..3.0, 0.3f64..3.0, 0.3f64..3.0),
    ) {
        let n: usize = dims.iter().product();
        let labels: Vec<u8> = (0..n).map(|i| ((seed >> (i % 60)) % 10) as u8).collect();
        let l = LabelMap::new(dims, [1.0; 3], labels).unwrap();
        let r = resample_labels(&l, [t.0, t.1, t.2]).unwrap();
        let before = l.histogram();
        for (lab, &c) in r.histogram().iter().enumerate() {
            prop_assert!(c == 0 || before[lab] > 0);
        }
    }

    #[test]
    fn crop_has_requested_dims(
        dims in small_dims(),
        roi in small_dims(),
        at in any::<usize>(),
    ) {
        let n: usize = dims.iter().product();
        let mut labels = vec![0u8; n];
        labels[at % n] = 1;
        labels[(at / 7) % n] = 2;
        let l = LabelMap::new(dims, [1.0; 3], labels).unwrap();
        let v = Volume::filled(dims, [1.0; 3], 0.4).unwrap();
        let c = crop_roi(&v, &l, roi).unwrap();
        prop_assert_eq!(c.volume.dims(), roi);
        prop_assert_eq!(c.labels.dims(), roi);
    }
}
