use super::{check_geometry, index, GridError, LabelMap, Result, Volume};

/// Output extent along each axis so that `dims * spacing` is preserved to within one voxel.
fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: [f64; 3]) -> [usize; 3] {
    std::array::from_fn(|a| ((dims[a] as f64 * spacing[a] / target[a]).round() as usize).max(1))
}

/// Source coordinate (in input voxels) of output index `j` along one axis.
#[inline]
fn source_coord(j: usize, ratio: f64, n: usize) -> f64 {
    (j as f64 * ratio).min((n - 1) as f64)
}

/// Trilinear resampling to `target` spacing.
pub fn resample(vol: &Volume, target: [f64; 3]) -> Result<Volume> {
    check_geometry(vol.dims, target)?;
    let out_dims = resampled_dims(vol.dims, vol.spacing, target);
    resample_to(vol, out_dims, target)
}

/// Trilinear resampling onto an explicit output grid spanning the same physical origin.
pub fn resample_to(vol: &Volume, out_dims: [usize; 3], target: [f64; 3]) -> Result<Volume> {
    check_geometry(out_dims, target)?;
    if out_dims == vol.dims && target == vol.spacing {
        return Ok(vol.clone());
    }
    let d = vol.dims;
    let ratio: [f64; 3] = std::array::from_fn(|a| target[a] / vol.spacing[a]);
    // Per-axis (lower index, upper index, weight) tables.
    let taps: Vec<Vec<(usize, usize, f32)>> = (0..3)
        .map(|a| {
            (0..out_dims[a])
                .map(|j| {
                    let p = source_coord(j, ratio[a], d[a]);
                    let lo = p.floor() as usize;
                    let hi = (lo + 1).min(d[a] - 1);
                    (lo, hi, (p - lo as f64) as f32)
                })
                .collect()
        })
        .collect();
    let src = &vol.data;
    let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &(z0, z1, tz) in &taps[2] {
        for &(y0, y1, ty) in &taps[1] {
            for &(x0, x1, tx) in &taps[0] {
                let at = |x, y, z| src[index(d, x, y, z)];
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
                out.push(lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz));
            }
        }
    }
    Volume::new(out_dims, target, out)
}

/// Nearest-neighbour resampling of labels to `target` spacing.
pub fn resample_labels(labels: &LabelMap, target: [f64; 3]) -> Result<LabelMap> {
    check_geometry(labels.dims, target)?;
    let out_dims = resampled_dims(labels.dims, labels.spacing, target);
    resample_labels_to(labels, out_dims, target)
}

/// Nearest-neighbour resampling onto an explicit output grid.
pub fn resample_labels_to(
    labels: &LabelMap,
    out_dims: [usize; 3],
    target: [f64; 3],
) -> Result<LabelMap> {
    check_geometry(out_dims, target)?;
    let d = labels.dims;
    let nearest: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            let ratio = target[a] / labels.spacing[a];
            (0..out_dims[a])
                .map(|j| source_coord(j, ratio, d[a]).round() as usize)
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &z in &nearest[2] {
        for &y in &nearest[1] {
            for &x in &nearest[0] {
                out.push(labels.labels[index(d, x, y, z)]);
            }
        }
    }
    LabelMap::new(out_dims, target, out)
}

/// Result of [`crop_roi`].
#[derive(Clone, Debug, PartialEq)]
pub struct RoiCrop {
    pub volume: Volume,
    pub labels: LabelMap,
    /// Input-grid coordinate of output voxel `(0, 0, 0)`; may be negative.
    pub origin: [i64; 3],
    /// Output voxels that fell outside the input grid and were padded.
    pub padded: usize,
    /// True when the label bounding box exceeded `roi` and was centre-cropped.
    pub truncated: bool,
}

/// Tight bounding box `[lo, hi]` (inclusive) of nonzero labels.
pub fn label_bbox(labels: &LabelMap) -> Option<([usize; 3], [usize; 3])> {
    let d = labels.dims;
    let mut lo = d;
    let mut hi = [0; 3];
    let mut any = false;
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if labels.labels[index(d, x, y, z)] != 0 {
                    any = true;
                    for (a, v) in [x, y, z].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

/// Crops a `roi`-sized box centred on the label bounding box, expanding it
/// symmetrically and padding outside the input grid with zero.
pub fn crop_roi(vol: &Volume, labels: &LabelMap, roi: [usize; 3]) -> Result<RoiCrop> {
    if vol.dims != labels.dims {
        return Err(GridError::DimsMismatch {
            a: vol.dims,
            b: labels.dims,
        });
    }
    if roi.contains(&0) {
        return Err(GridError::EmptyGrid(roi));
    }
    let (lo, hi) = label_bbox(labels).ok_or(GridError::AllBackground)?;
    let mut truncated = false;
    let origin: [i64; 3] = std::array::from_fn(|a| {
        let extent = (hi[a] - lo[a] + 1) as i64;
        let extra = roi[a] as i64 - extent;
        if extra < 0 {
            truncated = true;
        }
        // Floor division keeps the box centred for both growth and shrinkage.
        lo[a] as i64 - extra.div_euclid(2)
    });
    if truncated {
        log::warn!(
            "label bounding box {:?}..={:?} exceeds roi {:?}; centre-cropping",
            lo,
            hi,
            roi
        );
    }
    let d = vol.dims;
    let n: usize = roi.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut labs = Vec::with_capacity(n);
    let mut padded = 0;
    for z in 0..roi[2] {
        for y in 0..roi[1] {
            for x in 0..roi[0] {
                let src = [x, y, z];
                let p: [i64; 3] = std::array::from_fn(|a| origin[a] + src[a] as i64);
                if (0..3).all(|a| p[a] >= 0 && p[a] < d[a] as i64) {
                    let i = index(d, p[0] as usize, p[1] as usize, p[2] as usize);
                    data.push(vol.data[i]);
                    labs.push(labels.labels[i]);
                } else {
                    data.push(0.0);
                    labs.push(0);
                    padded += 1;
                }
            }
        }
    }
    Ok(RoiCrop {
        volume: Volume::new(roi, vol.spacing, data)?,
        labels: LabelMap::new(roi, labels.spacing, labs)?,
        origin,
        padded,
        truncated,
    })
}

/// Min-max normalisation to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize(vol: &Volume) -> Volume {
    let (min, max) = vol
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max as f64 - min as f64;
    let data = if range > 0.0 && range.is_finite() {
        vol.data
            .iter()
            .map(|&v| (((v as f64 - min as f64) / range) as f32).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; vol.data.len()]
    };
    Volume {
        dims: vol.dims,
        spacing: vol.spacing,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resample_returns_input() {
        let v = Volume::new([2, 3, 4], [1.0, 2.0, 3.0], (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(resample(&v, [1.0, 2.0, 3.0]).unwrap(), v);
    }

    #[test]
    fn ramp_midpoint() {
        let v = Volume::new([2, 1, 1], [2.0; 3], vec![0.0, 1.0]).unwrap();
        let r = resample(&v, [1.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.dims(), [4, 1, 1]);
        assert_eq!(r.data()[1], 0.5);
    }

    #[test]
    fn normalize_endpoints() {
        let v = Volume::new([3, 1, 1], [1.0; 3], vec![-1000.0, 0.0, 1000.0]).unwrap();
        assert_eq!(normalize(&v).data(), &[0.0, 0.5, 1.0]);
        let c = Volume::filled([2, 2, 2], [1.0; 3], 7.0).unwrap();
        assert!(normalize(&c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn all_background_crop_fails() {
        let v = Volume::filled([4; 3], [1.0; 3], 0.5).unwrap();
        let l = LabelMap::background([4; 3], [1.0; 3]).unwrap();
        assert!(matches!(crop_roi(&v, &l, [2; 3]), Err(GridError::AllBackground)));
    }
}
