//! Domain-shift transforms: Poisson noise, contrast enhancement, flips,
//! slice-thickness degradation, metal-like artifacts and smooth deformation.

use crate::grid::{
    gaussian_blur, index, resample_labels_to, resample_to, sample_nearest, sample_trilinear,
    GridError, LabelMap, Volume,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("noise level must be positive and finite, got {0}")]
    InvalidNoiseLevel(f64),
    #[error("degradation factor must be >= 1, got {0}")]
    InvalidFactor(f64),
    #[error("magnitude must be >= 0, got {0}")]
    InvalidMagnitude(f64),
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask length {got} does not match volume size {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("volume contains non-finite intensities")]
    NonFinite,
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, PerturbError>;

/// Default noise ladder.
pub const NOISE_LEVELS: [f64; 6] = [0.01, 1.0, 2.0, 4.0, 6.0, 8.0];

/// Intensity scale the noise model operates on.
pub const DISCRETE_MAX: f64 = 255.0;

/// Poisson noise level `n`; larger is noisier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(n: f64) -> Result<Self> {
        if n.is_finite() && n > 0.0 {
            Ok(Self(n))
        } else {
            Err(PerturbError::InvalidNoiseLevel(n))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Rate above which the Poisson sampler switches to a rounded normal.
const POISSON_NORMAL_CUTOFF: f64 = 30.0;

/// One Poisson draw: Knuth's multiplication method below the cutoff,
/// otherwise a rounded normal clamped at zero.
pub fn sample_poisson(lambda: f64, rng: &mut impl Rng) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda < POISSON_NORMAL_CUTOFF {
        let limit = (-lambda).exp();
        let mut k = 0u32;
        let mut p: f64 = rng.random();
        while p > limit {
            k += 1;
            p *= rng.random::<f64>();
        }
        k as f64
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (lambda + lambda.sqrt() * z).round().max(0.0)
    }
}

/// Noisy observation of a discrete intensity: `Poisson(intensity / n) * n`.
pub fn sample_noisy_intensity(intensity: f64, n: NoiseLevel, rng: &mut impl Rng) -> f64 {
    sample_poisson(intensity / n.0, rng) * n.0
}

/// Applies the Poisson noise model on the `[0, 255]` integer scale and maps
/// back by dividing by 255, clamping to `[0, 1]`.
pub fn add_poisson_noise(vol: &Volume, n: NoiseLevel, seed: u64) -> Result<Volume> {
    if vol.data().iter().any(|v| !v.is_finite()) {
        return Err(PerturbError::NonFinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = vol
        .data()
        .iter()
        .map(|&v| {
            let level = (v.clamp(0.0, 1.0) as f64 * DISCRETE_MAX).round();
            let noisy = sample_noisy_intensity(level, n, &mut rng);
            (noisy / DISCRETE_MAX).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(vol.with_data(data)?)
}

/// Per-voxel enhancement weight: 1 inside the mask, and outside it the
/// fraction of the 26 neighbours that lie inside.
pub fn boundary_weights(mask: &[bool], dims: [usize; 3]) -> Vec<f32> {
    let mut w = vec![0.0f32; mask.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = index(dims, x, y, z);
                if mask[i] {
                    w[i] = 1.0;
                    continue;
                }
                let mut inside = 0;
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let q = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                            if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64)
                                && mask[index(dims, q[0] as usize, q[1] as usize, q[2] as usize)]
                            {
                                inside += 1;
                            }
                        }
                    }
                }
                w[i] = inside as f32 / 26.0;
            }
        }
    }
    w
}

/// Raises intensities inside `mask` by `delta` with a one-voxel falloff, clamped to `[0, 1]`.
pub fn contrast_enhance(vol: &Volume, mask: &[bool], delta: f64) -> Result<Volume> {
    if mask.len() != vol.len() {
        return Err(PerturbError::MaskLength {
            expected: vol.len(),
            got: mask.len(),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(PerturbError::EmptyMask);
    }
    if delta == 0.0 {
        return Ok(vol.clone());
    }
    let w = boundary_weights(mask, vol.dims());
    let d = delta as f32;
    let data = vol
        .data()
        .iter()
        .zip(&w)
        .map(|(&v, &wi)| (v + wi * d).clamp(0.0, 1.0))
        .collect();
    Ok(vol.with_data(data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn dim(self) -> usize {
        self as usize
    }
}

fn flip_data<T: Copy>(data: &[T], dims: [usize; 3], axis: Axis) -> Vec<T> {
    let a = axis.dim();
    let mut out = Vec::with_capacity(data.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut p = [x, y, z];
                p[a] = dims[a] - 1 - p[a];
                out.push(data[index(dims, p[0], p[1], p[2])]);
            }
        }
    }
    out
}

/// Mirrors both grids along `axis`.
pub fn flip_axis(vol: &Volume, labels: &LabelMap, axis: Axis) -> Result<(Volume, LabelMap)> {
    if vol.dims() != labels.dims() {
        return Err(GridError::DimsMismatch {
            a: vol.dims(),
            b: labels.dims(),
        }
        .into());
    }
    let v = vol.with_data(flip_data(vol.data(), vol.dims(), axis))?;
    let l = LabelMap::new(
        labels.dims(),
        labels.spacing(),
        flip_data(labels.labels(), labels.dims(), axis),
    )?;
    Ok((v, l))
}

/// Emulates a thicker reconstruction: the volume is downsampled by `factor`
/// along z and interpolated back onto its original grid. Labels describe the
/// anatomy and are returned on the original grid unchanged.
pub fn resample_degrade(vol: &Volume, labels: &LabelMap, factor: f64) -> Result<(Volume, LabelMap)> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(PerturbError::InvalidFactor(factor));
    }
    let dims = vol.dims();
    let spacing = vol.spacing();
    let coarse_z = ((dims[2] as f64 / factor).round() as usize).max(1);
    if coarse_z == dims[2] {
        return Ok((vol.clone(), labels.clone()));
    }
    let coarse_spacing = [spacing[0], spacing[1], spacing[2] * dims[2] as f64 / coarse_z as f64];
    let coarse = resample_to(vol, [dims[0], dims[1], coarse_z], coarse_spacing)?;
    let restored = resample_to(&coarse, dims, spacing)?;
    Ok((restored, labels.clone()))
}

/// Degrades a label map with the same down-then-up path using nearest neighbours.
pub fn resample_degrade_labels(labels: &LabelMap, factor: f64) -> Result<LabelMap> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(PerturbError::InvalidFactor(factor));
    }
    let dims = labels.dims();
    let spacing = labels.spacing();
    let coarse_z = ((dims[2] as f64 / factor).round() as usize).max(1);
    let coarse_spacing = [spacing[0], spacing[1], spacing[2] * dims[2] as f64 / coarse_z as f64];
    let coarse = resample_labels_to(labels, [dims[0], dims[1], coarse_z], coarse_spacing)?;
    Ok(resample_labels_to(&coarse, dims, spacing)?)
}

/// Inserts a saturated ellipsoidal implant and 4-8 alternating bright/dark
/// streaks radiating from it within the implant's axial slab.
pub fn insert_artifact(vol: &Volume, seed: u64) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vol.dims();
    let scale = dims.iter().copied().min().unwrap_or(1) as f64 / 48.0;
    let centre: [f64; 3] = std::array::from_fn(|a| {
        let d = dims[a] as f64;
        rng.random_range(0.35 * d..0.65 * d)
    });
    let radii: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.5..3.0) * scale.max(0.25));
    let n_streaks = rng.random_range(4..=8usize);
    let streaks: Vec<(f64, f32)> = (0..n_streaks)
        .map(|k| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let amplitude = rng.random_range(0.25..0.5) as f32;
            (angle, if k % 2 == 0 { amplitude } else { -amplitude })
        })
        .collect();
    let slab = radii[2] + 1.0;
    let reach = dims[0].max(dims[1]) as f64;
    let mut data = vol.data().to_vec();
    for z in 0..dims[2] {
        let dz = z as f64 - centre[2];
        if dz.abs() > slab {
            continue;
        }
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let dx = x as f64 - centre[0];
                let dy = y as f64 - centre[1];
                let mut add = 0.0f32;
                for &(angle, amp) in &streaks {
                    let (s, c) = angle.sin_cos();
                    // Distance to the line through the centre and along it.
                    let across = (dx * s - dy * c).abs();
                    let along = (dx * c + dy * s).abs();
                    if across < 0.75 {
                        add += amp * (1.0 - along / reach).max(0.0) as f32;
                    }
                }
                let i = index(dims, x, y, z);
                data[i] = (data[i] + add).clamp(0.0, 1.0);
            }
        }
    }
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let r: f64 = (0..3).map(|a| ((p[a] - centre[a]) / radii[a]).powi(2)).sum();
                if r <= 1.0 {
                    data[index(dims, x, y, z)] = 1.0;
                }
            }
        }
    }
    // Guarantee saturation even when the ellipsoid misses every voxel centre.
    let c: [usize; 3] = std::array::from_fn(|a| centre[a].round() as usize);
    data[index(dims, c[0], c[1], c[2])] = 1.0;
    Ok(vol.with_data(data)?)
}

/// Smooth random displacement field with peak magnitude `magnitude` voxels,
/// as three x-fastest component arrays.
pub fn displacement_field(dims: [usize; 3], magnitude: f64, seed: u64) -> [Vec<f32>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let sigma = dims.iter().copied().min().unwrap_or(1) as f64 / 8.0;
    let mut field: [Vec<f32>; 3] = std::array::from_fn(|_| {
        let noise: Vec<f32> = (0..n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        gaussian_blur(&noise, dims, sigma)
    });
    let peak = (0..n)
        .map(|i| {
            (0..3)
                .map(|c| (field[c][i] as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0f64, f64::max);
    if peak > 0.0 {
        let s = (magnitude / peak) as f32;
        for c in field.iter_mut() {
            c.iter_mut().for_each(|v| *v *= s);
        }
    }
    field
}

/// Backward-warps both grids through a smooth random displacement field.
pub fn deform(
    vol: &Volume,
    labels: &LabelMap,
    magnitude: f64,
    seed: u64,
) -> Result<(Volume, LabelMap)> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(PerturbError::InvalidMagnitude(magnitude));
    }
    if vol.dims() != labels.dims() {
        return Err(GridError::DimsMismatch {
            a: vol.dims(),
            b: labels.dims(),
        }
        .into());
    }
    if magnitude == 0.0 {
        return Ok((vol.clone(), labels.clone()));
    }
    let dims = vol.dims();
    let u = displacement_field(dims, magnitude, seed);
    let n = vol.len();
    let mut data = Vec::with_capacity(n);
    let mut labs = Vec::with_capacity(n);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = index(dims, x, y, z);
                let p = [
                    x as f64 + u[0][i] as f64,
                    y as f64 + u[1][i] as f64,
                    z as f64 + u[2][i] as f64,
                ];
                data.push(sample_trilinear(vol.data(), dims, p));
                labs.push(sample_nearest(labels.labels(), dims, p));
            }
        }
    }
    Ok((
        vol.with_data(data)?,
        LabelMap::new(dims, labels.spacing(), labs)?,
    ))
}
