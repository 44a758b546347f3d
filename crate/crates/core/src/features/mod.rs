//! Per-case QA features: appearance shift, intensity shift, noise level and
//! shape quality.

mod table;

pub use table::{read_feature_csv, write_feature_csv, FeatureRow};

use crate::encoders::{EncoderError, LatentVector, TrainedDae, TrainedVae};
use crate::grid::{index, GridError, LabelMap, Volume};
use crate::stats::{dsc, StatsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("intensity mask is empty")]
    EmptyMask,
    #[error("need at least 2 reference cases, got {0}")]
    TooFewReferences(usize),
    #[error("reference latents have inconsistent dimensions")]
    InconsistentLatents,
    #[error("every cosine term involved a zero-norm latent")]
    DegenerateLatent,
    #[error("volume {volume:?} and mask {mask:?} differ in shape")]
    DimsMismatch { volume: [usize; 3], mask: [usize; 3] },
    #[error("median filter needs every dimension >= 3, got {0:?}")]
    TooSmall([usize; 3]),
    #[error("feature table: {0}")]
    Table(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// The four regression inputs of one case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub x_appr: f64,
    pub x_intensity: f64,
    pub x_noise: f64,
    pub x_shape: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 4] = ["x_appr", "x_intensity", "x_noise", "x_shape"];

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_appr, self.x_intensity, self.x_noise, self.x_shape]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            x_appr: v[0],
            x_intensity: v[1],
            x_noise: v[2],
            x_shape: v[3],
        }
    }
}

/// Latents and mean heart intensity of the common-domain reference cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonReference {
    latents: Vec<LatentVector>,
    intensity_mean: f64,
}

impl CommonReference {
    pub fn new(latents: Vec<LatentVector>, intensity_mean: f64) -> Result<Self> {
        if latents.len() < 2 {
            return Err(FeatureError::TooFewReferences(latents.len()));
        }
        let dim = latents[0].dim();
        if latents.iter().any(|z| z.dim() != dim) {
            return Err(FeatureError::InconsistentLatents);
        }
        Ok(Self {
            latents,
            intensity_mean,
        })
    }

    /// Encodes each reference image and averages its mean intensity inside
    /// the foreground of the paired label map.
    pub fn build<'a>(dae: &TrainedDae, cases: impl IntoIterator<Item = (&'a Volume, &'a LabelMap)>) -> Result<Self> {
        let mut latents = Vec::new();
        let mut total = 0.0;
        for (vol, heart) in cases {
            latents.push(dae.encode(vol)?);
            total += masked_mean(vol, heart)?;
        }
        let n = latents.len().max(1) as f64;
        Self::new(latents, total / n)
    }

    pub fn latents(&self) -> &[LatentVector] {
        &self.latents
    }

    pub fn intensity_mean(&self) -> f64 {
        self.intensity_mean
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

fn masked_mean(vol: &Volume, mask: &LabelMap) -> Result<f64> {
    if vol.dims() != mask.dims() {
        return Err(FeatureError::DimsMismatch {
            volume: vol.dims(),
            mask: mask.dims(),
        });
    }
    let labels = mask.labels();
    vol.masked_mean(|i| labels[i] != 0).ok_or(FeatureError::EmptyMask)
}

/// Mean cosine similarity between `z` and the reference latents. Terms with a
/// zero-norm latent are dropped and the mean is taken over the rest.
pub fn appearance_similarity(z: &LatentVector, reference: &CommonReference) -> Result<f64> {
    if reference.latents.iter().any(|r| r.dim() != z.dim()) {
        return Err(FeatureError::InconsistentLatents);
    }
    let nz = z.norm();
    let mut sum = 0.0;
    let mut used = 0usize;
    for r in &reference.latents {
        let nr = r.norm();
        if nz == 0.0 || nr == 0.0 {
            log::warn!("zero-norm latent excluded from appearance similarity");
            continue;
        }
        let dot: f64 = z.values().iter().zip(r.values()).map(|(&a, &b)| a as f64 * b as f64).sum();
        sum += (dot / (nz * nr)).clamp(-1.0, 1.0);
        used += 1;
    }
    if used == 0 {
        return Err(FeatureError::DegenerateLatent);
    }
    Ok(sum / used as f64)
}

pub fn x_appr(volume: &Volume, dae: &TrainedDae, reference: &CommonReference) -> Result<f64> {
    appearance_similarity(&dae.encode(volume)?, reference)
}

/// Mean intensity inside the nonzero voxels of `heart_mask`, minus the
/// reference mean.
pub fn x_intensity(volume: &Volume, heart_mask: &LabelMap, reference: &CommonReference) -> Result<f64> {
    Ok(masked_mean(volume, heart_mask)? - reference.intensity_mean)
}

/// 3x3x3 median filter with border voxels replicated outward.
pub fn median_filter(volume: &Volume) -> Result<Volume> {
    let dims = volume.dims();
    if dims.iter().any(|&d| d < 3) {
        return Err(FeatureError::TooSmall(dims));
    }
    let src = volume.data();
    let mut out = Vec::with_capacity(src.len());
    let mut window = [0.0f32; 27];
    let clamp = |v: usize, d: isize, n: usize| (v as isize + d).clamp(0, n as isize - 1) as usize;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut k = 0;
                for dz in -1..=1 {
                    let zz = clamp(z, dz, dims[2]);
                    for dy in -1..=1 {
                        let yy = clamp(y, dy, dims[1]);
                        for dx in -1..=1 {
                            window[k] = src[index(dims, clamp(x, dx, dims[0]), yy, zz)];
                            k += 1;
                        }
                    }
                }
                let (_, m, _) = window.select_nth_unstable_by(13, f32::total_cmp);
                out.push(*m);
            }
        }
    }
    Ok(volume.with_data(out)?)
}

/// Mean squared residual between the volume and its median-filtered copy.
pub fn x_noise(volume: &Volume) -> Result<f64> {
    let filtered = median_filter(volume)?;
    let s: f64 = volume
        .data()
        .iter()
        .zip(filtered.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(s / volume.len() as f64)
}

/// Mean per-structure Dice between a segmentation and its VAE reconstruction.
pub fn x_shape(s_pred: &LabelMap, vae: &TrainedVae) -> Result<f64> {
    let recon = vae.reconstruct(s_pred)?;
    Ok(dsc(s_pred, &recon)?.mean)
}

/// Features that depend on the image alone and can be shared by every
/// segmenter evaluated on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub x_appr: f64,
    pub x_noise: f64,
}

/// Trained models and reference statistics needed to featurize a case.
#[derive(Clone, Copy, Debug)]
pub struct FeatureExtractor<'a> {
    pub dae: &'a TrainedDae,
    pub vae: &'a TrainedVae,
    pub reference: &'a CommonReference,
}

impl FeatureExtractor<'_> {
    pub fn image_features(&self, volume: &Volume) -> Result<ImageFeatures> {
        Ok(ImageFeatures {
            x_appr: x_appr(volume, self.dae, self.reference)?,
            x_noise: x_noise(volume)?,
        })
    }

    /// Completes precomputed image features with the segmentation-dependent
    /// ones. The heart mask is the union of predicted structures; an empty
    /// prediction has no intensity to measure and gets `x_intensity = 0`.
    pub fn complete(&self, image: ImageFeatures, volume: &Volume, s_pred: &LabelMap) -> Result<FeatureVector> {
        let x_intensity = match x_intensity(volume, s_pred, self.reference) {
            Err(FeatureError::EmptyMask) => {
                log::warn!("empty segmentation; intensity feature set to 0");
                0.0
            }
            other => other?,
        };
        Ok(FeatureVector {
            x_appr: image.x_appr,
            x_intensity,
            x_noise: image.x_noise,
            x_shape: x_shape(s_pred, self.vae)?,
        })
    }

    pub fn extract(&self, volume: &Volume, s_pred: &LabelMap) -> Result<FeatureVector> {
        let image = self.image_features(volume)?;
        self.complete(image, volume, s_pred)
    }
}
