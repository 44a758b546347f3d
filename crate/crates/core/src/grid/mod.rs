//! Volumetric grids: intensity volumes, label maps and their one-hot form,
//! plus the preprocessing pipeline and on-disk format.

mod filter;
mod io;
mod preprocess;

pub use filter::{gaussian_blur, sample_nearest, sample_trilinear};
pub use io::{read_labels, read_volume, write_labels, write_volume};
pub use preprocess::{crop_roi, label_bbox, normalize, resample, resample_labels, resample_labels_to, resample_to, RoiCrop};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of label classes including background.
pub const NUM_LABELS: usize = 10;
/// Number of foreground structures.
pub const NUM_STRUCTURES: usize = NUM_LABELS - 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("spacing must be positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("grid has a zero dimension: {0:?}")]
    EmptyGrid([usize; 3]),
    #[error("payload length mismatch: expected {expected} elements, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid dimensions differ: {a:?} vs {b:?}")]
    DimsMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("label value {0} out of range 0..{NUM_LABELS}")]
    LabelOutOfRange(u8),
    #[error("label map contains no foreground voxels")]
    AllBackground,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GridError>;

/// Linear index of voxel `(x, y, z)` in x-fastest order.
#[inline]
pub fn index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn check_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(GridError::EmptyGrid(dims));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(GridError::InvalidSpacing(spacing));
    }
    Ok(())
}

/// Scalar intensity grid with physical spacing in mm per voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(GridError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[index(self.dims, x, y, z)]
    }

    /// Copy with the same geometry and new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.spacing, data)
    }

    /// Mean intensity over voxels where `mask` is true; `None` for an empty mask.
    pub fn masked_mean(&self, mask: impl Fn(usize) -> bool) -> Option<f64> {
        let (sum, n) = self
            .data
            .iter()
            .enumerate()
            .filter(|(i, _)| mask(*i))
            .fold((0.0f64, 0usize), |(s, n), (_, &v)| (s + v as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Integer structure labels, `0` is background and `1..=9` are structures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    dims: [usize; 3],
    spacing: [f64; 3],
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let expected = dims.iter().product();
        if labels.len() != expected {
            return Err(GridError::LengthMismatch {
                expected,
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_LABELS) {
            return Err(GridError::LabelOutOfRange(bad));
        }
        Ok(Self { dims, spacing, labels })
    }

    pub fn background(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, vec![0; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Mutable access; callers must keep values below [`NUM_LABELS`].
    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[index(self.dims, x, y, z)]
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Voxel count per label value.
    pub fn histogram(&self) -> [usize; NUM_LABELS] {
        let mut h = [0; NUM_LABELS];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Foreground (any structure) mask.
    pub fn foreground_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    pub fn one_hot(&self) -> OneHotMap {
        let n = self.labels.len();
        let mut channels = vec![0.0f32; NUM_LABELS * n];
        for (i, &l) in self.labels.iter().enumerate() {
            channels[l as usize * n + i] = 1.0;
        }
        OneHotMap {
            dims: self.dims,
            channels,
        }
    }
}

/// Per-class probability channels, channel-major (`channel * n + voxel`).
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotMap {
    dims: [usize; 3],
    channels: Vec<f32>,
}

impl OneHotMap {
    /// Wraps probability channels; every voxel must sum to one within 1e-6.
    pub fn from_probabilities(dims: [usize; 3], channels: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if channels.len() != NUM_LABELS * n {
            return Err(GridError::LengthMismatch {
                expected: NUM_LABELS * n,
                got: channels.len(),
            });
        }
        for i in 0..n {
            let s: f64 = (0..NUM_LABELS).map(|c| channels[c * n + i] as f64).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(GridError::Header(format!(
                    "voxel {i} probabilities sum to {s}"
                )));
            }
        }
        Ok(Self { dims, channels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> &[f32] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.channels.len() / NUM_LABELS;
        &self.channels[c * n..(c + 1) * n]
    }

    /// Per-voxel argmax; ties resolve to the lower label.
    pub fn argmax(&self, spacing: [f64; 3]) -> Result<LabelMap> {
        let n = self.channels.len() / NUM_LABELS;
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..NUM_LABELS {
                    if self.channels[c * n + i] > self.channels[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap::new(self.dims, spacing, labels)
    }
}
