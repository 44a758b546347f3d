//! Image denoising autoencoder and segmentation variational autoencoder.
//!
//! Both run on inputs average-pooled by two per axis; decoder outputs are
//! trilinearly upsampled back to the full grid. The DAE latent describes
//! image appearance, the VAE models plausible label-map shapes.

mod arch;
mod dae;
mod vae;

pub use arch::{pool_labels, pool_volume, POOL};
pub use dae::{train_dae, DaeConfig, TrainedDae};
pub use vae::{train_vae, TrainedVae, VaeConfig};

use crate::container::ContainerError;
use crate::grid::GridError;
use segqa_nnet::{NnError, Real};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} training samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("grid {0:?} unsupported: encoders need a cube whose edge is a multiple of 16")]
    UnsupportedGrid([usize; 3]),
    #[error("input grid {got:?} does not match the model's {expected:?}")]
    GridMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

/// Fixed-dimension latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Mean squared error over all elements.
pub fn dae_loss<T: Real>(input: &[T], output: &[T]) -> Result<f64> {
    if input.len() != output.len() {
        return Err(EncoderError::LengthMismatch(input.len(), output.len()));
    }
    let s: f64 = input
        .iter()
        .zip(output)
        .map(|(g, p)| (g.as_f64() - p.as_f64()).powi(2))
        .sum();
    Ok(s / input.len() as f64)
}

/// Smoothing term added to soft-Dice numerators and denominators.
pub const DICE_EPS: f64 = 1e-6;

/// Components of the VAE objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub dice: f64,
    pub kl: f64,
    pub total: f64,
}

/// `-0.5 * sum(2 log_sigma - sigma^2 - mu^2 + 1)`.
pub fn kl_divergence<T: Real>(mu: &[T], log_sigma: &[T]) -> Result<f64> {
    if mu.len() != log_sigma.len() {
        return Err(EncoderError::LengthMismatch(mu.len(), log_sigma.len()));
    }
    Ok(mu
        .iter()
        .zip(log_sigma)
        .map(|(m, s)| {
            let (m, s) = (m.as_f64(), s.as_f64());
            -0.5 * (2.0 * s - (2.0 * s).exp() - m * m + 1.0)
        })
        .sum())
}

/// Mean over classes of `1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps)`.
/// Both maps are channel-major with `classes` channels.
pub fn soft_dice_loss<T: Real>(target: &[T], prob: &[T], classes: usize) -> Result<f64> {
    Ok(dice_terms(target, prob, classes)?
        .iter()
        .map(|(num, den)| 1.0 - num / den)
        .sum::<f64>()
        / classes as f64)
}

fn dice_terms<T: Real>(target: &[T], prob: &[T], classes: usize) -> Result<Vec<(f64, f64)>> {
    if target.len() != prob.len() {
        return Err(EncoderError::LengthMismatch(target.len(), prob.len()));
    }
    if classes == 0 || target.len() % classes != 0 {
        return Err(EncoderError::LengthMismatch(target.len(), classes));
    }
    let n = target.len() / classes;
    Ok((0..classes)
        .map(|c| {
            let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
            for i in c * n..(c + 1) * n {
                let (g, p) = (target[i].as_f64(), prob[i].as_f64());
                pg += p * g;
                pp += p * p;
                gg += g * g;
            }
            (2.0 * pg + DICE_EPS, pp + gg + DICE_EPS)
        })
        .collect())
}

/// Gradient of [`soft_dice_loss`] with respect to `prob`.
pub fn soft_dice_grad<T: Real>(target: &[T], prob: &[T], classes: usize) -> Result<Vec<T>> {
    let terms = dice_terms(target, prob, classes)?;
    let n = target.len() / classes;
    let scale = 1.0 / classes as f64;
    Ok((0..target.len())
        .map(|i| {
            let (num, den) = terms[i / n];
            let (g, p) = (target[i].as_f64(), prob[i].as_f64());
            // d/dp of -(num/den) with d num = 2g, d den = 2p.
            T::from_f64_lossy(-scale * (2.0 * g * den - num * 2.0 * p) / (den * den))
        })
        .collect())
}

/// Soft Dice over `classes` channels plus the KL term with unit weight.
pub fn vae_loss<T: Real>(
    target: &[T],
    prob: &[T],
    mu: &[T],
    log_sigma: &[T],
    classes: usize,
) -> Result<VaeLoss> {
    let dice = soft_dice_loss(target, prob, classes)?;
    let kl = kl_divergence(mu, log_sigma)?;
    Ok(VaeLoss {
        dice,
        kl,
        total: dice + kl,
    })
}
