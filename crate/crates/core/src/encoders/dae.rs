use super::arch::{cube_edge, dae_decoder_specs, encoder_specs, pool_volume, POOL};
use super::{EncoderError, EpochStats, LatentVector, Result};
use crate::container::Container;
use crate::grid::Volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use segqa_nnet::{load_checkpoint, mse_loss, save_checkpoint, Adam, AdamConfig, Mode, Network, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaeConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Corruption standard deviation is drawn per batch from `[noise_min, noise_max]`.
    pub noise_min: f64,
    pub noise_max: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            epochs: 40,
            batch_size: 4,
            learning_rate: 1e-3,
            noise_min: 0.01,
            noise_max: 0.1,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl DaeConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.latent_dim > 0
            && self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..=self.noise_max).contains(&self.noise_min)
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(EncoderError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Minimum number of training volumes.
pub const MIN_TRAINING: usize = 10;

/// Trained image autoencoder.
#[derive(Clone, Debug)]
pub struct TrainedDae {
    edge: usize,
    pub config: DaeConfig,
    encoder: Network<f32>,
    decoder: Network<f32>,
    mean_image: Vec<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Validation MSE of the retained snapshot.
    pub validation_mse: f64,
    /// Validation MSE of predicting the training mean image.
    pub baseline_mse: f64,
}

#[derive(Serialize, Deserialize)]
struct DaeMeta {
    edge: usize,
    config: DaeConfig,
    history: Vec<EpochStats>,
    best_epoch: usize,
    validation_mse: f64,
    baseline_mse: f64,
}

/// Splits `n` indices into shuffled training and validation sets.
pub(crate) fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Cosine decay from `base` to a twentieth of it over `epochs`.
pub(crate) fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    let t = epoch as f64 / epochs.max(1) as f64;
    base * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

pub(crate) fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
}

/// Trains on clean volumes corrupted by additive Gaussian noise, keeping the
/// snapshot with the lowest validation MSE.
pub fn train_dae(volumes: &[&Volume], config: &DaeConfig) -> Result<TrainedDae> {
    config.validate()?;
    if volumes.len() < MIN_TRAINING {
        return Err(EncoderError::TooFewSamples {
            needed: MIN_TRAINING,
            got: volumes.len(),
        });
    }
    let dims = volumes[0].dims();
    let edge = cube_edge(dims)?;
    for v in volumes {
        if v.dims() != dims {
            return Err(EncoderError::GridMismatch {
                expected: dims,
                got: v.dims(),
            });
        }
    }
    let p = edge / POOL;
    let in_shape = [1, p, p, p];
    let out_shape = [1, edge, edge, edge];
    let inputs: Vec<Vec<f32>> = volumes.iter().map(|v| pool_volume(v)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train, val) = split_indices(volumes.len(), config.validation_fraction, &mut rng);

    let mean_image = {
        let mut acc = vec![0.0f64; volumes[0].len()];
        for &i in &train {
            for (m, &v) in acc.iter_mut().zip(volumes[i].data()) {
                *m += v as f64;
            }
        }
        acc.iter().map(|m| (m / train.len() as f64) as f32).collect::<Vec<f32>>()
    };
    // The decoder predicts the departure from the training mean image.
    let targets: Vec<Tensor<f32>> = volumes
        .iter()
        .map(|v| {
            let r = v.data().iter().zip(&mean_image).map(|(&x, &m)| x - m).collect();
            Tensor::from_vec(&out_shape, r)
        })
        .collect();

    let mut encoder = Network::<f32>::new(
        &in_shape,
        encoder_specs(1, [8, 16, 16], edge, config.latent_dim),
        config.seed,
    )?;
    let mut decoder = Network::<f32>::new(
        &[config.latent_dim],
        dae_decoder_specs(edge, config.latent_dim),
        config.seed.wrapping_add(1),
    )?;
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_opt = Adam::new(&encoder, adam);
    let mut dec_opt = Adam::new(&decoder, adam);

    let baseline_mse = {
        let total: f64 = val
            .iter()
            .map(|&i| super::dae_loss(volumes[i].data(), &mean_image))
            .sum::<Result<f64>>()?;
        total / val.len() as f64
    };

    let validate = |enc: &Network<f32>, dec: &Network<f32>| -> Result<f64> {
        let mut total = 0.0;
        for &i in &val {
            let z = enc.forward(&Tensor::from_vec(&in_shape, inputs[i].clone()))?;
            let out = dec.forward(&z)?;
            total += super::dae_loss(out.data(), targets[i].data())?;
        }
        Ok(total / val.len() as f64)
    };

    // Pooling averages POOL^3 voxels, which scales independent noise by this factor.
    let pooled_noise = 1.0 / ((POOL * POOL * POOL) as f64).sqrt();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, encoder.clone(), decoder.clone());
    for epoch in 0..config.epochs {
        shuffle(&mut train, &mut rng);
        let lr = cosine_lr(config.learning_rate, epoch, config.epochs);
        enc_opt.config.lr = lr;
        dec_opt.config.lr = lr;
        let mut epoch_loss = 0.0;
        for batch in train.chunks(config.batch_size) {
            let sigma = rng.random_range(config.noise_min..=config.noise_max) * pooled_noise;
            encoder.zero_grad();
            decoder.zero_grad();
            for &i in batch {
                let noisy: Vec<f32> = inputs[i]
                    .iter()
                    .map(|&v| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        v + (sigma * e) as f32
                    })
                    .collect();
                let z = encoder.forward_train(&Tensor::from_vec(&in_shape, noisy), Mode::Eval)?;
                let out = decoder.forward_train(&z, Mode::Eval)?;
                let (loss, grad) = mse_loss(&out, &targets[i]);
                if !loss.is_finite() {
                    return Err(EncoderError::Diverged { epoch, loss });
                }
                epoch_loss += loss;
                let gz = decoder.backward(&grad)?;
                encoder.backward(&gz)?;
            }
            let scale = 1.0 / batch.len() as f32;
            encoder.scale_grads(scale);
            decoder.scale_grads(scale);
            enc_opt.step(&mut encoder)?;
            dec_opt.step(&mut decoder)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let validation_loss = validate(&encoder, &decoder)?;
        if !validation_loss.is_finite() {
            return Err(EncoderError::Diverged {
                epoch,
                loss: validation_loss,
            });
        }
        log::debug!("dae epoch {epoch}: train {train_loss:.6} validation {validation_loss:.6}");
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best.0 {
            best = (validation_loss, epoch, encoder.clone(), decoder.clone());
        }
    }
    let (validation_mse, best_epoch, encoder, decoder) = best;
    Ok(TrainedDae {
        edge,
        config: config.clone(),
        encoder,
        decoder,
        mean_image,
        history,
        best_epoch,
        validation_mse,
        baseline_mse,
    })
}

impl TrainedDae {
    pub fn edge(&self) -> usize {
        self.edge
    }

    fn check(&self, vol: &Volume) -> Result<()> {
        let expected = [self.edge; 3];
        if vol.dims() != expected {
            return Err(EncoderError::GridMismatch {
                expected,
                got: vol.dims(),
            });
        }
        Ok(())
    }

    /// Latent code of a preprocessed volume.
    pub fn encode(&self, vol: &Volume) -> Result<LatentVector> {
        self.check(vol)?;
        let p = self.edge / POOL;
        let z = self
            .encoder
            .forward(&Tensor::from_vec(&[1, p, p, p], pool_volume(vol)?))?;
        Ok(LatentVector(z.into_data()))
    }

    /// Decoded reconstruction of a volume.
    pub fn reconstruct(&self, vol: &Volume) -> Result<Volume> {
        let z = self.encode(vol)?;
        let out = self.decoder.forward(&Tensor::from_vec(&[z.dim()], z.0))?;
        let data = out
            .data()
            .iter()
            .zip(&self.mean_image)
            .map(|(&r, &m)| (r + m).clamp(0.0, 1.0))
            .collect();
        Ok(vol.with_data(data)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut c = Container::new();
        c.push_json(
            "meta",
            &DaeMeta {
                edge: self.edge,
                config: self.config.clone(),
                history: self.history.clone(),
                best_epoch: self.best_epoch,
                validation_mse: self.validation_mse,
                baseline_mse: self.baseline_mse,
            },
        )
        .push("encoder", save_checkpoint(&self.encoder))
        .push("decoder", save_checkpoint(&self.decoder))
        .push("mean_image", self.mean_image.iter().flat_map(|v| v.to_le_bytes()).collect());
        c.encode(*b"SDAE", 1)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, *b"SDAE", 1)?;
        let meta: DaeMeta = c.get_json("meta")?;
        Ok(Self {
            edge: meta.edge,
            config: meta.config,
            encoder: load_checkpoint(c.get("encoder")?)?,
            decoder: load_checkpoint(c.get("decoder")?)?,
            mean_image: read_f32s(c.get("mean_image")?, meta.edge.pow(3))?,
            history: meta.history,
            best_epoch: meta.best_epoch,
            validation_mse: meta.validation_mse,
            baseline_mse: meta.baseline_mse,
        })
    }
}

fn read_f32s(bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != 4 * expected {
        return Err(EncoderError::LengthMismatch(bytes.len(), 4 * expected));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}
