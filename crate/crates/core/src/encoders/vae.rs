use super::arch::{cube_edge, encoder_specs, pool_labels, vae_decoder_specs, POOL};
use super::dae::{cosine_lr, shuffle, split_indices};
use super::{kl_divergence, soft_dice_grad, soft_dice_loss, EncoderError, EpochStats, LatentVector, Result, VaeLoss};
use crate::container::Container;
use crate::grid::{LabelMap, NUM_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segqa_nnet::{
    load_checkpoint, sample_gaussian, save_checkpoint, Adam, AdamConfig, LayerSpec, Mode, Network, Tensor,
    UpsampleMode,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier on the KL term of the objective.
    pub kl_weight: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            epochs: 40,
            batch_size: 4,
            learning_rate: 2e-3,
            kl_weight: 3e-4,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl VaeConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.latent_dim > 0
            && self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.kl_weight >= 0.0
            && (0.0..1.0).contains(&self.validation_fraction);
        if ok {
            Ok(())
        } else {
            Err(EncoderError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Minimum number of training label maps.
pub const MIN_TRAINING: usize = 10;

/// Trained label-map variational autoencoder.
#[derive(Clone, Debug)]
pub struct TrainedVae {
    edge: usize,
    pub config: VaeConfig,
    encoder: Network<f32>,
    decoder: Network<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Validation objective of the retained snapshot, decoded from the mean.
    pub validation: VaeLoss,
}

#[derive(Serialize, Deserialize)]
struct VaeMeta {
    edge: usize,
    config: VaeConfig,
    history: Vec<EpochStats>,
    best_epoch: usize,
    validation: VaeLoss,
}

fn evaluate(
    enc: &Network<f32>,
    dec: &Network<f32>,
    input: &Tensor<f32>,
    latent: usize,
    kl_weight: f64,
) -> Result<VaeLoss> {
    let h = enc.forward(input)?;
    let (mu, log_sigma) = h.data().split_at(latent);
    let prob = dec.forward(&Tensor::from_vec(&[latent], mu.to_vec()))?;
    let dice = soft_dice_loss(input.data(), prob.data(), NUM_LABELS)?;
    let kl = kl_divergence(mu, log_sigma)?;
    Ok(VaeLoss {
        dice,
        kl,
        total: dice + kl_weight * kl,
    })
}

/// Trains on one-hot label maps with a soft-Dice reconstruction term and a
/// weighted KL term, keeping the snapshot with the lowest validation objective.
pub fn train_vae(labels: &[&LabelMap], config: &VaeConfig) -> Result<TrainedVae> {
    config.validate()?;
    if labels.len() < MIN_TRAINING {
        return Err(EncoderError::TooFewSamples {
            needed: MIN_TRAINING,
            got: labels.len(),
        });
    }
    let dims = labels[0].dims();
    let edge = cube_edge(dims)?;
    for l in labels {
        if l.dims() != dims {
            return Err(EncoderError::GridMismatch {
                expected: dims,
                got: l.dims(),
            });
        }
    }
    let p = edge / POOL;
    let in_shape = [NUM_LABELS, p, p, p];
    let latent = config.latent_dim;
    let inputs: Vec<Tensor<f32>> = labels
        .iter()
        .map(|l| Ok(Tensor::from_vec(&in_shape, pool_labels(l)?)))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train, val) = split_indices(labels.len(), config.validation_fraction, &mut rng);

    let mut encoder = Network::<f32>::new(
        &in_shape,
        encoder_specs(NUM_LABELS, [8, 16, 32], edge, 2 * latent),
        config.seed,
    )?;
    let mut decoder = Network::<f32>::new(
        &[latent],
        vae_decoder_specs(edge, latent, NUM_LABELS),
        config.seed.wrapping_add(1),
    )?;
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_opt = Adam::new(&encoder, adam);
    let mut dec_opt = Adam::new(&decoder, adam);
    let w = config.kl_weight;

    let validate = |enc: &Network<f32>, dec: &Network<f32>| -> Result<VaeLoss> {
        let mut acc = VaeLoss {
            dice: 0.0,
            kl: 0.0,
            total: 0.0,
        };
        for &i in &val {
            let l = evaluate(enc, dec, &inputs[i], latent, w)?;
            acc.dice += l.dice;
            acc.kl += l.kl;
            acc.total += l.total;
        }
        let n = val.len() as f64;
        Ok(VaeLoss {
            dice: acc.dice / n,
            kl: acc.kl / n,
            total: acc.total / n,
        })
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(VaeLoss, usize, Network<f32>, Network<f32>)> = None;
    for epoch in 0..config.epochs {
        shuffle(&mut train, &mut rng);
        let lr = cosine_lr(config.learning_rate, epoch, config.epochs);
        enc_opt.config.lr = lr;
        dec_opt.config.lr = lr;
        let mut epoch_loss = 0.0;
        for batch in train.chunks(config.batch_size) {
            encoder.zero_grad();
            decoder.zero_grad();
            for &i in batch {
                let h = encoder.forward_train(&inputs[i], Mode::Eval)?;
                let (mu, log_sigma) = h.data().split_at(latent);
                let (z, eps) = sample_gaussian(mu, log_sigma, rng.random());
                let prob = decoder.forward_train(&Tensor::from_vec(&[latent], z), Mode::Eval)?;
                let target = inputs[i].data();
                let loss = soft_dice_loss(target, prob.data(), NUM_LABELS)? + w * kl_divergence(mu, log_sigma)?;
                if !loss.is_finite() {
                    return Err(EncoderError::Diverged { epoch, loss });
                }
                epoch_loss += loss;
                let grad = soft_dice_grad(target, prob.data(), NUM_LABELS)?;
                let gz = decoder.backward(&Tensor::from_vec(&[NUM_LABELS, p, p, p], grad))?;
                let gz = gz.data();
                let wf = w as f32;
                let mut gh = Vec::with_capacity(2 * latent);
                gh.extend((0..latent).map(|k| gz[k] + wf * mu[k]));
                gh.extend((0..latent).map(|k| {
                    let sigma = log_sigma[k].exp();
                    gz[k] * sigma * eps[k] + wf * (sigma * sigma - 1.0)
                }));
                encoder.backward(&Tensor::from_vec(&[2 * latent], gh))?;
            }
            let scale = 1.0 / batch.len() as f32;
            encoder.scale_grads(scale);
            decoder.scale_grads(scale);
            enc_opt.step(&mut encoder)?;
            dec_opt.step(&mut decoder)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let v = validate(&encoder, &decoder)?;
        if !v.total.is_finite() {
            return Err(EncoderError::Diverged { epoch, loss: v.total });
        }
        log::debug!(
            "vae epoch {epoch}: train {train_loss:.5} validation dice {:.5} kl {:.3}",
            v.dice,
            v.kl
        );
        history.push(EpochStats {
            epoch,
            train_loss,
            validation_loss: v.total,
        });
        if best.as_ref().is_none_or(|b| v.total < b.0.total) {
            best = Some((v, epoch, encoder.clone(), decoder.clone()));
        }
    }
    let (validation, best_epoch, encoder, decoder) = best.expect("at least one epoch");
    Ok(TrainedVae {
        edge,
        config: config.clone(),
        encoder,
        decoder,
        history,
        best_epoch,
        validation,
    })
}

impl TrainedVae {
    pub fn edge(&self) -> usize {
        self.edge
    }

    fn pooled_input(&self, labels: &LabelMap) -> Result<Tensor<f32>> {
        let expected = [self.edge; 3];
        if labels.dims() != expected {
            return Err(EncoderError::GridMismatch {
                expected,
                got: labels.dims(),
            });
        }
        let p = self.edge / POOL;
        Ok(Tensor::from_vec(&[NUM_LABELS, p, p, p], pool_labels(labels)?))
    }

    /// Posterior mean and log standard deviation.
    pub fn encode(&self, labels: &LabelMap) -> Result<(LatentVector, LatentVector)> {
        let h = self.encoder.forward(&self.pooled_input(labels)?)?.into_data();
        let (mu, log_sigma) = h.split_at(self.config.latent_dim);
        Ok((LatentVector(mu.to_vec()), LatentVector(log_sigma.to_vec())))
    }

    /// Full-resolution class probabilities decoded from the posterior mean,
    /// channel-major `[10, s, s, s]`.
    pub fn probabilities(&self, labels: &LabelMap) -> Result<Vec<f32>> {
        let (mu, _) = self.encode(labels)?;
        let prob = self.decoder.forward(&Tensor::from_vec(&[mu.dim()], mu.0))?;
        let up = Network::<f32>::new(
            prob.shape(),
            vec![LayerSpec::Upsample {
                factor: POOL,
                mode: UpsampleMode::Trilinear,
            }],
            0,
        )?;
        Ok(up.forward(&prob)?.into_data())
    }

    /// Most probable label per voxel of the reconstruction; ties go to the
    /// lower label.
    pub fn reconstruct(&self, labels: &LabelMap) -> Result<LabelMap> {
        let prob = self.probabilities(labels)?;
        let n = labels.len();
        let out = (0..n)
            .map(|i| {
                let mut best = 0u8;
                for c in 1..NUM_LABELS {
                    if prob[c * n + i] > prob[best as usize * n + i] {
                        best = c as u8;
                    }
                }
                best
            })
            .collect();
        Ok(LabelMap::new(labels.dims(), labels.spacing(), out)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut c = Container::new();
        c.push_json(
            "meta",
            &VaeMeta {
                edge: self.edge,
                config: self.config.clone(),
                history: self.history.clone(),
                best_epoch: self.best_epoch,
                validation: self.validation,
            },
        )
        .push("encoder", save_checkpoint(&self.encoder))
        .push("decoder", save_checkpoint(&self.decoder));
        c.encode(*b"SVAE", 1)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, *b"SVAE", 1)?;
        let meta: VaeMeta = c.get_json("meta")?;
        Ok(Self {
            edge: meta.edge,
            config: meta.config,
            encoder: load_checkpoint(c.get("encoder")?)?,
            decoder: load_checkpoint(c.get("decoder")?)?,
            history: meta.history,
            best_epoch: meta.best_epoch,
            validation: meta.validation,
        })
    }
}
