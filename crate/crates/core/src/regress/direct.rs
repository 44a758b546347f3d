use super::{RegressError, Result};
use crate::container::Container;
use crate::encoders::EncoderError;
use crate::grid::{LabelMap, Volume, NUM_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segqa_nnet::{
    load_checkpoint, save_checkpoint, softmax_cross_entropy, Adam, AdamConfig, LayerSpec, Mode, Network, Tensor,
};
use serde::{Deserialize, Serialize};

/// Number of Dice classes; class `k` stands for a Dice of `k / 100`.
pub const DIRECT_BINS: usize = 100;

/// Inputs are average-pooled by this factor before entering the network.
const INPUT_POOL: usize = 4;

/// Width of each branch's output.
const BRANCH_WIDTH: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectNetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DirectNetConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Minimum number of training pairs.
pub const MIN_PAIRS: usize = 20;

/// Two convolutional branches, one for the image and one for the one-hot
/// segmentation, concatenated and classified into Dice bins.
#[derive(Clone, Debug)]
pub struct DirectNet {
    edge: usize,
    pub config: DirectNetConfig,
    image_branch: Network<f32>,
    label_branch: Network<f32>,
    head: Network<f32>,
    /// Mean cross-entropy per epoch.
    pub history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DirectMeta {
    edge: usize,
    config: DirectNetConfig,
    history: Vec<f64>,
}

fn conv(i: usize, o: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv3d {
        in_channels: i,
        out_channels: o,
        kernel: 3,
        stride,
        padding: 1,
    }
}

fn branch_specs(in_channels: usize) -> Vec<LayerSpec> {
    vec![
        conv(in_channels, 8, 1),
        LayerSpec::Relu,
        conv(8, BRANCH_WIDTH, 2),
        LayerSpec::Relu,
        conv(BRANCH_WIDTH, BRANCH_WIDTH, 1),
        LayerSpec::Relu,
    ]
}

fn head_specs(edge: usize) -> Vec<LayerSpec> {
    let b = edge / (INPUT_POOL * 4);
    vec![
        conv(2 * BRANCH_WIDTH, 32, 2),
        LayerSpec::Relu,
        conv(32, 32, 1),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 32 * b * b * b,
            outputs: 64,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 64,
            outputs: DIRECT_BINS,
        },
    ]
}

fn edge_of(dims: [usize; 3]) -> Result<usize> {
    if dims[0] == dims[1] && dims[1] == dims[2] && dims[0] >= 16 && dims[0] % 16 == 0 {
        Ok(dims[0])
    } else {
        Err(EncoderError::UnsupportedGrid(dims).into())
    }
}

struct Pooled {
    image: Tensor<f32>,
    labels: Tensor<f32>,
}

fn pool(volume: &Volume, labels: &LabelMap, edge: usize) -> Result<Pooled> {
    if volume.dims() != [edge; 3] || labels.dims() != [edge; 3] {
        return Err(EncoderError::GridMismatch {
            expected: [edge; 3],
            got: if volume.dims() != [edge; 3] { volume.dims() } else { labels.dims() },
        }
        .into());
    }
    let p = edge / INPUT_POOL;
    let pooler = |channels: usize| {
        Network::<f32>::new(
            &[channels, edge, edge, edge],
            vec![LayerSpec::AvgPool { factor: INPUT_POOL }],
            0,
        )
    };
    let image = pooler(1)
        .map_err(EncoderError::from)?
        .forward(&Tensor::from_vec(&[1, edge, edge, edge], volume.data().to_vec()))
        .map_err(EncoderError::from)?;
    let labels = pooler(NUM_LABELS)
        .map_err(EncoderError::from)?
        .forward(&Tensor::from_vec(
            &[NUM_LABELS, edge, edge, edge],
            labels.one_hot().channels().to_vec(),
        ))
        .map_err(EncoderError::from)?;
    Ok(Pooled {
        image: image.reshaped(&[1, p, p, p]),
        labels: labels.reshaped(&[NUM_LABELS, p, p, p]),
    })
}

fn target_bin(dice: f64) -> usize {
    ((dice * DIRECT_BINS as f64).floor() as usize).min(DIRECT_BINS - 1)
}

/// Trains with softmax cross-entropy against the Dice bin of each pair.
pub fn fit_direct_net(pairs: &[(&Volume, &LabelMap)], targets: &[f64], config: &DirectNetConfig) -> Result<DirectNet> {
    if pairs.len() != targets.len() {
        return Err(RegressError::TargetCount(pairs.len(), targets.len()));
    }
    if pairs.len() < MIN_PAIRS {
        return Err(RegressError::TooFewRows {
            method: "direct network",
            needed: MIN_PAIRS,
            got: pairs.len(),
        });
    }
    if let Some((row, &value)) = targets.iter().enumerate().find(|(_, t)| !(0.0..=1.0).contains(*t)) {
        return Err(RegressError::TargetRange { row, value });
    }
    if config.epochs == 0 || config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(RegressError::InvalidConfig(format!("{config:?}")));
    }
    let edge = edge_of(pairs[0].0.dims())?;
    let inputs: Vec<Pooled> = pairs.iter().map(|(v, l)| pool(v, l, edge)).collect::<Result<_>>()?;
    let p = edge / INPUT_POOL;
    let nn = |e: segqa_nnet::NnError| RegressError::from(EncoderError::from(e));
    let mut image_branch = Network::<f32>::new(&[1, p, p, p], branch_specs(1), config.seed).map_err(nn)?;
    let mut label_branch =
        Network::<f32>::new(&[NUM_LABELS, p, p, p], branch_specs(NUM_LABELS), config.seed.wrapping_add(1)).map_err(nn)?;
    let h = p / 2;
    let mut head = Network::<f32>::new(&[2 * BRANCH_WIDTH, h, h, h], head_specs(edge), config.seed.wrapping_add(2))
        .map_err(nn)?;
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut opts = [
        Adam::new(&image_branch, adam),
        Adam::new(&label_branch, adam),
        Adam::new(&head, adam),
    ];
    let bins: Vec<usize> = targets.iter().map(|&t| target_bin(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            image_branch.zero_grad();
            label_branch.zero_grad();
            head.zero_grad();
            for &i in batch {
                let a = image_branch.forward_train(&inputs[i].image, Mode::Eval).map_err(nn)?;
                let b = label_branch.forward_train(&inputs[i].labels, Mode::Eval).map_err(nn)?;
                let mut joined = a.into_data();
                let split = joined.len();
                joined.extend_from_slice(b.data());
                let logits = head
                    .forward_train(&Tensor::from_vec(&[2 * BRANCH_WIDTH, h, h, h], joined), Mode::Eval)
                    .map_err(nn)?;
                let (loss, grad) = softmax_cross_entropy(logits.data(), bins[i]);
                if !loss.is_finite() {
                    return Err(EncoderError::Diverged { epoch, loss }.into());
                }
                total += loss;
                let g = head.backward(&Tensor::from_vec(&[DIRECT_BINS], grad)).map_err(nn)?;
                let (ga, gb) = g.data().split_at(split);
                image_branch
                    .backward(&Tensor::from_vec(&[BRANCH_WIDTH, h, h, h], ga.to_vec()))
                    .map_err(nn)?;
                label_branch
                    .backward(&Tensor::from_vec(&[BRANCH_WIDTH, h, h, h], gb.to_vec()))
                    .map_err(nn)?;
            }
            let scale = 1.0 / batch.len() as f32;
            for (net, opt) in [&mut image_branch, &mut label_branch, &mut head].into_iter().zip(opts.iter_mut()) {
                net.scale_grads(scale);
                opt.step(net).map_err(nn)?;
            }
        }
        history.push(total / pairs.len() as f64);
    }
    Ok(DirectNet {
        edge,
        config: config.clone(),
        image_branch,
        label_branch,
        head,
        history,
    })
}

impl DirectNet {
    /// Bin scores for one pair.
    pub fn logits(&self, volume: &Volume, labels: &LabelMap) -> Result<Vec<f32>> {
        let nn = |e: segqa_nnet::NnError| RegressError::from(EncoderError::from(e));
        let x = pool(volume, labels, self.edge)?;
        let mut joined = self.image_branch.forward(&x.image).map_err(nn)?.into_data();
        joined.extend_from_slice(self.label_branch.forward(&x.labels).map_err(nn)?.data());
        let h = self.edge / INPUT_POOL / 2;
        Ok(self
            .head
            .forward(&Tensor::from_vec(&[2 * BRANCH_WIDTH, h, h, h], joined))
            .map_err(nn)?
            .into_data())
    }

    /// Predicted Dice: the most likely bin over 100, ties to the lower bin.
    pub fn predict(&self, volume: &Volume, labels: &LabelMap) -> Result<f64> {
        let logits = self.logits(volume, labels)?;
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        Ok(best as f64 / DIRECT_BINS as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut c = Container::new();
        c.push_json(
            "meta",
            &DirectMeta {
                edge: self.edge,
                config: self.config.clone(),
                history: self.history.clone(),
            },
        )
        .push("image_branch", save_checkpoint(&self.image_branch))
        .push("label_branch", save_checkpoint(&self.label_branch))
        .push("head", save_checkpoint(&self.head));
        c.encode(*b"SQDN", 1)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, *b"SQDN", 1)?;
        let meta: DirectMeta = c.get_json("meta")?;
        let nn = |e: segqa_nnet::NnError| RegressError::from(EncoderError::from(e));
        Ok(Self {
            edge: meta.edge,
            config: meta.config,
            image_branch: load_checkpoint(c.get("image_branch")?).map_err(nn)?,
            label_branch: load_checkpoint(c.get("label_branch")?).map_err(nn)?,
            head: load_checkpoint(c.get("head")?).map_err(nn)?,
            history: meta.history,
        })
    }
}
