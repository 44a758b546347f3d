use super::{EncoderError, Result};
use crate::grid::{index, LabelMap, Volume, NUM_LABELS};
use segqa_nnet::{LayerSpec, UpsampleMode};

/// Average-pooling factor applied to encoder inputs.
pub const POOL: usize = 2;

/// Edge length of a supported cubic grid.
pub(crate) fn cube_edge(dims: [usize; 3]) -> Result<usize> {
    if dims[0] == dims[1] && dims[1] == dims[2] && dims[0] >= 16 && dims[0] % 16 == 0 {
        Ok(dims[0])
    } else {
        Err(EncoderError::UnsupportedGrid(dims))
    }
}

fn pool_channel(src: &[f32], dims: [usize; 3], out: &mut Vec<f32>) {
    let p = [dims[0] / POOL, dims[1] / POOL, dims[2] / POOL];
    let norm = 1.0 / (POOL * POOL * POOL) as f32;
    for z in 0..p[2] {
        for y in 0..p[1] {
            for x in 0..p[0] {
                let mut acc = 0.0f32;
                for dz in 0..POOL {
                    for dy in 0..POOL {
                        for dx in 0..POOL {
                            acc += src[index(dims, POOL * x + dx, POOL * y + dy, POOL * z + dz)];
                        }
                    }
                }
                out.push(acc * norm);
            }
        }
    }
}

/// Average-pooled intensities, shape `[1, s/2, s/2, s/2]` flattened.
pub fn pool_volume(vol: &Volume) -> Result<Vec<f32>> {
    cube_edge(vol.dims())?;
    let mut out = Vec::with_capacity(vol.len() / POOL.pow(3));
    pool_channel(vol.data(), vol.dims(), &mut out);
    Ok(out)
}

/// Average-pooled one-hot label channels, shape `[10, s/2, s/2, s/2]` flattened.
pub fn pool_labels(labels: &LabelMap) -> Result<Vec<f32>> {
    cube_edge(labels.dims())?;
    let one_hot = labels.one_hot();
    let mut out = Vec::with_capacity(NUM_LABELS * labels.len() / POOL.pow(3));
    for c in 0..NUM_LABELS {
        pool_channel(one_hot.channel(c), labels.dims(), &mut out);
    }
    Ok(out)
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

fn up(mode: UpsampleMode) -> LayerSpec {
    LayerSpec::Upsample { factor: 2, mode }
}

/// Three stride-2 convolutions and a dense projection to `outputs`.
pub(crate) fn encoder_specs(
    in_channels: usize,
    widths: [usize; 3],
    edge: usize,
    outputs: usize,
) -> Vec<LayerSpec> {
    let bottleneck = edge / 16;
    vec![
        conv(in_channels, widths[0], 2),
        LayerSpec::Relu,
        conv(widths[0], widths[1], 2),
        LayerSpec::Relu,
        conv(widths[1], widths[2], 2),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: widths[2] * bottleneck.pow(3),
            outputs,
        },
    ]
}

/// DAE decoder: latent to a `[1, s, s, s]` residual about the mean image.
pub(crate) fn dae_decoder_specs(edge: usize, latent: usize) -> Vec<LayerSpec> {
    let b = edge / 16;
    vec![
        LayerSpec::Dense {
            inputs: latent,
            outputs: 16 * b * b * b,
        },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            shape: vec![16, b, b, b],
        },
        up(UpsampleMode::Nearest),
        conv(16, 16, 1),
        LayerSpec::Relu,
        up(UpsampleMode::Nearest),
        conv(16, 8, 1),
        LayerSpec::Relu,
        up(UpsampleMode::Trilinear),
        conv(8, 1, 1),
        up(UpsampleMode::Trilinear),
    ]
}

/// VAE decoder: latent to class probabilities on the pooled grid.
pub(crate) fn vae_decoder_specs(edge: usize, latent: usize, classes: usize) -> Vec<LayerSpec> {
    let b = edge / 16;
    vec![
        LayerSpec::Dense {
            inputs: latent,
            outputs: 32 * b * b * b,
        },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            shape: vec![32, b, b, b],
        },
        up(UpsampleMode::Nearest),
        conv(32, 16, 1),
        LayerSpec::Relu,
        up(UpsampleMode::Trilinear),
        conv(16, 8, 1),
        LayerSpec::Relu,
        conv(8, classes, 1),
        up(UpsampleMode::Trilinear),
        LayerSpec::Softmax,
    ]
}
