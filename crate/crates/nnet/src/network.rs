use crate::layer::{
    avgpool_backward, avgpool_forward, conv_backward, conv_forward, resample_axis,
    resample_axis_transpose, shape4, softmax_backward, softmax_forward, upsample_taps, ConvGeom,
};
use crate::{LayerSpec, NnError, Real, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Forward-pass mode. Only `Train` draws random samples in
/// [`LayerSpec::SampleGaussian`]; `Eval` passes the mean through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer<T> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<T>>,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

/// Activations retained by a training forward pass.
#[derive(Clone, Debug)]
struct Trace<T> {
    /// `acts[i]` is the input of layer `i`; the final entry is the output.
    acts: Vec<Vec<T>>,
    /// Standard-normal draws of sampling layers.
    eps: Vec<Option<Vec<T>>>,
}

/// Sequential network of [`LayerSpec`] layers.
#[derive(Clone, Debug)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    seed: u64,
    trace: Option<Trace<T>>,
}

impl<T: Real> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl<T: Real> Network<T> {
    /// Validates shape compatibility and initialises parameters from `seed`.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (index, spec) in specs.into_iter().enumerate() {
            let out = spec
                .output_shape(&shape)
                .map_err(|reason| NnError::IncompatibleLayer {
                    index,
                    kind: spec.name().to_string(),
                    shape: shape.clone(),
                    reason,
                })?;
            let params = spec.init_params(&mut rng);
            layers.push(Layer {
                spec,
                params,
                in_shape: shape,
                out_shape: out.clone(),
            });
            shape = out;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            seed,
            trace: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.out_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(|p| p.zero_grad());
    }

    /// Multiplies every accumulated gradient by `factor` (batch averaging).
    pub fn scale_grads(&mut self, factor: T) {
        for p in self.params_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Inference pass; does not retain activations.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            x = layer_forward(layer, &x, Mode::Eval, 0).0;
        }
        Ok(Tensor::from_vec(self.output_shape(), x))
    }

    /// Forward pass in the given mode, retaining activations for
    /// [`Network::backward`].
    pub fn forward_train(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut eps = Vec::with_capacity(self.layers.len());
        acts.push(input.data().to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, e) = layer_forward(layer, acts.last().unwrap(), mode, i as u64);
            acts.push(y);
            eps.push(e);
        }
        let out = Tensor::from_vec(self.output_shape(), acts.last().unwrap().clone());
        self.trace = Some(Trace { acts, eps });
        Ok(out)
    }

    /// Back-propagates `grad_output`, accumulating parameter gradients, and
    /// returns the gradient with respect to the network input. Consumes the
    /// retained forward pass.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let trace = self.trace.take().ok_or(NnError::NoForwardPass)?;
        if grad_output.shape() != self.output_shape() {
            return Err(NnError::ShapeMismatch {
                expected: self.output_shape().to_vec(),
                got: grad_output.shape().to_vec(),
            });
        }
        let mut g = grad_output.data().to_vec();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer_backward(
                layer,
                &trace.acts[i],
                &trace.acts[i + 1],
                trace.eps[i].as_deref(),
                &g,
            );
        }
        Ok(Tensor::from_vec(&self.input_shape, g))
    }
}

/// `z = mu + exp(log_sigma) * eps` with `eps` standard normal drawn from
/// `seed`. Returns `(z, eps)`.
pub fn sample_gaussian<T: Real>(mu: &[T], log_sigma: &[T], seed: u64) -> (Vec<T>, Vec<T>) {
    assert_eq!(mu.len(), log_sigma.len(), "mu/log_sigma length mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<T> = (0..mu.len())
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(e)
        })
        .collect();
    let z = mu
        .iter()
        .zip(log_sigma)
        .zip(&eps)
        .map(|((&m, &ls), &e)| m + ls.exp() * e)
        .collect();
    (z, eps)
}

fn conv_geom(spec: &LayerSpec, in_shape: &[usize], out_shape: &[usize]) -> ConvGeom {
    match *spec {
        LayerSpec::Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => ConvGeom {
            ic: in_channels,
            oc: out_channels,
            k: kernel,
            s: stride,
            p: padding,
            ind: [in_shape[1], in_shape[2], in_shape[3]],
            outd: [out_shape[1], out_shape[2], out_shape[3]],
        },
        _ => unreachable!("not a convolution"),
    }
}

fn layer_forward<T: Real>(layer: &Layer<T>, x: &[T], mode: Mode, index: u64) -> (Vec<T>, Option<Vec<T>>) {
    match layer.spec {
        LayerSpec::Conv3d { .. } => {
            let g = conv_geom(&layer.spec, &layer.in_shape, &layer.out_shape);
            let mut out = vec![T::zero(); layer.out_shape.iter().product()];
            conv_forward(&g, x, layer.params[0].data(), layer.params[1].data(), &mut out);
            (out, None)
        }
        LayerSpec::Dense { inputs, outputs } => {
            let w = layer.params[0].data();
            let b = layer.params[1].data();
            let out = (0..outputs)
                .map(|o| {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let acc: f64 = row.iter().zip(x).map(|(&a, &v)| (a * v).as_f64()).sum();
                    T::from_f64_lossy(acc) + b[o]
                })
                .collect();
            (out, None)
        }
        LayerSpec::Relu => (x.iter().map(|&v| v.max(T::zero())).collect(), None),
        LayerSpec::Sigmoid => (
            x.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect(),
            None,
        ),
        LayerSpec::Softmax => (softmax_forward(x, &layer.in_shape), None),
        LayerSpec::Flatten | LayerSpec::Reshape { .. } => (x.to_vec(), None),
        LayerSpec::Upsample { factor, mode: um } => {
            let mut shape = shape4(&layer.in_shape);
            let mut cur = x.to_vec();
            for axis in [3, 2, 1] {
                let taps = upsample_taps(shape[axis], factor, um);
                let (next, s) = resample_axis(&cur, shape, axis, &taps);
                cur = next;
                shape = s;
            }
            (cur, None)
        }
        LayerSpec::AvgPool { factor } => (avgpool_forward(x, shape4(&layer.in_shape), factor), None),
        LayerSpec::SampleGaussian => {
            let d = x.len() / 2;
            let (mu, ls) = x.split_at(d);
            match mode {
                Mode::Eval => (mu.to_vec(), None),
                Mode::Train { seed } => {
                    let (z, eps) = sample_gaussian(mu, ls, seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    (z, Some(eps))
                }
            }
        }
    }
}

fn layer_backward<T: Real>(
    layer: &mut Layer<T>,
    x: &[T],
    y: &[T],
    eps: Option<&[T]>,
    g: &[T],
) -> Vec<T> {
    match layer.spec {
        LayerSpec::Conv3d { .. } => {
            let geom = conv_geom(&layer.spec, &layer.in_shape, &layer.out_shape);
            let mut gin = vec![T::zero(); x.len()];
            let (wp, bp) = layer.params.split_at_mut(1);
            let (w, gw) = wp[0].data_and_grad_mut();
            let gb = bp[0].grad_mut().expect("bias gradient");
            conv_backward(&geom, x, w, g, gw.expect("weight gradient"), gb, &mut gin);
            gin
        }
        LayerSpec::Dense { inputs, outputs } => {
            let (wp, bp) = layer.params.split_at_mut(1);
            let (w, gw) = wp[0].data_and_grad_mut();
            let gw = gw.expect("weight gradient");
            let gb = bp[0].grad_mut().expect("bias gradient");
            let mut gin = vec![0.0f64; inputs];
            for o in 0..outputs {
                let go = g[o];
                gb[o] += go;
                let row = &w[o * inputs..(o + 1) * inputs];
                let grow = &mut gw[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    grow[i] += go * x[i];
                    gin[i] += (row[i] * go).as_f64();
                }
            }
            gin.into_iter().map(T::from_f64_lossy).collect()
        }
        LayerSpec::Relu => x
            .iter()
            .zip(g)
            .map(|(&v, &go)| if v > T::zero() { go } else { T::zero() })
            .collect(),
        LayerSpec::Sigmoid => y.iter().zip(g).map(|(&s, &go)| go * s * (T::one() - s)).collect(),
        LayerSpec::Softmax => softmax_backward(y, g, &layer.in_shape),
        LayerSpec::Flatten | LayerSpec::Reshape { .. } => g.to_vec(),
        LayerSpec::Upsample { factor, mode } => {
            let s0 = shape4(&layer.in_shape);
            let mut shapes = vec![s0];
            let mut s = s0;
            for axis in [3, 2, 1] {
                s[axis] *= factor;
                shapes.push(s);
            }
            let mut cur = g.to_vec();
            for (step, axis) in [1usize, 2, 3].into_iter().enumerate() {
                let in_shape = shapes[2 - step];
                let taps = upsample_taps(in_shape[axis], factor, mode);
                cur = resample_axis_transpose(&cur, in_shape, axis, &taps);
            }
            cur
        }
        LayerSpec::AvgPool { factor } => avgpool_backward(g, shape4(&layer.in_shape), factor),
        LayerSpec::SampleGaussian => {
            let d = x.len() / 2;
            let mut gin = vec![T::zero(); x.len()];
            gin[..d].copy_from_slice(g);
            if let Some(eps) = eps {
                for i in 0..d {
                    gin[d + i] = g[i] * x[d + i].exp() * eps[i];
                }
            }
            gin
        }
    }
}
