use crate::{Real, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel-centred linear interpolation along each axis, edges clamped.
    Trilinear,
}

/// Declarative description of one layer. Parameter tensors are created from
/// this description when the network is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    /// Softmax across the leading (channel) axis, independently per voxel.
    Softmax,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Upsample {
        factor: usize,
        mode: UpsampleMode,
    },
    AvgPool {
        factor: usize,
    },
    /// Splits a `[2d]` input into mean and log standard deviation and draws
    /// `z = mu + exp(log_sigma) * eps`. In evaluation mode returns `mu`.
    SampleGaussian,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3d { .. } => "CONV3D",
            LayerSpec::Dense { .. } => "DENSE",
            LayerSpec::Relu => "RELU",
            LayerSpec::Sigmoid => "SIGMOID",
            LayerSpec::Softmax => "SOFTMAX",
            LayerSpec::Flatten => "FLATTEN",
            LayerSpec::Reshape { .. } => "RESHAPE",
            LayerSpec::Upsample { .. } => "UPSAMPLE",
            LayerSpec::AvgPool { .. } => "AVGPOOL",
            LayerSpec::SampleGaussian => "SAMPLE_GAUSSIAN",
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let len: usize = input.iter().product();
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 4 {
                    return Err("expected [channels, depth, height, width]".into());
                }
                if input[0] != in_channels {
                    return Err(format!("expected {in_channels} channels"));
                }
                if kernel == 0 || stride == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                let mut out = vec![out_channels];
                for &d in &input[1..] {
                    if d + 2 * padding < kernel {
                        return Err("kernel larger than padded input".into());
                    }
                    out.push((d + 2 * padding - kernel) / stride + 1);
                }
                Ok(out)
            }
            LayerSpec::Dense { inputs, outputs } => {
                if len != inputs {
                    return Err(format!("expected {inputs} inputs"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![len]),
            LayerSpec::Reshape { ref shape } => {
                if shape.iter().product::<usize>() != len {
                    return Err(format!("cannot reshape {len} elements to {shape:?}"));
                }
                Ok(shape.clone())
            }
            LayerSpec::Upsample { factor, .. } => {
                if input.len() != 4 || factor == 0 {
                    return Err("expected 4-D input and positive factor".into());
                }
                Ok(vec![input[0], input[1] * factor, input[2] * factor, input[3] * factor])
            }
            LayerSpec::AvgPool { factor } => {
                if input.len() != 4 || factor == 0 {
                    return Err("expected 4-D input and positive factor".into());
                }
                if input[1..].iter().any(|d| d % factor != 0) {
                    return Err(format!("spatial dims not divisible by {factor}"));
                }
                Ok(vec![input[0], input[1] / factor, input[2] / factor, input[3] / factor])
            }
            LayerSpec::SampleGaussian => {
                if input.len() != 1 || len % 2 != 0 {
                    return Err("expected a 1-D input of even length".into());
                }
                Ok(vec![len / 2])
            }
        }
    }

    pub(crate) fn init_params<T: Real, R: Rng>(&self, rng: &mut R) -> Vec<Tensor<T>> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel * kernel;
                let w = uniform_tensor(
                    &[out_channels, in_channels, kernel, kernel, kernel],
                    (6.0 / fan_in as f64).sqrt(),
                    rng,
                );
                vec![w.with_grad(), Tensor::zeros(&[out_channels]).with_grad()]
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = uniform_tensor(&[outputs, inputs], (6.0 / inputs as f64).sqrt(), rng);
                vec![w.with_grad(), Tensor::zeros(&[outputs]).with_grad()]
            }
            _ => Vec::new(),
        }
    }
}

fn uniform_tensor<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`, such
/// that `o * stride + k - pad` lands inside `[0, len)`.
#[inline]
fn valid_range(k: usize, len: usize, out_len: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if len + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub(crate) struct ConvGeom {
    pub ic: usize,
    pub oc: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub ind: [usize; 3],
    pub outd: [usize; 3],
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.ic * self.k * self.k * self.k
    }

    fn out_volume(&self) -> usize {
        self.outd.iter().product()
    }

    /// Visits every row segment of the unfolded input as
    /// `(column-matrix start, input start, length)`; input elements of a
    /// segment are `stride` apart. Out-of-bounds taps are skipped and stay zero.
    fn for_each_segment(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d, h, wd] = self.ind;
        let [od, oh, ow] = self.outd;
        let ivol = d * h * wd;
        let ovol = od * oh * ow;
        let k = self.k;
        for ic in 0..self.ic {
            for kz in 0..k {
                let (z0, z1) = valid_range(kz, d, od, self.s, self.p);
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, h, oh, self.s, self.p);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(kx, wd, ow, self.s, self.p);
                        if x0 >= x1 {
                            continue;
                        }
                        let row = ((ic * k + kz) * k + ky) * k + kx;
                        for oz in z0..z1 {
                            let iz = oz * self.s + kz - self.p;
                            for oy in y0..y1 {
                                let iy = oy * self.s + ky - self.p;
                                let col = row * ovol + (oz * oh + oy) * ow + x0;
                                let src = ic * ivol + (iz * h + iy) * wd + x0 * self.s + kx - self.p;
                                f(col, src, x1 - x0);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let mut col = vec![T::zero(); self.taps() * self.out_volume()];
        let s = self.s;
        self.for_each_segment(|c, i, len| {
            let dst = &mut col[c..c + len];
            if s == 1 {
                dst.copy_from_slice(&input[i..i + len]);
            } else {
                for (j, v) in dst.iter_mut().enumerate() {
                    *v = input[i + j * s];
                }
            }
        });
        col
    }

    fn col2im_add<T: Real>(&self, col: &[T], out: &mut [T]) {
        let s = self.s;
        self.for_each_segment(|c, i, len| {
            let src = &col[c..c + len];
            if s == 1 {
                for (o, &v) in out[i..i + len].iter_mut().zip(src) {
                    *o += v;
                }
            } else {
                for (j, &v) in src.iter().enumerate() {
                    out[i + j * s] += v;
                }
            }
        });
    }
}

/// Output channel count below which the direct loops beat unfolding.
const DIRECT_MAX_CHANNELS: usize = 4;

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, input: &[T], w: &[T], b: &[T], out: &mut [T]) {
    if g.oc < DIRECT_MAX_CHANNELS {
        return conv_forward_direct(g, input, w, b, out);
    }
    let ovol = g.out_volume();
    for (oc, chunk) in out.chunks_mut(ovol).enumerate() {
        chunk.iter_mut().for_each(|v| *v = b[oc]);
    }
    let col = g.im2col(input);
    T::gemm(g.oc, g.taps(), ovol, w, false, &col, false, T::one(), out);
}

/// Accumulates weight/bias gradients and writes the input gradient.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    w: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_in: &mut [T],
) {
    let ovol = g.out_volume();
    let taps = g.taps();
    for (oc, chunk) in grad_out.chunks(ovol).enumerate() {
        grad_b[oc] += chunk.iter().copied().sum::<T>();
    }
    grad_in.iter_mut().for_each(|v| *v = T::zero());
    if g.oc < DIRECT_MAX_CHANNELS {
        return conv_backward_direct(g, input, w, grad_out, grad_w, grad_in);
    }
    let col = g.im2col(input);
    T::gemm(g.oc, ovol, taps, grad_out, false, &col, true, T::one(), grad_w);
    let mut grad_col = vec![T::zero(); taps * ovol];
    T::gemm(taps, g.oc, ovol, w, true, grad_out, false, T::zero(), &mut grad_col);
    g.col2im_add(&grad_col, grad_in);
}

/// Direct convolution; faster than unfolding when there are few output channels.
fn conv_forward_direct<T: Real>(g: &ConvGeom, input: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let [d, h, wd] = g.ind;
    let [od, oh, ow] = g.outd;
    let ivol = d * h * wd;
    let ovol = od * oh * ow;
    let k = g.k;
    for oc in 0..g.oc {
        let out_c = &mut out[oc * ovol..(oc + 1) * ovol];
        out_c.iter_mut().for_each(|v| *v = b[oc]);
        for ic in 0..g.ic {
            let in_c = &input[ic * ivol..(ic + 1) * ivol];
            let wbase = (oc * g.ic + ic) * k * k * k;
            for kz in 0..k {
                let (z0, z1) = valid_range(kz, d, od, g.s, g.p);
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, h, oh, g.s, g.p);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(kx, wd, ow, g.s, g.p);
                        if x0 >= x1 {
                            continue;
                        }
                        let wv = w[wbase + (kz * k + ky) * k + kx];
                        for oz in z0..z1 {
                            let iz = oz * g.s + kz - g.p;
                            for oy in y0..y1 {
                                let iy = oy * g.s + ky - g.p;
                                let orow = &mut out_c[(oz * oh + oy) * ow..][x0..x1];
                                let irow = &in_c[(iz * h + iy) * wd..(iz * h + iy + 1) * wd];
                                if g.s == 1 {
                                    let src = &irow[x0 + kx - g.p..x1 + kx - g.p];
                                    for (o, &v) in orow.iter_mut().zip(src) {
                                        *o += wv * v;
                                    }
                                } else {
                                    for (j, o) in orow.iter_mut().enumerate() {
                                        *o += wv * irow[(x0 + j) * g.s + kx - g.p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_direct<T: Real>(
    g: &ConvGeom,
    input: &[T],
    w: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_in: &mut [T],
) {
    let [d, h, wd] = g.ind;
    let [od, oh, ow] = g.outd;
    let ivol = d * h * wd;
    let ovol = od * oh * ow;
    let k = g.k;
    for oc in 0..g.oc {
        let go_c = &grad_out[oc * ovol..(oc + 1) * ovol];
        for ic in 0..g.ic {
            let in_c = &input[ic * ivol..(ic + 1) * ivol];
            let gi_c = &mut grad_in[ic * ivol..(ic + 1) * ivol];
            let wbase = (oc * g.ic + ic) * k * k * k;
            for kz in 0..k {
                let (z0, z1) = valid_range(kz, d, od, g.s, g.p);
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, h, oh, g.s, g.p);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(kx, wd, ow, g.s, g.p);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = wbase + (kz * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = T::zero();
                        for oz in z0..z1 {
                            let iz = oz * g.s + kz - g.p;
                            for oy in y0..y1 {
                                let iy = oy * g.s + ky - g.p;
                                let grow = &go_c[(oz * oh + oy) * ow..][x0..x1];
                                let rbase = (iz * h + iy) * wd;
                                if g.s == 1 {
                                    let lo = rbase + x0 + kx - g.p;
                                    let src = &in_c[lo..lo + grow.len()];
                                    let mut part = T::zero();
                                    for (&go, &v) in grow.iter().zip(src) {
                                        part += go * v;
                                    }
                                    acc += part;
                                    let dst = &mut gi_c[lo..lo + grow.len()];
                                    for (gi, &go) in dst.iter_mut().zip(grow) {
                                        *gi += wv * go;
                                    }
                                } else {
                                    for (j, &go) in grow.iter().enumerate() {
                                        let ix = rbase + (x0 + j) * g.s + kx - g.p;
                                        acc += go * in_c[ix];
                                        gi_c[ix] += wv * go;
                                    }
                                }
                            }
                        }
                        grad_w[widx] += acc;
                    }
                }
            }
        }
    }
}

/// One output index of a 1-D linear resampling operator.
#[derive(Clone, Copy)]
pub(crate) struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

pub(crate) fn upsample_taps(len_in: usize, factor: usize, mode: UpsampleMode) -> Vec<Tap> {
    (0..len_in * factor)
        .map(|o| match mode {
            UpsampleMode::Nearest => Tap {
                i0: o / factor,
                i1: o / factor,
                w0: 1.0,
                w1: 0.0,
            },
            UpsampleMode::Trilinear => {
                let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len_in - 1);
                let t = src - i0 as f64;
                Tap {
                    i0,
                    i1,
                    w0: 1.0 - t,
                    w1: t,
                }
            }
        })
        .collect()
}

/// Applies a 1-D operator along `axis` (1 = depth, 2 = height, 3 = width) of a
/// `[c, d, h, w]` tensor.
pub(crate) fn resample_axis<T: Real>(
    input: &[T],
    shape: [usize; 4],
    axis: usize,
    taps: &[Tap],
) -> (Vec<T>, [usize; 4]) {
    let mut oshape = shape;
    oshape[axis] = taps.len();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let (lin, lout) = (shape[axis], taps.len());
    let mut out = vec![T::zero(); outer * lout * inner];
    for a in 0..outer {
        for (o, tap) in taps.iter().enumerate() {
            let (w0, w1) = (T::from_f64_lossy(tap.w0), T::from_f64_lossy(tap.w1));
            let src0 = &input[(a * lin + tap.i0) * inner..][..inner];
            let src1 = &input[(a * lin + tap.i1) * inner..][..inner];
            let dst = &mut out[(a * lout + o) * inner..][..inner];
            for ((d, &v0), &v1) in dst.iter_mut().zip(src0).zip(src1) {
                *d = w0 * v0 + w1 * v1;
            }
        }
    }
    (out, oshape)
}

/// Transpose of [`resample_axis`]: scatters output gradients back.
pub(crate) fn resample_axis_transpose<T: Real>(
    grad_out: &[T],
    in_shape: [usize; 4],
    axis: usize,
    taps: &[Tap],
) -> Vec<T> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let (lin, lout) = (in_shape[axis], taps.len());
    let mut gin = vec![T::zero(); outer * lin * inner];
    for a in 0..outer {
        for (o, tap) in taps.iter().enumerate() {
            let (w0, w1) = (T::from_f64_lossy(tap.w0), T::from_f64_lossy(tap.w1));
            let g = &grad_out[(a * lout + o) * inner..][..inner];
            {
                let d0 = &mut gin[(a * lin + tap.i0) * inner..][..inner];
                for (d, &v) in d0.iter_mut().zip(g) {
                    *d += w0 * v;
                }
            }
            if tap.w1 != 0.0 {
                let d1 = &mut gin[(a * lin + tap.i1) * inner..][..inner];
                for (d, &v) in d1.iter_mut().zip(g) {
                    *d += w1 * v;
                }
            }
        }
    }
    gin
}

pub(crate) fn avgpool_forward<T: Real>(input: &[T], shape: [usize; 4], f: usize) -> Vec<T> {
    let [c, d, h, w] = shape;
    let (od, oh, ow) = (d / f, h / f, w / f);
    let mut out = vec![T::zero(); c * od * oh * ow];
    let scale = T::from_f64_lossy(1.0 / (f * f * f) as f64);
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                let row = &input[((ch * d + z) * h + y) * w..][..w];
                let orow = &mut out[((ch * od + z / f) * oh + y / f) * ow..][..ow];
                for (x, &v) in row.iter().enumerate() {
                    orow[x / f] += v * scale;
                }
            }
        }
    }
    out
}

pub(crate) fn avgpool_backward<T: Real>(grad_out: &[T], shape: [usize; 4], f: usize) -> Vec<T> {
    let [c, d, h, w] = shape;
    let (od, oh, ow) = (d / f, h / f, w / f);
    let scale = T::from_f64_lossy(1.0 / (f * f * f) as f64);
    let mut gin = vec![T::zero(); c * d * h * w];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                let grow = &grad_out[((ch * od + z / f) * oh + y / f) * ow..][..ow];
                let row = &mut gin[((ch * d + z) * h + y) * w..][..w];
                for (x, v) in row.iter_mut().enumerate() {
                    *v = grow[x / f] * scale;
                }
            }
        }
    }
    gin
}

/// Channel-wise softmax; `shape[0]` is the channel count, the rest is spatial.
pub(crate) fn softmax_forward<T: Real>(input: &[T], shape: &[usize]) -> Vec<T> {
    let (c, n) = channel_split(shape);
    let mut out = vec![T::zero(); input.len()];
    for i in 0..n {
        let mut m = T::neg_infinity();
        for ch in 0..c {
            m = m.max(input[ch * n + i]);
        }
        let mut s = T::zero();
        for ch in 0..c {
            let e = (input[ch * n + i] - m).exp();
            out[ch * n + i] = e;
            s += e;
        }
        for ch in 0..c {
            out[ch * n + i] = out[ch * n + i] / s;
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Real>(output: &[T], grad_out: &[T], shape: &[usize]) -> Vec<T> {
    let (c, n) = channel_split(shape);
    let mut gin = vec![T::zero(); output.len()];
    for i in 0..n {
        let mut dot = T::zero();
        for ch in 0..c {
            dot += output[ch * n + i] * grad_out[ch * n + i];
        }
        for ch in 0..c {
            let idx = ch * n + i;
            gin[idx] = output[idx] * (grad_out[idx] - dot);
        }
    }
    gin
}

fn channel_split(shape: &[usize]) -> (usize, usize) {
    if shape.len() == 1 {
        (shape[0], 1)
    } else {
        (shape[0], shape[1..].iter().product())
    }
}

pub(crate) fn shape4(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfolded_convolution_matches_direct_loops() {
        for (s, p, ind) in [(1, 1, [5, 4, 6]), (2, 1, [6, 5, 7]), (1, 0, [4, 4, 4])] {
            let (ic, oc, k) = (3, 6, 3);
            let outd = ind.map(|n| (n + 2 * p - k) / s + 1);
            let g = ConvGeom { ic, oc, k, s, p, ind, outd };
            let n_in = ic * ind.iter().product::<usize>();
            let n_out = oc * outd.iter().product::<usize>();
            let input: Vec<f64> = (0..n_in).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
            let w: Vec<f64> = (0..oc * ic * 27).map(|i| ((i * 13 % 17) as f64 - 8.0) / 9.0).collect();
            let b: Vec<f64> = (0..oc).map(|i| i as f64 * 0.1).collect();
            let go: Vec<f64> = (0..n_out).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();

            let mut fast = vec![0.0; n_out];
            conv_forward(&g, &input, &w, &b, &mut fast);
            let mut slow = vec![0.0; n_out];
            conv_forward_direct(&g, &input, &w, &b, &mut slow);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12);
            }

            let (mut gw_fast, mut gb, mut gi_fast) = (vec![0.0; w.len()], vec![0.0; oc], vec![0.0; n_in]);
            conv_backward(&g, &input, &w, &go, &mut gw_fast, &mut gb, &mut gi_fast);
            let (mut gw_slow, mut gi_slow) = (vec![0.0; w.len()], vec![0.0; n_in]);
            conv_backward_direct(&g, &input, &w, &go, &mut gw_slow, &mut gi_slow);
            for (a, e) in gw_fast.iter().zip(&gw_slow).chain(gi_fast.iter().zip(&gi_slow)) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }
}
