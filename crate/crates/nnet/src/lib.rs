//! A small, dependency-light neural network engine for single-sample 3D
//! convolutional models.
//!
//! Networks are plain sequential stacks of [`LayerSpec`]s. A training forward
//! pass retains the input of every layer so that [`Network::backward`] can
//! accumulate parameter gradients; [`Adam`] then applies them. Everything is
//! generic over [`Real`] so the same code runs in `f32` for training and in
//! `f64` for finite-difference gradient checks.

mod checkpoint;
mod error;
mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use error::NnError;
pub use gradcheck::{kink_free_input, max_gradient_error, relative_error};
pub use layer::{LayerSpec, UpsampleMode};
pub use loss::{mse_loss, softmax_cross_entropy};
pub use network::{sample_gaussian, Mode, Network};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating point element type of tensors and parameters.
pub trait Real:
    Float
    + FromPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + std::iter::Sum
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }
    /// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, `c: m x n`,
    /// with `a` or `b` read transposed when the flag is set.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Element (i, j) of the logical matrix lives at i * rs + j * cs.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Row-at-a-time product for very short `a`, where packed kernels waste
/// most of their register tile.
#[allow(clippy::too_many_arguments)]
fn gemm_few_rows<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    let a_row = |i: usize| -> Vec<T> { (0..k).map(|p| if a_t { a[p * m + i] } else { a[i * k + p] }).collect() };
    for i in 0..m {
        let ar = a_row(i);
        let row = &mut c[i * n..(i + 1) * n];
        if b_t {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * beta + dot(&ar, &b[j * k..(j + 1) * k]);
            }
        } else {
            row.iter_mut().for_each(|v| *v = *v * beta);
            for (p, &av) in ar.iter().enumerate() {
                for (v, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *v += av * bv;
                }
            }
        }
    }
}

/// Dot product with independent lane accumulators so it vectorizes.
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let xc = x.chunks_exact(LANES);
    let yc = y.chunks_exact(LANES);
    let tail: T = xc.remainder().iter().zip(yc.remainder()).map(|(&p, &q)| p * q).sum();
    for (xs, ys) in xc.zip(yc) {
        for l in 0..LANES {
            acc[l] += xs[l] * ys[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]) {
                if m < 4 {
                    return gemm_few_rows(m, k, n, a, a_t, b, b_t, beta, c);
                }
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                // SAFETY: the asserts above bound every index reached by the
                // given dimensions and strides.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

pub type Result<T> = std::result::Result<T, NnError>;
