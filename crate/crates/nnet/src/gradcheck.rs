//! Central finite-difference gradient checking.

use crate::{LayerSpec, Mode, Network, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error with a floor of 1e-6 on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Values uniform in ±[0.1, 1], so no element sits on a ReLU kink.
pub fn kink_free_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn projected_loss(net: &mut Network<f64>, x: &Tensor<f64>, r: &[f64], mode: Mode) -> Result<f64> {
    let y = net.forward_train(x, mode)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Largest relative error between backpropagated and central-difference
/// gradients of `<r, net(x)>` for a random projection `r`, over parameters
/// and inputs. Tensors longer than 200 elements are sampled at a fixed stride.
pub fn max_gradient_error(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64, eps: f64) -> Result<f64> {
    let mode = Mode::Train { seed: 99 };
    let mut net = Network::<f64>::new(input_shape, specs, seed)?;
    let x = kink_free_input(input_shape, seed + 1);
    let out_len: usize = net.output_shape().iter().product();
    let r = kink_free_input(&[out_len], seed + 2);

    net.zero_grad();
    net.forward_train(&x, mode)?;
    let gx = net.backward(&r.clone().reshaped(net.output_shape()))?;
    let analytic: Vec<Vec<f64>> = net.params().map(|p| p.grad().unwrap_or(&[]).to_vec()).collect();

    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        let step = (grad.len() / 200).max(1);
        for i in (0..grad.len()).step_by(step) {
            let orig = net.params().nth(t).map(|p| p.data()[i]).unwrap_or_default();
            let set = |net: &mut Network<f64>, v: f64| {
                if let Some(p) = net.params_mut().nth(t) {
                    p.data_mut()[i] = v;
                }
            };
            set(&mut net, orig + eps);
            let lp = projected_loss(&mut net, &x, r.data(), mode)?;
            set(&mut net, orig - eps);
            let lm = projected_loss(&mut net, &x, r.data(), mode)?;
            set(&mut net, orig);
            worst = worst.max(relative_error(grad[i], (lp - lm) / (2.0 * eps)));
        }
    }
    let step = (x.len() / 200).max(1);
    for i in (0..x.len()).step_by(step) {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let numeric =
            (projected_loss(&mut net, &xp, r.data(), mode)? - projected_loss(&mut net, &xm, r.data(), mode)?) / (2.0 * eps);
        worst = worst.max(relative_error(gx.data()[i], numeric));
    }
    Ok(worst)
}
