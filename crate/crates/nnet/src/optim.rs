use crate::{Network, NnError, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if let Some(element) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFinite {
            what: "gradient",
            tensor: 0,
            element,
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        let g = g.as_f64();
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let step = cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        *p = T::from_f64_lossy(p.as_f64() - step);
    }
    Ok(())
}

/// Adam over every trainable tensor of one network.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<T: Real>(net: &Network<T>, config: AdamConfig) -> Self {
        Self {
            config,
            states: net.params().map(|p| AdamState::new(p.len())).collect(),
        }
    }

    /// Applies the accumulated gradients. Aborts before touching any
    /// parameter if a gradient is non-finite.
    pub fn step<T: Real>(&mut self, net: &mut Network<T>) -> Result<()> {
        for (tensor, p) in net.params().enumerate() {
            if let Some(g) = p.grad() {
                if let Some(element) = g.iter().position(|v| !v.is_finite()) {
                    return Err(NnError::NonFinite {
                        what: "gradient",
                        tensor,
                        element,
                    });
                }
            }
        }
        for (p, state) in net.params_mut().zip(self.states.iter_mut()) {
            let (data, grad) = p.data_and_grad_mut();
            if let Some(grad) = grad {
                let grad = grad.to_vec();
                adam_step(data, &grad, state, &self.config)?;
            }
        }
        Ok(())
    }
}
