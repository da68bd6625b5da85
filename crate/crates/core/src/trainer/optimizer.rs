use crate::autodiff::{Parameter, Real, Tensor};

use super::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// AdamW moment accumulators, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    decay: Vec<bool>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value().shape().to_vec()))
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            decay: vec![true; params.len()],
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    /// Skips weight decay for parameters whose name contains any pattern.
    pub fn exclude_from_decay(mut self, params: &[Parameter<T>], patterns: &[String]) -> Self {
        for (flag, p) in self.decay.iter_mut().zip(params) {
            *flag = !patterns.iter().any(|pat| p.name().contains(pat.as_str()));
        }
        self
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn decays(&self, index: usize) -> bool {
        self.decay[index]
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.second[index]
    }
}

/// One decoupled-weight-decay Adam update from the accumulated gradients:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`, with the decay term using the
/// pre-update `θ`. No parameter changes if any gradient is non-finite.
pub fn adamw_step<T: Real>(
    params: &mut [Parameter<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if params.len() != state.first.len()
        || params
            .iter()
            .zip(&state.first)
            .any(|(p, m)| p.value().shape() != m.shape())
    {
        return Err(TrainError::OptimizerMismatch);
    }
    if let Some(p) = params.iter().find(|p| !p.grad().is_finite()) {
        return Err(TrainError::NonFiniteGradient {
            parameter: p.name().to_string(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::real(state.beta1), T::real(state.beta2));
    let (one_b1, one_b2) = (T::real(1.0 - state.beta1), T::real(1.0 - state.beta2));
    let bc1 = T::real(1.0 - state.beta1.powi(t));
    let bc2 = T::real(1.0 - state.beta2.powi(t));
    let eps = T::real(state.eps);
    let lr_t = T::real(lr);
    for (i, p) in params.iter_mut().enumerate() {
        let decay = if state.decay[i] {
            T::real(lr * weight_decay)
        } else {
            T::zero()
        };
        let grad = p.grad().data().to_vec();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, theta) in p.value_mut().data_mut().iter_mut().enumerate() {
            let g = grad[k];
            m[k] = b1 * m[k] + one_b1 * g;
            v[k] = b2 * v[k] + one_b2 * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let old = *theta;
            *theta = old - lr_t * m_hat / (v_hat.sqrt() + eps) - decay * old;
        }
    }
    Ok(())
}
