//! Adam with bias correction over a flat parameter vector.

use nalgebra::DVector;

use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams<T: Real> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub m: DVector<T>,
    pub v: DVector<T>,
    pub t: usize,
    pub hyper: AdamParams<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
            t: 0,
            hyper: AdamParams::default(),
        }
    }
}

/// One Adam update, in place. Deterministic given the state.
pub fn adam_step<T: Real>(
    params: &mut DVector<T>,
    grads: &DVector<T>,
    state: &mut AdamState<T>,
    lr: T,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let AdamParams { beta1, beta2, eps } = state.hyper;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::one() - beta1.powi(t);
    let bc2 = T::one() - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (T::one() - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (T::one() - beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}
