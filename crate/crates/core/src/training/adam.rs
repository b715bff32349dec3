use crate::autodiff::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in {param}[{index}]; step aborted")]
    NonFiniteGradient { param: String, index: usize },
}

/// Adam with bias correction. Moments are allocated lazily per parameter, so
/// parameters that are never updated have no state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub(crate) moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: vec![None; params] }
    }

    pub fn moments(&self, id: ParamId) -> Option<&(Tensor, Tensor)> {
        self.moments.get(id.index()).and_then(Option::as_ref)
    }

    /// Applies one update to `trainable`. Nothing is modified if any of their
    /// gradients is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, trainable: &[ParamId], lr: f64) -> Result<(), OptimError> {
        for &id in trainable {
            let p = store.get(id);
            if let Some(index) = p.grad.first_non_finite() {
                return Err(OptimError::NonFiniteGradient { param: p.name().to_string(), index });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for &id in trainable {
            let p = store.get_mut(id);
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let (m, v) = (m.data_mut(), v.data_mut());
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for k in 0..value.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
