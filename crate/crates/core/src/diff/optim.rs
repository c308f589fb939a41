use std::f64::consts::PI;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Checks the moments line up with `params`, entry by entry.
    pub fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(Error::SizeMismatch(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        for (((pi, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine-annealed learning rate: `lr0·(1 + cos(π·epoch/total))/2`.
pub fn cosine_lr(epoch: f64, total_epochs: f64, lr0: f64) -> f64 {
    if total_epochs <= 0.0 {
        return lr0;
    }
    let t = (epoch / total_epochs).clamp(0.0, 1.0);
    lr0 * (1.0 + (PI * t).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(values.to_vec()));
        p
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0.0, 200.0, 0.1), 0.1);
        assert!(cosine_lr(200.0, 200.0, 0.1).abs() < 1e-18);
        assert!((cosine_lr(100.0, 200.0, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(&[1.0, -2.0]);
        let mut s = AdamState::new(&p, 0.9, 0.99, 1e-8);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first update exactly lr·sign(g) up to eps
        let mut p = store(&[1.0, 1.0]);
        let mut s = AdamState::new(&p, 0.9, 0.99, 1e-12);
        adam_step(&mut p, &[Tensor::vector(vec![3.0, -0.5])], &mut s, 0.01).unwrap();
        let d = p.get("x").unwrap().data();
        assert!((d[0] - 0.99).abs() < 1e-12);
        assert!((d[1] - 1.01).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = store(&[3.0, -4.0]);
        let mut s = AdamState::new(&p, 0.9, 0.99, 1e-8);
        for _ in 0..2000 {
            let g: Vec<f64> = p.get("x").unwrap().data().iter().map(|v| 2.0 * v).collect();
            adam_step(&mut p, &[Tensor::vector(g)], &mut s, 0.01).unwrap();
        }
        assert!(p.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = store(&[1.0]);
        let mut s = AdamState::new(&p, 0.9, 0.99, 1e-8);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1).is_err());
    }
}
