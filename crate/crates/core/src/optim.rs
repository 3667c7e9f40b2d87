use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub const DEFAULT_LR: f64 = 0.0009;

    pub fn new(lr: T) -> Self {
        AdamState {
            lr,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter. Gradients are left
    /// in place; callers zero them before the next accumulation.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        let trainable: Vec<usize> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id.0).collect();
        if self.first.is_empty() {
            for (_, p) in params.iter().filter(|(_, p)| p.trainable) {
                self.first.push(vec![T::zero(); p.tensor.len()]);
                self.second.push(vec![T::zero(); p.tensor.len()]);
            }
        }
        if self.first.len() != trainable.len() {
            return Err(Error::State(alloc::format!(
                "optimizer tracks {} parameters, model has {}",
                self.first.len(),
                trainable.len()
            )));
        }
        for (slot, &idx) in trainable.iter().enumerate() {
            let p = params.get(crate::param::ParamId(idx));
            let Some(_) = p.tensor.grad() else {
                return Err(Error::State(alloc::format!("parameter {} has no gradient", p.name)));
            };
            if p.tensor.len() != self.first[slot].len() {
                return Err(Error::State(alloc::format!("moment buffer shape mismatch for {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (slot, &idx) in trainable.iter().enumerate() {
            let p = params.get_mut(crate::param::ParamId(idx));
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for (((theta, &g), mi), vi) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (T::one() - self.beta1) * g;
                *vi = self.beta2 * *vi + (T::one() - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta = *theta - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
