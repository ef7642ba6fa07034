use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::OptimizerState;
use crate::numerics::{ParamStore, Tensor};

/// Adam with bias correction over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients held in `store`. Any non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Consistency("optimizer state does not match parameters".into()));
        }
        if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (((x, mi), vi), &gi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g)
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn state(&self, store: &ParamStore) -> OptimizerState {
        let named = |ts: &[Tensor]| -> BTreeMap<String, Tensor> {
            store.iter().zip(ts).map(|(p, t)| (p.name.clone(), t.clone())).collect()
        };
        OptimizerState {
            step: self.step,
            lr: self.lr,
            first_moment: named(&self.m),
            second_moment: named(&self.v),
        }
    }

    pub fn from_state(store: &ParamStore, state: &OptimizerState) -> Result<Self> {
        let mut adam = Adam::new(store, state.lr);
        adam.step = state.step;
        for (i, p) in store.iter().enumerate() {
            let get = |map: &BTreeMap<String, Tensor>| {
                map.get(&p.name)
                    .cloned()
                    .ok_or_else(|| Error::Consistency(format!("optimizer state lacks `{}`", p.name)))
            };
            adam.m[i] = get(&state.first_moment)?;
            adam.v[i] = get(&state.second_moment)?;
        }
        Ok(adam)
    }
}
