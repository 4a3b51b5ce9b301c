use ndarray::{Array2, Zip};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with L2 regularisation folded into the gradient (`g + wd * theta`).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: AdamState,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, p)| Array2::zeros(p.dim()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Applies one update. `grads` is aligned with the store's parameter
    /// order. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) -> Result<()> {
        self.step_masked(store, grads, &vec![true; store.len()])
    }

    /// Like [`Adam::step`], but parameters with `active[k] == false` are
    /// left alone entirely: no decay, no moment update.
    pub fn step_masked(&mut self, store: &mut ParamStore, grads: &[Array2<f64>], active: &[bool]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        assert_eq!(active.len(), store.len(), "one flag per parameter");
        for (id, g) in store.ids().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);

        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !active[k] {
                continue;
            }
            let theta = store.get_mut(id);
            Zip::from(theta)
                .and(&grads[k])
                .and(&mut self.state.m[k])
                .and(&mut self.state.v[k])
                .for_each(|p, &g, m, v| {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
