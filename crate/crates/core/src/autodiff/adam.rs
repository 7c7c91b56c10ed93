use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamId, ParamStore, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed set of registered parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore, ids: impl IntoIterator<Item = ParamId>) -> Self {
        let ids: Vec<ParamId> = ids.into_iter().collect();
        let m = ids.iter().map(|&id| vec![0.0; store.value(id).len()]).collect::<Vec<_>>();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
            ids,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// One bias-corrected Adam update of every registered parameter, then clears their gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(&missing) = self.ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(AutodiffError::MissingGrad(store.name(missing).to_string()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (slot, &id) in self.ids.iter().enumerate() {
            let g = store.grad(id).expect("checked above").data().to_vec();
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            store.clear_grad(id);
        }
        Ok(())
    }
}
