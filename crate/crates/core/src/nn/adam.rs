use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Param, ParamId};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with bias correction. Moment buffers and the step counter are kept
/// per parameter, so a parameter that skips a step keeps its own schedule.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: HashMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let AdamConfig { lr, beta1, beta2, eps } = config;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || lr < 0.0 || eps <= 0.0 {
            return Err(contract(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self {
            config,
            state: HashMap::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Step counter of a parameter (0 before its first update).
    pub fn steps(&self, id: ParamId) -> u64 {
        self.state.get(&id).map_or(0, |m| m.t)
    }

    /// Update every parameter in place. Every parameter must have a gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>, grads: &Gradients) -> Result<()> {
        let params: Vec<&mut Param> = params.into_iter().collect();
        if let Some(p) = params.iter().find(|p| !grads.has_param(p.id())) {
            return Err(contract(format!("missing gradient for parameter of shape {:?}", p.value.shape())));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for p in params {
            let g = grads.param(p.id()).expect("checked above");
            let n = p.value.len();
            let st = self.state.entry(p.id()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            for (((w, gv), m), v) in p.value.data_mut().iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
                *m = beta1 * *m + (1.0 - beta1) * gv;
                *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
