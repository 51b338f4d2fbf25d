//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment buffers and step count, one pair of buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamWState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            state: AdamWState::new(params),
        }
    }

    pub fn from_state(config: AdamWConfig, state: AdamWState) -> Self {
        Self { config, state }
    }

    /// One update. The step counter advances before bias correction, so the
    /// first call uses t = 1.
    ///
    /// p ← p − lr·m̂/(√v̂ + ε) − lr·wd·p
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
    ) -> Result<()> {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        let st = &mut self.state;
        if params.len() != grads.len() || params.len() != st.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adamw over {} params with {} grads and {} moment buffers",
                params.len(),
                grads.len(),
                st.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != st.m[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adamw param {i}: param {:?}, grad {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    st.m[i].shape()
                )));
            }
        }

        st.step += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        } = self.config;
        let t = st.step as i32;
        let bc1 = (1.0 - (b1 as f64).powi(t)) as f32;
        let bc2 = (1.0 - (b2 as f64).powi(t)) as f32;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(st.m.iter_mut().zip(st.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                md[k] = b1 * md[k] + (1.0 - b1) * gk;
                vd[k] = b2 * vd[k] + (1.0 - b2) * gk * gk;
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                let old = pd[k];
                pd[k] = old - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * old;
            }
        }
        Ok(())
    }
}
