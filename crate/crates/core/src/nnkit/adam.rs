use serde::{Deserialize, Serialize};

use super::mlp::{FlatParams, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a list of parameter stores updated together.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<ParamStore>,
    second: Vec<ParamStore>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&ParamStore]) -> Self {
        Self {
            config,
            first: shapes.iter().map(|p| p.zeros_like()).collect(),
            second: shapes.iter().map(|p| p.zeros_like()).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[ParamStore] {
        &self.first
    }

    pub fn second_moment(&self) -> &[ParamStore] {
        &self.second
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite;
    /// the error carries the flat index (counted across all stores).
    pub fn step(&mut self, params: &mut [&mut ParamStore], grads: &[&ParamStore]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam step",
                self.first.len(),
                params.len().min(grads.len()),
            ));
        }
        let mut offset = 0;
        for (i, g) in grads.iter().enumerate() {
            if !g.same_shape(&self.first[i]) || !params[i].same_shape(&self.first[i]) {
                return Err(Error::shape(
                    format!("adam store {i}"),
                    "optimizer state shape",
                    "different shape",
                ));
            }
            for (j, v) in g.blocks().flatten().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteGradient { index: offset + j });
                }
            }
            offset += g.num_scalars();
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let blocks = p
                .blocks_mut()
                .zip(g.blocks())
                .zip(m.blocks_mut())
                .zip(v.blocks_mut());
            for (((pb, gb), mb), vb) in blocks {
                for (((pv, &gv), mv), vv) in
                    pb.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut())
                {
                    *mv = beta1 * *mv + (1.0 - beta1) * gv;
                    *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                    let mhat = *mv / c1;
                    let vhat = *vv / c2;
                    *pv -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Single-store convenience wrapper around [`AdamState::step`].
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState) -> Result<()> {
    state.step(&mut [params], &[grads])
}
