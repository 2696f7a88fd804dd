//! SGD with momentum and RMSProp, both with L2 weight decay folded into the
//! gradient, plus the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Grads, Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// RMSProp smoothing constant.
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            momentum: 0.9,
            rho: 0.99,
            epsilon: 1e-8,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("rho in [0,1), epsilon > 0 and weight_decay >= 0 required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Step exponential decay: `lr = base · gamma^floor(epoch / step_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub gamma: f64,
    pub step_size: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            step_size: 3,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || self.step_size == 0 {
            return Err(Error::Config(format!(
                "lr schedule gamma {} / step {} invalid",
                self.gamma, self.step_size
            )));
        }
        Ok(())
    }
}

pub fn lr_at(epoch: usize, base_lr: f64, sched: &LrSchedule) -> f64 {
    base_lr * sched.gamma.powi((epoch / sched.step_size.max(1)) as i32)
}

/// Per-parameter moment buffers, created lazily on the first step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    buffers: Vec<Option<Mat>>,
}

fn effective_grad(g: &Mat, w: &Mat, wd: f64) -> Result<Vec<f64>> {
    let out: Vec<f64> = g.data.iter().zip(&w.data).map(|(g, w)| g + wd * w).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite gradient".into()));
    }
    Ok(out)
}

fn check_shape(store: &ParamStore, grads: &Grads, state: &mut OptimizerState) -> Result<()> {
    if grads.by_param.len() > store.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.by_param.len(),
            store.len()
        )));
    }
    state.buffers.resize(store.len(), None);
    Ok(())
}

/// `v ← μ·v + g + λ·w; w ← w − lr·v`.
pub fn sgd_step(store: &mut ParamStore, grads: &Grads, state: &mut OptimizerState, cfg: &OptimizerConfig, lr: f64) -> Result<()> {
    check_shape(store, grads, state)?;
    for id in store.ids().collect::<Vec<_>>() {
        if !store.is_trainable(id) {
            continue;
        }
        let Some(g) = grads.get(id) else { continue };
        let w = store.value(id);
        if g.shape() != w.shape() {
            return Err(Error::Shape(format!("gradient shape for {}", store.name(id))));
        }
        let ge = effective_grad(g, w, cfg.weight_decay)?;
        let v = state.buffers[id.0].get_or_insert_with(|| Mat::zeros(w.rows, w.cols));
        for (vi, gi) in v.data.iter_mut().zip(&ge) {
            *vi = cfg.momentum * *vi + gi;
        }
        let v = v.data.clone();
        for (wi, vi) in store.value_mut(id).data.iter_mut().zip(&v) {
            *wi -= lr * vi;
        }
    }
    Ok(())
}

/// `s ← ρ·s + (1−ρ)·g²; w ← w − lr·g/(√s + ε)`.
pub fn rmsprop_step(store: &mut ParamStore, grads: &Grads, state: &mut OptimizerState, cfg: &OptimizerConfig, lr: f64) -> Result<()> {
    check_shape(store, grads, state)?;
    for id in store.ids().collect::<Vec<_>>() {
        if !store.is_trainable(id) {
            continue;
        }
        let Some(g) = grads.get(id) else { continue };
        let w = store.value(id);
        if g.shape() != w.shape() {
            return Err(Error::Shape(format!("gradient shape for {}", store.name(id))));
        }
        let ge = effective_grad(g, w, cfg.weight_decay)?;
        let s = state.buffers[id.0].get_or_insert_with(|| Mat::zeros(w.rows, w.cols));
        let mut delta = Vec::with_capacity(ge.len());
        for (si, gi) in s.data.iter_mut().zip(&ge) {
            *si = cfg.rho * *si + (1.0 - cfg.rho) * gi * gi;
            delta.push(gi / (si.sqrt() + cfg.epsilon));
        }
        for (wi, d) in store.value_mut(id).data.iter_mut().zip(&delta) {
            *wi -= lr * d;
        }
    }
    Ok(())
}

pub fn optimizer_step(store: &mut ParamStore, grads: &Grads, state: &mut OptimizerState, cfg: &OptimizerConfig, lr: f64) -> Result<()> {
    match cfg.kind {
        OptimizerKind::SgdMomentum => sgd_step(store, grads, state, cfg, lr),
        OptimizerKind::Rmsprop => rmsprop_step(store, grads, state, cfg, lr),
    }
}
