//! SGD with momentum, Adam, and global-norm gradient clipping over any
//! [`ParamBlocks`] value.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::ParamBlocks;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD only.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64| Err(Error::InvalidArgument(format!("{field} out of range: {v}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm", c);
            }
        }
        Ok(())
    }
}

/// Moment buffers (`first` doubles as the SGD velocity), one per block.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<P: ParamBlocks>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|(_, b)| vec![0.0; b.len()]).collect();
        OptimizerState {
            second: zeros.clone(),
            first: zeros,
            step: 0,
        }
    }
}

fn check_congruent<P: ParamBlocks>(op: &'static str, params: &P, grads: &P, state: &OptimizerState) -> Result<()> {
    let p = params.blocks();
    let g = grads.blocks();
    if p.len() != g.len() || p.len() != state.first.len() {
        return Err(Error::shape(
            op,
            format!("{} param blocks", p.len()),
            format!("{} grad blocks, {} state blocks", g.len(), state.first.len()),
        ));
    }
    for (((name, pb), (_, gb)), sb) in p.iter().zip(&g).zip(&state.first) {
        if pb.len() != gb.len() || pb.len() != sb.len() {
            return Err(Error::shape(
                op,
                format!("{name} of {}", pb.len()),
                format!("grad {} / state {}", gb.len(), sb.len()),
            ));
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the factor applied (1 when no clipping happened).
pub fn clip_global_norm<P: ParamBlocks>(grads: &mut P, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.scale_all(s);
        Ok(s)
    } else {
        Ok(1.0)
    }
}

/// `v ← μ·v + g; p ← p − lr·v`.
pub fn sgd_update<P: ParamBlocks>(params: &mut P, grads: &P, state: &mut OptimizerState, cfg: &OptimizerConfig) -> Result<()> {
    check_congruent("sgd_update", params, grads, state)?;
    let g = grads.blocks();
    for ((p, (_, g)), v) in params.blocks_mut().into_iter().zip(g).zip(&mut state.first) {
        for k in 0..p.len() {
            v[k] = cfg.momentum * v[k] + g[k];
            p[k] -= cfg.learning_rate * v[k];
        }
    }
    state.step += 1;
    Ok(())
}

/// Adam with bias correction.
pub fn adam_update<P: ParamBlocks>(params: &mut P, grads: &P, state: &mut OptimizerState, cfg: &OptimizerConfig) -> Result<()> {
    check_congruent("adam_update", params, grads, state)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let g = grads.blocks();
    let moments = state.first.iter_mut().zip(state.second.iter_mut());
    for ((p, (_, g)), (m, v)) in params.blocks_mut().into_iter().zip(g).zip(moments) {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Clipping followed by the configured update rule.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new<P: ParamBlocks>(config: OptimizerConfig, params: &P) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimizerState::new(params),
        })
    }

    /// Returns the clipping factor that was applied to `grads`.
    pub fn step<P: ParamBlocks>(&mut self, params: &mut P, grads: &mut P) -> Result<f64> {
        let scale = match self.config.clip_norm {
            Some(c) => clip_global_norm(grads, c)?,
            None => 1.0,
        };
        match self.config.kind {
            OptimizerKind::Sgd => sgd_update(params, grads, &mut self.state, &self.config)?,
            OptimizerKind::Adam => adam_update(params, grads, &mut self.state, &self.config)?,
        }
        Ok(scale)
    }
}
