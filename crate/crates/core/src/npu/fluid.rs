use serde::{Deserialize, Serialize};

use super::Stacking;
use crate::error::{Error, Result};
use crate::workload::LayerSpec;

/// Where zero guard elements are inserted along `P`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardMode {
    /// Only when more than one sample is appended along `P`.
    #[default]
    WhenSplit,
    /// Always add `P mod T_P` guards, even for a single sample group.
    Always,
}

/// Matrix dimensions of one layer after appending a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchedLayerDims {
    pub r_hat: u64,
    pub p_hat: u64,
    pub c: u64,
    pub useful_macs: u64,
}

/// Per-layer batching split and PE stacking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerPolicy {
    /// Samples appended along `R`; the rest go along `P`.
    pub b_r: usize,
    pub k: Stacking,
}

impl LayerPolicy {
    pub fn new(b_r: usize, k: Stacking) -> Self {
        Self { b_r, k }
    }

    /// Uniform R-batching without stacking.
    pub fn r_batching(b_act: usize) -> Self {
        Self::new(b_act, Stacking::One)
    }

    /// Uniform P-batching without stacking.
    pub fn p_batching() -> Self {
        Self::new(1, Stacking::One)
    }

    /// Sample groups appended along `P`: `B_act − B_R + 1`.
    pub fn b_p(&self, b_act: usize) -> usize {
        b_act + 1 - self.b_r
    }

    pub fn check(&self, b_act: usize) -> Result<()> {
        if self.b_r == 0 || self.b_r > b_act {
            return Err(Error::InvalidPolicy {
                b_r: self.b_r,
                b_act,
            });
        }
        Ok(())
    }
}

/// Fluid batching dimensions with the default guard mode.
pub fn fluid_dims(layer: &LayerSpec, b_act: usize, b_r: usize, t_p: u64) -> Result<BatchedLayerDims> {
    fluid_dims_with(layer, b_act, b_r, t_p, GuardMode::default())
}

/// `R̂ = B_R·R` and `P̂ = B_P·(P + P mod T_P)`, with `B_P = B_act − B_R + 1`.
pub fn fluid_dims_with(
    layer: &LayerSpec,
    b_act: usize,
    b_r: usize,
    t_p: u64,
    guard: GuardMode,
) -> Result<BatchedLayerDims> {
    if b_act == 0 || b_r == 0 || b_r > b_act {
        return Err(Error::InvalidPolicy { b_r, b_act });
    }
    if t_p == 0 {
        return Err(Error::InvalidArgument("T_P must be positive".into()));
    }
    let b_p = (b_act + 1 - b_r) as u64;
    let p_hat = if b_p == 1 && guard == GuardMode::WhenSplit {
        layer.p
    } else {
        b_p * (layer.p + layer.p % t_p)
    };
    Ok(BatchedLayerDims {
        r_hat: b_r as u64 * layer.r,
        p_hat,
        c: layer.c,
        useful_macs: b_act as u64 * layer.macs(),
    })
}
