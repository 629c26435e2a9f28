use serde::{Deserialize, Serialize};

use super::{LayerPolicy, Stacking};
use crate::error::{Error, Result};
use crate::num::ceil_log2;

/// Fluid batching control block: one policy per (layer, active batch size).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fbcb {
    pub n_layers: usize,
    pub b_max: usize,
    /// Row-major by layer, then batch size `1..=b_max`.
    pub entries: Vec<LayerPolicy>,
}

/// A decoded control-block entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FbcbEntry {
    pub b_r: usize,
    pub b_p: usize,
    pub k: Stacking,
}

impl Fbcb {
    pub fn new(n_layers: usize, b_max: usize, entries: Vec<LayerPolicy>) -> Result<Self> {
        let fbcb = Self {
            n_layers,
            b_max,
            entries,
        };
        fbcb.validate()?;
        Ok(fbcb)
    }

    /// Builds the table by evaluating `f(layer, batch)` for every cell.
    pub fn from_fn(
        n_layers: usize,
        b_max: usize,
        mut f: impl FnMut(usize, usize) -> LayerPolicy,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(n_layers * b_max);
        for l in 0..n_layers {
            for b in 1..=b_max {
                entries.push(f(l, b));
            }
        }
        Self::new(n_layers, b_max, entries)
    }

    /// Every layer R-batches the whole batch; no stacking.
    pub fn uniform_r(n_layers: usize, b_max: usize) -> Self {
        Self::from_fn(n_layers, b_max, |_, b| LayerPolicy::r_batching(b)).expect("valid table")
    }

    /// Every layer P-batches the whole batch; no stacking.
    pub fn uniform_p(n_layers: usize, b_max: usize) -> Self {
        Self::from_fn(n_layers, b_max, |_, _| LayerPolicy::p_batching()).expect("valid table")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.b_max == 0 {
            return Err(Error::InvalidArgument(
                "control block needs at least one layer and batch size".into(),
            ));
        }
        if self.entries.len() != self.n_layers * self.b_max {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries, found {}",
                self.n_layers * self.b_max,
                self.entries.len()
            )));
        }
        for (i, p) in self.entries.iter().enumerate() {
            p.check(i % self.b_max + 1)?;
        }
        Ok(())
    }

    pub fn policy(&self, layer: usize, b_act: usize) -> Result<LayerPolicy> {
        if layer >= self.n_layers {
            return Err(Error::Lookup(format!(
                "layer {layer} outside [0, {}]",
                self.n_layers - 1
            )));
        }
        if b_act == 0 || b_act > self.b_max {
            return Err(Error::Lookup(format!(
                "batch size {b_act} outside [1, {}]",
                self.b_max
            )));
        }
        Ok(self.entries[layer * self.b_max + b_act - 1])
    }

    /// Returns `(B_R, B_P, k)` for layer `layer` at active batch `b_act`.
    pub fn lookup(&self, layer: usize, b_act: usize) -> Result<FbcbEntry> {
        let p = self.policy(layer, b_act)?;
        Ok(FbcbEntry {
            b_r: p.b_r,
            b_p: p.b_p(b_act),
            k: p.k,
        })
    }

    pub fn size_bits(&self) -> u64 {
        fbcb_size_bits(self.n_layers as u64, self.b_max as u64)
    }
}

/// Bits per entry: the `B_R` field.
pub fn b_r_field_bits(b_max: u64) -> u32 {
    ceil_log2(b_max)
}

/// Bits per entry: the `k` field (three states).
pub const K_FIELD_BITS: u32 = 2;

/// `L·B_max·(⌈log₂ B_max⌉ + 2)`.
pub fn fbcb_size_bits(n_layers: u64, b_max: u64) -> u64 {
    n_layers * b_max * (b_r_field_bits(b_max) + K_FIELD_BITS) as u64
}
