//! Serving policies and the per-policy latency tables the simulator runs on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baselines::{AdaptMode, TimeoutLevel};
use crate::dse::{run_dse, BatchingMode, DseConfig, DseResult, PolicySpace, TileGrid};
use crate::error::{Error, Result};
use crate::npu::{LatencyLut, NpuDesign, Platform};
use crate::num::Scalar;
use crate::workload::ModelSpec;

/// A serving policy selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// Fluid batching with exit-aware preemption.
    FluidB,
    /// One sample at a time.
    Serial,
    /// Model-level adaptive batching with a timeout.
    AdaptB(AdaptMode, TimeoutLevel),
    /// Layer-level preemption with a coarse latency estimate.
    Lazy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::FluidB,
        PolicyKind::Serial,
        PolicyKind::AdaptB(AdaptMode::FcOnly, TimeoutLevel::S),
        PolicyKind::AdaptB(AdaptMode::FcOnly, TimeoutLevel::M),
        PolicyKind::AdaptB(AdaptMode::FcOnly, TimeoutLevel::L),
        PolicyKind::AdaptB(AdaptMode::RUniform, TimeoutLevel::S),
        PolicyKind::AdaptB(AdaptMode::RUniform, TimeoutLevel::M),
        PolicyKind::AdaptB(AdaptMode::RUniform, TimeoutLevel::L),
        PolicyKind::Lazy,
    ];

    /// Policy space searched when building this policy's NPU.
    pub fn space(self) -> PolicySpace {
        match self {
            PolicyKind::FluidB => PolicySpace::fluid(),
            PolicyKind::Serial | PolicyKind::Lazy => PolicySpace::uniform(BatchingMode::UniformR),
            PolicyKind::AdaptB(mode, _) => PolicySpace::uniform(mode.batching_mode()),
        }
    }

    /// Largest batch the policy will form.
    pub fn batch_cap(self, b_max: usize) -> usize {
        match self {
            PolicyKind::Serial => 1,
            _ => b_max,
        }
    }

    /// Whether the simulator steps layer by layer rather than exit by exit.
    pub fn layer_granular(self) -> bool {
        self == PolicyKind::Lazy
    }

    /// DSE settings for this policy's accelerator: fluid batching weighs every
    /// batch size; the baselines are tuned for their largest batch.
    pub fn dse_config<T: Scalar>(self, platform: Platform<T>, b_max: usize) -> DseConfig<T> {
        let cap = self.batch_cap(b_max);
        let cfg = DseConfig::new(platform, cap).with_space(self.space());
        match self {
            PolicyKind::FluidB => cfg,
            _ => cfg.single_batch(cap),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::FluidB => write!(f, "fluidb"),
            PolicyKind::Serial => write!(f, "serial"),
            PolicyKind::Lazy => write!(f, "lazy"),
            PolicyKind::AdaptB(mode, level) => {
                let m = match mode {
                    AdaptMode::FcOnly => "fc",
                    AdaptMode::RUniform => "r",
                };
                let l = match level {
                    TimeoutLevel::S => "s",
                    TimeoutLevel::M => "m",
                    TimeoutLevel::L => "l",
                };
                write!(f, "{m}-adaptb-{l}")
            }
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<String> = PolicyKind::ALL.iter().map(ToString::to_string).collect();
                Error::Parse(format!("unknown policy `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

impl Serialize for PolicyKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A contiguous run of layers executed without a scheduling decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub first_layer: usize,
    pub last_layer: usize,
    /// Exit taken right after the stage, if any.
    pub exit: Option<usize>,
}

/// Everything the simulator needs to run one policy on one accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingPlan<T> {
    pub kind: PolicyKind,
    pub design: NpuDesign<T>,
    pub b_max: usize,
    pub stages: Vec<Stage>,
    /// Seconds, row-major by stage then batch size `1..=b_max`.
    pub latency: Vec<T>,
}

impl<T: Scalar> ServingPlan<T> {
    /// Builds the stage table on a given accelerator, picking each layer's
    /// best policy within the policy's search space.
    pub fn new(kind: PolicyKind, model: &ModelSpec, design: NpuDesign<T>, b_max: usize) -> Result<Self> {
        model.validate()?;
        design.validate()?;
        let b_max = kind.batch_cap(b_max);
        if b_max == 0 {
            return Err(Error::InvalidArgument("B_max must be at least 1".into()));
        }
        let stages = stages_for(kind, model);
        let space = kind.space();
        let mut layer_lat = Vec::with_capacity(model.n_layers());
        for layer in &model.layers {
            let row = (1..=b_max)
                .map(|b| {
                    let policy = space.optimise_layer(&design, layer, b).0;
                    space.layer_latency(&design, layer, b, policy)
                })
                .collect::<Result<Vec<T>>>()?;
            layer_lat.push(row);
        }
        let mut latency = Vec::with_capacity(stages.len() * b_max);
        for st in &stages {
            for b in 1..=b_max {
                latency.push((st.first_layer..=st.last_layer).map(|l| layer_lat[l][b - 1]).sum());
            }
        }
        Ok(Self {
            kind,
            design,
            b_max,
            stages,
            latency,
        })
    }

    /// Runs this policy's DSE on `platform` and builds the plan on the
    /// winning design.
    pub fn explore(
        kind: PolicyKind,
        model: &ModelSpec,
        platform: Platform<T>,
        b_max: usize,
        grid: Option<TileGrid>,
    ) -> Result<(Self, DseResult<T>)> {
        let mut cfg = kind.dse_config(platform, b_max);
        if let Some(grid) = grid {
            cfg = cfg.with_grid(grid);
        }
        let res = run_dse(&cfg, model)?;
        let plan = Self::new(kind, model, res.best_design, b_max)?;
        Ok((plan, res))
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Seconds to run stage `s` with `b` samples.
    pub fn stage_latency(&self, s: usize, b: usize) -> T {
        self.latency[s * self.b_max + b - 1]
    }

    /// Whole network at batch `b`.
    pub fn full_latency(&self, b: usize) -> T {
        (0..self.n_stages()).map(|s| self.stage_latency(s, b)).sum()
    }

    /// Exit-level table; only defined when stages are exit segments.
    pub fn lut(&self) -> Result<LatencyLut<T>> {
        if self.kind.layer_granular() {
            return Err(Error::Config("layer-granular plans have no exit table".into()));
        }
        Ok(LatencyLut::from_fn(self.n_stages(), self.b_max, |s, b| self.stage_latency(s, b)))
    }
}

fn stages_for(kind: PolicyKind, model: &ModelSpec) -> Vec<Stage> {
    if kind.layer_granular() {
        let exit_at: std::collections::HashMap<usize, usize> = model
            .exits
            .exit_layer_indices
            .iter()
            .enumerate()
            .map(|(e, &l)| (l, e))
            .collect();
        (0..model.n_layers())
            .map(|l| Stage {
                first_layer: l,
                last_layer: l,
                exit: exit_at.get(&l).copied(),
            })
            .collect()
    } else {
        (0..model.n_exits())
            .map(|e| {
                let r = model.segment_layers(e);
                Stage {
                    first_layer: *r.start(),
                    last_layer: *r.end(),
                    exit: Some(e),
                }
            })
            .collect()
    }
}
