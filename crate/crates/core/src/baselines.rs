//! Reference serving policies: serial execution, adaptive batching with a
//! batch-forming timeout, and layer-level lazy batching.

use serde::{Deserialize, Serialize};

use crate::dse::{BatchingMode, PolicySpace};
use crate::error::{Error, Result};
use crate::npu::{LayerPolicy, NpuDesign};
use crate::num::{secs_to_ns, Scalar};
use crate::scheduler::{compute_slack, PreemptionDecision, Request, SloConfig};
use crate::workload::ModelSpec;

/// Layout of the batch for adaptive batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptMode {
    FcOnly,
    RUniform,
}

impl AdaptMode {
    pub fn batching_mode(self) -> BatchingMode {
        match self {
            AdaptMode::FcOnly => BatchingMode::FcOnly,
            AdaptMode::RUniform => BatchingMode::UniformR,
        }
    }
}

/// Timeout as a share of the latency objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeoutLevel {
    S,
    M,
    L,
}

impl TimeoutLevel {
    pub const ALL: [TimeoutLevel; 3] = [TimeoutLevel::S, TimeoutLevel::M, TimeoutLevel::L];

    pub fn fraction(self) -> f64 {
        match self {
            TimeoutLevel::S => 0.05,
            TimeoutLevel::M => 0.45,
            TimeoutLevel::L => 0.95,
        }
    }

    pub fn timeout<T: Scalar>(self, t_slo: T) -> T {
        T::of_f64(self.fraction()) * t_slo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptBConfig<T> {
    pub b_max: usize,
    /// Batch-forming window, seconds.
    pub t_timeout: T,
    pub mode: AdaptMode,
}

impl<T: Scalar> AdaptBConfig<T> {
    pub fn new(b_max: usize, t_timeout: T, mode: AdaptMode) -> Result<Self> {
        if b_max == 0 {
            return Err(Error::InvalidArgument("B_max must be at least 1".into()));
        }
        if !(t_timeout >= T::zero()) {
            return Err(Error::InvalidArgument(format!("timeout must be non-negative, got {t_timeout}")));
        }
        Ok(Self {
            b_max,
            t_timeout,
            mode,
        })
    }

    pub fn timeout_ns(&self) -> u64 {
        secs_to_ns(self.t_timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchDecision {
    /// Send this many samples from the head of the queue.
    Dispatch(usize),
    /// Nothing to send before this time.
    WaitUntil(u64),
    Idle,
}

/// Full batches go at once; a partial batch goes when its oldest sample has
/// waited for the timeout.
pub fn adaptb_dispatch<T: Scalar>(queue_arrivals_ns: &[u64], cfg: &AdaptBConfig<T>, now_ns: u64) -> DispatchDecision {
    let Some(&oldest) = queue_arrivals_ns.first() else {
        return DispatchDecision::Idle;
    };
    if queue_arrivals_ns.len() >= cfg.b_max {
        return DispatchDecision::Dispatch(cfg.b_max);
    }
    let deadline = oldest + cfg.timeout_ns();
    if now_ns >= deadline {
        DispatchDecision::Dispatch(queue_arrivals_ns.len())
    } else {
        DispatchDecision::WaitUntil(deadline)
    }
}

/// Whole-network latency when only FC layers are batched: convolutions run
/// once per sample, FC layers once for the batch with rows appended.
pub fn fc_only_latency<T: Scalar>(design: &NpuDesign<T>, model: &ModelSpec, b: usize) -> Result<T> {
    let space = PolicySpace::uniform(BatchingMode::FcOnly);
    model
        .layers
        .iter()
        .map(|l| {
            let policy = space.optimise_layer(design, l, b).0;
            space.layer_latency(design, l, b, policy)
        })
        .sum()
}

/// Batched latency as batch size times single-sample latency.
pub fn lazy_estimate<T: Scalar>(single_sample: T, b: usize) -> T {
    T::of_u64(b as u64) * single_sample
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LazyConfig<T> {
    /// Time charged to the NPU for every layer-boundary check, seconds.
    pub check_overhead: T,
}

impl<T: Scalar> Default for LazyConfig<T> {
    fn default() -> Self {
        Self {
            check_overhead: T::zero(),
        }
    }
}

/// What lazy batching does at a layer boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LazyAction<T> {
    /// The batch has been full at some point; no check is made.
    Skip,
    Preempt(PreemptionDecision<T>),
    Continue(Option<PreemptionDecision<T>>),
}

/// Preemption check after layer `layer`, using the coarse estimate over
/// single-sample per-layer latencies.
pub fn lazybatching_step<T: Scalar>(
    members: &[Request],
    reached_max: bool,
    layer: usize,
    n_queued: usize,
    single_sample_layers: &[T],
    slo: &SloConfig<T>,
    now_ns: u64,
) -> Result<LazyAction<T>> {
    let b_act = members.len();
    if reached_max || b_act >= slo.b_max {
        return Ok(LazyAction::Skip);
    }
    let Some(oldest) = members.iter().min_by_key(|r| (r.arrival_ns, r.sample_id)) else {
        return Ok(LazyAction::Continue(None));
    };
    if n_queued == 0 || layer + 1 >= single_sample_layers.len() {
        return Ok(LazyAction::Continue(None));
    }
    let b_incr = n_queued.min(slo.b_max - b_act);
    let slack = compute_slack(oldest, now_ns, slo)?;
    let head: T = single_sample_layers[..=layer].iter().copied().sum();
    let tail: T = single_sample_layers[layer + 1..].iter().copied().sum();
    let t_overhead = lazy_estimate(head, b_incr) + lazy_estimate(tail, b_act + b_incr);
    let d = PreemptionDecision {
        preempt: t_overhead < slack,
        b_incr,
        t_overhead,
        t_slack: slack,
    };
    Ok(if d.preempt {
        LazyAction::Preempt(d)
    } else {
        LazyAction::Continue(Some(d))
    })
}

/// Policies used by the status-quo baselines: the whole batch along `R`.
pub fn r_uniform_policy(b: usize) -> LayerPolicy {
    LayerPolicy::r_batching(b)
}
