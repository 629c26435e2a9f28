//! Exit-aware preemptive scheduling.
//!
//! Preemption is only considered at intermediate exits. When samples leave
//! the active batch there, queued samples may be run from the input up to
//! the same exit and merged back in, provided the extra work cannot push the
//! oldest member past its latency objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npu::LatencyLut;
use crate::num::{ns_to_secs, Scalar};
use crate::workload::ModelSpec;

/// One inference request. Times are integer nanoseconds since the start of
/// the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub sample_id: u64,
    pub arrival_ns: u64,
    pub assigned_exit: usize,
    pub dispatch_ns: Option<u64>,
    pub completion_ns: Option<u64>,
}

impl Request {
    pub fn new(sample_id: u64, arrival_ns: u64, assigned_exit: usize) -> Self {
        Self {
            sample_id,
            arrival_ns,
            assigned_exit,
            dispatch_ns: None,
            completion_ns: None,
        }
    }

    pub fn arrival_time<T: Scalar>(&self) -> T {
        ns_to_secs(self.arrival_ns)
    }

    /// End-to-end latency once completed.
    pub fn latency_ns(&self) -> Option<u64> {
        self.completion_ns.map(|c| c - self.arrival_ns)
    }
}

/// The objective in whole nanoseconds, rounded down so that meeting it in
/// nanoseconds implies meeting it in seconds.
pub fn slo_ns<T: Scalar>(t_slo: T) -> u64 {
    (t_slo.as_f64() * 1e9).floor().max(0.0) as u64
}

/// Latency objective and batch cap of the serving policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloConfig<T> {
    /// Tail-latency objective, seconds.
    pub t_slo: T,
    pub b_max: usize,
}

impl<T: Scalar> SloConfig<T> {
    pub fn new(t_slo: T, b_max: usize) -> Result<Self> {
        let cfg = Self { t_slo, b_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_slo > T::zero()) || !self.t_slo.is_finite() {
            return Err(Error::InvalidArgument(format!("SLO must be positive, got {}", self.t_slo)));
        }
        if self.b_max == 0 {
            return Err(Error::InvalidArgument("B_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// The batch currently owning the NPU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchState {
    pub members: Vec<Request>,
    /// Next exit segment to execute.
    pub position: usize,
}

impl BatchState {
    pub fn new(members: Vec<Request>) -> Self {
        Self {
            members,
            position: 0,
        }
    }

    pub fn b_act(&self) -> usize {
        self.members.len()
    }

    /// Member with the earliest arrival.
    pub fn oldest(&self) -> Option<&Request> {
        self.members.iter().min_by_key(|r| (r.arrival_ns, r.sample_id))
    }

    /// Drops the members that leave at `exit` and returns them.
    pub fn remove_exiting(&mut self, exit: usize) -> Vec<Request> {
        let (out, stay): (Vec<_>, Vec<_>) = self.members.drain(..).partition(|r| r.assigned_exit == exit);
        self.members = stay;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreemptionDecision<T> {
    pub preempt: bool,
    pub b_incr: usize,
    pub t_overhead: T,
    pub t_slack: T,
}

/// `T_SLO − (T_wait + T_exec)` for the oldest member; may be negative.
pub fn compute_slack<T: Scalar>(oldest: &Request, now_ns: u64, slo: &SloConfig<T>) -> Result<T> {
    let dispatch = oldest.dispatch_ns.ok_or_else(|| {
        Error::InvalidArgument(format!("sample {} has not been dispatched", oldest.sample_id))
    })?;
    let wait: T = ns_to_secs(dispatch - oldest.arrival_ns);
    let exec: T = ns_to_secs(now_ns.saturating_sub(dispatch));
    Ok(slo.t_slo - (wait + exec))
}

/// Overhead of running `b_incr` new samples up to exit `i` and the merged
/// batch of `b_merged` to the end, compared against the slack.
pub fn preemption_criterion<T: Scalar>(
    lut: &LatencyLut<T>,
    i: usize,
    b_incr: usize,
    b_merged: usize,
    slack: T,
) -> PreemptionDecision<T> {
    preemption_criterion_with(lut, i, b_incr, b_merged, slack, T::zero())
}

/// As [`preemption_criterion`], adding a fixed cost for writing the halted
/// batch back.
pub fn preemption_criterion_with<T: Scalar>(
    lut: &LatencyLut<T>,
    i: usize,
    b_incr: usize,
    b_merged: usize,
    slack: T,
    writeback: T,
) -> PreemptionDecision<T> {
    let t_overhead = lut.prefix(i, b_incr) + lut.suffix(i, b_merged) + writeback;
    PreemptionDecision {
        preempt: b_incr >= 1 && t_overhead < slack,
        b_incr,
        t_overhead,
        t_slack: slack,
    }
}

/// Intermediate exits: every exit but the last.
pub fn preemptible_points(model: &ModelSpec) -> Vec<usize> {
    (0..model.n_exits().saturating_sub(1)).collect()
}

/// What the scheduler does at an exit after removing the exiting samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitAction<T> {
    /// Nothing left in the batch; start afresh from the queue.
    EndBatch,
    /// Halt and run `decision.b_incr` queued samples up to this exit.
    Preempt(PreemptionDecision<T>),
    /// Carry on with the remaining batch.
    Continue(Option<PreemptionDecision<T>>),
}

/// One iteration of the backfill loop at intermediate exit `exit`, for a
/// batch whose exiting members have already been removed.
pub fn exit_step<T: Scalar>(
    state: &BatchState,
    exit: usize,
    n_queued: usize,
    lut: &LatencyLut<T>,
    slo: &SloConfig<T>,
    now_ns: u64,
) -> Result<ExitAction<T>> {
    let b_rem = state.b_act();
    let Some(oldest) = state.oldest() else {
        return Ok(ExitAction::EndBatch);
    };
    if b_rem >= slo.b_max || n_queued == 0 {
        return Ok(ExitAction::Continue(None));
    }
    let b_incr = n_queued.min(slo.b_max - b_rem);
    let slack = compute_slack(oldest, now_ns, slo)?;
    let d = preemption_criterion(lut, exit, b_incr, b_rem + b_incr, slack);
    Ok(if d.preempt {
        ExitAction::Preempt(d)
    } else {
        ExitAction::Continue(Some(d))
    })
}

/// Scheduler invocations per inference when checking at exits only.
pub fn exit_level_checks(model: &ModelSpec) -> usize {
    preemptible_points(model).len()
}

/// Scheduler invocations per inference when checking after every layer.
pub fn layerwise_checks(model: &ModelSpec) -> usize {
    model.n_layers()
}
