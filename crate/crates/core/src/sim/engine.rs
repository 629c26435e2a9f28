use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::event::{EventKind, LogRecord};
use crate::baselines::{adaptb_dispatch, AdaptBConfig, DispatchDecision, LazyConfig};
use crate::error::{Error, Result};
use crate::num::{secs_to_ns, Scalar};
use crate::scheduler::{slo_ns, Request, SloConfig};
use crate::serving::{PolicyKind, ServingPlan};
use crate::workload::{ArrivalTrace, ModelSpec};

/// Run-time knobs that are not part of the accelerator plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub slo: SloConfig<T>,
    /// Fixed cost of halting a batch for preemption, seconds.
    pub writeback: T,
    pub lazy: LazyConfig<T>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(slo: SloConfig<T>) -> Self {
        Self {
            slo,
            writeback: T::zero(),
            lazy: LazyConfig::default(),
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub log: Vec<LogRecord>,
    /// Ordered by sample id.
    pub requests: Vec<Request>,
    pub scheduler_invocations: u64,
    pub preemptions: u64,
    pub batches: u64,
}

// Same-time ordering of queued events.
const PRIO_ARRIVAL: u8 = 0;
const PRIO_SEGMENT: u8 = 1;
const PRIO_TIMEOUT: u8 = 2;

#[derive(Debug)]
struct Job {
    id: u64,
    /// Indices into the request table, in dispatch order.
    members: Vec<usize>,
    stage: usize,
    /// Stage a catch-up run stops after; `None` for the main batch.
    target: Option<usize>,
    /// The batch has been full at some point.
    reached_max: bool,
    seg_dur: u64,
}

struct Engine<'a, T> {
    kind: PolicyKind,
    plan: &'a ServingPlan<T>,
    table_ns: Vec<u64>,
    cap: usize,
    slo_ns: u64,
    writeback_ns: u64,
    check_ns: u64,
    adapt: Option<AdaptBConfig<T>>,
    requests: Vec<Request>,
    queue: VecDeque<usize>,
    main: Option<Job>,
    catchup: Option<Job>,
    heap: BinaryHeap<Reverse<(u64, u8, u64)>>,
    log: Vec<LogRecord>,
    next_batch: u64,
    next_timeout: u64,
    pending_timeout: Option<u64>,
    invocations: u64,
    preemptions: u64,
}

/// Replays `trace` through the policy in `plan` until every request has
/// completed.
pub fn run_simulation<T: Scalar>(
    model: &ModelSpec,
    plan: &ServingPlan<T>,
    trace: &ArrivalTrace,
    cfg: &SimConfig<T>,
) -> Result<SimOutcome> {
    check_inputs(model, plan, trace, cfg)?;
    let mut engine = Engine::new(plan, trace, cfg)?;
    engine.run()?;
    let Engine {
        log,
        requests,
        invocations,
        preemptions,
        next_batch,
        ..
    } = engine;
    Ok(SimOutcome {
        log,
        requests,
        scheduler_invocations: invocations,
        preemptions,
        batches: next_batch,
    })
}

fn check_inputs<T: Scalar>(
    model: &ModelSpec,
    plan: &ServingPlan<T>,
    trace: &ArrivalTrace,
    cfg: &SimConfig<T>,
) -> Result<()> {
    cfg.slo.validate()?;
    model.validate()?;
    if !(cfg.writeback >= T::zero()) || !(cfg.lazy.check_overhead >= T::zero()) {
        return Err(Error::Config("overheads must be non-negative".into()));
    }
    let last = plan.stages.last().ok_or_else(|| Error::Config("plan has no stages".into()))?;
    if last.last_layer + 1 != model.n_layers() || last.exit != Some(model.n_exits() - 1) {
        return Err(Error::Config(format!(
            "plan covers {} layers and ends at exit {:?}; model has {} layers and {} exits",
            last.last_layer + 1,
            last.exit,
            model.n_layers(),
            model.n_exits()
        )));
    }
    if plan.latency.len() != plan.stages.len() * plan.b_max {
        return Err(Error::Config("plan latency table has the wrong size".into()));
    }
    if trace.is_empty() {
        return Err(Error::Config("arrival trace is empty".into()));
    }
    if !trace.has_exits() {
        return Err(Error::Config("arrival trace has no exit assignments".into()));
    }
    if let Some(&e) = trace.assigned_exits.iter().find(|&&e| e >= model.n_exits()) {
        return Err(Error::Config(format!("assigned exit {e} but the model has {} exits", model.n_exits())));
    }
    if trace.arrival_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Config("arrival times must be finite and non-negative".into()));
    }
    Ok(())
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(plan: &'a ServingPlan<T>, trace: &ArrivalTrace, cfg: &SimConfig<T>) -> Result<Self> {
        let cap = cfg.slo.b_max.min(plan.b_max);
        let adapt = match plan.kind {
            PolicyKind::AdaptB(mode, level) => Some(AdaptBConfig::new(cap, level.timeout(cfg.slo.t_slo), mode)?),
            _ => None,
        };
        let requests: Vec<Request> = (0..trace.len())
            .map(|i| Request::new(trace.sample_ids[i], secs_to_ns(trace.arrival_times[i]), trace.assigned_exits[i]))
            .collect();
        let mut heap = BinaryHeap::with_capacity(requests.len() + 8);
        for (i, r) in requests.iter().enumerate() {
            heap.push(Reverse((r.arrival_ns, PRIO_ARRIVAL, i as u64)));
        }
        Ok(Self {
            kind: plan.kind,
            plan,
            table_ns: plan.latency.iter().map(|&t| secs_to_ns(t).max(1)).collect(),
            cap,
            slo_ns: slo_ns(cfg.slo.t_slo),
            writeback_ns: secs_to_ns(cfg.writeback),
            check_ns: secs_to_ns(cfg.lazy.check_overhead),
            adapt,
            requests,
            queue: VecDeque::new(),
            main: None,
            catchup: None,
            heap,
            log: Vec::new(),
            next_batch: 0,
            next_timeout: 0,
            pending_timeout: None,
            invocations: 0,
            preemptions: 0,
        })
    }

    fn n_stages(&self) -> usize {
        self.plan.stages.len()
    }

    fn stage_ns(&self, s: usize, b: usize) -> u64 {
        self.table_ns[s * self.plan.b_max + b - 1]
    }

    fn prefix_ns(&self, s: usize, b: usize) -> u64 {
        (0..=s).map(|x| self.stage_ns(x, b)).sum()
    }

    fn suffix_ns(&self, s: usize, b: usize) -> u64 {
        (s + 1..self.n_stages()).map(|x| self.stage_ns(x, b)).sum()
    }

    fn record(&mut self, time_ns: u64, kind: EventKind, batch_id: Option<u64>, sample_id: Option<u64>, detail: String) {
        self.log.push(LogRecord {
            time_ns,
            kind,
            batch_id,
            sample_id,
            detail,
        });
    }

    fn run(&mut self) -> Result<()> {
        while let Some(Reverse((now, prio, id))) = self.heap.pop() {
            match prio {
                PRIO_ARRIVAL => {
                    self.on_arrival(now, id as usize);
                    // let every simultaneous arrival join before dispatching
                    let more = matches!(self.heap.peek(), Some(Reverse((t, PRIO_ARRIVAL, _))) if *t == now);
                    if !more && self.main.is_none() {
                        self.try_dispatch(now);
                    }
                }
                PRIO_SEGMENT => self.on_segment_done(now, id)?,
                _ => self.on_timeout(now)?,
            }
        }
        if let Some(r) = self.requests.iter().find(|r| r.completion_ns.is_none()) {
            return Err(Error::Config(format!("sample {} never completed", r.sample_id)));
        }
        Ok(())
    }

    fn on_arrival(&mut self, now: u64, idx: usize) {
        let r = &self.requests[idx];
        let detail = format!("exit={}", r.assigned_exit);
        let sid = r.sample_id;
        self.record(now, EventKind::Arrival, None, Some(sid), detail);
        self.queue.push_back(idx);
    }

    fn on_timeout(&mut self, now: u64) -> Result<()> {
        self.record(now, EventKind::TimeoutFire, None, None, String::new());
        if self.pending_timeout == Some(now) {
            self.pending_timeout = None;
        }
        if self.main.is_none() {
            self.try_dispatch(now);
        }
        Ok(())
    }

    /// Takes `n` samples off the queue, marking them dispatched at `now`.
    fn take(&mut self, n: usize, now: u64) -> Vec<usize> {
        let members: Vec<usize> = self.queue.drain(..n).collect();
        for &m in &members {
            self.requests[m].dispatch_ns = Some(now);
        }
        members
    }

    fn sample_list(&self, members: &[usize]) -> String {
        let ids: Vec<String> = members.iter().map(|&m| self.requests[m].sample_id.to_string()).collect();
        ids.join(",")
    }

    fn try_dispatch(&mut self, now: u64) {
        debug_assert!(self.main.is_none() && self.catchup.is_none());
        let n = match &self.adapt {
            Some(cfg) => {
                let arrivals: Vec<u64> = self
                    .queue
                    .iter()
                    .take(cfg.b_max)
                    .map(|&i| self.requests[i].arrival_ns)
                    .collect();
                match adaptb_dispatch(&arrivals, cfg, now) {
                    DispatchDecision::Dispatch(n) => n,
                    DispatchDecision::WaitUntil(t) => {
                        if self.pending_timeout != Some(t) {
                            self.pending_timeout = Some(t);
                            self.heap.push(Reverse((t, PRIO_TIMEOUT, self.next_timeout)));
                            self.next_timeout += 1;
                        }
                        0
                    }
                    DispatchDecision::Idle => 0,
                }
            }
            None => self.queue.len().min(self.cap),
        };
        if n == 0 {
            return;
        }
        let members = self.take(n, now);
        let id = self.next_batch;
        self.next_batch += 1;
        let detail = format!("b={n} samples={}", self.sample_list(&members));
        self.record(now, EventKind::Dispatch, Some(id), None, detail);
        let job = Job {
            id,
            members,
            stage: 0,
            target: None,
            reached_max: n == self.cap,
            seg_dur: 0,
        };
        self.main = Some(job);
        self.start_stage(false, now);
    }

    fn start_stage(&mut self, catchup: bool, at: u64) {
        let (stage, b) = {
            let job = if catchup { self.catchup.as_ref() } else { self.main.as_ref() }.expect("job exists");
            (job.stage, job.members.len())
        };
        let dur = self.stage_ns(stage, b);
        let job = if catchup { self.catchup.as_mut() } else { self.main.as_mut() }.expect("job exists");
        job.seg_dur = dur;
        self.heap.push(Reverse((at + dur, PRIO_SEGMENT, job.id)));
    }

    fn on_segment_done(&mut self, now: u64, id: u64) -> Result<()> {
        let catchup = self.catchup.is_some();
        let mut job = if catchup { self.catchup.take() } else { self.main.take() }.expect("a job is running");
        if job.id != id {
            return Err(Error::Config(format!("segment of batch {id} finished while batch {} runs", job.id)));
        }
        let s = job.stage;
        let detail = format!("stage={s} b={} dur_ns={}", job.members.len(), job.seg_dur);
        self.record(now, EventKind::SegmentDone, Some(job.id), None, detail);
        if let Some(e) = self.plan.stages[s].exit {
            let mut stay = Vec::with_capacity(job.members.len());
            for &m in &job.members {
                if self.requests[m].assigned_exit == e {
                    self.requests[m].completion_ns = Some(now);
                    let sid = self.requests[m].sample_id;
                    self.record(now, EventKind::Complete, Some(job.id), Some(sid), format!("exit={e}"));
                } else {
                    stay.push(m);
                }
            }
            job.members = stay;
        }
        let last = s + 1 == self.n_stages();
        if last && !job.members.is_empty() {
            return Err(Error::Config(format!("batch {} ran past the final exit", job.id)));
        }

        if catchup {
            if job.members.is_empty() || Some(s) == job.target {
                let mut main = self.main.take().expect("catch-up has a parent");
                let added = job.members.len();
                main.members.extend(job.members);
                if main.members.len() >= self.cap {
                    main.reached_max = true;
                }
                let detail = format!("from={} added={added} b={}", job.id, main.members.len());
                self.record(now, EventKind::Merge, Some(main.id), None, detail);
                self.main = Some(main);
                self.at_boundary(now);
            } else {
                job.stage += 1;
                self.catchup = Some(job);
                self.start_stage(true, now);
            }
            return Ok(());
        }

        if self.kind == PolicyKind::Lazy && last && !job.reached_max {
            // the layer-level check still runs after the final layer
            self.invocations += 1;
        }
        if job.members.is_empty() {
            self.try_dispatch(now);
        } else {
            self.main = Some(job);
            self.at_boundary(now);
        }
        Ok(())
    }

    /// The main batch has finished its current stage and is not empty.
    fn at_boundary(&mut self, now: u64) {
        let main = self.main.as_ref().expect("main batch");
        let s = main.stage;
        let b_rem = main.members.len();
        let mut delay = 0;
        let check = match self.kind {
            PolicyKind::FluidB => true,
            PolicyKind::Lazy if !main.reached_max => {
                delay = self.check_ns;
                true
            }
            _ => false,
        };
        let mut decision = None;
        if check {
            self.invocations += 1;
            if !self.queue.is_empty() && b_rem < self.cap {
                let b_incr = self.queue.len().min(self.cap - b_rem);
                let oldest = main
                    .members
                    .iter()
                    .map(|&m| &self.requests[m])
                    .min_by_key(|r| (r.arrival_ns, r.sample_id))
                    .expect("non-empty batch");
                let slack = self.slo_ns as i128 - (now - oldest.arrival_ns) as i128;
                let merged = b_rem + b_incr;
                let overhead = if self.kind == PolicyKind::Lazy {
                    b_incr as u64 * self.prefix_ns(s, 1) + merged as u64 * self.suffix_ns(s, 1)
                } else {
                    self.prefix_ns(s, b_incr) + self.suffix_ns(s, merged)
                } + self.writeback_ns
                    + delay;
                decision = Some((b_incr, overhead, slack, oldest.sample_id));
            }
        }
        match decision {
            Some((b_incr, overhead, slack, oldest)) if (overhead as i128) < slack => {
                self.preemptions += 1;
                let main_id = main.id;
                let detail = format!("stage={s} b_rem={b_rem} b_incr={b_incr} overhead_ns={overhead} slack_ns={slack}");
                self.record(now, EventKind::Preempt, Some(main_id), Some(oldest), detail);
                let members = self.take(b_incr, now);
                let id = self.next_batch;
                self.next_batch += 1;
                let detail = format!(
                    "b={b_incr} catchup_of={main_id} target={s} samples={}",
                    self.sample_list(&members)
                );
                self.record(now, EventKind::Dispatch, Some(id), None, detail);
                self.catchup = Some(Job {
                    id,
                    members,
                    stage: 0,
                    target: Some(s),
                    reached_max: false,
                    seg_dur: 0,
                });
                self.start_stage(true, now + delay + self.writeback_ns);
            }
            _ => {
                self.main.as_mut().expect("main batch").stage += 1;
                self.start_stage(false, now + delay);
            }
        }
    }
}
