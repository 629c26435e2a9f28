use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::event::{EventKind, LogRecord};
use crate::error::{Error, Result};
use crate::num::{ns_to_secs, Scalar};
use crate::scheduler::{slo_ns, SloConfig};
use crate::workload::ModelSpec;

/// Headline numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub n_completed: usize,
    /// Samples counted in the latency statistics, after warm-up.
    pub n_measured: usize,
    /// Completions per second over the makespan.
    pub processing_rate: T,
    pub avg_latency: T,
    pub p99_latency: T,
    pub violation_rate: T,
    /// Useful operations over peak throughput times the makespan.
    pub utilisation: T,
    /// Useful operations over peak throughput times the time the NPU was
    /// computing.
    pub busy_utilisation: T,
    pub preemptions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Leading share of samples, by arrival, left out of latency statistics.
    pub warmup_fraction: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self { warmup_fraction: 0.05 }
    }
}

/// Nearest-rank percentile of sorted values, `q` in `(0, 1]`.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    arrival: u64,
    exit: usize,
    completion: Option<u64>,
}

fn samples(log: &[LogRecord]) -> Result<BTreeMap<u64, Sample>> {
    let mut out = BTreeMap::new();
    for r in log {
        match r.kind {
            EventKind::Arrival => {
                let id = r.sample_id.ok_or_else(|| Error::Parse("arrival without sample".into()))?;
                let exit = r.field_u64("exit")? as usize;
                out.insert(
                    id,
                    Sample {
                        arrival: r.time_ns,
                        exit,
                        completion: None,
                    },
                );
            }
            EventKind::Complete => {
                let id = r.sample_id.ok_or_else(|| Error::Parse("completion without sample".into()))?;
                let s = out
                    .get_mut(&id)
                    .ok_or_else(|| Error::Parse(format!("sample {id} completed before arriving")))?;
                if s.completion.replace(r.time_ns).is_some() {
                    return Err(Error::Parse(format!("sample {id} completed twice")));
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Per-sample `(sample_id, latency_ns)` for completed samples.
pub fn latencies(log: &[LogRecord]) -> Result<Vec<(u64, u64)>> {
    Ok(samples(log)?
        .into_iter()
        .filter_map(|(id, s)| s.completion.map(|c| (id, c - s.arrival)))
        .collect())
}

pub fn compute_metrics<T: Scalar>(
    log: &[LogRecord],
    model: &ModelSpec,
    peak_gops: T,
    slo: &SloConfig<T>,
    opts: &MetricsOptions,
) -> Result<MetricsReport<T>> {
    let samples = samples(log)?;
    let done: Vec<Sample> = samples.values().copied().filter(|s| s.completion.is_some()).collect();
    if done.is_empty() {
        return Err(Error::EmptyLog);
    }
    let macs = model.macs_to_exit();
    let mut useful_ops = 0u128;
    for s in &done {
        let m = macs
            .get(s.exit)
            .ok_or_else(|| Error::Parse(format!("exit {} outside the model", s.exit)))?;
        useful_ops += 2 * *m as u128;
    }
    let first_arrival = samples.values().map(|s| s.arrival).min().expect("non-empty");
    let last_completion = done.iter().filter_map(|s| s.completion).max().expect("non-empty");
    let makespan_ns = (last_completion - first_arrival).max(1);
    let mut busy_ns = 0u64;
    let mut preemptions = 0;
    for r in log {
        match r.kind {
            EventKind::SegmentDone => busy_ns += r.field_u64("dur_ns")?,
            EventKind::Preempt => preemptions += 1,
            _ => {}
        }
    }

    let mut by_arrival: Vec<&Sample> = done.iter().collect();
    by_arrival.sort_by_key(|s| s.arrival);
    let skip = ((opts.warmup_fraction.clamp(0.0, 1.0) * by_arrival.len() as f64).floor() as usize)
        .min(by_arrival.len() - 1);
    let mut lat: Vec<u64> = by_arrival[skip..]
        .iter()
        .map(|s| s.completion.expect("completed") - s.arrival)
        .collect();
    lat.sort_unstable();
    let n = lat.len();
    let limit = slo_ns(slo.t_slo);
    let violations = lat.iter().filter(|&&l| l > limit).count();
    let mean_ns = lat.iter().map(|&l| l as f64).sum::<f64>() / n as f64;

    let peak_ops_per_s = peak_gops * T::of_f64(1e9);
    let ops = T::of_f64(useful_ops as f64);
    let makespan: T = ns_to_secs(makespan_ns);
    let busy: T = ns_to_secs(busy_ns.max(1));
    Ok(MetricsReport {
        n_completed: done.len(),
        n_measured: n,
        processing_rate: T::of_u64(done.len() as u64) / makespan,
        avg_latency: T::of_f64(mean_ns * 1e-9),
        p99_latency: ns_to_secs(nearest_rank(&lat, 0.99)),
        violation_rate: T::of_u64(violations as u64) / T::of_u64(n as u64),
        utilisation: ops / (peak_ops_per_s * makespan),
        busy_utilisation: ops / (peak_ops_per_s * busy),
        preemptions,
    })
}

/// Result of checking every preemption against the objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreemptionAudit {
    pub preemptions: usize,
    /// Oldest members of preempted batches that still missed the objective.
    pub violators: Vec<u64>,
}

/// For each preemption, the oldest sample of the halted batch must finish
/// within the objective.
pub fn audit_preemptions<T: Scalar>(log: &[LogRecord], slo: &SloConfig<T>) -> Result<PreemptionAudit> {
    let lat: BTreeMap<u64, u64> = latencies(log)?.into_iter().collect();
    let limit = slo_ns(slo.t_slo);
    let mut audit = PreemptionAudit {
        preemptions: 0,
        violators: Vec::new(),
    };
    for r in log.iter().filter(|r| r.kind == EventKind::Preempt) {
        audit.preemptions += 1;
        let id = r.sample_id.ok_or_else(|| Error::Parse("preemption without oldest sample".into()))?;
        match lat.get(&id) {
            Some(&l) if l <= limit => {}
            _ => audit.violators.push(id),
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::zoo;

    fn rec(t: u64, kind: EventKind, sample: u64, detail: &str) -> LogRecord {
        LogRecord {
            time_ns: t,
            kind,
            batch_id: Some(0),
            sample_id: Some(sample),
            detail: detail.into(),
        }
    }

    /// Sample `i` arrives at `i` ms and takes `lat[i]` ms.
    fn log_with(lat_ms: &[u64], exit: usize) -> Vec<LogRecord> {
        let mut log = Vec::new();
        for (i, &l) in lat_ms.iter().enumerate() {
            let a = i as u64 * 1_000_000;
            log.push(rec(a, EventKind::Arrival, i as u64, &format!("exit={exit}")));
            log.push(rec(a + l * 1_000_000, EventKind::Complete, i as u64, &format!("exit={exit}")));
        }
        log
    }

    fn no_warmup() -> MetricsOptions {
        MetricsOptions { warmup_fraction: 0.0 }
    }

    #[test]
    fn percentile_by_independent_rank() {
        let lat: Vec<u64> = (1..=100).map(|i| i * 10).collect();
        let log = log_with(&lat, 3);
        let slo = SloConfig::new(2.0f64, 8).unwrap();
        let m = compute_metrics(&log, &zoo::synthetic10(), 100.0, &slo, &no_warmup()).unwrap();
        // 99th of 100 sorted values is the 99th smallest
        assert!((m.p99_latency - 0.990).abs() < 1e-12);
        assert!((m.avg_latency - 0.505).abs() < 1e-12);
        assert_eq!(m.violation_rate, 0.0);
        assert_eq!(nearest_rank(&[5], 0.99), 5);
        assert_eq!(nearest_rank(&[1, 2, 3, 4], 0.5), 2);
    }

    #[test]
    fn one_violation_in_a_hundred() {
        let mut lat = vec![100; 100];
        lat[37] = 401;
        let slo = SloConfig::new(0.4f64, 8).unwrap();
        let m = compute_metrics(&log_with(&lat, 0), &zoo::synthetic10(), 100.0, &slo, &no_warmup()).unwrap();
        assert!((m.violation_rate - 0.01).abs() < 1e-15);
        lat[37] = 400;
        let m = compute_metrics(&log_with(&lat, 0), &zoo::synthetic10(), 100.0, &slo, &no_warmup()).unwrap();
        assert_eq!(m.violation_rate, 0.0);
    }

    #[test]
    fn utilisation_and_rate() {
        let model = zoo::synthetic10();
        let mut log = log_with(&[10, 10], 3);
        log.push(LogRecord {
            time_ns: 0,
            kind: EventKind::SegmentDone,
            batch_id: Some(0),
            sample_id: None,
            detail: "stage=0 b=1 dur_ns=5000000".into(),
        });
        let slo = SloConfig::new(1.0f64, 8).unwrap();
        let m = compute_metrics(&log, &model, 50.0, &slo, &no_warmup()).unwrap();
        let ops = 2.0 * 2.0 * model.total_macs() as f64;
        // makespan 0 → 11 ms
        assert!((m.processing_rate - 2.0 / 0.011).abs() < 1e-9);
        assert!((m.utilisation - ops / (50e9 * 0.011)).abs() < 1e-12);
        assert!((m.busy_utilisation - ops / (50e9 * 0.005)).abs() < 1e-12);
    }

    #[test]
    fn warmup_drops_leading_samples() {
        let mut lat = vec![10; 40];
        lat[0] = 900;
        lat[1] = 900;
        let slo = SloConfig::new(0.5, 8).unwrap();
        let m = compute_metrics(&log_with(&lat, 0), &zoo::synthetic10(), 1.0, &slo, &MetricsOptions::default()).unwrap();
        assert_eq!(m.n_measured, 38);
        assert_eq!(m.violation_rate, 0.0);
    }

    #[test]
    fn empty_log() {
        let slo = SloConfig::new(0.5, 8).unwrap();
        assert_eq!(
            compute_metrics(&[], &zoo::synthetic10(), 1.0, &slo, &no_warmup()),
            Err(Error::EmptyLog)
        );
    }

    #[test]
    fn audit_flags_late_oldest() {
        let mut log = log_with(&[100, 500], 0);
        log.push(rec(0, EventKind::Preempt, 0, ""));
        log.push(rec(0, EventKind::Preempt, 1, ""));
        let slo = SloConfig::new(0.4, 8).unwrap();
        let a = audit_preemptions(&log, &slo).unwrap();
        assert_eq!(a.preemptions, 2);
        assert_eq!(a.violators, vec![1]);
    }
}
