//! Serving plans, grid runs and the CSV files they produce.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fluidb_core::baselines::LazyConfig;
use fluidb_core::dse::{per_batch_throughput, run_dse, BatchingMode, DseConfig, DseResult, PolicySpace};
use fluidb_core::npu::{peak_performance, NpuDesign};
use fluidb_core::scheduler::SloConfig;
use fluidb_core::serving::ServingPlan;
use fluidb_core::sim::{compute_metrics, run_simulation, to_json_lines, MetricsOptions, MetricsReport, SimConfig};
use fluidb_core::workload::{assign_exits, gen_poisson_arrivals};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DesignSource, ExperimentConfig};

/// One serving plan per policy. Policies whose DSE settings coincide share
/// a single search.
pub fn build_plans(cfg: &ExperimentConfig) -> Result<Vec<ServingPlan<f64>>> {
    let grid = match &cfg.design {
        DesignSource::Fixed(d) => {
            return cfg
                .policies
                .iter()
                .map(|&k| Ok(ServingPlan::new(k, &cfg.model, *d, cfg.b_max)?))
                .collect();
        }
        DesignSource::Explore(grid) => grid.clone(),
    };
    let mut searches: Vec<(DseConfig<f64>, NpuDesign<f64>)> = Vec::new();
    let mut plans = Vec::new();
    for &kind in &cfg.policies {
        let mut dse = kind.dse_config(cfg.platform, cfg.b_max);
        if let Some(g) = &grid {
            dse = dse.with_grid(g.clone());
        }
        let design = match searches.iter().find(|(c, _)| *c == dse) {
            Some((_, d)) => *d,
            None => {
                let d = run_dse(&dse, &cfg.model).with_context(|| format!("design search for {kind}"))?.best_design;
                searches.push((dse, d));
                d
            }
        };
        plans.push(ServingPlan::new(kind, &cfg.model, design, cfg.b_max)?);
    }
    Ok(plans)
}

/// One row of results.csv.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub policy: String,
    pub rate: f64,
    pub slo: f64,
    pub seed: u64,
    pub t_r: u64,
    pub t_p: u64,
    pub t_c: u64,
    pub n_completed: usize,
    pub n_measured: usize,
    pub processing_rate: f64,
    pub avg_latency: f64,
    pub p99_latency: f64,
    pub violation_rate: f64,
    pub utilisation: f64,
    pub busy_utilisation: f64,
    pub preemptions: usize,
    pub peak_gops: f64,
}

/// One row of summary.csv: the mean over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub rate: f64,
    pub slo: f64,
    pub n_seeds: usize,
    pub processing_rate: f64,
    pub avg_latency: f64,
    pub p99_latency: f64,
    pub violation_rate: f64,
    pub utilisation: f64,
    pub busy_utilisation: f64,
    pub preemptions: f64,
    pub peak_gops: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    pub plan: usize,
    pub rate: f64,
    pub slo: f64,
    pub seed: u64,
}

/// Policy-major, then rate, then SLO, then seed.
pub fn grid(n_plans: usize, rates: &[f64], slos: &[f64], seeds: &[u64]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for plan in 0..n_plans {
        for &rate in rates {
            for &slo in slos {
                for &seed in seeds {
                    out.push(GridPoint { plan, rate, slo, seed });
                }
            }
        }
    }
    out
}

fn event_log_name(p: &ServingPlan<f64>, g: &GridPoint) -> String {
    format!("{}_rate{}_slo{}_seed{}.log", p.kind, g.rate, g.slo, g.seed)
}

fn run_point(cfg: &ExperimentConfig, plan: &ServingPlan<f64>, g: &GridPoint) -> Result<(ResultRow, Option<String>)> {
    let trace = assign_exits(&gen_poisson_arrivals(g.rate, cfg.samples, g.seed)?, &cfg.model.exits, g.seed)?;
    let slo = SloConfig::new(g.slo, cfg.b_max)?;
    let sim = SimConfig {
        slo,
        writeback: cfg.writeback,
        lazy: LazyConfig {
            check_overhead: cfg.lazy_check_overhead,
        },
    };
    let out = run_simulation(&cfg.model, plan, &trace, &sim)?;
    let peak = peak_performance(&plan.design);
    let m: MetricsReport<f64> = compute_metrics(
        &out.log,
        &cfg.model,
        peak,
        &slo,
        &MetricsOptions {
            warmup_fraction: cfg.warmup,
        },
    )?;
    let row = ResultRow {
        policy: plan.kind.to_string(),
        rate: g.rate,
        slo: g.slo,
        seed: g.seed,
        t_r: plan.design.t_r,
        t_p: plan.design.t_p,
        t_c: plan.design.t_c,
        n_completed: m.n_completed,
        n_measured: m.n_measured,
        processing_rate: m.processing_rate,
        avg_latency: m.avg_latency,
        p99_latency: m.p99_latency,
        violation_rate: m.violation_rate,
        utilisation: m.utilisation,
        busy_utilisation: m.busy_utilisation,
        preemptions: m.preemptions,
        peak_gops: peak,
    };
    Ok((row, cfg.events.then(|| to_json_lines(&out.log))))
}

/// Runs every grid point on a pool of `cfg.jobs` workers. Rows come back in
/// grid order; the first failure, if any, is returned alongside the rows
/// that preceded it.
pub fn run_grid(
    cfg: &ExperimentConfig,
    plans: &[ServingPlan<f64>],
    points: &[GridPoint],
) -> Result<(Vec<ResultRow>, Option<anyhow::Error>)> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    let events_dir = cfg.out_dir.join("events");
    if cfg.events {
        fs::create_dir_all(&events_dir)?;
    }
    let results: Vec<Result<ResultRow>> = pool.install(|| {
        points
            .par_iter()
            .map(|g| {
                let plan = &plans[g.plan];
                let (row, log) = run_point(cfg, plan, g)
                    .with_context(|| format!("{} at rate {} SLO {} seed {}", plan.kind, g.rate, g.slo, g.seed))?;
                if let Some(text) = log {
                    fs::write(events_dir.join(event_log_name(plan, g)), text)?;
                }
                Ok(row)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => return Ok((rows, Some(e))),
        }
    }
    Ok((rows, None))
}

/// Means over seeds, one row per (policy, rate, SLO) in first-seen order.
pub fn summarise(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, u64, u64)> = Vec::new();
    let mut groups: HashMap<(String, u64, u64), Vec<&ResultRow>> = HashMap::new();
    for r in rows {
        let key = (r.policy.clone(), r.rate.to_bits(), r.slo.to_bits());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean = |f: fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                policy: key.0,
                rate: g[0].rate,
                slo: g[0].slo,
                n_seeds: g.len(),
                processing_rate: mean(|r| r.processing_rate),
                avg_latency: mean(|r| r.avg_latency),
                p99_latency: mean(|r| r.p99_latency),
                violation_rate: mean(|r| r.violation_rate),
                utilisation: mean(|r| r.utilisation),
                busy_utilisation: mean(|r| r.busy_utilisation),
                preemptions: mean(|r| r.preemptions as f64),
                peak_gops: mean(|r| r.peak_gops),
            }
        })
        .collect()
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of ablation.csv.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: &'static str,
    pub batch: usize,
    pub gops: f64,
    pub peak_gops: f64,
}

/// Throughput of each batching mode at static batch sizes on one design.
pub fn ablation(cfg: &ExperimentConfig, design: &NpuDesign<f64>) -> Vec<AblationRow> {
    let model = cfg.model.without_exits();
    let peak = peak_performance(design);
    let modes = [
        ("fluid", PolicySpace::fluid()),
        ("uniform-r", PolicySpace::uniform(BatchingMode::UniformR)),
        ("uniform-p", PolicySpace::uniform(BatchingMode::UniformP)),
        ("fc-only", PolicySpace::uniform(BatchingMode::FcOnly)),
    ];
    let mut rows = Vec::new();
    for (mode, space) in modes {
        for (i, gops) in per_batch_throughput(&space, design, &model, cfg.b_max).into_iter().enumerate() {
            rows.push(AblationRow {
                mode,
                batch: i + 1,
                gops,
                peak_gops: peak,
            });
        }
    }
    rows
}

/// One row of dse_report.csv.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateRow {
    pub t_r: u64,
    pub t_p: u64,
    pub t_c: u64,
    pub objective: f64,
    pub best: bool,
    /// GOp/s at batch sizes 1..=B_max, separated by `;`.
    pub per_batch_gops: String,
}

pub fn candidate_rows(res: &DseResult<f64>) -> Vec<CandidateRow> {
    let d = res.best_design;
    res.candidates
        .iter()
        .map(|c| CandidateRow {
            t_r: c.t_r,
            t_p: c.t_p,
            t_c: c.t_c,
            objective: c.objective,
            best: (c.t_r, c.t_p, c.t_c) == (d.t_r, d.t_p, d.t_c),
            per_batch_gops: c
                .per_batch_throughput
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect()
}
