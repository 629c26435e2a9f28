mod config;
mod experiment;

use std::fs;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fluidb_core::serving::{PolicyKind, ServingPlan};
use fluidb_core::workload::zoo;

use config::{ConfigArgs, DesignSource, ExperimentConfig};
use experiment::{ablation, build_plans, candidate_rows, grid, run_grid, summarise, write_csv};

#[derive(Parser)]
#[command(name = "fluidb", version, about = "Design-space exploration and serving simulation for early-exit DNNs on edge NPUs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the tile grid for the first listed policy and write the winning design.
    Dse(ConfigArgs),
    /// One simulation: a single policy, rate and seed, with its event log.
    Run(ConfigArgs),
    /// Every policy × rate × seed at the configured SLO.
    Sweep(ConfigArgs),
    /// Throughput of each batching mode at static batch sizes, without exits.
    Ablate(ConfigArgs),
    /// Every policy × SLO × seed at a single arrival rate.
    SloSweep(ConfigArgs),
    /// Shipped models.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
}

#[derive(Subcommand)]
enum ModelsAction {
    /// Write each shipped model as JSON into the output directory.
    Export(ConfigArgs),
}

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))
}

fn cmd_dse(cfg: &ExperimentConfig) -> Result<()> {
    let grid = match &cfg.design {
        DesignSource::Explore(g) => g.clone(),
        DesignSource::Fixed(_) => bail!("dse searches the grid; drop `design` from the config"),
    };
    let kind = cfg.policies[0];
    let (plan, res) = ServingPlan::explore(kind, &cfg.model, cfg.platform, cfg.b_max, grid)
        .with_context(|| format!("design search for {kind} on {}", cfg.model.name))?;
    prepare_out_dir(cfg)?;
    fs::write(cfg.out_dir.join("design.json"), res.best_design.to_json() + "\n")?;
    fs::write(cfg.out_dir.join("fbcb.json"), serde_json::to_string_pretty(&res.fbcb)? + "\n")?;
    write_csv(&cfg.out_dir.join("dse_report.csv"), &candidate_rows(&res))?;
    let d = res.best_design;
    println!(
        "{kind} on {}: <{}, {}, {}> objective {:.3} GOp/s, full latency at b=1 {:.1} ms ({} candidates)",
        cfg.model.name,
        d.t_r,
        d.t_p,
        d.t_c,
        res.objective_value,
        1e3 * plan.full_latency(1),
        res.candidates.len()
    );
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, slos: &[f64]) -> Result<()> {
    let plans = build_plans(cfg)?;
    prepare_out_dir(cfg)?;
    let designs = cfg.out_dir.join("designs");
    fs::create_dir_all(&designs)?;
    for p in &plans {
        fs::write(designs.join(format!("{}.json", p.kind)), p.design.to_json() + "\n")?;
    }
    let points = grid(plans.len(), &cfg.rates, slos, &cfg.seeds);
    let (rows, failure) = run_grid(cfg, &plans, &points)?;
    write_csv(&cfg.out_dir.join("results.csv"), &rows)?;
    if let Some(e) = failure {
        eprintln!(
            "partial results: {} of {} runs written to {}",
            rows.len(),
            points.len(),
            cfg.out_dir.join("results.csv").display()
        );
        return Err(e);
    }
    write_csv(&cfg.out_dir.join("summary.csv"), &summarise(&rows))?;
    println!("{} runs written to {}", rows.len(), cfg.out_dir.display());
    Ok(())
}

fn cmd_run(mut cfg: ExperimentConfig) -> Result<()> {
    if cfg.policies.len() != 1 || cfg.rates.len() != 1 || cfg.seeds.len() != 1 {
        bail!("run takes exactly one policy, rate and seed; use sweep for grids");
    }
    cfg.events = true;
    sweep(&cfg, &[cfg.slo])?;
    Ok(())
}

fn cmd_slo_sweep(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.rates.len() != 1 {
        bail!("slo-sweep runs at one arrival rate; got {}", cfg.rates.len());
    }
    sweep(cfg, &cfg.slos)
}

fn cmd_ablate(cfg: &ExperimentConfig) -> Result<()> {
    let design = match &cfg.design {
        DesignSource::Fixed(d) => *d,
        DesignSource::Explore(_) => build_plans(&ExperimentConfig {
            policies: vec![PolicyKind::FluidB],
            ..cfg.clone()
        })?[0]
            .design,
    };
    prepare_out_dir(cfg)?;
    let rows = ablation(cfg, &design);
    write_csv(&cfg.out_dir.join("ablation.csv"), &rows)?;
    fs::write(cfg.out_dir.join("design.json"), design.to_json() + "\n")?;
    println!("ablation on <{}, {}, {}> written to {}", design.t_r, design.t_p, design.t_c, cfg.out_dir.display());
    Ok(())
}

fn cmd_export(cfg: &ExperimentConfig) -> Result<()> {
    prepare_out_dir(cfg)?;
    for name in ["resnet50", "inception_v3", "synthetic10", "synthetic50"] {
        let m = zoo::by_name(name).expect("shipped model");
        fs::write(cfg.out_dir.join(format!("{name}.json")), m.to_json() + "\n")?;
    }
    println!("models written to {}", cfg.out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dse(a) => cmd_dse(&ExperimentConfig::load(&a)?),
        Command::Run(a) => cmd_run(ExperimentConfig::load(&a)?),
        Command::Sweep(a) => {
            let cfg = ExperimentConfig::load(&a)?;
            sweep(&cfg, &[cfg.slo])
        }
        Command::Ablate(a) => cmd_ablate(&ExperimentConfig::load(&a)?),
        Command::SloSweep(a) => cmd_slo_sweep(&ExperimentConfig::load(&a)?),
        Command::Models {
            action: ModelsAction::Export(a),
        } => cmd_export(&ExperimentConfig::load(&a)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
