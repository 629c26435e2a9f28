//! Experiment configuration: a TOML file, overridden key by key from the
//! command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use fluidb_core::dse::TileGrid;
use fluidb_core::npu::{presets, NpuDesign, Platform};
use fluidb_core::serving::PolicyKind;
use fluidb_core::workload::{zoo, ModelSpec};
use serde::Deserialize;

pub const OUT_DIR_ENV: &str = "FLUIDB_OUT_DIR";

/// Keys accepted in the config file. Every key has a matching flag.
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Shipped model name or path to a model JSON file.
    #[arg(long)]
    pub model: Option<String>,
    /// Target device: zc706 or zcu104.
    #[arg(long)]
    pub platform: Option<String>,
    /// Preset name or design JSON file; per-policy DSE when absent.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<PolicyKind>>,
    /// Arrival rates, samples/s.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Tail-latency objective, seconds.
    #[arg(long)]
    pub slo: Option<f64>,
    /// Objectives for slo-sweep, seconds.
    #[arg(long, value_delimiter = ',')]
    pub slos: Option<Vec<f64>>,
    #[arg(long)]
    pub b_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Requests per run.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Leading share of samples left out of latency statistics.
    #[arg(long)]
    pub warmup: Option<f64>,
    /// Cost of halting a batch for preemption, seconds.
    #[arg(long)]
    pub writeback: Option<f64>,
    /// NPU time per layer-level check of the lazy baseline, seconds.
    #[arg(long)]
    pub lazy_check_overhead: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; falls back to $FLUIDB_OUT_DIR, then ./results.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Write per-run event logs.
    #[arg(long)]
    pub events: Option<bool>,
    /// Overrides the device's DSP budget.
    #[arg(long)]
    pub dsp_budget: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub grid_t_r: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_t_p: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_t_c: Option<Vec<u64>>,
}

macro_rules! layer {
    ($top:expr, $base:expr, $($field:ident),*) => {
        Overrides { $($field: $top.$field.or($base.$field)),* }
    };
}

impl Overrides {
    /// `self` wins over `base` key by key.
    pub fn over(self, base: Overrides) -> Overrides {
        layer!(
            self, base, model, platform, design, policies, rates, slo, slos, b_max, seeds, samples, warmup,
            writeback, lazy_check_overhead, jobs, out_dir, events, dsp_budget, grid_t_r, grid_t_p, grid_t_c
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML experiment file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Where the hardware comes from.
#[derive(Debug, Clone)]
pub enum DesignSource {
    Fixed(NpuDesign<f64>),
    Explore(Option<TileGrid>),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub platform: Platform<f64>,
    pub design: DesignSource,
    pub policies: Vec<PolicyKind>,
    pub rates: Vec<f64>,
    pub slo: f64,
    pub slos: Vec<f64>,
    pub b_max: usize,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub warmup: f64,
    pub writeback: f64,
    pub lazy_check_overhead: f64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub events: bool,
}

fn load_model(spec: &str) -> Result<ModelSpec> {
    if let Some(m) = zoo::by_name(spec) {
        return Ok(m);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        bail!("model `{spec}` is neither a shipped model nor an existing file");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
    ModelSpec::from_json(&text).with_context(|| format!("parsing {spec}"))
}

fn load_design(spec: &str, dsp_budget: Option<u64>) -> Result<NpuDesign<f64>> {
    let mut d = match presets::by_name::<f64>(spec) {
        Some(d) => d,
        None => {
            let path = Path::new(spec);
            if !path.is_file() {
                bail!("design `{spec}` is neither a preset nor an existing file");
            }
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
            NpuDesign::from_json(&text).with_context(|| format!("parsing {spec}"))?
        }
    };
    if let Some(b) = dsp_budget {
        d.dsp_budget = b;
        d.validate()?;
    }
    Ok(d)
}

impl ExperimentConfig {
    pub fn load(args: &ConfigArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Overrides::default(),
        };
        Self::resolve(args.overrides.clone().over(file))
    }

    pub fn resolve(o: Overrides) -> Result<Self> {
        let model = load_model(o.model.as_deref().unwrap_or("resnet50"))?;
        let platform_name = o.platform.as_deref().unwrap_or("zc706");
        let mut platform =
            Platform::by_name(platform_name).with_context(|| format!("unknown platform `{platform_name}`"))?;
        if let Some(b) = o.dsp_budget {
            platform.dsp_budget = b;
        }
        let design = match &o.design {
            Some(spec) => DesignSource::Fixed(load_design(spec, o.dsp_budget)?),
            None => {
                let grid = match (o.grid_t_r, o.grid_t_p, o.grid_t_c) {
                    (None, None, None) => None,
                    (r, p, c) => {
                        let d = TileGrid::default();
                        Some(TileGrid {
                            t_r: r.unwrap_or(d.t_r),
                            t_p: p.unwrap_or(d.t_p),
                            t_c: c.unwrap_or(d.t_c),
                        })
                    }
                };
                DesignSource::Explore(grid)
            }
        };
        let out_dir = o
            .out_dir
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"));
        let cfg = Self {
            model,
            platform,
            design,
            policies: o.policies.unwrap_or_else(|| vec![PolicyKind::FluidB]),
            rates: o.rates.unwrap_or_else(|| vec![5.0, 10.0, 15.0, 20.0, 25.0]),
            slo: o.slo.unwrap_or(0.4),
            slos: o.slos.unwrap_or_else(|| vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            b_max: o.b_max.unwrap_or(8),
            seeds: o.seeds.unwrap_or_else(|| vec![1, 2, 3]),
            samples: o.samples.unwrap_or(1500),
            warmup: o.warmup.unwrap_or(0.05),
            writeback: o.writeback.unwrap_or(0.0),
            lazy_check_overhead: o.lazy_check_overhead.unwrap_or(0.0),
            jobs: o
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            out_dir,
            events: o.events.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.policies.is_empty() || self.rates.is_empty() || self.seeds.is_empty() || self.slos.is_empty() {
            bail!("policies, rates, seeds and slos must not be empty");
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            bail!("arrival rates must be positive, got {r}");
        }
        if let Some(s) = std::iter::once(&self.slo).chain(&self.slos).find(|s| !(**s > 0.0 && s.is_finite())) {
            bail!("SLOs must be positive, got {s}");
        }
        if self.b_max == 0 || self.samples == 0 || self.jobs == 0 {
            bail!("b_max, samples and jobs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.warmup) {
            bail!("warmup must lie in [0, 1), got {}", self.warmup);
        }
        if self.writeback < 0.0 || self.lazy_check_overhead < 0.0 {
            bail!("writeback and lazy_check_overhead must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file: Overrides = toml::from_str("rates = [5.0, 10.0]\nslo = 0.3\nmodel = \"synthetic10\"").unwrap();
        let flags = Overrides {
            slo: Some(0.2),
            ..Default::default()
        };
        let cfg = ExperimentConfig::resolve(flags.over(file)).unwrap();
        assert_eq!(cfg.rates, vec![5.0, 10.0]);
        assert_eq!(cfg.slo, 0.2);
        assert_eq!(cfg.model.name, "synthetic10");
    }

    #[test]
    fn rejects_bad_values() {
        for text in ["rates = [0.0]", "model = \"nope.json\"", "design = \"missing\"", "warmup = 1.0", "colour = 1"] {
            let parsed: Result<Overrides, _> = toml::from_str(text);
            let ok = parsed.map(|o| ExperimentConfig::resolve(o).is_ok()).unwrap_or(false);
            assert!(!ok, "{text}");
        }
    }

    #[test]
    fn policies_parse_from_toml() {
        let o: Overrides = toml::from_str("policies = [\"fluidb\", \"r-adaptb-m\", \"lazy\"]").unwrap();
        assert_eq!(o.policies.unwrap().len(), 3);
    }
}
