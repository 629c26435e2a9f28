//! Exhaustive design-space exploration over `⟨T_R, T_P, T_C⟩`.
//!
//! For every candidate that fits the DSP and buffer budgets, each layer gets
//! the batching split and PE stacking that maximise its throughput at each
//! batch size; the candidate's score is the weighted sum over batch sizes of
//! whole-network throughput. The best candidate and its per-layer policies
//! become the control block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npu::{
    layer_throughput_with, policy_latency, Fbcb, GuardMode, LayerPolicy, NpuDesign, Platform,
    Stacking,
};
use crate::num::Scalar;
use crate::workload::{LayerKind, LayerSpec, ModelSpec};

/// How samples of a batch are laid out across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchingMode {
    /// Per-layer choice of `B_R`.
    Fluid,
    /// Every layer appends the batch along `R`.
    UniformR,
    /// Every layer appends the batch along `P`.
    UniformP,
    /// Only FC layers are batched (along `R`); convolutions run one sample
    /// at a time.
    FcOnly,
}

/// The policy space searched for each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicySpace {
    pub mode: BatchingMode,
    pub stackable: bool,
    pub guard: GuardMode,
}

impl PolicySpace {
    pub fn fluid() -> Self {
        Self {
            mode: BatchingMode::Fluid,
            stackable: true,
            guard: GuardMode::default(),
        }
    }

    pub fn uniform(mode: BatchingMode) -> Self {
        Self {
            mode,
            stackable: false,
            guard: GuardMode::default(),
        }
    }

    /// Candidate policies in tie-break order: smaller `B_R` first, then
    /// `k = 1`, then the smaller stacking factor.
    fn candidates(&self, layer: &LayerSpec, b: usize) -> Vec<LayerPolicy> {
        const K_ORDER: [Stacking; 3] = [Stacking::One, Stacking::Half, Stacking::Two];
        let ks: &[Stacking] = if self.stackable { &K_ORDER } else { &K_ORDER[..1] };
        let b_rs: Vec<usize> = match self.mode {
            BatchingMode::Fluid => (1..=b).collect(),
            BatchingMode::UniformR => vec![b],
            BatchingMode::UniformP => vec![1],
            BatchingMode::FcOnly => match layer.kind {
                LayerKind::Fc => vec![b],
                LayerKind::Conv => vec![1],
            },
        };
        b_rs.iter()
            .flat_map(|&b_r| ks.iter().map(move |&k| LayerPolicy::new(b_r, k)))
            .collect()
    }

    /// Seconds to run `layer` for `b` samples under `policy` in this space.
    /// FC-only convolutions run the single-sample layer `b` times.
    pub fn layer_latency<T: Scalar>(
        &self,
        design: &NpuDesign<T>,
        layer: &LayerSpec,
        b: usize,
        policy: LayerPolicy,
    ) -> Result<T> {
        if self.mode == BatchingMode::FcOnly && layer.kind == LayerKind::Conv {
            let one = policy_latency(design, layer, 1, LayerPolicy::new(1, policy.k), self.guard)?;
            Ok(T::of_u64(b as u64) * one)
        } else {
            policy_latency(design, layer, b, policy, self.guard)
        }
    }

    /// Best policy for one layer at batch `b`.
    pub fn optimise_layer<T: Scalar>(
        &self,
        design: &NpuDesign<T>,
        layer: &LayerSpec,
        b: usize,
    ) -> (LayerPolicy, T) {
        let ops = T::of_u64(2 * b as u64 * layer.macs());
        let mut best: Option<(LayerPolicy, T)> = None;
        for policy in self.candidates(layer, b) {
            let Ok(latency) = self.layer_latency(design, layer, b, policy) else {
                continue;
            };
            let throughput = ops / latency / T::of_f64(1e9);
            if best.is_none_or(|(_, t)| throughput > t) {
                best = Some((policy, throughput));
            }
        }
        // k = 1 is always feasible
        best.expect("non-empty feasible set")
    }
}

/// Arg-max over `B_R ∈ [1, b]` and `k ∈ {1/2, 1, 2}` of layer throughput.
pub fn optimise_layer_policy<T: Scalar>(design: &NpuDesign<T>, layer: &LayerSpec, b: usize) -> LayerPolicy {
    PolicySpace::fluid().optimise_layer(design, layer, b).0
}

/// Useful GOp/s of the whole network at batch `b` under per-layer policies.
pub fn workload_throughput<T: Scalar>(
    design: &NpuDesign<T>,
    model: &ModelSpec,
    b: usize,
    policies: &[LayerPolicy],
) -> Result<T> {
    workload_throughput_in(&PolicySpace::fluid(), design, model, b, policies)
}

pub fn workload_throughput_in<T: Scalar>(
    space: &PolicySpace,
    design: &NpuDesign<T>,
    model: &ModelSpec,
    b: usize,
    policies: &[LayerPolicy],
) -> Result<T> {
    if policies.len() != model.n_layers() {
        return Err(Error::InvalidArgument(format!(
            "{} policies for {} layers",
            policies.len(),
            model.n_layers()
        )));
    }
    let mut latency = T::zero();
    for (layer, &policy) in model.layers.iter().zip(policies) {
        latency = latency + space.layer_latency(design, layer, b, policy)?;
    }
    let ops = T::of_u64(2 * b as u64 * model.total_macs());
    Ok(ops / latency / T::of_f64(1e9))
}

/// Whole-network throughput for `b = 1..=b_max` with each layer's best
/// policy in `space`.
pub fn per_batch_throughput<T: Scalar>(
    space: &PolicySpace,
    design: &NpuDesign<T>,
    model: &ModelSpec,
    b_max: usize,
) -> Vec<T> {
    (1..=b_max)
        .map(|b| {
            let policies: Vec<LayerPolicy> = model
                .layers
                .iter()
                .map(|l| space.optimise_layer(design, l, b).0)
                .collect();
            workload_throughput_in(space, design, model, b, &policies)
                .expect("optimal policies are feasible")
        })
        .collect()
}

/// Candidate values for each tile dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub t_r: Vec<u64>,
    pub t_p: Vec<u64>,
    pub t_c: Vec<u64>,
}

impl Default for TileGrid {
    fn default() -> Self {
        Self {
            t_r: vec![1024, 1536, 2048, 3072, 4096, 6144, 8192],
            t_p: vec![2, 3, 4, 6, 8, 12, 16, 24, 32],
            t_c: vec![16, 24, 32, 48, 64, 96, 128, 192, 256],
        }
    }
}

impl TileGrid {
    pub fn points(&self) -> impl Iterator<Item = (u64, u64, u64)> + '_ {
        self.t_r.iter().flat_map(move |&r| {
            self.t_p
                .iter()
                .flat_map(move |&p| self.t_c.iter().map(move |&c| (r, p, c)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseConfig<T> {
    pub grid: TileGrid,
    pub b_max: usize,
    /// One weight per batch size `1..=b_max`.
    pub weights: Vec<f64>,
    pub platform: Platform<T>,
    pub space: PolicySpace,
}

impl<T: Scalar> DseConfig<T> {
    /// Fluid batching with stacking, all batch sizes weighted equally.
    pub fn new(platform: Platform<T>, b_max: usize) -> Self {
        Self {
            grid: TileGrid::default(),
            b_max,
            weights: vec![1.0; b_max],
            platform,
            space: PolicySpace::fluid(),
        }
    }

    /// Only batch size `b` contributes to the objective.
    pub fn single_batch(mut self, b: usize) -> Self {
        self.weights = (1..=self.b_max).map(|x| if x == b { 1.0 } else { 0.0 }).collect();
        self
    }

    pub fn with_space(mut self, space: PolicySpace) -> Self {
        self.space = space;
        self
    }

    pub fn with_grid(mut self, grid: TileGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_max == 0 {
            return Err(Error::InvalidArgument("B_max must be at least 1".into()));
        }
        if self.weights.len() != self.b_max {
            return Err(Error::InvalidArgument(format!(
                "{} weights for B_max = {}",
                self.weights.len(),
                self.b_max
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || !self.weights.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidArgument(
                "weights must be non-negative with at least one positive".into(),
            ));
        }
        Ok(())
    }

    /// Grid points inside the DSP and buffer budgets, in grid order.
    pub fn feasible_designs(&self) -> Vec<NpuDesign<T>> {
        self.grid
            .points()
            .map(|(r, p, c)| self.platform.design(r, p, c))
            .filter(NpuDesign::fits_budgets)
            .collect()
    }
}

/// Score of one visited design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport<T> {
    pub t_r: u64,
    pub t_p: u64,
    pub t_c: u64,
    pub objective: T,
    pub per_batch_throughput: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseResult<T> {
    pub best_design: NpuDesign<T>,
    pub fbcb: Fbcb,
    pub objective_value: T,
    pub per_batch_throughput: Vec<T>,
    pub space: PolicySpace,
    pub candidates: Vec<CandidateReport<T>>,
}

fn evaluate<T: Scalar>(cfg: &DseConfig<T>, design: &NpuDesign<T>, model: &ModelSpec) -> CandidateReport<T> {
    let per_batch = per_batch_throughput(&cfg.space, design, model, cfg.b_max);
    let objective = per_batch
        .iter()
        .zip(&cfg.weights)
        .map(|(&t, &w)| T::of_f64(w) * t)
        .fold(T::zero(), |acc, x| acc + x);
    CandidateReport {
        t_r: design.t_r,
        t_p: design.t_p,
        t_c: design.t_c,
        objective,
        per_batch_throughput: per_batch,
    }
}

/// Evaluates every feasible grid point and keeps the highest objective. Ties
/// go to the earliest point in grid order.
pub fn run_dse<T: Scalar>(cfg: &DseConfig<T>, model: &ModelSpec) -> Result<DseResult<T>> {
    cfg.validate()?;
    let designs = cfg.feasible_designs();
    if designs.is_empty() {
        return Err(Error::NoFeasibleDesign);
    }
    let candidates: Vec<CandidateReport<T>> =
        designs.par_iter().map(|d| evaluate(cfg, d, model)).collect();
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.objective > candidates[best].objective {
            best = i;
        }
    }
    let best_design = designs[best];
    let fbcb = Fbcb::from_fn(model.n_layers(), cfg.b_max, |l, b| {
        cfg.space.optimise_layer(&best_design, &model.layers[l], b).0
    })?;
    Ok(DseResult {
        best_design,
        fbcb,
        objective_value: candidates[best].objective,
        per_batch_throughput: candidates[best].per_batch_throughput.clone(),
        space: cfg.space,
        candidates,
    })
}

/// Control block holding each layer's best policy in `space` on `design`.
pub fn policy_table<T: Scalar>(
    space: &PolicySpace,
    design: &NpuDesign<T>,
    model: &ModelSpec,
    b_max: usize,
) -> Fbcb {
    Fbcb::from_fn(model.n_layers(), b_max, |l, b| {
        space.optimise_layer(design, &model.layers[l], b).0
    })
    .expect("optimal policies are in range")
}

/// Throughput of a single layer under `policy`, honouring the space's guard
/// mode.
pub fn space_layer_throughput<T: Scalar>(
    space: &PolicySpace,
    design: &NpuDesign<T>,
    layer: &LayerSpec,
    b: usize,
    policy: LayerPolicy,
) -> Result<T> {
    layer_throughput_with(design, layer, b, policy, space.guard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npu::{layer_throughput, presets, Platform};
    use crate::workload::{zoo, ExitProfile};

    /// Brute force without tie-break order: max throughput value.
    fn brute_best(design: &NpuDesign<f64>, layer: &LayerSpec, b: usize) -> f64 {
        let mut best = f64::MIN;
        for b_r in 1..=b {
            for k in Stacking::ALL {
                if let Ok(t) = layer_throughput(design, layer, b, LayerPolicy::new(b_r, k)) {
                    best = best.max(t);
                }
            }
        }
        best
    }

    #[test]
    fn batch_one_uses_single_row_group() {
        let d: NpuDesign<f64> = presets::zc706_resnet50();
        for layer in zoo::synthetic10().layers {
            assert_eq!(optimise_layer_policy(&d, &layer, 1).b_r, 1);
        }
    }

    #[test]
    fn inner_max_matches_brute_force() {
        let d: NpuDesign<f64> = Platform::zc706().design(256, 6, 96);
        for layer in zoo::synthetic10().layers {
            let p = optimise_layer_policy(&d, &layer, 4);
            let got = layer_throughput(&d, &layer, 4, p).unwrap();
            assert_eq!(got, brute_best(&d, &layer, 4));
        }
    }

    #[test]
    fn perfectly_mapped_layer_keeps_identity_stacking() {
        let d: NpuDesign<f64> = Platform::zc706().design(256, 8, 64);
        let layer = LayerSpec::conv(0, 256, 64, 64);
        assert_eq!(optimise_layer_policy(&d, &layer, 1).k, Stacking::One);
    }

    #[test]
    fn workload_throughput_single_layer() {
        let d: NpuDesign<f64> = presets::zc706_resnet50();
        let layer = LayerSpec::conv(0, 3136, 576, 128);
        let model =
            ModelSpec::new("one", vec![layer], ExitProfile::final_only(1)).unwrap();
        let policy = LayerPolicy::new(2, Stacking::One);
        let w = workload_throughput(&d, &model, 3, &[policy]).unwrap();
        let l = layer_throughput(&d, &layer, 3, policy).unwrap();
        assert!((w - l).abs() < 1e-12 * l);
    }

    #[test]
    fn workload_throughput_equal_layers() {
        let d: NpuDesign<f64> = presets::zc706_resnet50();
        let layers: Vec<_> = (0..3).map(|i| LayerSpec::conv(i, 784, 288, 96)).collect();
        let model = ModelSpec::new("eq", layers.clone(), ExitProfile::final_only(3)).unwrap();
        let policy = LayerPolicy::new(4, Stacking::Two);
        let w = workload_throughput(&d, &model, 4, &[policy; 3]).unwrap();
        let l = layer_throughput(&d, &layers[0], 4, policy).unwrap();
        assert!((w - l).abs() < 1e-12 * l);
    }

    #[test]
    fn workload_throughput_three_layers_by_hand() {
        let d: NpuDesign<f64> = Platform::zc706().design(128, 4, 16);
        let layers = vec![
            LayerSpec::conv(0, 100, 12, 16),
            LayerSpec::conv(1, 50, 40, 20),
            LayerSpec::fc(2, 64, 10),
        ];
        let model = ModelSpec::new("three", layers.clone(), ExitProfile::final_only(3)).unwrap();
        let policies = [LayerPolicy::r_batching(2); 3];
        // R̂ = 2R, P̂ = P, fill = 2 + 4
        let lat = |l: &LayerSpec| {
            let tiles = (2 * l.r).div_ceil(128) * l.p.div_ceil(4) * l.c.div_ceil(16);
            let cycles = (tiles * 128 + 6) as f64 / 150e6;
            let bytes = (2 * (2 * l.r * l.p + l.p * l.c + 2 * l.r * l.c)) as f64 / 12.8e9;
            cycles.max(bytes)
        };
        let total: f64 = layers.iter().map(lat).sum();
        let ops: u64 = layers.iter().map(|l| 2 * 2 * l.macs()).sum();
        let expected = ops as f64 / total / 1e9;
        let got = workload_throughput(&d, &model, 2, &policies).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn single_point_grid() {
        let grid = TileGrid {
            t_r: vec![2048],
            t_p: vec![4],
            t_c: vec![64],
        };
        let cfg = DseConfig::new(Platform::<f64>::zc706(), 4).with_grid(grid);
        let model = zoo::synthetic10();
        let res = run_dse(&cfg, &model).unwrap();
        assert_eq!((res.best_design.t_r, res.best_design.t_p, res.best_design.t_c), (2048, 4, 64));
        let tp = per_batch_throughput(&PolicySpace::fluid(), &res.best_design, &model, 4);
        assert_eq!(res.objective_value, tp.iter().sum::<f64>());
        assert_eq!(res.fbcb.entries.len(), model.n_layers() * 4);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let mut platform = Platform::<f64>::zc706();
        platform.dsp_budget = 1;
        let cfg = DseConfig::new(platform, 4);
        assert!(matches!(
            run_dse(&cfg, &zoo::synthetic10()),
            Err(Error::NoFeasibleDesign)
        ));
    }

    #[test]
    fn weights_are_validated() {
        let mut cfg = DseConfig::new(Platform::<f64>::zc706(), 2);
        cfg.weights = vec![0.0, 0.0];
        assert!(cfg.validate().is_err());
        cfg.weights = vec![1.0];
        assert!(cfg.validate().is_err());
        cfg.weights = vec![-1.0, 2.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn table1_points_pass_the_filter() {
        for (d, used) in [
            (presets::zc706_resnet50::<f64>(), 896),
            (presets::zcu104_resnet50::<f64>(), 1720),
            (presets::zc706_inception_v3::<f64>(), 900),
        ] {
            assert_eq!(d.macs_per_cycle(), used);
            assert!(d.fits_budgets());
        }
    }

    #[test]
    fn fc_only_convs_scale_linearly() {
        let d: NpuDesign<f64> = presets::zc706_resnet50();
        let space = PolicySpace::uniform(BatchingMode::FcOnly);
        let conv = LayerSpec::conv(0, 3136, 64, 256);
        let one = space.layer_latency(&d, &conv, 1, LayerPolicy::p_batching()).unwrap();
        let four = space.layer_latency(&d, &conv, 4, LayerPolicy::p_batching()).unwrap();
        assert_eq!(four, 4.0 * one);
    }
}
