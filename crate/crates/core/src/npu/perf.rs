//! Analytical compute model combined with a roofline memory bound.

use super::{fluid_dims_with, stack_pes, BatchedLayerDims, GuardMode, LayerPolicy, NpuDesign};
use crate::error::Result;
use crate::num::{ceil_div, ceil_log2, Scalar};
use crate::workload::LayerSpec;

/// Pipeline fill per layer invocation: adder-tree depth plus fixed control.
pub fn pipeline_fill_cycles(t_p: u64) -> u64 {
    ceil_log2(t_p) as u64 + 4
}

/// Every tile occupies the full `T_R`-deep pipeline, whether or not all of
/// its rows are populated.
pub fn compute_cycles<T: Scalar>(design: &NpuDesign<T>, dims: &BatchedLayerDims) -> u64 {
    let tiles = ceil_div(dims.r_hat, design.t_r)
        * ceil_div(dims.p_hat, design.t_p)
        * ceil_div(dims.c, design.t_c);
    tiles * design.t_r + pipeline_fill_cycles(design.t_p)
}

/// Input, weight and output matrices each cross the memory interface once.
pub fn memory_bytes<T: Scalar>(design: &NpuDesign<T>, dims: &BatchedLayerDims) -> u64 {
    design.word_bytes * (dims.r_hat * dims.p_hat + dims.p_hat * dims.c + dims.r_hat * dims.c)
}

/// Seconds for one layer: the slower of compute and off-chip traffic.
pub fn layer_latency<T: Scalar>(design: &NpuDesign<T>, dims: &BatchedLayerDims) -> T {
    let compute = T::of_u64(compute_cycles(design, dims)) / design.clock_hz;
    let memory = T::of_u64(memory_bytes(design, dims)) / design.mem_bandwidth_bytes_per_s;
    compute.max(memory)
}

/// `2·T_P·T_C·f` in GOp/s.
pub fn peak_performance<T: Scalar>(design: &NpuDesign<T>) -> T {
    T::of_u64(2 * design.macs_per_cycle()) * design.clock_hz / T::of_f64(1e9)
}

/// Latency of `layer` at batch `b_act` under `policy` on the stacked design.
pub fn policy_latency<T: Scalar>(
    design: &NpuDesign<T>,
    layer: &LayerSpec,
    b_act: usize,
    policy: LayerPolicy,
    guard: GuardMode,
) -> Result<T> {
    policy.check(b_act)?;
    let stacked = stack_pes(design, policy.k)?;
    let dims = fluid_dims_with(layer, b_act, policy.b_r, stacked.t_p, guard)?;
    Ok(layer_latency(&stacked, &dims))
}

/// Useful GOp/s of one layer under a batching policy and PE stacking.
pub fn layer_throughput<T: Scalar>(
    design: &NpuDesign<T>,
    layer: &LayerSpec,
    b_act: usize,
    policy: LayerPolicy,
) -> Result<T> {
    layer_throughput_with(design, layer, b_act, policy, GuardMode::default())
}

pub fn layer_throughput_with<T: Scalar>(
    design: &NpuDesign<T>,
    layer: &LayerSpec,
    b_act: usize,
    policy: LayerPolicy,
    guard: GuardMode,
) -> Result<T> {
    let latency = policy_latency(design, layer, b_act, policy, guard)?;
    let ops = T::of_u64(2 * b_act as u64 * layer.macs());
    Ok(ops / latency / T::of_f64(1e9))
}
