//! Performance model of the tiled-GEMM NPU: fluid batching dimensions,
//! stackable PEs, per-layer and per-segment latency, and the control-block
//! and latency lookup tables.

mod design;
mod fbcb;
mod fluid;
mod lut;
mod perf;

pub use design::{
    presets, stack_pes, NpuDesign, Platform, Stacking, DEFAULT_MEM_BANDWIDTH, DEFAULT_WORD_BYTES,
};
pub use fbcb::{b_r_field_bits, fbcb_size_bits, Fbcb, FbcbEntry, K_FIELD_BITS};
pub use fluid::{fluid_dims, fluid_dims_with, BatchedLayerDims, GuardMode, LayerPolicy};
pub use lut::{build_latency_lut, segment_latency, LatencyLut, LayerLatencyTable};
pub use perf::{
    compute_cycles, layer_latency, layer_throughput, layer_throughput_with, memory_bytes,
    peak_performance, pipeline_fill_cycles, policy_latency,
};
