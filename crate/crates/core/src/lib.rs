//! Serving simulator for early-exit DNNs on an edge NPU.
//!
//! The crate models a tiled-GEMM accelerator whose batching strategy can
//! change per layer (fluid batching) and whose processing elements can be
//! restacked at run time, explores its design space, and drives it with an
//! exit-aware preemptive scheduler or one of several reference policies in
//! a deterministic discrete-event simulation.
//!
//! Real-valued quantities are generic over [`Scalar`]; the aliases at the
//! crate root fix the common `f64` instantiation.

// `!(x > 0)` is how NaN is rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dse;
pub mod error;
pub mod npu;
pub mod num;
pub mod scheduler;
pub mod serving;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
pub use num::Scalar;

pub type NpuDesignF64 = npu::NpuDesign<f64>;
pub type NpuDesignF32 = npu::NpuDesign<f32>;
pub type LatencyLutF64 = npu::LatencyLut<f64>;
pub type LatencyLutF32 = npu::LatencyLut<f32>;
pub type DseConfigF64 = dse::DseConfig<f64>;
pub type DseResultF64 = dse::DseResult<f64>;
pub type DseResultF32 = dse::DseResult<f32>;
pub type SloConfigF64 = scheduler::SloConfig<f64>;
pub type MetricsReportF64 = sim::MetricsReport<f64>;
pub type MetricsReportF32 = sim::MetricsReport<f32>;
