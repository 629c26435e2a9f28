//! Lowering of convolutional network descriptions to GEMM layers.
//!
//! A descriptor is an ordered list of named operations. Each operation reads
//! the tensors named in `from` (the previous operation when omitted), which
//! lets branchy networks be written down in execution order. Conv and FC
//! entries state their expected input shape explicitly and are checked
//! against what their producers actually emit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::LayerSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: u64,
    pub height: u64,
    pub width: u64,
}

impl TensorShape {
    pub fn new(channels: u64, height: u64, width: u64) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    fn volume(&self) -> u64 {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NetOp {
    Conv {
        c_in: u64,
        c_out: u64,
        kernel: [u64; 2],
        stride: [u64; 2],
        padding: [u64; 2],
        in_h: u64,
        in_w: u64,
    },
    Fc {
        inputs: u64,
        outputs: u64,
    },
    /// Max or average pooling; no GEMM work.
    Pool {
        kernel: [u64; 2],
        stride: [u64; 2],
        padding: [u64; 2],
    },
    GlobalPool,
    /// Elementwise sum of equally shaped inputs (residual joins).
    Add,
    /// Channel concatenation.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetLayer {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub from: Vec<String>,
    #[serde(flatten)]
    pub op: NetOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetDescriptor {
    pub name: String,
    pub input: TensorShape,
    pub layers: Vec<NetLayer>,
}

fn window_out(len: u64, kernel: u64, stride: u64, pad: u64, what: &str) -> Result<u64> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidDescriptor(format!(
            "{what}: kernel and stride must be positive"
        )));
    }
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::InvalidDescriptor(format!(
            "{what}: kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Lowers every conv and FC operation to its Toeplitz GEMM dimensions:
/// `R = H_out·W_out`, `P = C_in·k_h·k_w`, `C = C_out` for convolutions and
/// `R = 1`, `P = inputs`, `C = outputs` for FC layers.
pub fn conv_net_to_gemm(descr: &ConvNetDescriptor) -> Result<Vec<LayerSpec>> {
    let mut shapes: HashMap<&str, TensorShape> = HashMap::new();
    let mut prev = descr.input;
    let mut gemm = Vec::new();

    for layer in &descr.layers {
        let what = layer.name.as_str();
        let inputs: Vec<TensorShape> = if layer.from.is_empty() {
            vec![prev]
        } else {
            layer
                .from
                .iter()
                .map(|src| {
                    if src == "input" {
                        Ok(descr.input)
                    } else {
                        shapes.get(src.as_str()).copied().ok_or_else(|| {
                            Error::InvalidDescriptor(format!("{what}: unknown input '{src}'"))
                        })
                    }
                })
                .collect::<Result<_>>()?
        };
        let single = || -> Result<TensorShape> {
            match inputs.as_slice() {
                [s] => Ok(*s),
                _ => Err(Error::InvalidDescriptor(format!(
                    "{what}: expects exactly one input, got {}",
                    inputs.len()
                ))),
            }
        };

        let out = match &layer.op {
            NetOp::Conv {
                c_in,
                c_out,
                kernel,
                stride,
                padding,
                in_h,
                in_w,
            } => {
                let src = single()?;
                let expected = TensorShape::new(*c_in, *in_h, *in_w);
                if src != expected {
                    return Err(Error::InvalidDescriptor(format!(
                        "{what}: declared input {c_in}x{in_h}x{in_w} but producer emits {}x{}x{}",
                        src.channels, src.height, src.width
                    )));
                }
                let h = window_out(*in_h, kernel[0], stride[0], padding[0], what)?;
                let w = window_out(*in_w, kernel[1], stride[1], padding[1], what)?;
                gemm.push(LayerSpec::conv(gemm.len(), h * w, c_in * kernel[0] * kernel[1], *c_out));
                TensorShape::new(*c_out, h, w)
            }
            NetOp::Fc { inputs: n_in, outputs } => {
                let src = single()?;
                if src.volume() != *n_in {
                    return Err(Error::InvalidDescriptor(format!(
                        "{what}: declared {n_in} inputs but producer emits {}",
                        src.volume()
                    )));
                }
                gemm.push(LayerSpec::fc(gemm.len(), *n_in, *outputs));
                TensorShape::new(*outputs, 1, 1)
            }
            NetOp::Pool {
                kernel,
                stride,
                padding,
            } => {
                let src = single()?;
                TensorShape::new(
                    src.channels,
                    window_out(src.height, kernel[0], stride[0], padding[0], what)?,
                    window_out(src.width, kernel[1], stride[1], padding[1], what)?,
                )
            }
            NetOp::GlobalPool => TensorShape::new(single()?.channels, 1, 1),
            NetOp::Add => {
                let first = inputs[0];
                if inputs.len() < 2 || inputs.iter().any(|s| *s != first) {
                    return Err(Error::InvalidDescriptor(format!(
                        "{what}: add needs two or more equally shaped inputs"
                    )));
                }
                first
            }
            NetOp::Concat => {
                let first = inputs[0];
                if inputs
                    .iter()
                    .any(|s| s.height != first.height || s.width != first.width)
                {
                    return Err(Error::InvalidDescriptor(format!(
                        "{what}: concat inputs differ in spatial size"
                    )));
                }
                TensorShape::new(
                    inputs.iter().map(|s| s.channels).sum(),
                    first.height,
                    first.width,
                )
            }
        };
        if shapes.insert(what, out).is_some() {
            return Err(Error::InvalidDescriptor(format!("duplicate layer name '{what}'")));
        }
        prev = out;
    }
    if gemm.is_empty() {
        return Err(Error::InvalidDescriptor(format!(
            "{} contains no conv or FC layers",
            descr.name
        )));
    }
    Ok(gemm)
}
