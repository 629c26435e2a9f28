use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Off-chip bandwidth assumed when a design file does not give one.
pub const DEFAULT_MEM_BANDWIDTH: f64 = 12.8e9;
/// 16-bit fixed point.
pub const DEFAULT_WORD_BYTES: u64 = 2;

/// A tiled-GEMM accelerator: `T_C` processing elements, each a MAC tree of
/// width `T_P`, pipelined over `T_R` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpuDesign<T> {
    #[serde(rename = "T_R")]
    pub t_r: u64,
    #[serde(rename = "T_P")]
    pub t_p: u64,
    #[serde(rename = "T_C")]
    pub t_c: u64,
    pub clock_hz: T,
    #[serde(rename = "mem_bandwidth")]
    pub mem_bandwidth_bytes_per_s: T,
    pub word_bytes: u64,
    pub dsp_budget: u64,
    #[serde(rename = "bram_budget")]
    pub bram_budget_words: u64,
}

/// Clock and resource envelope of a target device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platform<T> {
    pub clock_hz: T,
    pub mem_bandwidth_bytes_per_s: T,
    pub word_bytes: u64,
    pub dsp_budget: u64,
    pub bram_budget_words: u64,
}

impl<T: Scalar> Platform<T> {
    /// ZC706 (Z7045): 900 DSPs at 150 MHz.
    pub fn zc706() -> Self {
        Self {
            clock_hz: T::of_f64(150e6),
            mem_bandwidth_bytes_per_s: T::of_f64(DEFAULT_MEM_BANDWIDTH),
            word_bytes: DEFAULT_WORD_BYTES,
            dsp_budget: 900,
            // on-chip buffer capacity in 16-bit words
            bram_budget_words: 1_258_400,
        }
    }

    /// ZCU104 (ZU7EV): 1728 DSPs at 200 MHz.
    pub fn zcu104() -> Self {
        Self {
            clock_hz: T::of_f64(200e6),
            mem_bandwidth_bytes_per_s: T::of_f64(DEFAULT_MEM_BANDWIDTH),
            word_bytes: DEFAULT_WORD_BYTES,
            dsp_budget: 1728,
            bram_budget_words: 2_490_600,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "zc706" => Some(Self::zc706()),
            "zcu104" => Some(Self::zcu104()),
            _ => None,
        }
    }

    pub fn design(&self, t_r: u64, t_p: u64, t_c: u64) -> NpuDesign<T> {
        NpuDesign {
            t_r,
            t_p,
            t_c,
            clock_hz: self.clock_hz,
            mem_bandwidth_bytes_per_s: self.mem_bandwidth_bytes_per_s,
            word_bytes: self.word_bytes,
            dsp_budget: self.dsp_budget,
            bram_budget_words: self.bram_budget_words,
        }
    }
}

/// Shipped design points, one per (backbone, platform) pair.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 4] = [
        "zc706-resnet50",
        "zcu104-resnet50",
        "zc706-inception_v3",
        "zcu104-inception_v3",
    ];

    pub fn zc706_resnet50<T: Scalar>() -> NpuDesign<T> {
        Platform::zc706().design(4652, 7, 128)
    }

    pub fn zcu104_resnet50<T: Scalar>() -> NpuDesign<T> {
        Platform::zcu104().design(6832, 10, 172)
    }

    pub fn zc706_inception_v3<T: Scalar>() -> NpuDesign<T> {
        Platform::zc706().design(2742, 4, 225)
    }

    pub fn zcu104_inception_v3<T: Scalar>() -> NpuDesign<T> {
        Platform::zcu104().design(6832, 10, 172)
    }

    pub fn by_name<T: Scalar>(name: &str) -> Option<NpuDesign<T>> {
        match name {
            "zc706-resnet50" => Some(zc706_resnet50()),
            "zcu104-resnet50" => Some(zcu104_resnet50()),
            "zc706-inception_v3" => Some(zc706_inception_v3()),
            "zcu104-inception_v3" => Some(zcu104_inception_v3()),
            _ => None,
        }
    }
}

impl<T: Scalar> NpuDesign<T> {
    /// MAC units in use (one DSP each).
    pub fn macs_per_cycle(&self) -> u64 {
        self.t_p * self.t_c
    }

    /// Words held by double-buffered input, weight and output tiles.
    pub fn buffer_words(&self) -> u64 {
        2 * (self.t_r * self.t_p + self.t_p * self.t_c + self.t_r * self.t_c)
    }

    /// DSP occupancy in percent.
    pub fn dsp_utilisation_pct(&self) -> f64 {
        100.0 * self.macs_per_cycle() as f64 / self.dsp_budget as f64
    }

    pub fn bram_utilisation_pct(&self) -> f64 {
        100.0 * self.buffer_words() as f64 / self.bram_budget_words as f64
    }

    pub fn fits_budgets(&self) -> bool {
        self.t_r >= 1
            && self.t_p >= 1
            && self.t_c >= 1
            && self.macs_per_cycle() <= self.dsp_budget
            && self.buffer_words() <= self.bram_budget_words
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_r == 0 || self.t_p == 0 || self.t_c == 0 {
            return Err(Error::InvalidDesign("tile sizes must be at least 1".into()));
        }
        if !(self.clock_hz > T::zero()) || !(self.mem_bandwidth_bytes_per_s > T::zero()) {
            return Err(Error::InvalidDesign(
                "clock and bandwidth must be positive".into(),
            ));
        }
        if self.word_bytes == 0 {
            return Err(Error::InvalidDesign("word size must be positive".into()));
        }
        if self.macs_per_cycle() > self.dsp_budget {
            return Err(Error::InvalidDesign(format!(
                "T_P·T_C = {} exceeds the DSP budget {}",
                self.macs_per_cycle(),
                self.dsp_budget
            )));
        }
        if self.buffer_words() > self.bram_budget_words {
            return Err(Error::InvalidDesign(format!(
                "double-buffered tiles need {} words, budget is {}",
                self.buffer_words(),
                self.bram_budget_words
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self>
    where
        T: serde::de::DeserializeOwned,
    {
        let d: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        serde_json::to_string_pretty(self).expect("design serialises")
    }
}

/// Stackable-PE configuration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stacking {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Stacking {
    pub const ALL: [Stacking; 3] = [Stacking::Half, Stacking::One, Stacking::Two];

    pub fn try_from_f64(k: f64) -> Result<Self> {
        if k == 0.5 {
            Ok(Self::Half)
        } else if k == 1.0 {
            Ok(Self::One)
        } else if k == 2.0 {
            Ok(Self::Two)
        } else {
            Err(Error::InvalidArgument(format!(
                "stacking factor must be one of 1/2, 1, 2; got {k}"
            )))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::One => 1.0,
            Self::Two => 2.0,
        }
    }

    /// Two-bit code stored in the control block.
    pub fn code(self) -> u8 {
        match self {
            Self::Half => 0b00,
            Self::One => 0b01,
            Self::Two => 0b10,
        }
    }
}

impl std::fmt::Display for Stacking {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Half => "1/2",
            Self::One => "1",
            Self::Two => "2",
        })
    }
}

/// Reconfigures `⟨T_R, T_P, T_C⟩` into `⟨⌊T_R/2⌋, k·T_P, ⌊T_C/k⌋⟩`.
pub fn stack_pes<T: Scalar>(design: &NpuDesign<T>, k: Stacking) -> Result<NpuDesign<T>> {
    let (t_p, t_c) = match k {
        Stacking::One => return Ok(*design),
        Stacking::Two => {
            if design.t_c < 2 {
                return Err(Error::UnsupportedStacking(format!(
                    "k=2 needs T_C >= 2, got {}",
                    design.t_c
                )));
            }
            (design.t_p * 2, design.t_c / 2)
        }
        Stacking::Half => {
            if !design.t_p.is_multiple_of(2) {
                return Err(Error::UnsupportedStacking(format!(
                    "k=1/2 needs an even T_P, got {}",
                    design.t_p
                )));
            }
            (design.t_p / 2, design.t_c * 2)
        }
    };
    if design.t_r < 2 {
        return Err(Error::UnsupportedStacking(
            "stacking halves T_R, which must be at least 2".into(),
        ));
    }
    Ok(NpuDesign {
        t_r: design.t_r / 2,
        t_p,
        t_c,
        ..*design
    })
}
