use serde::{Deserialize, Serialize};

use super::{policy_latency, Fbcb, GuardMode, NpuDesign};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::workload::ModelSpec;

/// Latency of every layer at every batch size `1..=b_max`, seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLatencyTable<T> {
    pub b_max: usize,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> LayerLatencyTable<T> {
    pub fn from_fn(
        n_layers: usize,
        b_max: usize,
        mut f: impl FnMut(usize, usize) -> Result<T>,
    ) -> Result<Self> {
        let rows = (0..n_layers)
            .map(|l| (1..=b_max).map(|b| f(l, b)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { b_max, rows })
    }

    /// Per-layer latencies under the control block's policies.
    pub fn from_fbcb(design: &NpuDesign<T>, model: &ModelSpec, fbcb: &Fbcb, guard: GuardMode) -> Result<Self> {
        if fbcb.n_layers != model.n_layers() {
            return Err(Error::Config(format!(
                "control block covers {} layers, model has {}",
                fbcb.n_layers,
                model.n_layers()
            )));
        }
        Self::from_fn(model.n_layers(), fbcb.b_max, |l, b| {
            policy_latency(design, &model.layers[l], b, fbcb.policy(l, b)?, guard)
        })
    }

    pub fn n_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, layer: usize, b: usize) -> T {
        self.rows[layer][b - 1]
    }

    /// Sum over an inclusive layer range at batch `b`.
    pub fn sum(&self, layers: std::ops::RangeInclusive<usize>, b: usize) -> T {
        self.rows[layers].iter().map(|row| row[b - 1]).sum()
    }
}

/// Per-exit-segment latency, indexed by (segment, batch size).
///
/// Segment `i` runs the layers after exit `i − 1` (or from the input) up to
/// and including exit `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyLut<T> {
    pub n_exits: usize,
    pub b_max: usize,
    /// Row-major by segment, then batch size.
    pub entries: Vec<T>,
}

impl<T: Scalar> LatencyLut<T> {
    pub fn from_fn(n_exits: usize, b_max: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut entries = Vec::with_capacity(n_exits * b_max);
        for seg in 0..n_exits {
            for b in 1..=b_max {
                entries.push(f(seg, b));
            }
        }
        Self {
            n_exits,
            b_max,
            entries,
        }
    }

    /// Collapses a per-layer table onto the model's exit segments.
    pub fn from_layer_table(model: &ModelSpec, table: &LayerLatencyTable<T>) -> Self {
        Self::from_fn(model.n_exits(), table.b_max, |seg, b| {
            table.sum(model.segment_layers(seg), b)
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, segment: usize, b: usize) -> T {
        debug_assert!(segment < self.n_exits && (1..=self.b_max).contains(&b));
        self.entries[segment * self.b_max + b - 1]
    }

    /// `T_{0:i}`: input to exit `i` inclusive.
    pub fn prefix(&self, exit: usize, b: usize) -> T {
        (0..=exit).map(|s| self.get(s, b)).sum()
    }

    /// `T_{i+1:last}`: after exit `i` to the final exit.
    pub fn suffix(&self, exit: usize, b: usize) -> T {
        (exit + 1..self.n_exits).map(|s| self.get(s, b)).sum()
    }

    /// Whole network at batch `b`.
    pub fn full(&self, b: usize) -> T {
        (0..self.n_exits).map(|s| self.get(s, b)).sum()
    }

    /// Positive entries, non-decreasing in the batch size.
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.n_exits * self.b_max {
            return Err(Error::Config("latency table has the wrong size".into()));
        }
        for seg in 0..self.n_exits {
            for b in 1..=self.b_max {
                let t = self.get(seg, b);
                if !(t > T::zero()) {
                    return Err(Error::Config(format!(
                        "segment {seg} at batch {b} has non-positive latency"
                    )));
                }
                if b > 1 && t < self.get(seg, b - 1) {
                    return Err(Error::Config(format!(
                        "segment {seg} gets faster going from batch {} to {b}",
                        b - 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `T_{from:to}` at batch `b`: layers after exit `from` (or from the input
/// when `None`) up to and including exit `to`.
pub fn segment_latency<T: Scalar>(
    design: &NpuDesign<T>,
    model: &ModelSpec,
    fbcb: &Fbcb,
    from: Option<usize>,
    to: usize,
    b: usize,
) -> Result<T> {
    if to >= model.n_exits() {
        return Err(Error::Range(format!(
            "exit {to} outside [0, {}]",
            model.n_exits() - 1
        )));
    }
    if let Some(from) = from {
        if from >= to {
            return Err(Error::Range(format!("exit {from} does not precede exit {to}")));
        }
    }
    let first = from.map_or(0, |f| model.exits.exit_layer_indices[f] + 1);
    let last = model.exits.exit_layer_indices[to];
    (first..=last)
        .map(|l| {
            policy_latency(
                design,
                &model.layers[l],
                b,
                fbcb.policy(l, b)?,
                GuardMode::default(),
            )
        })
        .sum()
}

/// Exit-level latency table for batch sizes `1..=b_max`.
pub fn build_latency_lut<T: Scalar>(
    design: &NpuDesign<T>,
    model: &ModelSpec,
    fbcb: &Fbcb,
    b_max: usize,
) -> Result<LatencyLut<T>> {
    if b_max > fbcb.b_max {
        return Err(Error::Config(format!(
            "control block only covers batch sizes up to {}",
            fbcb.b_max
        )));
    }
    let mut lut = LatencyLut::from_fn(model.n_exits(), b_max, |_, _| T::zero());
    for seg in 0..model.n_exits() {
        for b in 1..=b_max {
            let from = seg.checked_sub(1);
            lut.entries[seg * b_max + b - 1] = segment_latency(design, model, fbcb, from, seg, b)?;
        }
    }
    Ok(lut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npu::{presets, Platform};
    use crate::workload::{zoo, ExitProfile, LayerSpec};

    fn four_layer() -> ModelSpec {
        let layers = vec![
            LayerSpec::conv(0, 300, 40, 20),
            LayerSpec::conv(1, 120, 90, 50),
            LayerSpec::conv(2, 60, 200, 70),
            LayerSpec::fc(3, 500, 10),
        ];
        ModelSpec::new("four", layers, ExitProfile::new(vec![1, 3], vec![0.4, 0.6]).unwrap()).unwrap()
    }

    #[test]
    fn hand_summed_segments() {
        let design: NpuDesign<f64> = Platform::zc706().design(128, 4, 16);
        let model = four_layer();
        let fbcb = Fbcb::uniform_r(4, 4);
        // independent per-layer evaluation: R̂ = 2R, P̂ = P, k = 1
        let lat = |l: &LayerSpec| {
            let tiles = (2 * l.r).div_ceil(128) * l.p.div_ceil(4) * l.c.div_ceil(16);
            let cycles = tiles * 128 + 2 + 4;
            let bytes = 2 * (2 * l.r * l.p + l.p * l.c + 2 * l.r * l.c);
            (cycles as f64 / 150e6).max(bytes as f64 / 12.8e9)
        };
        let first: f64 = model.layers[..2].iter().map(lat).sum();
        let second: f64 = model.layers[2..].iter().map(lat).sum();
        let s0 = segment_latency(&design, &model, &fbcb, None, 0, 2).unwrap();
        let s1 = segment_latency(&design, &model, &fbcb, Some(0), 1, 2).unwrap();
        assert!((s0 - first).abs() < 1e-15);
        assert!((s1 - second).abs() < 1e-15);
        let whole = segment_latency(&design, &model, &fbcb, None, 1, 2).unwrap();
        assert!((whole - s0 - s1).abs() < 1e-15);
    }

    #[test]
    fn single_layer_segment() {
        let design: NpuDesign<f64> = Platform::zc706().design(128, 4, 16);
        let layers = vec![LayerSpec::conv(0, 10, 10, 10), LayerSpec::conv(1, 20, 20, 20)];
        let model =
            ModelSpec::new("two", layers, ExitProfile::new(vec![0, 1], vec![0.5, 0.5]).unwrap()).unwrap();
        let fbcb = Fbcb::uniform_r(2, 2);
        let s = segment_latency(&design, &model, &fbcb, Some(0), 1, 1).unwrap();
        let direct = policy_latency(
            &design,
            &model.layers[1],
            1,
            fbcb.policy(1, 1).unwrap(),
            GuardMode::default(),
        )
        .unwrap();
        assert_eq!(s, direct);
    }

    #[test]
    fn range_errors() {
        let design: NpuDesign<f64> = Platform::zc706().design(128, 4, 16);
        let model = four_layer();
        let fbcb = Fbcb::uniform_r(4, 4);
        assert!(matches!(
            segment_latency(&design, &model, &fbcb, None, 2, 1),
            Err(Error::Range(_))
        ));
        assert!(segment_latency(&design, &model, &fbcb, Some(1), 1, 1).is_err());
        assert!(segment_latency(&design, &model, &fbcb, None, 1, 5).is_err());
    }

    #[test]
    fn lut_shape_and_row_sums() {
        let design: NpuDesign<f64> = presets::zc706_resnet50();
        let model = zoo::resnet50();
        let fbcb = Fbcb::uniform_r(model.n_layers(), 8);
        let lut = build_latency_lut(&design, &model, &fbcb, 8).unwrap();
        assert_eq!(lut.len(), 32);
        lut.validate().unwrap();
        for b in 1..=8 {
            let full = segment_latency(&design, &model, &fbcb, None, 3, b).unwrap();
            assert!((lut.full(b) - full).abs() < 1e-12 * full);
        }
    }

    #[test]
    fn prefix_suffix_split_the_network() {
        let lut = LatencyLut::from_fn(4, 3, |s, b| (s + 1) as f64 * b as f64);
        for i in 0..3 {
            assert_eq!(lut.prefix(i, 2) + lut.suffix(i, 2), lut.full(2));
        }
        assert_eq!(lut.prefix(0, 3), 3.0);
        assert_eq!(lut.suffix(3, 1), 0.0);
    }

    #[test]
    fn validate_catches_decreasing_rows() {
        let lut = LatencyLut::from_fn(1, 2, |_, b| 3.0 - b as f64);
        assert!(lut.validate().is_err());
    }
}
