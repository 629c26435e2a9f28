//! DNN workloads as sequences of GEMM layers with early exits, and the
//! stochastic request traffic driving the simulator.

mod convnet;
mod traffic;
pub mod zoo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use convnet::{conv_net_to_gemm, ConvNetDescriptor, NetLayer, NetOp, TensorShape};
pub use traffic::{assign_exits, gen_poisson_arrivals, ArrivalTrace};

/// Tolerance on the sum of exit rates.
pub const RATE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// One layer lowered to an `R×P · P×C` matrix product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    /// Output rows (spatial positions of one sample).
    #[serde(rename = "R")]
    pub r: u64,
    /// Reduction length (input channels × kernel area).
    #[serde(rename = "P")]
    pub p: u64,
    /// Output channels.
    #[serde(rename = "C")]
    pub c: u64,
}

impl LayerSpec {
    pub fn conv(index: usize, r: u64, p: u64, c: u64) -> Self {
        Self {
            index,
            kind: LayerKind::Conv,
            r,
            p,
            c,
        }
    }

    pub fn fc(index: usize, p: u64, c: u64) -> Self {
        Self {
            index,
            kind: LayerKind::Fc,
            r: 1,
            p,
            c,
        }
    }

    pub fn macs(&self) -> u64 {
        self.r * self.p * self.c
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.p == 0 || self.c == 0 {
            return Err(Error::InvalidLayer(format!(
                "layer {} has a zero dimension (R={}, P={}, C={})",
                self.index, self.r, self.p, self.c
            )));
        }
        if self.kind == LayerKind::Fc && self.r != 1 {
            return Err(Error::InvalidLayer(format!(
                "FC layer {} must have R = 1 for a single sample, got {}",
                self.index, self.r
            )));
        }
        Ok(())
    }
}

/// Exit heads and the marginal probability of a sample leaving at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitProfile {
    #[serde(rename = "layer_indices")]
    pub exit_layer_indices: Vec<usize>,
    #[serde(rename = "rates")]
    pub exit_rates: Vec<f64>,
}

impl ExitProfile {
    pub fn new(exit_layer_indices: Vec<usize>, exit_rates: Vec<f64>) -> Result<Self> {
        let profile = Self {
            exit_layer_indices,
            exit_rates,
        };
        profile.validate_rates()?;
        Ok(profile)
    }

    /// A single exit after the last of `n_layers` layers.
    pub fn final_only(n_layers: usize) -> Self {
        Self {
            exit_layer_indices: vec![n_layers - 1],
            exit_rates: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.exit_layer_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exit_layer_indices.is_empty()
    }

    pub fn validate_rates(&self) -> Result<()> {
        if self.exit_rates.len() != self.exit_layer_indices.len() {
            return Err(Error::InvalidProfile(format!(
                "{} exits but {} rates",
                self.exit_layer_indices.len(),
                self.exit_rates.len()
            )));
        }
        if self.exit_rates.is_empty() {
            return Err(Error::InvalidProfile("no exits".into()));
        }
        if let Some(r) = self
            .exit_rates
            .iter()
            .find(|r| !(0.0..=1.0).contains(*r) || r.is_nan())
        {
            return Err(Error::InvalidProfile(format!("rate {r} outside [0, 1]")));
        }
        let sum: f64 = self.exit_rates.iter().sum();
        if (sum - 1.0).abs() > RATE_SUM_TOL {
            return Err(Error::InvalidProfile(format!(
                "rates sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Full check against a model with `n_layers` layers.
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        self.validate_rates()?;
        if self
            .exit_layer_indices
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidProfile(
                "exit layer indices must be strictly increasing".into(),
            ));
        }
        match self.exit_layer_indices.last() {
            Some(&last) if last + 1 == n_layers => Ok(()),
            Some(&last) => Err(Error::InvalidProfile(format!(
                "final exit sits after layer {last}, expected {}",
                n_layers.saturating_sub(1)
            ))),
            None => Err(Error::InvalidProfile("no exits".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub exits: ExitProfile,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>, exits: ExitProfile) -> Result<Self> {
        let model = Self {
            name: name.into(),
            layers,
            exits,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidLayer("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.index != i {
                return Err(Error::InvalidLayer(format!(
                    "layer at position {i} carries index {}",
                    layer.index
                )));
            }
            layer.validate()?;
        }
        self.exits.validate(self.layers.len())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_exits(&self) -> usize {
        self.exits.len()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerSpec::macs).sum()
    }

    /// Layer index range `[first, last]` executed between exit `exit - 1`
    /// (or the input) and exit `exit`.
    pub fn segment_layers(&self, exit: usize) -> std::ops::RangeInclusive<usize> {
        let first = if exit == 0 {
            0
        } else {
            self.exits.exit_layer_indices[exit - 1] + 1
        };
        first..=self.exits.exit_layer_indices[exit]
    }

    /// MACs a single sample performs when it leaves at each exit.
    pub fn macs_to_exit(&self) -> Vec<u64> {
        let mut acc = 0;
        let mut out = Vec::with_capacity(self.n_exits());
        for exit in 0..self.n_exits() {
            acc += self.layers[self.segment_layers(exit)]
                .iter()
                .map(LayerSpec::macs)
                .sum::<u64>();
            out.push(acc);
        }
        out
    }

    /// The same backbone with every intermediate exit removed.
    pub fn without_exits(&self) -> Self {
        Self {
            name: format!("{}-noexit", self.name),
            layers: self.layers.clone(),
            exits: ExitProfile::final_only(self.layers.len()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }
}

/// Exit positions chosen by [`place_exits_equidistant`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitPlacement {
    pub indices: Vec<usize>,
    /// One note per exit dropped because it could not be placed.
    pub warnings: Vec<String>,
}

/// Places `n_intermediate` exits at equal fractions of the model's total
/// MACs, plus the final exit after the last layer.
///
/// The i-th exit goes after the first layer whose cumulative MAC count
/// reaches `i / (n_intermediate + 1)` of the total. An intermediate exit is
/// never placed after the last layer; collisions push the later exit one
/// layer deeper, and exits that no longer fit before the final layer are
/// dropped with a warning.
pub fn place_exits_equidistant(layers: &[LayerSpec], n_intermediate: usize) -> Result<ExitPlacement> {
    if n_intermediate == 0 {
        return Err(Error::InvalidArgument(
            "at least one intermediate exit is required".into(),
        ));
    }
    let n = layers.len();
    if n < n_intermediate + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} layers cannot host {} exits",
            n_intermediate + 1
        )));
    }
    let total: u128 = layers.iter().map(|l| l.macs() as u128).sum();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0u128;
    for layer in layers {
        acc += layer.macs() as u128;
        cumulative.push(acc);
    }

    let parts = (n_intermediate + 1) as u128;
    let last_intermediate = n - 2;
    let mut indices = Vec::with_capacity(n_intermediate + 1);
    let mut warnings = Vec::new();
    for i in 1..=n_intermediate as u128 {
        // cumulative[l] / total >= i / parts, in integers
        let reach = cumulative
            .iter()
            .position(|&c| c * parts >= i * total)
            .unwrap_or(n - 1);
        let mut idx = reach.min(last_intermediate);
        if let Some(&prev) = indices.last() {
            if idx <= prev {
                idx = prev + 1;
            }
        }
        if idx > last_intermediate {
            warnings.push(format!(
                "exit {i} of {n_intermediate} dropped: no free layer before the final exit"
            ));
            continue;
        }
        indices.push(idx);
    }
    indices.push(n - 1);
    Ok(ExitPlacement { indices, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equal_layers(n: usize) -> Vec<LayerSpec> {
        (0..n).map(|i| LayerSpec::conv(i, 4, 4, 4)).collect()
    }

    fn layers_with_macs(macs: &[u64]) -> Vec<LayerSpec> {
        macs.iter()
            .enumerate()
            .map(|(i, &m)| LayerSpec::conv(i, m, 1, 1))
            .collect()
    }

    #[test]
    fn equidistant_uniform_workload() {
        let p = place_exits_equidistant(&equal_layers(4), 3).unwrap();
        assert_eq!(p.indices, vec![0, 1, 2, 3]);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn equidistant_two_layers_one_exit() {
        let p = place_exits_equidistant(&equal_layers(2), 1).unwrap();
        assert_eq!(p.indices, vec![0, 1]);
    }

    #[test]
    fn equidistant_collision_with_final_exit_moves_back() {
        // cumulative [10, 20, 30, 100]: half the work is first reached at
        // the last layer, which is reserved for the final exit.
        let p = place_exits_equidistant(&layers_with_macs(&[10, 10, 10, 70]), 1).unwrap();
        assert_eq!(p.indices, vec![2, 3]);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn equidistant_drops_exits_that_cannot_fit() {
        let p = place_exits_equidistant(&layers_with_macs(&[1, 1, 1, 1000]), 2).unwrap();
        assert_eq!(p.indices, vec![2, 3]);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn equidistant_collisions_shift_forward() {
        // one heavy layer up front: all targets land on layer 0
        let p = place_exits_equidistant(&layers_with_macs(&[1000, 1, 1, 1, 1]), 3).unwrap();
        assert_eq!(p.indices, vec![0, 1, 2, 4]);
    }

    #[test]
    fn equidistant_rejects_too_few_layers() {
        assert!(matches!(
            place_exits_equidistant(&equal_layers(3), 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(place_exits_equidistant(&equal_layers(3), 0).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(ExitProfile::new(vec![1, 3], vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            ExitProfile::new(vec![1, 3], vec![0.5, 0.4]),
            Err(Error::InvalidProfile(_))
        ));
        assert!(ExitProfile::new(vec![1, 3], vec![1.2, -0.2]).is_err());
        let p = ExitProfile::new(vec![3, 1], vec![0.5, 0.5]).unwrap();
        assert!(p.validate(4).is_err());
        let p = ExitProfile::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(p.validate(4).is_err());
    }

    #[test]
    fn fc_layer_must_have_single_row() {
        let mut l = LayerSpec::fc(0, 2048, 1000);
        assert!(l.validate().is_ok());
        l.r = 2;
        assert!(l.validate().is_err());
        assert!(LayerSpec::conv(0, 0, 1, 1).validate().is_err());
    }

    #[test]
    fn segments_partition_the_layers() {
        let layers = equal_layers(6);
        let model = ModelSpec::new(
            "m",
            layers,
            ExitProfile::new(vec![1, 3, 5], vec![0.2, 0.3, 0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(model.segment_layers(0), 0..=1);
        assert_eq!(model.segment_layers(1), 2..=3);
        assert_eq!(model.segment_layers(2), 4..=5);
        assert_eq!(model.macs_to_exit(), vec![128, 256, 384]);
    }

    #[test]
    fn model_json_round_trip() {
        let model = zoo::synthetic10();
        let text = model.to_json();
        assert!(text.contains("\"R\""));
        assert!(text.contains("\"layer_indices\""));
        assert_eq!(ModelSpec::from_json(&text).unwrap(), model);
    }
}
