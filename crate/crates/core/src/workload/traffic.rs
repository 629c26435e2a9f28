use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::ExitProfile;
use crate::error::{Error, Result};

/// Arrival timestamps and, once assigned, the exit each sample will take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalTrace {
    /// Seconds since the start of the run.
    pub arrival_times: Vec<f64>,
    pub sample_ids: Vec<u64>,
    /// Empty until [`assign_exits`] has run.
    pub assigned_exits: Vec<usize>,
}

impl ArrivalTrace {
    /// A trace from explicit timestamps and exit outcomes, for scripted
    /// scenarios.
    pub fn scripted(arrival_times: Vec<f64>, assigned_exits: Vec<usize>) -> Result<Self> {
        if arrival_times.len() != assigned_exits.len() {
            return Err(Error::InvalidArgument(
                "one exit per arrival is required".into(),
            ));
        }
        if arrival_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "arrival times must be non-decreasing".into(),
            ));
        }
        let sample_ids = (0..arrival_times.len() as u64).collect();
        Ok(Self {
            arrival_times,
            sample_ids,
            assigned_exits,
        })
    }

    pub fn len(&self) -> usize {
        self.arrival_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrival_times.is_empty()
    }

    pub fn has_exits(&self) -> bool {
        !self.is_empty() && self.assigned_exits.len() == self.len()
    }
}

/// Poisson arrivals: cumulative sums of i.i.d. `Exp(rate)` gaps.
pub fn gen_poisson_arrivals(rate: f64, n_samples: usize, seed: u64) -> Result<ArrivalTrace> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "arrival rate must be positive, got {rate}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let gaps = Exp::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let arrival_times = (0..n_samples)
        .map(|_| {
            t += gaps.sample(&mut rng);
            t
        })
        .collect();
    Ok(ArrivalTrace {
        arrival_times,
        sample_ids: (0..n_samples as u64).collect(),
        assigned_exits: Vec::new(),
    })
}

/// Draws each sample's exit independently from the profile's categorical
/// distribution. Uses its own RNG stream, so outcomes do not depend on the
/// arrival process or on the serving policy.
pub fn assign_exits(trace: &ArrivalTrace, profile: &ExitProfile, seed: u64) -> Result<ArrivalTrace> {
    profile.validate_rates()?;
    let dist = WeightedIndex::new(&profile.exit_rates)
        .map_err(|e| Error::InvalidProfile(e.to_string()))?;
    // decorrelate from an arrival stream seeded with the same value
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let assigned_exits = (0..trace.len()).map(|_| dist.sample(&mut rng)).collect();
    Ok(ArrivalTrace {
        assigned_exits,
        ..trace.clone()
    })
}
