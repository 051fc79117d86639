//! Trajectory generation: exact and tau-leap simulation of the jump process,
//! Euler-Maruyama for the diffusion, and sampling on observation grids.

mod diffusion;
pub mod io;
mod jump;

pub use diffusion::{euler_maruyama, ode_path};
pub use jump::{gillespie, tau_leap, TauLeapController};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the initial susceptibles that must be infected for a path to
/// count as an outbreak.
pub const NON_EXTINCTION_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Exact,
    TauLeap,
    Diffusion,
    Ode,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Exact => "exact",
            Scheme::TauLeap => "tau-leap",
            Scheme::Diffusion => "diffusion",
            Scheme::Ode => "ode",
        }
    }

    pub fn is_jump(&self) -> bool {
        matches!(self, Scheme::Exact | Scheme::TauLeap)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Scheme::Exact),
            "tau-leap" => Ok(Scheme::TauLeap),
            "diffusion" => Ok(Scheme::Diffusion),
            "ode" => Ok(Scheme::Ode),
            other => Err(Error::Format(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Seed plus stream index of a counter-based generator. Replicate `r` of a
/// farm uses stream `r`, so replicates are independent and reproducible
/// regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSeed {
    pub seed: u64,
    pub stream: u64,
}

impl StreamSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

impl From<u64> for StreamSeed {
    fn from(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }
}

/// A simulated trajectory. Jump schemes store integer counts (as exact
/// `f64`), diffusion and ODE paths store proportions. The state at time `t`
/// is the last record at or before `t`, up to `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub model: String,
    pub scheme: Scheme,
    pub population: u64,
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// Cumulative firings of the model's incidence transition, per record.
    pub incidence: Option<Vec<f64>>,
    pub seed: StreamSeed,
    pub horizon: f64,
    /// The process reached a state with zero total rate (jump schemes) or
    /// faded out (diffusion) before the horizon.
    pub absorbed: bool,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_counts(&self) -> bool {
        self.scheme.is_jump()
    }

    /// State at `k` as proportions.
    pub fn proportions(&self, k: usize) -> Vec<f64> {
        let s = self.state(k);
        if self.is_counts() {
            s.iter().map(|v| v / self.population as f64).collect()
        } else {
            s.to_vec()
        }
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    fn index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) || t < self.times[0] {
            return Err(Error::OutOfRange { t, end: self.horizon });
        }
        Ok(self.times.partition_point(|&s| s <= t) - 1)
    }

    /// Cumulative incidence up to the horizon, in the path's own units.
    pub fn cumulative_incidence(&self) -> Option<f64> {
        self.incidence.as_ref().and_then(|v| v.last().copied())
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times[0] != 0.0 {
            return Err(Error::Format("path must start at t = 0".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("path times must be strictly increasing".into()));
        }
        if self.states.len() != self.times.len() * self.dim {
            return Err(Error::Format("path state length mismatch".into()));
        }
        let n = self.population as f64;
        for v in &self.states {
            let ok = if self.is_counts() {
                v.fract() == 0.0 && (0.0..=n).contains(v)
            } else {
                (0.0..=1.0).contains(v)
            };
            if !ok {
                return Err(Error::Format(format!("state value {v} out of range")));
            }
        }
        Ok(())
    }
}

/// Discrete observations `X(t_0), …, X(t_n)` in proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
    /// Population size used for the normalization.
    pub population: u64,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>, population: u64) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("need at least two observation times".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("observation times must be strictly increasing".into()));
        }
        if values.len() != times.len() * dim {
            return Err(Error::InvalidArgument("observation value length mismatch".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("observation {v} outside [0, 1]")));
        }
        Ok(Self {
            times,
            dim,
            values,
            population,
        })
    }

    /// Number of intervals `n`.
    pub fn n(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Same counts normalized by a different population size.
    pub fn renormalized(&self, population: u64) -> Result<Self> {
        let c = self.population as f64 / population as f64;
        Self::new(
            self.times.clone(),
            self.dim,
            self.values.iter().map(|v| v * c).collect(),
            population,
        )
    }
}

/// Regular grid `t_k = t0 + k (T - t0) / n`, `k = 0..=n`.
pub fn regular_grid(t0: f64, horizon: f64, n: usize) -> Vec<f64> {
    let step = (horizon - t0) / n as f64;
    (0..=n)
        .map(|k| if k == n { horizon } else { t0 + k as f64 * step })
        .collect()
}

/// Samples a path at the given times (càdlàg: last record at or before `t`).
pub fn sample_at(path: &Path, times: &[f64]) -> Result<ObservationSet> {
    let mut values = Vec::with_capacity(times.len() * path.dim);
    for &t in times {
        let k = path.index_at(t)?;
        values.extend(path.proportions(k));
    }
    ObservationSet::new(times.to_vec(), path.dim, values, path.population)
}

/// Outbreak criterion: cumulative incidence at least 5% of the initial
/// susceptibles (coordinate 0). Without recorded incidence the drop in
/// susceptibles is used, which is the same quantity for SIR.
pub fn non_extinct(path: &Path) -> bool {
    let s0 = path.state(0)[0];
    let cases = path
        .cumulative_incidence()
        .unwrap_or_else(|| s0 - path.last_state()[0]);
    cases >= NON_EXTINCTION_FRACTION * s0
}
