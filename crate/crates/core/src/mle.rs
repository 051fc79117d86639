//! Maximum likelihood for SIR from complete observation of every jump.
//!
//! With `n_inf` infections, `n_rec` recoveries and exposures
//! `E_inf = ∫ S I / N dt`, `E_rec = ∫ I dt`, the log-likelihood
//! `n_inf log λ − λ E_inf + n_rec log γ − γ E_rec` is maximized by
//! `λ̂ = n_inf / E_inf`, `γ̂ = n_rec / E_rec`.

use crate::contrast::{Diagnostics, EstimationReport, InformationMatrix};
use crate::error::{Error, Result};
use crate::linalg::{inverse, matmul, matmul_bt};
use crate::models::{sir_params, Reparam, SIR_ID};
use crate::simulate::{Path, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Infection,
    Recovery,
}

/// Event-level SIR trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletePath {
    pub population: u64,
    /// `(S, I)` at time 0.
    pub initial: [i64; 2],
    pub event_times: Vec<f64>,
    pub kinds: Vec<EventKind>,
    pub horizon: f64,
}

impl CompletePath {
    /// Reads event types off the state increments of an exact SIR path.
    pub fn from_path(path: &Path) -> Result<Self> {
        if path.scheme != Scheme::Exact {
            return Err(Error::InvalidArgument("complete-data MLE needs an exact (event-level) path".into()));
        }
        if path.model != SIR_ID || path.dim != 2 {
            return Err(Error::InvalidArgument(format!("expected an SIR path, got `{}`", path.model)));
        }
        let mut kinds = Vec::with_capacity(path.len().saturating_sub(1));
        for k in 1..path.len() {
            let (a, b) = (path.state(k - 1), path.state(k));
            let ds = (b[0] - a[0]) as i64;
            let di = (b[1] - a[1]) as i64;
            kinds.push(match (ds, di) {
                (-1, 1) => EventKind::Infection,
                (0, -1) => EventKind::Recovery,
                other => {
                    return Err(Error::Format(format!(
                        "increment {other:?} at t = {} is not an SIR event",
                        path.times[k]
                    )))
                }
            });
        }
        let s0 = path.state(0);
        Ok(Self {
            population: path.population,
            initial: [s0[0] as i64, s0[1] as i64],
            event_times: path.times[1..].to_vec(),
            kinds,
            horizon: path.horizon,
        })
    }

    pub fn counts(&self) -> (usize, usize) {
        let inf = self.kinds.iter().filter(|k| **k == EventKind::Infection).count();
        (inf, self.kinds.len() - inf)
    }

    /// `(∫ S I / N dt, ∫ I dt)` over `[0, horizon]`, exact for the
    /// piecewise-constant path.
    pub fn exposures(&self) -> (f64, f64) {
        let n = self.population as f64;
        let [mut s, mut i] = self.initial;
        let mut t = 0.0;
        let (mut e_inf, mut e_rec) = (0.0, 0.0);
        for (&u, kind) in self.event_times.iter().zip(&self.kinds) {
            let dt = u - t;
            e_inf += dt * (s * i) as f64 / n;
            e_rec += dt * i as f64;
            match kind {
                EventKind::Infection => {
                    s -= 1;
                    i += 1;
                }
                EventKind::Recovery => i -= 1,
            }
            t = u;
        }
        let dt = self.horizon - t;
        e_inf += dt * (s * i) as f64 / n;
        e_rec += dt * i as f64;
        (e_inf, e_rec)
    }

    /// Exact CTMC log-likelihood at rates `(λ, γ)`, up to a constant.
    pub fn log_likelihood(&self, lambda: f64, gamma: f64) -> f64 {
        let (n_inf, n_rec) = self.counts();
        let (e_inf, e_rec) = self.exposures();
        n_inf as f64 * lambda.ln() - lambda * e_inf + n_rec as f64 * gamma.ln() - gamma * e_rec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirMle {
    pub lambda: f64,
    pub gamma: f64,
    pub r0: f64,
    pub d: f64,
    /// Covariance of `(R̂0, d̂)` by the delta method, row-major.
    pub cov: [f64; 4],
    pub population: u64,
    pub events: (usize, usize),
}

pub fn sir_mle(path: &CompletePath) -> Result<SirMle> {
    let (n_inf, n_rec) = path.counts();
    let (e_inf, e_rec) = path.exposures();
    if n_inf == 0 {
        return Err(Error::Estimation("no infection events: transmission rate undefined".into()));
    }
    if n_rec == 0 {
        return Err(Error::Estimation("no recovery events: recovery rate undefined".into()));
    }
    let lambda = n_inf as f64 / e_inf;
    let gamma = n_rec as f64 / e_rec;
    // Observed information of the rates is diagonal.
    let rate_cov = [lambda * lambda / n_inf as f64, 0.0, 0.0, gamma * gamma / n_rec as f64];
    let jac = Reparam::Sir.jacobian(&[lambda, gamma])?;
    let mut tmp = [0.0; 4];
    let mut cov = [0.0; 4];
    matmul(&jac, &rate_cov, 2, 2, 2, &mut tmp);
    matmul_bt(&tmp, &jac, 2, 2, 2, &mut cov);
    Ok(SirMle {
        lambda,
        gamma,
        r0: lambda / gamma,
        d: 1.0 / gamma,
        cov,
        population: path.population,
        events: (n_inf, n_rec),
    })
}

impl SirMle {
    /// Same report shape as the contrast estimator; `info` is the observed
    /// information per individual, so that `cov = (N info)⁻¹`.
    pub fn report(&self, level: f64) -> Result<EstimationReport> {
        let theta = sir_params(self.r0, self.d)?;
        let n = self.population as f64;
        let inv = inverse(&self.cov, 2).ok_or_else(|| Error::Estimation("degenerate MLE covariance".into()))?;
        let info = InformationMatrix {
            names: theta.free_names(),
            matrix: inv.iter().map(|v| v / n).collect(),
            rank: 2,
            condition: crate::linalg::sym_condition(&inv, 2),
        };
        let mut diag = Diagnostics::new("mle", n, self.events.0 + self.events.1);
        diag.notes.push(format!("{} infections, {} recoveries", self.events.0, self.events.1));
        Ok(EstimationReport::assemble(theta, f64::NAN, &info, level, diag))
    }
}
