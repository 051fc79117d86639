//! Built-in epidemic models and their parameterizations.
//!
//! Both models are parameterized directly in estimation coordinates, so that
//! sensitivities, information matrices and covariances come out in the
//! coordinates that are reported:
//!
//! * SIR: `(r0, d)` with `λ = r0 / d`, `γ = 1 / d`.
//! * seasonal SIRS: `(r0, d, lambda1_x10, inv_delta_tper, mu, eta, t_per)`
//!   with `λ0 = r0 / d`, `γ = 1 / d`, `λ1 = lambda1_x10 / 10`,
//!   `δ = 1 / (inv_delta_tper · t_per)`; the last three are fixed by default.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamVector, Transition, TransitionTable};
use crate::odeflow::solve_ode;

pub const SIR_ID: &str = "sir";
pub const SIRS_ID: &str = "sirs-seasonal";

/// Days per year used for the seasonal period and the demographic rate.
pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    /// Transmission rate per day.
    pub lambda: f64,
    /// Recovery rate per day.
    pub gamma: f64,
}

impl SirParams {
    pub fn from_r0_d(r0: f64, d: f64) -> Result<Self> {
        let est = [r0, d];
        let raw = Reparam::Sir.to_raw(&est)?;
        Ok(Self {
            lambda: raw[0],
            gamma: raw[1],
        })
    }

    pub fn r0(&self) -> f64 {
        self.lambda / self.gamma
    }

    pub fn d(&self) -> f64 {
        1.0 / self.gamma
    }

    pub fn to_param_vector(&self) -> Result<ParamVector> {
        if !(self.lambda > 0.0 && self.gamma > 0.0) {
            return Err(Error::ParamDomain {
                name: "lambda/gamma".into(),
                detail: "SIR rates must be positive".into(),
            });
        }
        sir_params(self.r0(), self.d())
    }
}

/// Estimation-coordinate parameter vector for the SIR table.
pub fn sir_params(r0: f64, d: f64) -> Result<ParamVector> {
    ParamVector::new(&[("r0", r0, 0.2, 20.0, true), ("d", d, 0.2, 50.0, true)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirsParams {
    pub lambda0: f64,
    pub lambda1: f64,
    pub gamma: f64,
    pub delta: f64,
    pub mu: f64,
    pub eta: f64,
    pub t_per: f64,
}

impl SirsParams {
    /// Values used throughout the seasonal study: `μ = 1/50 per year`,
    /// `η = 1e-6`, `T_per = 365` days.
    pub fn study(r0: f64, d: f64, lambda1: f64, inv_delta_tper: f64) -> Self {
        let t_per = DAYS_PER_YEAR;
        Self {
            lambda0: r0 / d,
            lambda1,
            gamma: 1.0 / d,
            delta: 1.0 / (inv_delta_tper * t_per),
            mu: 1.0 / (50.0 * DAYS_PER_YEAR),
            eta: 1e-6,
            t_per,
        }
    }

    pub fn raw(&self) -> [f64; 7] {
        [self.lambda0, self.lambda1, self.gamma, self.delta, self.mu, self.eta, self.t_per]
    }

    pub fn lambda_at(&self, t: f64) -> f64 {
        self.lambda0 * (1.0 + self.lambda1 * (2.0 * PI * t / self.t_per).sin())
    }

    pub fn to_param_vector(&self) -> Result<ParamVector> {
        if !(self.lambda1 >= 0.0 && self.lambda1 < 1.0) {
            return Err(Error::ParamDomain {
                name: "lambda1".into(),
                detail: "seasonal amplitude must lie in [0, 1)".into(),
            });
        }
        let est = Reparam::Sirs.to_estimation(&self.raw())?;
        let mut pv = ParamVector::new(&[
            ("r0", est[0], 0.2, 20.0, true),
            ("d", est[1], 0.2, 50.0, true),
            ("lambda1_x10", est[2], 0.0, 9.99, true),
            ("inv_delta_tper", est[3], 0.05, 50.0, true),
            ("mu", est[4], 0.0, 1.0, false),
            ("eta", est[5], 0.0, 0.1, false),
            ("t_per", est[6], 1.0, 10_000.0, false),
        ])?;
        // Log-box estimation needs a positive lower bound on λ1.
        pv.lower[2] = 1e-3;
        if est[2] < pv.lower[2] {
            pv.free[2] = false;
            pv.lower[2] = 0.0;
        }
        Ok(pv)
    }
}

/// Bijection between raw rates and estimation coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reparam {
    Sir,
    Sirs,
}

impl Reparam {
    pub fn raw_names(&self) -> &'static [&'static str] {
        match self {
            Reparam::Sir => &["lambda", "gamma"],
            Reparam::Sirs => &["lambda0", "lambda1", "gamma", "delta", "mu", "eta", "t_per"],
        }
    }

    pub fn estimation_names(&self) -> &'static [&'static str] {
        match self {
            Reparam::Sir => &["r0", "d"],
            Reparam::Sirs => &["r0", "d", "lambda1_x10", "inv_delta_tper", "mu", "eta", "t_per"],
        }
    }

    fn check(&self, v: &[f64], positive: &[usize]) -> Result<()> {
        if v.len() != self.raw_names().len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                self.raw_names().len(),
                v.len()
            )));
        }
        for &i in positive {
            if !(v[i] > 0.0 && v[i].is_finite()) {
                return Err(Error::ParamDomain {
                    name: format!("#{i}"),
                    detail: format!("value {} must be positive", v[i]),
                });
            }
        }
        Ok(())
    }

    pub fn to_estimation(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reparam::Sir => {
                self.check(raw, &[0, 1])?;
                Ok(vec![raw[0] / raw[1], 1.0 / raw[1]])
            }
            Reparam::Sirs => {
                self.check(raw, &[0, 2, 3, 6])?;
                let [l0, l1, g, delta, mu, eta, tp] = [raw[0], raw[1], raw[2], raw[3], raw[4], raw[5], raw[6]];
                Ok(vec![l0 / g, 1.0 / g, 10.0 * l1, 1.0 / (delta * tp), mu, eta, tp])
            }
        }
    }

    pub fn to_raw(&self, est: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reparam::Sir => {
                self.check(est, &[0, 1])?;
                Ok(vec![est[0] / est[1], 1.0 / est[1]])
            }
            Reparam::Sirs => {
                self.check(est, &[0, 1, 3, 6])?;
                let [r0, d, l1x, idt, mu, eta, tp] = [est[0], est[1], est[2], est[3], est[4], est[5], est[6]];
                Ok(vec![r0 / d, l1x / 10.0, 1.0 / d, 1.0 / (idt * tp), mu, eta, tp])
            }
        }
    }

    /// `∂(estimation)/∂(raw)` at `raw`, row-major.
    pub fn jacobian(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reparam::Sir => {
                self.check(raw, &[0, 1])?;
                let (l, g) = (raw[0], raw[1]);
                Ok(vec![1.0 / g, -l / (g * g), 0.0, -1.0 / (g * g)])
            }
            Reparam::Sirs => {
                self.check(raw, &[0, 2, 3, 6])?;
                let (l0, g, delta, tp) = (raw[0], raw[2], raw[3], raw[6]);
                let mut j = vec![0.0; 49];
                j[0] = 1.0 / g;
                j[2] = -l0 / (g * g);
                j[7 + 2] = -1.0 / (g * g);
                j[2 * 7 + 1] = 10.0;
                j[3 * 7 + 3] = -1.0 / (delta * delta * tp);
                j[3 * 7 + 6] = -1.0 / (delta * tp * tp);
                j[4 * 7 + 4] = 1.0;
                j[5 * 7 + 5] = 1.0;
                j[6 * 7 + 6] = 1.0;
                Ok(j)
            }
        }
    }
}

/// Two-dimensional SIR: jumps `(-1, 1)` at `λ s i` and `(0, -1)` at `γ i`.
pub fn sir_table() -> TransitionTable {
    let infection = Transition::new("infection", vec![-1, 1], |_, y, th| th[0] / th[1] * y[0] * y[1])
        .unwrap()
        .with_grad_state(|_, y, th, g| {
            let l = th[0] / th[1];
            g[0] = l * y[1];
            g[1] = l * y[0];
        })
        .with_grad_param(|_, y, th, g| {
            let si = y[0] * y[1];
            g[0] = si / th[1];
            g[1] = -th[0] * si / (th[1] * th[1]);
        });
    let recovery = Transition::new("recovery", vec![0, -1], |_, y, th| y[1] / th[1])
        .unwrap()
        .with_grad_state(|_, _, th, g| {
            g[0] = 0.0;
            g[1] = 1.0 / th[1];
        })
        .with_grad_param(|_, y, th, g| {
            g[0] = 0.0;
            g[1] = -y[1] / (th[1] * th[1]);
        });
    TransitionTable::new(SIR_ID, vec!["S".into(), "I".into()], vec![infection, recovery], false, 1)
        .unwrap()
        .with_simplex()
        .with_fadeout(1)
        .with_incidence(0)
}

fn seasonal_phase(t: f64, t_per: f64) -> f64 {
    2.0 * PI * t / t_per
}

/// Largest value of `sin(2π t / T)` over `[t0, t1]`.
pub fn max_sine(t0: f64, t1: f64, t_per: f64) -> f64 {
    let (a, b) = (seasonal_phase(t0, t_per), seasonal_phase(t1, t_per));
    // First crest (phase π/2 + 2πk) at or after a.
    let k = ((a - PI / 2.0) / (2.0 * PI)).ceil();
    let crest = PI / 2.0 + 2.0 * PI * k;
    if crest <= b {
        1.0
    } else {
        a.sin().max(b.sin())
    }
}

/// Seasonal SIRS with demography and immigration; see the module docs for
/// the parameter layout.
pub fn sirs_table() -> TransitionTable {
    fn lambda(t: f64, th: &[f64]) -> f64 {
        th[0] / th[1] * (1.0 + th[2] / 10.0 * seasonal_phase(t, th[6]).sin())
    }
    let infection = Transition::new("infection", vec![-1, 1], |t, y, th| lambda(t, th) * y[0] * (y[1] + th[5]))
        .unwrap()
        .with_grad_state(|t, y, th, g| {
            let l = lambda(t, th);
            g[0] = l * (y[1] + th[5]);
            g[1] = l * y[0];
        })
        .with_grad_param(|t, y, th, g| {
            let (r0, d, l1x, tp) = (th[0], th[1], th[2], th[6]);
            let phase = seasonal_phase(t, tp);
            let season = 1.0 + l1x / 10.0 * phase.sin();
            let si = y[0] * (y[1] + th[5]);
            g[0] = season * si / d;
            g[1] = -r0 / (d * d) * season * si;
            g[2] = r0 / d * phase.sin() / 10.0 * si;
            g[3] = 0.0;
            g[4] = 0.0;
            g[5] = lambda(t, th) * y[0];
            g[6] = r0 / d * l1x / 10.0 * phase.cos() * (-phase / tp) * si;
        })
        .with_majorant(|t0, t1, y, th| {
            let l1 = th[2] / 10.0;
            th[0] / th[1] * (1.0 + l1 * max_sine(t0, t1, th[6])) * y[0] * (y[1] + th[5])
        });
    let death = Transition::new("death_s", vec![-1, 0], |_, y, th| th[4] * y[0])
        .unwrap()
        .with_grad_state(|_, _, th, g| {
            g[0] = th[4];
            g[1] = 0.0;
        })
        .with_grad_param(|_, y, _, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[4] = y[0];
        });
    let removal = Transition::new("removal", vec![0, -1], |_, y, th| (1.0 / th[1] + th[4]) * y[1])
        .unwrap()
        .with_grad_state(|_, _, th, g| {
            g[0] = 0.0;
            g[1] = 1.0 / th[1] + th[4];
        })
        .with_grad_param(|_, y, th, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[1] = -y[1] / (th[1] * th[1]);
            g[4] = y[1];
        });
    let birth = Transition::new("birth_waning", vec![1, 0], |_, y, th| {
        let r = (1.0 - y[0] - y[1]).max(0.0);
        th[4] + r / (th[3] * th[6])
    })
    .unwrap()
    .with_grad_state(|_, y, th, g| {
        let active = 1.0 - y[0] - y[1] > 0.0;
        let dr = if active { -1.0 / (th[3] * th[6]) } else { 0.0 };
        g[0] = dr;
        g[1] = dr;
    })
    .with_grad_param(|_, y, th, g| {
        let r = (1.0 - y[0] - y[1]).max(0.0);
        g.iter_mut().for_each(|v| *v = 0.0);
        g[3] = -r / (th[3] * th[3] * th[6]);
        g[4] = 1.0;
        g[6] = -r / (th[3] * th[6] * th[6]);
    });
    TransitionTable::new(
        SIRS_ID,
        vec!["S".into(), "I".into()],
        vec![infection, death, removal, birth],
        true,
        1,
    )
    .unwrap()
    .with_simplex()
    .with_fadeout(1)
    .with_incidence(0)
}

/// Registry lookup by model id.
pub fn table_by_id(id: &str) -> Result<TransitionTable> {
    match id {
        SIR_ID => Ok(sir_table()),
        SIRS_ID => Ok(sirs_table()),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub fn reparam_by_id(id: &str) -> Result<Reparam> {
    match id {
        SIR_ID => Ok(Reparam::Sir),
        SIRS_ID => Ok(Reparam::Sirs),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Default estimation parameter vector for a model given estimation
/// coordinates of the free parameters (fixed ones take the study values).
pub fn default_params(id: &str, estimation: &[f64]) -> Result<ParamVector> {
    match id {
        SIR_ID => {
            if estimation.len() != 2 {
                return Err(Error::InvalidArgument("SIR takes (r0, d)".into()));
            }
            sir_params(estimation[0], estimation[1])
        }
        SIRS_ID => {
            if estimation.len() != 4 && estimation.len() != 7 {
                return Err(Error::InvalidArgument(
                    "seasonal SIRS takes (r0, d, lambda1_x10, inv_delta_tper[, mu, eta, t_per])".into(),
                ));
            }
            let mut p = SirsParams::study(estimation[0], estimation[1], estimation[2] / 10.0, estimation[3]);
            if estimation.len() == 7 {
                p.mu = estimation[4];
                p.eta = estimation[5];
                p.t_per = estimation[6];
                p.delta = 1.0 / (estimation[3] * p.t_per);
            }
            p.to_param_vector()
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Observation horizon: first time after the epidemic peak at which the ODE
/// infected proportion drops below `threshold`.
pub fn select_horizon(
    table: &TransitionTable,
    theta: &ParamVector,
    x0: &[f64],
    threshold: f64,
    t_max: f64,
) -> Result<f64> {
    let coord = table
        .fadeout_coord
        .ok_or_else(|| Error::InvalidArgument("model has no infected coordinate".into()))?;
    let step = 0.01;
    let grid: Vec<f64> = (0..=(t_max / step).round() as usize).map(|k| k as f64 * step).collect();
    let xs = solve_ode(table, theta, x0, &grid, step)?;
    let peak = xs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1[coord].total_cmp(&b.1[coord]))
        .map(|(k, _)| k)
        .unwrap_or(0);
    for k in peak..xs.len() {
        if xs[k][coord] < threshold {
            // Linear interpolation between the bracketing grid points.
            let (a, b) = (xs[k - 1][coord], xs[k][coord]);
            let frac = if a != b { (a - threshold) / (a - b) } else { 0.0 };
            return Ok(grid[k - 1] + frac * step);
        }
    }
    Err(Error::InvalidArgument(format!(
        "infected proportion stays above {threshold} up to t = {t_max}"
    )))
}
