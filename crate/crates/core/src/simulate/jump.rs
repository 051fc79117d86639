use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};

use super::{Path, Scheme, StreamSeed};
use crate::error::{Error, Result};
use crate::model::{ParamVector, TransitionTable};

/// Width of the windows over which rate majorants are recomputed when
/// thinning time-dependent rates (days).
pub const MAJORANT_WINDOW: f64 = 0.1;

struct Recorder {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    incidence: Option<Vec<f64>>,
    cases: f64,
}

impl Recorder {
    fn new(table: &TransitionTable, z0: &[i64]) -> Self {
        let mut r = Self {
            dim: z0.len(),
            times: Vec::new(),
            states: Vec::new(),
            incidence: table.incidence_transition.map(|_| Vec::new()),
            cases: 0.0,
        };
        r.push(0.0, z0);
        r
    }

    fn push(&mut self, t: f64, z: &[i64]) {
        self.times.push(t);
        self.states.extend(z.iter().map(|&c| c as f64));
        if let Some(inc) = self.incidence.as_mut() {
            inc.push(self.cases);
        }
    }

    fn finish(
        self,
        table: &TransitionTable,
        scheme: Scheme,
        population: u64,
        seed: StreamSeed,
        horizon: f64,
        absorbed: bool,
    ) -> Path {
        Path {
            model: table.name.clone(),
            scheme,
            population,
            dim: self.dim,
            times: self.times,
            states: self.states,
            incidence: self.incidence,
            seed,
            horizon,
            absorbed,
        }
    }
}

fn check_start(table: &TransitionTable, population: u64, z0: &[i64], horizon: f64) -> Result<()> {
    if z0.len() != table.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has length {}, expected {}",
            z0.len(),
            table.dim()
        )));
    }
    if !table.admissible(z0, population) {
        return Err(Error::InvalidArgument(format!("initial state {z0:?} outside the state space")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    Ok(())
}

fn pick(rates: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (k, &r) in rates.iter().enumerate() {
        acc += r;
        if target < acc {
            return k;
        }
    }
    // Round-off: last transition with a positive rate.
    rates.iter().rposition(|&r| r > 0.0).unwrap_or(0)
}

fn apply(table: &TransitionTable, k: usize, z: &mut [i64]) {
    for (zi, &li) in z.iter_mut().zip(table.transitions[k].jump.as_slice()) {
        *zi += li;
    }
}

/// Exact event-level simulation (direct method). Time-dependent tables are
/// handled by thinning against per-window rate majorants.
pub fn gillespie(
    table: &TransitionTable,
    theta: &ParamVector,
    population: u64,
    z0: &[i64],
    horizon: f64,
    seed: impl Into<StreamSeed>,
) -> Result<Path> {
    check_start(table, population, z0, horizon)?;
    let seed = seed.into();
    let mut rng = seed.rng();
    let mut rec = Recorder::new(table, z0);
    let mut z = z0.to_vec();
    let mut rates = vec![0.0; table.transitions.len()];
    let mut bounds = vec![0.0; table.transitions.len()];
    let mut t = 0.0;
    let mut absorbed = false;
    let incidence = table.incidence_transition;

    if !table.time_dependent {
        loop {
            table.jump_rates_into(t, &theta.values, population, &z, &mut rates)?;
            let total: f64 = rates.iter().sum();
            if total <= 0.0 {
                absorbed = true;
                break;
            }
            let wait: f64 = Exp1.sample(&mut rng);
            t += wait / total;
            if t >= horizon {
                break;
            }
            let k = pick(&rates, total, &mut rng);
            apply(table, k, &mut z);
            if incidence == Some(k) {
                rec.cases += 1.0;
            }
            rec.push(t, &z);
        }
    } else {
        while t < horizon {
            let window_end = (((t / MAJORANT_WINDOW).floor() + 1.0) * MAJORANT_WINDOW).min(horizon);
            table.jump_rate_majorants(t, window_end, &theta.values, population, &z, &mut bounds);
            let bound: f64 = bounds.iter().sum();
            let candidate = if bound > 0.0 {
                let wait: f64 = Exp1.sample(&mut rng);
                t + wait / bound
            } else {
                f64::INFINITY
            };
            if candidate >= window_end {
                t = window_end;
                continue;
            }
            t = candidate;
            table.jump_rates_into(t, &theta.values, population, &z, &mut rates)?;
            let total: f64 = rates.iter().sum();
            debug_assert!(total <= bound * (1.0 + 1e-12), "majorant violated");
            if rng.gen::<f64>() * bound < total {
                let k = pick(&rates, total, &mut rng);
                apply(table, k, &mut z);
                if incidence == Some(k) {
                    rec.cases += 1.0;
                }
                rec.push(t, &z);
            }
        }
        table.jump_rates_into(horizon, &theta.values, population, &z, &mut rates)?;
        absorbed = rates.iter().all(|&r| r == 0.0);
    }
    Ok(rec.finish(table, Scheme::Exact, population, seed, horizon, absorbed))
}

/// Step-size control for [`tau_leap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauLeapController {
    /// Bound on the expected relative change of each compartment per leap.
    pub epsilon: f64,
    /// Below `exact_threshold / a0` a leap is not worth it; do exact steps.
    pub exact_threshold: f64,
    /// Exact steps taken per fallback.
    pub exact_steps: usize,
    /// Halvings tried when a leap would leave the state space.
    pub max_halvings: usize,
}

impl Default for TauLeapController {
    fn default() -> Self {
        Self {
            epsilon: 0.03,
            exact_threshold: 10.0,
            exact_steps: 100,
            max_halvings: 30,
        }
    }
}

impl TauLeapController {
    /// Cao-style leap size: each compartment's expected change and standard
    /// deviation stay below `ε z_i / g_i` (at least 1), with `g_i = 2` as the
    /// order bound for the bimolecular infection.
    fn leap(&self, table: &TransitionTable, z: &[i64], rates: &[f64]) -> f64 {
        let mut tau = f64::INFINITY;
        for i in 0..z.len() {
            let (mut mean, mut var) = (0.0, 0.0);
            for (tr, &a) in table.transitions.iter().zip(rates) {
                let l = tr.jump.as_slice()[i] as f64;
                mean += l * a;
                var += l * l * a;
            }
            let allow = (self.epsilon * z[i] as f64 / 2.0).max(1.0);
            if mean != 0.0 {
                tau = tau.min(allow / mean.abs());
            }
            if var > 0.0 {
                tau = tau.min(allow * allow / var);
            }
        }
        tau
    }
}

/// Approximate simulation firing `Poisson(α_l τ)` events per transition and
/// leap. Rates are frozen at the start of each leap. When the selected leap
/// is shorter than a few mean waiting times the interval is simulated with
/// exact steps instead.
pub fn tau_leap(
    table: &TransitionTable,
    theta: &ParamVector,
    population: u64,
    z0: &[i64],
    horizon: f64,
    controller: TauLeapController,
    seed: impl Into<StreamSeed>,
) -> Result<Path> {
    check_start(table, population, z0, horizon)?;
    let seed = seed.into();
    let mut rng = seed.rng();
    let mut rec = Recorder::new(table, z0);
    let mut z = z0.to_vec();
    let mut rates = vec![0.0; table.transitions.len()];
    let mut fired = vec![0i64; table.transitions.len()];
    let mut trial = z.clone();
    let mut t = 0.0;
    let mut absorbed = false;
    let incidence = table.incidence_transition;

    'outer: while t < horizon {
        table.jump_rates_into(t, &theta.values, population, &z, &mut rates)?;
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            if !table.time_dependent {
                absorbed = true;
                break;
            }
            // Rates may switch back on later; advance to the next window.
            t = (t + MAJORANT_WINDOW).min(horizon);
            continue;
        }
        let mut tau = controller.leap(table, &z, &rates);
        if tau < controller.exact_threshold / total {
            for _ in 0..controller.exact_steps {
                table.jump_rates_into(t, &theta.values, population, &z, &mut rates)?;
                let total: f64 = rates.iter().sum();
                if total <= 0.0 {
                    continue 'outer;
                }
                let wait: f64 = Exp1.sample(&mut rng);
                let next = t + wait / total;
                if next >= horizon {
                    break 'outer;
                }
                t = next;
                let k = pick(&rates, total, &mut rng);
                apply(table, k, &mut z);
                if incidence == Some(k) {
                    rec.cases += 1.0;
                }
                rec.push(t, &z);
            }
            continue;
        }
        tau = tau.min(horizon - t);
        let mut halvings = 0;
        loop {
            trial.copy_from_slice(&z);
            for (k, &a) in rates.iter().enumerate() {
                let mean = a * tau;
                fired[k] = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?
                        .sample(&mut rng) as i64
                } else {
                    0
                };
                for (zi, &li) in trial.iter_mut().zip(table.transitions[k].jump.as_slice()) {
                    *zi += li * fired[k];
                }
            }
            if table.admissible(&trial, population) {
                break;
            }
            halvings += 1;
            if halvings > controller.max_halvings {
                clamp(table, population, &mut trial);
                break;
            }
            tau *= 0.5;
        }
        t += tau;
        z.copy_from_slice(&trial);
        if let Some(k) = incidence {
            rec.cases += fired[k] as f64;
        }
        if t < horizon {
            rec.push(t, &z);
        }
    }
    Ok(rec.finish(table, Scheme::TauLeap, population, seed, horizon, absorbed))
}

fn clamp(table: &TransitionTable, population: u64, z: &mut [i64]) {
    let n = population as i64;
    z.iter_mut().for_each(|c| *c = (*c).clamp(0, n));
    if table.simplex {
        // Trim the largest coordinates until the sum fits.
        while z.iter().sum::<i64>() > n {
            let k = (0..z.len()).max_by_key(|&i| z[i]).unwrap();
            z[k] -= 1;
        }
    }
}
