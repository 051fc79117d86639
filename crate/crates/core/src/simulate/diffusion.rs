use rand_distr::{Distribution, StandardNormal};

use super::{Path, Scheme, StreamSeed};
use crate::error::{Error, Result};
use crate::linalg::{matvec, Cholesky};
use crate::model::{ParamVector, TransitionTable};
use crate::odeflow::solve_ode;

/// Euler-Maruyama for `dX = b dt + N^{-1/2} σ dB` on `[0, horizon]` with step
/// `dt`. Each step is projected back onto the model's state region. When the
/// fade-out coordinate reaches 0 the path is absorbed there (all rates of
/// the built-in models vanish) and flagged.
///
/// `population = f64::INFINITY` switches the noise off.
pub fn euler_maruyama(
    table: &TransitionTable,
    theta: &ParamVector,
    population: f64,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    seed: impl Into<StreamSeed>,
) -> Result<Path> {
    let p = table.dim();
    if x0.len() != p || x0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("x0 {x0:?} must lie in [0,1]^{p}")));
    }
    if !(dt > 0.0 && dt <= horizon) {
        return Err(Error::InvalidArgument("dt must be in (0, horizon]".into()));
    }
    if !(population > 0.0) {
        return Err(Error::InvalidArgument("population must be positive".into()));
    }
    let seed = seed.into();
    let mut rng = seed.rng();
    let noise_scale = if population.is_finite() {
        1.0 / population.sqrt()
    } else {
        0.0
    };
    let steps = ((horizon / dt) - 1e-9).ceil() as usize;
    let h = horizon / steps as f64;
    let sqrt_h = h.sqrt();

    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * p);
    times.push(0.0);
    states.extend_from_slice(&x);
    let mut xi = vec![0.0; p];
    let mut shock = vec![0.0; p];
    let mut absorbed = false;

    for s in 0..steps {
        let t = s as f64 * h;
        let b = table.drift(t, theta, &x)?;
        if noise_scale > 0.0 {
            let sigma = table.diffusion_matrix(t, theta, &x)?;
            let root = Cholesky::factor(&sigma, p)?;
            xi.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            matvec(&root.lower, &xi, p, p, &mut shock);
        }
        for i in 0..p {
            x[i] += b[i] * h + noise_scale * sqrt_h * shock[i];
        }
        table.project(&mut x);
        let t_next = if s + 1 == steps { horizon } else { t + h };
        if let Some(c) = table.fadeout_coord {
            if x[c] <= 0.0 {
                x[c] = 0.0;
                absorbed = true;
            }
        }
        if t_next < horizon || s + 1 == steps {
            times.push(t_next);
            states.extend_from_slice(&x);
        }
        if absorbed {
            break;
        }
    }
    Ok(Path {
        model: table.name.clone(),
        scheme: Scheme::Diffusion,
        population: if population.is_finite() { population as u64 } else { 0 },
        dim: p,
        times,
        states,
        incidence: None,
        seed,
        horizon,
        absorbed,
    })
}

/// Deterministic path on `grid` (proportions).
pub fn ode_path(
    table: &TransitionTable,
    theta: &ParamVector,
    population: u64,
    x0: &[f64],
    grid: &[f64],
    max_step: f64,
) -> Result<Path> {
    let xs = solve_ode(table, theta, x0, grid, max_step)?;
    let mut states: Vec<f64> = xs.into_iter().flatten().collect();
    // Round-off can leave values a hair outside [0, 1].
    for chunk in states.chunks_mut(table.dim()) {
        table.project(chunk);
    }
    Ok(Path {
        model: table.name.clone(),
        scheme: Scheme::Ode,
        population,
        dim: table.dim(),
        times: grid.to_vec(),
        states,
        incidence: None,
        seed: 0.into(),
        horizon: *grid.last().unwrap(),
        absorbed: false,
    })
}
