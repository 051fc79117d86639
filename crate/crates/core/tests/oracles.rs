//! Independent reference computations for the flow, the simulators and the
//! estimators.

use epidiff::contrast::{information_matrix, nelder_mead, OptimizerSettings};
use epidiff::linalg::{matmul, matmul_bt, sym_eigen};
use epidiff::mle::{sir_mle, CompletePath};
use epidiff::model::{ParamVector, Transition, TransitionTable};
use epidiff::models::{sir_params, sir_table};
use epidiff::odeflow::{gaussian_covariance, information_bound, sensitivities, solve_ode, FlowCache, FlowOptions};
use epidiff::simulate::{euler_maruyama, gillespie, non_extinct, regular_grid, sample_at};
use epidiff::stats;
use nalgebra::DMatrix;

mod common;
use common::{expm, linear_sigma, linear_table, linear_theta, rel_err};

#[test]
fn resolvent_matches_matrix_exponential() {
    let grid = [0.0, 0.7, 2.0, 5.0];
    let error_at = |step: f64| {
        let flow =
            FlowCache::build(&linear_table(), &linear_theta(), &[0.6, 0.2], &grid, FlowOptions::new(step)).unwrap();
        let mut worst = 0.0f64;
        for k in 1..grid.len() {
            let exact = expm(grid[k] - grid[k - 1]);
            worst = worst.max(rel_err(flow.interval_resolvent(k), exact.transpose().as_slice()));
        }
        // Arbitrary pairs, in both directions.
        for (t, u) in [(4.2, 1.3), (1.3, 4.2), (5.0, 0.0)] {
            let exact = expm(t - u);
            worst = worst.max(rel_err(&flow.resolvent(t, u).unwrap(), exact.transpose().as_slice()));
        }
        worst
    };
    // RK4 truncation at h = 0.05, |A| < 1 is a few 1e-8 over these spans.
    let coarse = error_at(0.05);
    let fine = error_at(0.025);
    assert!(coarse < 1e-7, "{coarse:e}");
    // Fourth order: halving the step divides the error by about 16.
    assert!(coarse / fine > 12.0, "{coarse:e} / {fine:e}");
}

/// Composite Simpson rule for `(1/Δ) ∫ Φ(t_k, s) Σ(x(s)) Φ(t_k, s)ᵀ ds`.
fn simpson_weight(
    t0: f64,
    t1: f64,
    panels: usize,
    phi: impl Fn(f64) -> DMatrix<f64>,
    sigma: impl Fn(f64) -> DMatrix<f64>,
) -> DMatrix<f64> {
    let h = (t1 - t0) / panels as f64;
    let mut acc = DMatrix::zeros(2, 2);
    for j in 0..=panels {
        let s = t0 + j as f64 * h;
        let w = if j == 0 || j == panels { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        let p = phi(s);
        acc += w * &p * sigma(s) * p.transpose();
    }
    acc * (h / 3.0) / (t1 - t0)
}

#[test]
fn weight_matrix_matches_quadrature_linear() {
    let grid = [0.0, 1.0, 3.0];
    let x0 = [0.6, 0.2];
    let flow = FlowCache::build(&linear_table(), &linear_theta(), &x0, &grid, FlowOptions::new(0.05)).unwrap();
    let x0v = DMatrix::from_column_slice(2, 1, &x0);
    for k in 1..grid.len() {
        let (a, b) = (grid[k - 1], grid[k]);
        let reference = simpson_weight(
            a,
            b,
            400,
            |s| expm(b - s),
            |s| {
                let x = expm(s) * &x0v;
                linear_sigma(x.as_slice())
            },
        );
        let err = rel_err(flow.weight_matrix(k), reference.transpose().as_slice());
        assert!(err < 1e-6, "S_{k}: {err:e}");
    }
}

#[test]
fn weight_matrix_matches_quadrature_sir() {
    let (table, theta) = (sir_table(), sir_params(1.5, 3.0).unwrap());
    let grid = regular_grid(0.0, 40.0, 4);
    let flow = FlowCache::build(&table, &theta, &[0.99, 0.01], &grid, FlowOptions::new(0.05)).unwrap();
    for k in 1..grid.len() {
        let (a, b) = (grid[k - 1], grid[k]);
        // Ten Simpson panels per RK4 mesh step.
        let panels = 10 * ((b - a) / 0.05).round() as usize;
        let reference = simpson_weight(
            a,
            b,
            panels,
            |s| DMatrix::from_row_slice(2, 2, &flow.resolvent(b, s).unwrap()),
            |s| {
                let x = flow.state_at(s).unwrap();
                DMatrix::from_row_slice(2, 2, &table.diffusion_matrix(s, &theta, &x).unwrap())
            },
        );
        let err = rel_err(flow.weight_matrix(k), reference.as_slice());
        assert!(err < 1e-6, "S_{k}: {err:e}");
    }
}

#[test]
fn resolvent_semigroup() {
    let (table, theta) = (sir_table(), sir_params(2.5, 4.0).unwrap());
    let flow = FlowCache::build(&table, &theta, &[0.99, 0.01], &[0.0, 30.0], FlowOptions::new(0.05)).unwrap();
    for (t, u, s) in [(20.0, 12.0, 3.0), (30.0, 29.0, 0.0), (17.3, 8.8, 8.1)] {
        let direct = flow.resolvent(t, s).unwrap();
        let mut chained = vec![0.0; 4];
        matmul(&flow.resolvent(t, u).unwrap(), &flow.resolvent(u, s).unwrap(), 2, 2, 2, &mut chained);
        assert!(rel_err(&chained, &direct) < 1e-8, "({t}, {u}, {s})");
    }
}

#[test]
fn sensitivities_match_finite_differences() {
    let table = sir_table();
    let theta = sir_params(1.8, 4.0).unwrap();
    let grid = regular_grid(0.0, 40.0, 8);
    let x0 = [0.99, 0.01];
    let sens = sensitivities(&table, &theta, &x0, &grid, 0.05).unwrap();
    for (j, name) in ["r0", "d"].iter().enumerate() {
        let v = theta.get(name).unwrap();
        let h = 1e-5 * v;
        let mut up = theta.clone();
        up.set(name, v + h).unwrap();
        let mut down = theta.clone();
        down.set(name, v - h).unwrap();
        let xu = solve_ode(&table, &up, &x0, &grid, 0.05).unwrap();
        let xd = solve_ode(&table, &down, &x0, &grid, 0.05).unwrap();
        for k in 0..grid.len() {
            for i in 0..2 {
                let fd = (xu[k][i] - xd[k][i]) / (2.0 * h);
                let an = sens[k][i * 2 + j];
                assert!((fd - an).abs() <= 1e-4 * (1e-3 + an.abs()), "k={k} i={i} {name}: {fd} vs {an}");
            }
        }
    }
}

#[test]
fn sir_without_transmission_decays_exponentially() {
    let theta = ParamVector::new(&[("r0", 0.0, 0.0, 20.0, true), ("d", 3.0, 0.2, 50.0, true)]).unwrap();
    let grid = regular_grid(0.0, 20.0, 10);
    let xs = solve_ode(&sir_table(), &theta, &[0.7, 0.2], &grid, 0.05).unwrap();
    for (t, x) in grid.iter().zip(&xs) {
        assert!((x[0] - 0.7).abs() < 1e-12);
        assert!((x[1] - 0.2 * (-t / 3.0).exp()).abs() < 1e-8, "t={t}");
    }
}

#[test]
fn chained_covariance_matches_single_interval() {
    let (table, theta) = (sir_table(), sir_params(1.5, 3.0).unwrap());
    let x0 = [0.99, 0.01];
    let fine = FlowCache::build(&table, &theta, &x0, &regular_grid(0.0, 40.0, 8), FlowOptions::new(0.05)).unwrap();
    let coarse = FlowCache::build(&table, &theta, &x0, &[0.0, 40.0], FlowOptions::new(0.05)).unwrap();
    let chained = gaussian_covariance(&fine).pop().unwrap();
    let single: Vec<f64> = coarse.weight_matrix(1).iter().map(|v| 40.0 * v).collect();
    assert!(rel_err(&chained, &single) < 1e-6);
}

#[test]
fn first_waiting_time_is_exponential() {
    let theta = sir_params(1.5, 3.0).unwrap();
    let total = 1000.0 * (0.5 * 0.99 * 0.01 + 0.01 / 3.0);
    let waits: Vec<f64> = (0..10_000u64)
        .map(|s| gillespie(&sir_table(), &theta, 1000, &[990, 10], 5.0, s).unwrap().times[1])
        .collect();
    let m = stats::mean(&waits);
    let se = 1.0 / total / (waits.len() as f64).sqrt();
    assert!((m - 1.0 / total).abs() < 3.0 * se, "{m} vs {}", 1.0 / total);
    // Exponential: sd equals the mean.
    assert!((stats::std_dev(&waits) * total - 1.0).abs() < 0.05);
}

#[test]
fn euler_step_moments() {
    let (table, theta) = (sir_table(), sir_params(2.0, 3.0).unwrap());
    let x0 = [0.6, 0.3];
    let (dt, n) = (0.01, 1000.0);
    let b = table.drift(0.0, &theta, &x0).unwrap();
    let sigma = table.diffusion_matrix(0.0, &theta, &x0).unwrap();
    let samples: Vec<[f64; 2]> = (0..100_000u64)
        .map(|s| {
            let p = euler_maruyama(&table, &theta, n, &x0, dt, dt, s).unwrap();
            let z = p.state(p.len() - 1);
            [z[0] - x0[0], z[1] - x0[1]]
        })
        .collect();
    let m = samples.len() as f64;
    let col = |i: usize| samples.iter().map(|v| v[i]).collect::<Vec<f64>>();
    let (d0, d1) = (col(0), col(1));
    for (i, d) in [&d0, &d1].iter().enumerate() {
        let se = (sigma[i * 2 + i] * dt / n / m).sqrt();
        assert!((stats::mean(d) - b[i] * dt).abs() < 3.0 * se);
    }
    // Standard error of a sample covariance of Gaussians:
    // √((c_ik c_jl + c_il c_jk) / m).
    let c: Vec<f64> = sigma.iter().map(|v| v * dt / n).collect();
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        let est = stats::covariance(&col(i), &col(j));
        let se = ((c[i * 2 + i] * c[j * 2 + j] + c[i * 2 + j] * c[j * 2 + i]) / m).sqrt();
        assert!((est - c[i * 2 + j]).abs() < 3.0 * se, "({i},{j}): {est} vs {}", c[i * 2 + j]);
    }
}

/// Sup over a daily grid of `|mean of normalized paths − ODE|`, and the
/// average over non-extinct paths of each path's own sup distance.
fn mean_field_gaps(n: u64, paths: u64) -> (f64, f64) {
    let (table, theta) = (sir_table(), sir_params(1.5, 3.0).unwrap());
    let times = regular_grid(0.0, 40.0, 40);
    let ode = solve_ode(&table, &theta, &[0.99, 0.01], &times, 0.05).unwrap();
    let z0 = [(n as f64 * 0.99).round() as i64, (n as f64 * 0.01).round() as i64];
    let sup = |a: &[[f64; 2]]| {
        a.iter()
            .zip(&ode)
            .flat_map(|(m, x)| [(m[0] - x[0]).abs(), (m[1] - x[1]).abs()])
            .fold(0.0, f64::max)
    };
    let mut mean = vec![[0.0; 2]; times.len()];
    let mut per_path = Vec::new();
    for seed in 0..paths {
        let path = gillespie(&table, &theta, n, &z0, 40.0, seed).unwrap();
        let obs = sample_at(&path, &times).unwrap();
        let xs: Vec<[f64; 2]> = (0..times.len()).map(|k| [obs.state(k)[0], obs.state(k)[1]]).collect();
        for (m, x) in mean.iter_mut().zip(&xs) {
            m[0] += x[0] / paths as f64;
            m[1] += x[1] / paths as f64;
        }
        if non_extinct(&path) {
            per_path.push(sup(&xs));
        }
    }
    (sup(&mean), stats::mean(&per_path))
}

#[test]
fn mean_field_limit() {
    let (mean_big, path_big) = mean_field_gaps(10_000, 500);
    assert!(mean_big <= 5.0 / 100.0, "{mean_big}");
    // Single paths fluctuate around the flow at scale 1/√N: between
    // N = 400 and N = 10⁴ the ratio is 5, accepted within a factor 2.
    let (_, path_small) = mean_field_gaps(400, 500);
    let ratio = path_small / path_big;
    assert!((2.5..=10.0).contains(&ratio), "{path_small} / {path_big} = {ratio}");
}

#[test]
fn closed_form_mle_matches_numerical_maximum() {
    let theta = sir_params(1.5, 3.0).unwrap();
    let path = gillespie(&sir_table(), &theta, 1000, &[990, 10], 40.0, 11).unwrap();
    let cp = CompletePath::from_path(&path).unwrap();
    let m = sir_mle(&cp).unwrap();
    let f = |u: &[f64]| -cp.log_likelihood(u[0].exp(), u[1].exp());
    let settings = OptimizerSettings { xtol: 1e-12, ftol: 1e-14, max_evals: 5000, ..OptimizerSettings::default() };
    let r = nelder_mead(&f, &[0.0, 0.0], &[-5.0, -5.0], &[3.0, 3.0], &settings);
    assert!((r.x[0].exp() / m.lambda - 1.0).abs() < 1e-6);
    assert!((r.x[1].exp() / m.gamma - 1.0).abs() < 1e-6);
}

fn loewner_ge(a: &[f64], b: &[f64], tol: f64) -> bool {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    sym_eigen(&d, 2).0[0] >= -tol * scale
}

#[test]
fn information_grows_with_nested_grids() {
    let (table, theta) = (sir_table(), sir_params(1.5, 3.0).unwrap());
    let x0 = [0.99, 0.01];
    let infos: Vec<Vec<f64>> = [5, 10, 20, 40, 80]
        .iter()
        .map(|&n| information_matrix(&table, &theta, &x0, &regular_grid(0.0, 40.0, n), 0.05).unwrap().matrix)
        .collect();
    for w in infos.windows(2) {
        assert!(loewner_ge(&w[1], &w[0], 1e-9), "{:?} vs {:?}", w[1], w[0]);
    }
    let bound = information_bound(&table, &theta, &x0, 0.0, 40.0, 0.05).unwrap();
    assert!(loewner_ge(&bound, infos.last().unwrap(), 1e-9));
}

#[test]
fn information_transforms_under_reparameterization() {
    // I in (r0, d) equals Jᵀ I_raw J with J = ∂(λ, γ)/∂(r0, d), computed
    // from a table written directly in the rates.
    let infection = Transition::new("infection", vec![-1, 1], |_, y, th| th[0] * y[0] * y[1]).unwrap();
    let recovery = Transition::new("recovery", vec![0, -1], |_, y, th| th[1] * y[1]).unwrap();
    let raw_table =
        TransitionTable::new("sir-raw", vec!["S".into(), "I".into()], vec![infection, recovery], false, 1).unwrap();
    let raw = ParamVector::new(&[("lambda", 0.5, 0.01, 10.0, true), ("gamma", 1.0 / 3.0, 0.01, 10.0, true)]).unwrap();
    let grid = regular_grid(0.0, 40.0, 10);
    let x0 = [0.99, 0.01];
    let i_raw = information_matrix(&raw_table, &raw, &x0, &grid, 0.05).unwrap().matrix;
    let i_est = information_matrix(&sir_table(), &sir_params(1.5, 3.0).unwrap(), &x0, &grid, 0.05).unwrap().matrix;
    // λ = r0/d, γ = 1/d at (1.5, 3).
    let j = [1.0 / 3.0, -1.5 / 9.0, 0.0, -1.0 / 9.0];
    let mut jt_i = [0.0; 4];
    let jt = [j[0], j[2], j[1], j[3]];
    matmul(&jt, &i_raw, 2, 2, 2, &mut jt_i);
    let mut expected = [0.0; 4];
    matmul_bt(&jt_i, &jt, 2, 2, 2, &mut expected);
    assert!(rel_err(&i_est, &expected) < 1e-5, "{i_est:?} vs {expected:?}");
}
