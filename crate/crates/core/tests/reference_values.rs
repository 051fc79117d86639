//! Hand-checkable values of the model layer, the flow and the estimators.

use epidiff::contrast::{information_matrix, ContrastContext, X0Policy};
use epidiff::linalg::{matmul_bt, Cholesky};
use epidiff::model::{diffusion_sqrt, ParamVector, Transition, TransitionTable};
use epidiff::models::{sir_params, sir_table, sirs_table, Reparam, SirsParams};
use epidiff::odeflow::{sensitivities, solve_ode, FlowCache, FlowOptions};
use epidiff::scenario::preset;
use epidiff::simulate::{non_extinct, regular_grid, Path, Scheme, StreamSeed};
use epidiff::simulate::{gillespie, ObservationSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sirs_theta(l1: f64) -> ParamVector {
    SirsParams::study(1.5, 3.0, l1, 2.0).to_param_vector().unwrap()
}

#[test]
fn sir_drift_by_hand() {
    let b = sir_table().drift(0.0, &sir_params(1.5, 3.0).unwrap(), &[0.7, 0.1]).unwrap();
    assert!((b[0] + 0.035).abs() < 1e-15);
    assert!((b[1] - (0.035 - 0.1 / 3.0)).abs() < 1e-15);
}

#[test]
fn sir_diffusion_by_hand() {
    let (s, i, l, g) = (0.7, 0.1, 0.5, 1.0 / 3.0);
    let sigma = sir_table().diffusion_matrix(0.0, &sir_params(1.5, 3.0).unwrap(), &[s, i]).unwrap();
    let expected = [l * s * i, -l * s * i, -l * s * i, l * s * i + g * i];
    for (a, b) in sigma.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    // The lower-triangular factor [[√(λsi), 0], [−√(λsi), √(γi)]].
    let root = diffusion_sqrt(&sigma, 2).unwrap();
    let expected = [(l * s * i).sqrt(), 0.0, -(l * s * i).sqrt(), (g * i).sqrt()];
    for (a, b) in root.iter().zip(expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn seasonal_peak_uses_full_amplitude() {
    let theta = sirs_theta(0.15);
    let t = 365.0 / 4.0;
    let y = [0.6, 0.02];
    let eta = theta.get("eta").unwrap();
    let rates = sirs_table().rates(t, &theta, &y).unwrap();
    let lambda = 0.5 * 1.15;
    assert!((rates[0] - lambda * y[0] * (y[1] + eta)).abs() < 1e-15);
    let b = sirs_table().drift(t, &theta, &y).unwrap();
    let mu = 1.0 / (50.0 * 365.0);
    let delta = 1.0 / (2.0 * 365.0);
    let inf = lambda * y[0] * (y[1] + eta);
    assert!((b[0] - (-inf - mu * y[0] + mu + delta * (1.0 - y[0] - y[1]))).abs() < 1e-14);
    assert!((b[1] - (inf - (1.0 / 3.0 + mu) * y[1])).abs() < 1e-14);
}

#[test]
fn seasonal_factor_reproduces_diffusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let theta = SirsParams::study(rng.gen_range(0.5..10.0), rng.gen_range(1.0..20.0), rng.gen_range(0.0..0.9), 2.0)
            .to_param_vector()
            .unwrap();
        let s: f64 = rng.gen_range(0.0..1.0);
        let i: f64 = rng.gen_range(0.0..1.0 - s);
        let t = rng.gen_range(0.0..3650.0);
        let sigma = sirs_table().diffusion_matrix(t, &theta, &[s, i]).unwrap();
        let root = diffusion_sqrt(&sigma, 2).unwrap();
        let mut back = vec![0.0; 4];
        matmul_bt(&root, &root, 2, 2, 2, &mut back);
        let scale = sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in back.iter().zip(&sigma) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn rank_deficient_factor() {
    let c = Cholesky::factor(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
    let expected = [1.0, 0.0, 1.0, 0.0];
    for (a, b) in c.lower.iter().zip(expected) {
        assert!((a - b).abs() < 1e-6, "{:?}", c.lower);
    }
}

#[test]
fn sir_jump_rates_by_hand() {
    let r = sir_table().jump_rates(0.0, &sir_params(1.5, 3.0).unwrap(), 1000, &[700, 100]).unwrap();
    assert!((r[0] - 35.0).abs() < 1e-12);
    assert!((r[1] - 100.0 / 3.0).abs() < 1e-12);
}

#[test]
fn birth_is_clamped_at_full_population() {
    let r = sirs_table().jump_rates(0.0, &sirs_theta(0.15), 1000, &[1000, 0]).unwrap();
    assert_eq!(r[3], 0.0);
    let r = sirs_table().jump_rates(0.0, &sirs_theta(0.15), 1000, &[990, 10]).unwrap();
    assert_eq!(r[3], 0.0);
    let r = sirs_table().jump_rates(0.0, &sirs_theta(0.15), 1000, &[980, 10]).unwrap();
    assert!(r[3] > 0.0);
}

#[test]
fn five_percent_rule_by_hand() {
    let path = |s_end: f64| Path {
        model: "sir".into(),
        scheme: Scheme::Exact,
        population: 1000,
        dim: 2,
        times: vec![0.0, 10.0],
        states: vec![990.0, 10.0, s_end, 0.0],
        incidence: None,
        seed: StreamSeed::new(0, 0),
        horizon: 20.0,
        absorbed: true,
    };
    assert!(non_extinct(&path(940.0)));
    assert!(!non_extinct(&path(941.0)));
    assert!(!non_extinct(&path(990.0)));
}

#[test]
fn estimation_coordinates() {
    let est = Reparam::Sir.to_estimation(&[0.5, 1.0 / 3.0]).unwrap();
    assert!((est[0] - 1.5).abs() < 1e-15 && (est[1] - 3.0).abs() < 1e-15);
    let theta = sirs_theta(0.15);
    assert!((theta.get("inv_delta_tper").unwrap() - 2.0).abs() < 1e-12);
    let raw = Reparam::Sirs.to_raw(&theta.values).unwrap();
    assert!((raw[3] - 1.0 / (2.0 * 365.0)).abs() < 1e-15);
}

#[test]
fn no_transmission_decay_over_forty_days() {
    let theta = ParamVector::new(&[("r0", 0.0, 0.0, 20.0, true), ("d", 3.0, 0.2, 50.0, true)]).unwrap();
    let grid = regular_grid(0.0, 40.0, 40);
    let xs = solve_ode(&sir_table(), &theta, &[0.7, 0.05], &grid, 0.05).unwrap();
    let worst = grid
        .iter()
        .zip(&xs)
        .map(|(t, x)| (x[1] - 0.05 * (-t / 3.0).exp()).abs().max((x[0] - 0.7).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst:e}");
}

/// Local maxima of `i` on a daily grid after a burn-in.
fn peaks(l1: f64, years: f64) -> Vec<(f64, f64)> {
    let grid = regular_grid(0.0, years * 365.0, (years * 365.0) as usize);
    let xs = solve_ode(&sirs_table(), &sirs_theta(l1), &[0.7, 1e-4], &grid, 0.25).unwrap();
    (1..xs.len() - 1)
        .filter(|&k| xs[k][1] > xs[k - 1][1] && xs[k][1] >= xs[k + 1][1])
        .map(|k| (grid[k], xs[k][1]))
        .collect()
}

#[test]
fn unforced_oscillations_are_damped() {
    let p = peaks(0.0, 40.0);
    assert!(p.len() >= 4, "{p:?}");
    for w in p.windows(2) {
        assert!(w[1].1 < w[0].1, "{p:?}");
    }
}

#[test]
fn forced_oscillations_persist() {
    // Peak heights in the last decade stay bounded away from zero.
    let p = peaks(0.02, 40.0);
    let late: Vec<f64> = p.iter().filter(|(t, _)| *t > 30.0 * 365.0).map(|(_, h)| *h).collect();
    assert!(!late.is_empty());
    let unforced = peaks(0.0, 40.0).last().unwrap().1;
    assert!(late.iter().all(|h| *h > 1.5 * unforced), "{late:?} vs {unforced}");
}

#[test]
fn recovery_sensitivity_at_small_times() {
    // Written in the raw rates so that γ is a coordinate.
    let infection = Transition::new("infection", vec![-1, 1], |_, y, th| th[0] * y[0] * y[1]).unwrap();
    let recovery = Transition::new("recovery", vec![0, -1], |_, y, th| th[1] * y[1]).unwrap();
    let table =
        TransitionTable::new("sir-raw", vec!["S".into(), "I".into()], vec![infection, recovery], false, 1).unwrap();
    let theta = ParamVector::new(&[("lambda", 0.5, 0.0, 10.0, true), ("gamma", 1.0 / 3.0, 0.0, 10.0, true)]).unwrap();
    let i0 = 0.01;
    for t in [1e-3, 1e-2] {
        let sens = sensitivities(&table, &theta, &[0.99, i0], &[0.0, t], 1e-3).unwrap();
        let di_dgamma = sens[1][2 + 1];
        assert!((di_dgamma / (-t * i0) - 1.0).abs() < 2.0 * t, "t={t}: {di_dgamma}");
    }
}

#[test]
fn identity_resolvent_and_symmetric_weights() {
    let (table, theta) = (sir_table(), sir_params(1.5, 3.0).unwrap());
    let flow = FlowCache::build(&table, &theta, &[0.99, 0.01], &regular_grid(0.0, 40.0, 10), FlowOptions::new(0.05))
        .unwrap();
    for u in [0.0, 3.3, 40.0] {
        assert_eq!(flow.resolvent(u, u).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
    }
    for k in 1..=10 {
        let s = flow.weight_matrix(k);
        assert_eq!(s[1], s[2]);
        assert!(s[0] > 0.0 && s[0] * s[3] - s[1] * s[2] > 0.0);
    }
    assert!(flow.refinement_defect().unwrap() < 1e-6);
}

fn correlation(r0: f64, d: f64, horizon: f64) -> f64 {
    let info = information_matrix(
        &sir_table(),
        &sir_params(r0, d).unwrap(),
        &[0.99, 0.01],
        &regular_grid(0.0, horizon, horizon as usize),
        0.05,
    )
    .unwrap();
    let c = info.covariance(1000.0).unwrap();
    c[1] / (c[0] * c[3]).sqrt()
}

#[test]
fn longer_infection_slants_the_ellipse() {
    let (c3, c7) = (correlation(1.5, 3.0, 40.0), correlation(1.5, 7.0, 100.0));
    assert!(c7.abs() > 0.1, "{c7}");
    assert!(c7.abs() > c3.abs(), "{c3} {c7}");
}

#[test]
fn misspecified_population_note() {
    let theta = sir_params(1.5, 3.0).unwrap();
    let path = gillespie(&sir_table(), &theta, 1000, &[990, 10], 40.0, 2).unwrap();
    let obs = epidiff::simulate::sample_at(&path, &regular_grid(0.0, 40.0, 40)).unwrap();
    let mut ctx = ContrastContext::new(sir_table(), obs, 1000.0, X0Policy::Known(vec![0.99, 0.01]), theta).unwrap();
    ctx.optimizer.multistarts = 1;
    let report = ctx.mis_specified_n(2000).unwrap();
    assert_eq!(report.diagnostics.estimator, "ce-misspecified-n");
    assert!(report.diagnostics.notes.iter().any(|n| n.contains("N' = 2000")));
    // Counts above the assumed population cannot be proportions.
    assert!(ctx.mis_specified_n(500).is_err());
}

#[test]
fn study_presets() {
    let fig2 = preset("fig2").unwrap();
    let cases: Vec<(f64, f64, f64)> = fig2
        .iter()
        .map(|c| (c.params["r0"], c.params["d"], c.horizon.unwrap()))
        .collect();
    assert_eq!(cases, vec![(1.5, 3.0, 40.0), (1.5, 7.0, 100.0), (5.0, 3.0, 20.0), (5.0, 7.0, 45.0)]);
    assert!(fig2.iter().all(|c| c.population == 1000 && c.estimator.mle));
    let fig3 = preset("fig3").unwrap();
    let labels: Vec<String> = fig3[0].grids.iter().map(|g| g.label(40.0).unwrap()).collect();
    assert_eq!(labels, ["40", "10", "2000"]);
    let fig5 = preset("fig5").unwrap();
    let l1: Vec<f64> = fig5.iter().map(|c| c.params["lambda1_x10"] / 10.0).collect();
    assert!((l1[0] - 0.05).abs() < 1e-15 && (l1[1] - 0.15).abs() < 1e-15);
    assert!(fig5.iter().all(|c| c.schemes.contains(&Scheme::Ode)));
}

#[test]
fn study_horizons_from_threshold() {
    // Time at which the ODE infected proportion falls back below 1/100.
    for (r0, d, t) in [(1.5, 3.0, 40.0), (1.5, 7.0, 100.0), (5.0, 3.0, 20.0), (5.0, 7.0, 45.0)] {
        let h = epidiff::models::select_horizon(&sir_table(), &sir_params(r0, d).unwrap(), &[0.99, 0.01], 0.01, 1000.0)
            .unwrap();
        println!("({r0}, {d}): {h:.2}");
        assert!((h - t).abs() / t < 0.15, "({r0}, {d}): {h} vs {t}");
    }
}

#[test]
fn observation_set_shape_checks() {
    assert!(ObservationSet::new(vec![0.0, 1.0], 2, vec![0.5; 3], 100).is_err());
    let o = ObservationSet::new(vec![0.0, 1.0], 2, vec![0.5; 4], 100).unwrap();
    assert_eq!(o.n(), 1);
}
