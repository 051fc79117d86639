//! Invariants of the model layer and the simulators, checked on random
//! inputs.

use epidiff::linalg::sym_eigen;
use epidiff::model::{ParamVector, TransitionTable};
use epidiff::models::{sir_params, sir_table, sirs_table, Reparam, SirsParams};
use epidiff::simulate::{gillespie, tau_leap, TauLeapController};
use proptest::prelude::*;

fn sirs_theta(r0: f64, d: f64, l1: f64, w: f64) -> ParamVector {
    SirsParams::study(r0, d, l1, w).to_param_vector().unwrap()
}

/// Interior point of the simplex `s + i ≤ 1` in two coordinates.
fn simplex_point() -> impl Strategy<Value = [f64; 2]> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b)| [a * (1.0 - b), b * a.max(1e-3)])
}

fn brute_force(table: &TransitionTable, theta: &ParamVector, t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = table.dim();
    let rates = table.rates(t, theta, y).unwrap();
    let mut b = vec![0.0; p];
    let mut s = vec![0.0; p * p];
    for (tr, beta) in table.transitions.iter().zip(rates) {
        let l = tr.jump.as_slice();
        for i in 0..p {
            b[i] += beta * l[i] as f64;
            for j in 0..p {
                s[i * p + j] += beta * (l[i] * l[j]) as f64;
            }
        }
    }
    (b, s)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn sir_drift_and_diffusion_match_sums(r0 in 0.3..15.0f64, d in 0.3..40.0f64, y in simplex_point()) {
        let (table, theta) = (sir_table(), sir_params(r0, d).unwrap());
        let (b, s) = brute_force(&table, &theta, 0.0, &y);
        prop_assert!(close(&table.drift(0.0, &theta, &y).unwrap(), &b, 1e-14));
        prop_assert!(close(&table.diffusion_matrix(0.0, &theta, &y).unwrap(), &s, 1e-14));
    }

    #[test]
    fn sirs_drift_and_diffusion_match_sums(
        r0 in 0.3..15.0f64, d in 0.3..40.0f64, l1 in 0.0..0.9f64, w in 0.1..40.0f64,
        t in 0.0..2000.0f64, y in simplex_point(),
    ) {
        let (table, theta) = (sirs_table(), sirs_theta(r0, d, l1, w));
        let (b, s) = brute_force(&table, &theta, t, &y);
        prop_assert!(close(&table.drift(t, &theta, &y).unwrap(), &b, 1e-13));
        prop_assert!(close(&table.diffusion_matrix(t, &theta, &y).unwrap(), &s, 1e-13));
    }

    #[test]
    fn diffusion_matrix_is_psd(
        r0 in 0.3..15.0f64, d in 0.3..40.0f64, l1 in 0.0..0.9f64, w in 0.1..40.0f64,
        t in 0.0..2000.0f64, y in simplex_point(),
    ) {
        for (table, theta) in [(sir_table(), sir_params(r0, d).unwrap()), (sirs_table(), sirs_theta(r0, d, l1, w))] {
            let s = table.diffusion_matrix(t, &theta, &y).unwrap();
            let (vals, _) = sym_eigen(&s, 2);
            let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(vals[0] >= -1e-12 * scale.max(1e-300), "{vals:?}");
        }
    }

    #[test]
    fn scaling_all_rates_scales_coefficients(c in 0.01..100.0f64, r0 in 0.3..15.0f64, d in 0.3..40.0f64, y in simplex_point()) {
        let table = sir_table();
        let scaled = TransitionTable::new(
            "scaled",
            table.compartments.clone(),
            table.transitions.iter().cloned().map(|tr| tr.scaled(c)).collect(),
            false,
            1,
        ).unwrap();
        let theta = sir_params(r0, d).unwrap();
        let b: Vec<f64> = table.drift(0.0, &theta, &y).unwrap().iter().map(|v| c * v).collect();
        let s: Vec<f64> = table.diffusion_matrix(0.0, &theta, &y).unwrap().iter().map(|v| c * v).collect();
        prop_assert!(close(&scaled.drift(0.0, &theta, &y).unwrap(), &b, 1e-13));
        prop_assert!(close(&scaled.diffusion_matrix(0.0, &theta, &y).unwrap(), &s, 1e-13));
        let jac: Vec<f64> = table.drift_jacobian(0.0, &theta, &y).unwrap().iter().map(|v| c * v).collect();
        prop_assert!(close(&scaled.drift_jacobian(0.0, &theta, &y).unwrap(), &jac, 1e-12));
    }

    #[test]
    fn jump_rates_are_density_dependent(
        n in 10u64..100_000, fs in 0.0..1.0f64, fi in 0.0..1.0f64,
        r0 in 0.3..15.0f64, d in 0.3..40.0f64, l1 in 0.0..0.9f64, t in 0.0..1000.0f64,
    ) {
        // Interior counts: every jump stays admissible.
        let s = 1 + ((n - 3) as f64 * fs * 0.5) as i64;
        let i = 1 + ((n - 3) as f64 * fi * 0.5) as i64;
        let z = [s, i];
        let y = [s as f64 / n as f64, i as f64 / n as f64];
        for (table, theta) in [(sir_table(), sir_params(r0, d).unwrap()), (sirs_table(), sirs_theta(r0, d, l1, 2.0))] {
            let alpha = table.jump_rates(t, &theta, n, &z).unwrap();
            let beta = table.rates(t, &theta, &y).unwrap();
            for (a, b) in alpha.iter().zip(&beta) {
                prop_assert!((a / n as f64 - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn sir_reparam_round_trip(lambda in 1e-3..10.0f64, gamma in 1e-3..10.0f64) {
        let est = Reparam::Sir.to_estimation(&[lambda, gamma]).unwrap();
        let raw = Reparam::Sir.to_raw(&est).unwrap();
        prop_assert!(close(&raw, &[lambda, gamma], 1e-14));
    }

    #[test]
    fn sirs_reparam_round_trip(
        l0 in 1e-3..5.0f64, l1 in 0.0..0.99f64, g in 1e-3..5.0f64, delta in 1e-5..1.0f64,
        mu in 1e-6..1e-2f64, eta in 0.0..1e-3f64, tp in 1.0..1000.0f64,
    ) {
        let raw = [l0, l1, g, delta, mu, eta, tp];
        let est = Reparam::Sirs.to_estimation(&raw).unwrap();
        prop_assert!(close(&Reparam::Sirs.to_raw(&est).unwrap(), &raw, 1e-13));
    }

    #[test]
    fn seasonal_rates_are_periodic(t in 0.0..5000.0f64, l1 in 0.0..0.9f64, y in simplex_point()) {
        let (table, theta) = (sirs_table(), sirs_theta(1.5, 3.0, l1, 2.0));
        let period = theta.get("t_per").unwrap();
        let a = table.rates(t, &theta, &y).unwrap();
        let b = table.rates(t + period, &theta, &y).unwrap();
        prop_assert!(close(&a, &b, 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_sir_paths_stay_in_bounds(seed in any::<u64>(), r0 in 0.5..6.0f64, d in 1.0..8.0f64, n in 20u64..400) {
        let theta = sir_params(r0, d).unwrap();
        let i0 = (n / 20).max(1) as i64;
        let path = gillespie(&sir_table(), &theta, n, &[n as i64 - i0, i0], 60.0, seed).unwrap();
        let mut prev = path.state(0).to_vec();
        for k in 0..path.len() {
            let z = path.state(k);
            prop_assert!(z.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
            prop_assert!(z[0] + z[1] <= n as f64);
            // S never grows; S + I never grows.
            prop_assert!(z[0] <= prev[0] && z[0] + z[1] <= prev[0] + prev[1]);
            prev = z.to_vec();
        }
        prop_assert!(path.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tau_leap_paths_stay_in_bounds(seed in any::<u64>(), l1 in 0.0..0.5f64) {
        let theta = sirs_theta(1.5, 3.0, l1, 2.0);
        let n = 20_000u64;
        let path = tau_leap(&sirs_table(), &theta, n, &[14_000, 20], 200.0, TauLeapController::default(), seed).unwrap();
        for k in 0..path.len() {
            let z = path.state(k);
            prop_assert!(z.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
            prop_assert!(z[0] + z[1] <= n as f64);
        }
        let sir_theta = sir_params(2.0, 3.0).unwrap();
        let path = tau_leap(&sir_table(), &sir_theta, 500, &[490, 10], 60.0, TauLeapController::default(), seed).unwrap();
        for k in 1..path.len() {
            let (a, b) = (path.state(k - 1), path.state(k));
            prop_assert!(b[0] <= a[0] && b[0] + b[1] <= a[0] + a[1]);
            prop_assert!(b.iter().all(|v| *v >= 0.0));
        }
    }
}
