//! Tau-leap simulation of the seasonally forced SIRS model with demography.
//! Prints the yearly maximum of the infected proportion next to the ODE.

use epidiff::models::{sirs_table, SirsParams};
use epidiff::odeflow::solve_ode;
use epidiff::simulate::{sample_at, tau_leap, TauLeapController};

fn main() -> epidiff::Result<()> {
    let population = 10_000_000u64;
    let years = 10usize;
    let table = sirs_table();
    for lambda1 in [0.05, 0.15] {
        let theta = SirsParams::study(1.5, 3.0, lambda1, 2.0).to_param_vector()?;
        let path = tau_leap(
            &table,
            &theta,
            population,
            &[7_000_000, 1_000],
            years as f64 * 365.0,
            TauLeapController::default(),
            42,
        )?;
        let weeks: Vec<f64> = (0..=years * 52).map(|w| w as f64 * 7.0).collect();
        let obs = sample_at(&path, &weeks)?;
        let ode = solve_ode(&table, &theta, &[0.7, 1e-4], &weeks, 0.25)?;
        println!("lambda1 = {lambda1}");
        for y in 0..years {
            let peak = |f: &dyn Fn(usize) -> f64| (y * 52..(y + 1) * 52).map(f).fold(0.0, f64::max);
            println!(
                "  year {y:2}: max i = {:.2e} (ODE {:.2e})",
                peak(&|k| obs.state(k)[1]),
                peak(&|k| ode[k][1])
            );
        }
    }
    Ok(())
}
