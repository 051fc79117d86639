//! Euler-Maruyama paths of the diffusion approximation against the ODE; the
//! distance shrinks like 1/sqrt(N).

use epidiff::models::{sir_params, sir_table};
use epidiff::odeflow::solve_ode;
use epidiff::simulate::{euler_maruyama, non_extinct, regular_grid, sample_at, StreamSeed};

fn main() -> epidiff::Result<()> {
    let table = sir_table();
    let theta = sir_params(1.5, 3.0)?;
    let x0 = [0.99, 0.01];
    let grid = regular_grid(0.0, 40.0, 80);
    let ode = solve_ode(&table, &theta, &x0, &grid, 0.05)?;
    for population in [1e3, 1e4, 1e5, 1e6] {
        let mut gaps = Vec::new();
        for r in 0..50 {
            let path = euler_maruyama(&table, &theta, population, &x0, 40.0, 0.01, StreamSeed::new(2, r))?;
            if !non_extinct(&path) {
                continue;
            }
            let obs = sample_at(&path, &grid)?;
            let gap = (0..grid.len())
                .flat_map(|k| (0..2).map(move |i| (k, i)))
                .map(|(k, i)| (obs.state(k)[i] - ode[k][i]).abs())
                .fold(0.0, f64::max);
            gaps.push(gap);
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        println!(
            "N = {population:>9}: mean sup distance {mean:.5}, times sqrt(N) {:.3} ({} paths)",
            mean * population.sqrt(),
            gaps.len()
        );
    }
    Ok(())
}
