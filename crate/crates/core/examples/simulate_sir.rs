//! Exact (Gillespie) simulation of the SIR model and the 5% rule for minor
//! outbreaks.

use epidiff::models::{sir_params, sir_table};
use epidiff::simulate::{gillespie, non_extinct, regular_grid, sample_at, StreamSeed};

fn main() -> epidiff::Result<()> {
    let table = sir_table();
    let theta = sir_params(1.5, 3.0)?;
    let grid = regular_grid(0.0, 40.0, 8);
    for replicate in 0..5 {
        let path = gillespie(&table, &theta, 1000, &[990, 10], 40.0, StreamSeed::new(1, replicate))?;
        let final_size = path.state(0)[0] - path.last_state()[0];
        println!(
            "replicate {replicate}: {} events, final size {final_size}, major outbreak: {}",
            path.len() - 1,
            non_extinct(&path)
        );
        let obs = sample_at(&path, &grid)?;
        let infected: Vec<String> = (0..grid.len()).map(|k| format!("{:.3}", obs.state(k)[1])).collect();
        println!("  i(t) every 5 days: {}", infected.join(" "));
    }
    Ok(())
}
