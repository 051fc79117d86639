//! The deterministic flow along an observation grid: states, resolvents
//! Φ(t_k, t_{k-1}), weight matrices S_k and sensitivities.

use epidiff::models::{sir_params, sir_table};
use epidiff::odeflow::{FlowCache, FlowOptions};
use epidiff::simulate::regular_grid;

fn main() -> epidiff::Result<()> {
    let theta = sir_params(1.5, 3.0)?;
    let grid = regular_grid(0.0, 40.0, 4);
    let flow = FlowCache::build(&sir_table(), &theta, &[0.99, 0.01], &grid, FlowOptions::new(0.05).with_sensitivities())?;
    for k in 0..grid.len() {
        println!("t = {:4}: x = {:.5?}, dx/d(r0, d) = {:.4?}", grid[k], flow.state(k), flow.sensitivity(k).unwrap());
        if k > 0 {
            println!("         Phi = {:.4?}", flow.interval_resolvent(k));
            println!("         S_k = {:?}", flow.weight_matrix(k).iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
        }
    }
    println!("Phi(30, 5) = {:.4?}", flow.resolvent(30.0, 5.0)?);
    println!("weight matrices change by {:.1e} when the step is halved", flow.refinement_defect()?);
    Ok(())
}
