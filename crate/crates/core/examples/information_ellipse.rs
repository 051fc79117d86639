//! Theoretical 95% confidence ellipses of (R0, d) for several observation
//! frequencies and for continuous observation.

use epidiff::contrast::{information_matrix, Ellipse};
use epidiff::linalg::inverse;
use epidiff::models::{sir_params, sir_table};
use epidiff::odeflow::information_bound;
use epidiff::simulate::regular_grid;

fn ellipse(info: &[f64], population: f64) -> epidiff::Result<Ellipse> {
    let scaled: Vec<f64> = info.iter().map(|v| v * population).collect();
    let cov = inverse(&scaled, 2).expect("information is invertible");
    Ellipse::from_covariance(["r0".into(), "d".into()], [1.5, 3.0], [cov[0], cov[1], cov[2], cov[3]], 0.95)
}

fn main() -> epidiff::Result<()> {
    let table = sir_table();
    let theta = sir_params(1.5, 3.0)?;
    let x0 = [0.99, 0.01];
    let population = 1000.0;
    for n in [5, 10, 40, 400] {
        let info = information_matrix(&table, &theta, &x0, &regular_grid(0.0, 40.0, n), 0.05)?;
        let e = ellipse(&info.matrix, population)?;
        println!(
            "n = {n:4}: semi-axes {:.4?}, correlation {:.3}, area {:.5}",
            e.semi_axes,
            e.correlation,
            e.area()
        );
    }
    let bound = information_bound(&table, &theta, &x0, 0.0, 40.0, 0.05)?;
    let e = ellipse(&bound, population)?;
    println!("continuous: semi-axes {:.4?}, correlation {:.3}, area {:.5}", e.semi_axes, e.correlation, e.area());
    Ok(())
}
