//! Closed-form maximum likelihood of (R0, d) from a completely observed
//! exact SIR path.

use epidiff::mle::{sir_mle, CompletePath};
use epidiff::models::{sir_params, sir_table};
use epidiff::simulate::{gillespie, StreamSeed};

fn main() -> epidiff::Result<()> {
    let theta = sir_params(1.5, 3.0)?;
    let path = gillespie(&sir_table(), &theta, 1000, &[990, 10], 40.0, StreamSeed::new(4, 0))?;
    let complete = CompletePath::from_path(&path)?;
    let mle = sir_mle(&complete)?;
    let (infections, recoveries) = mle.events;
    println!("{infections} infections, {recoveries} recoveries");
    println!("lambda = {:.4}, gamma = {:.4}", mle.lambda, mle.gamma);
    println!(
        "R0 = {:.4} (se {:.4}), d = {:.4} (se {:.4})",
        mle.r0,
        mle.cov[0].sqrt(),
        mle.d,
        mle.cov[3].sqrt()
    );
    let report = mle.report(0.95)?;
    let e = report.ellipse("r0", "d").unwrap();
    println!("95% ellipse: semi-axes {:.4?}, angle {:.3} rad", e.semi_axes, e.angle);
    Ok(())
}
