//! Build a fractional-noise process model, draw a few paths, and print
//! summary statistics next to their closed-form targets.

use wicknoise::process::ProcessModel;
use wicknoise::spectral_op::{fbm_variance_constant, r_of_t, SpectralDensity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let density = SpectralDensity::preset("fbm:H=0.7")?;
    let model = ProcessModel::build(&density, 64, 0.0, 1.0)?;

    let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
    let paths = model.sample_paths(&times, 3, 42)?;
    for (j, path) in paths.iter().enumerate() {
        println!(
            "path {j}: X(0) = {:.3}, X(0.5) = {:+.4}, X(1) = {:+.4}",
            path[0], path[5], path[10]
        );
    }

    let var = model.variance(1.0)?;
    let target = fbm_variance_constant(0.7);
    println!("Var X(1) truncated at K = 64: {var:.6} (limit {target:.6})");

    let cov = model.covariance(1.0, 0.5)?;
    println!("covariance(1, 0.5) = {cov:.6}");
    println!("r(1) = {:.6}", r_of_t(1.0, &density)?);

    let w = model.w_chaos(0.5)?;
    println!(
        "dual norm of W(0.5) at exponent {}: {:.6}",
        model.dual_exponent(),
        w.dual_norm(model.dual_exponent())
    );
    Ok(())
}
