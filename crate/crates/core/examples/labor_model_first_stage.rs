//! First-stage elasticities from the regional labor model, and where a region
//! stops responding positively to its own sector's price.

use ndarray::{array, Array2};
use pexposure::labor_model::{compute_kappa, sweep_phi, LaborModelParams};

fn main() -> pexposure::Result<()> {
    // two tradables: a focal sector (sigma = 2) and an elastic one (sigma = 5)
    let params = LaborModelParams {
        sigma: vec![2.0, 5.0],
        theta: vec![0.5, 0.5],
        sigma_internal: 2.0,
        theta_internal: 0.5,
        rho: vec![1.0, 1.0],
        phi: vec![0.1, 2.0],
        // internal sector first
        shares: array![[0.1, 0.2, 0.7], [0.6, 0.3, 0.1]],
        productivity: Array2::ones((2, 2)),
        capital: Array2::ones((2, 2)),
        baseline_labor: Array2::ones((2, 2)),
        endowment: Array2::ones((2, 2)),
    };
    let profile = compute_kappa(&params, 0)?;
    println!("threshold (sigma_q - 1) / sigma_q = {:.3}", profile.threshold);
    for i in 0..params.n_regions() {
        println!(
            "region {i}: exposure index {:.4}, kappa {:+.4}, monotone {}",
            profile.exposure_index[i], profile.kappa[i], profile.monotone[i]
        );
    }

    let grid: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
    let sweep = sweep_phi(&params, 0, 0, &grid)?;
    if let Some(phi) = sweep.phi_star {
        println!("region 0 turns monotone once phi exceeds {phi:.4}");
    }
    for w in sweep.points.windows(2) {
        if w[0].monotone != w[1].monotone {
            println!("grid crossing between phi = {:.2} and {:.2}", w[0].phi, w[1].phi);
        }
    }
    Ok(())
}
