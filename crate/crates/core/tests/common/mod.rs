//! Independent oracles shared by the integration tests.
use ndarray::Array2;
use pexposure::dgp::{draw_prices_with, generate_panel, FinitePopulation, PriceProcessSpec};
use pexposure::rng::stream;
use pexposure::sensitivity::{imbens_manski_constant, normal_cdf};

/// Ratio of expectations `E[Σ Z Y] / E[Σ Z X]` over `reps` price draws, or
/// `E[Σ ΔZ ΔY] / E[Σ (ΔZ)²]` when `differenced`. Returns the ratio and its
/// delta-method standard error.
pub fn ratio_of_expectations(
    pop: &FinitePopulation,
    spec: &PriceProcessSpec,
    reps: usize,
    seed: u64,
    differenced: bool,
) -> (f64, f64) {
    let (n, t) = (pop.n_regions(), pop.n_periods());
    let q = pop.focal_sector;
    let mut rng = stream(seed, 17);
    let (mut nums, mut dens) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for _ in 0..reps {
        let ps = draw_prices_with(spec, t, &mut rng).unwrap();
        let sim = generate_panel(pop, &ps).unwrap();
        let y = &sim.panel.outcome;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let a = pop.exposure[[i, q]];
            if differenced {
                let dz = a * (ps.log_prices[[q, 1]] - ps.log_prices[[q, 0]]);
                num += dz * (y[[i, 1]] - y[[i, 0]]);
                den += dz * dz;
            } else {
                for tt in 0..t {
                    let z = a * ps.log_prices[[q, tt]];
                    num += z * y[[i, tt]];
                    den += z * sim.outputs[[i, q, tt]];
                }
            }
        }
        nums.push(num);
        dens.push(den);
    }
    let r = reps as f64;
    let mn = nums.iter().sum::<f64>() / r;
    let md = dens.iter().sum::<f64>() / r;
    let ratio = mn / md;
    let var = nums
        .iter()
        .zip(&dens)
        .map(|(a, b)| (a - ratio * b).powi(2))
        .sum::<f64>()
        / (r - 1.0);
    (ratio, (var / r).sqrt() / md.abs())
}

/// Smallest `b` whose bracketing interval `[β̂ − b − C se, β̂ + b + C se]`
/// with `C = C(2b/se)` reaches `null`, found by nested grid search.
pub fn breakdown_by_grid(beta_hat: f64, se: f64, alpha: f64, null: f64) -> f64 {
    let d = (beta_hat - null).abs();
    let reaches = |b: f64| b + imbens_manski_constant(2.0 * b, se, alpha).unwrap() * se >= d;
    if reaches(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, d);
    for _ in 0..6 {
        let step = (hi - lo) / 100.0;
        let mut k = 0;
        while !reaches(lo + step * (k + 1) as f64) {
            k += 1;
        }
        let new_lo = lo + step * k as f64;
        hi = lo + step * (k + 1) as f64;
        lo = new_lo;
    }
    hi
}

/// `Φ(C + x) − Φ(−C) − (1 − α)`, the residual of the constant's defining
/// equation at `x = B / se`.
pub fn im_residual(c: f64, x: f64, alpha: f64) -> f64 {
    normal_cdf(c + x) - normal_cdf(-c) - (1.0 - alpha)
}

/// Adds `a_i + b_t` to every cell.
pub fn shift(m: &Array2<f64>, a: &[f64], b: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn(m.dim(), |(i, t)| m[[i, t]] + a[i] + b[t])
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
