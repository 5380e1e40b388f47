//! Multi-sector regional labor model behind the first stage.
//!
//! Tradable sectors are indexed `0..S_T`; the internal (nontradable) sector is
//! carried separately. Employment shares are stored N × (S_T + 1) with the
//! internal sector in column 0 and tradable sector `s` in column `s + 1`.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PriceSystem;
use crate::rng::{stream, FIRST_STAGE_STREAM_BASE};

pub const DEFAULT_INTERNAL_SIGMA: f64 = 2.0;
pub const DEFAULT_INTERNAL_THETA: f64 = 0.5;

const SHARE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaborModelParams {
    /// CES elasticity per tradable sector, `σ_s > 1`.
    pub sigma: Vec<f64>,
    /// Labor share per tradable sector, `θ_s ∈ (0, 1)`.
    pub theta: Vec<f64>,
    pub sigma_internal: f64,
    pub theta_internal: f64,
    /// Co-movement loadings `ρ_qs` of each tradable price on the focal price.
    pub rho: Vec<f64>,
    /// Labor-supply elasticity per region.
    pub phi: Vec<f64>,
    /// Baseline employment shares, N × (S_T + 1), internal sector first.
    pub shares: Array2<f64>,
    /// Baseline productivity `Ē_is`, N × S_T.
    pub productivity: Array2<f64>,
    /// Capital `K_is`, N × S_T.
    pub capital: Array2<f64>,
    /// Baseline labor `L_is,0`, N × S_T.
    pub baseline_labor: Array2<f64>,
    /// Endowment `A_is`, N × S_T.
    pub endowment: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstStageProfile {
    pub focal_sector: usize,
    /// `δ_s` for the tradable sectors.
    pub delta: Vec<f64>,
    pub delta_internal: f64,
    pub lambda: Vec<f64>,
    /// `∂ ln w_i / ∂ ln P_q`.
    pub wage_elasticity: Vec<f64>,
    /// `S_iq`. In this model it coincides with the wage elasticity.
    pub exposure_index: Vec<f64>,
    pub kappa_tilde: Vec<f64>,
    pub kappa: Vec<f64>,
    pub alpha: Vec<f64>,
    pub kappa_e: Vec<f64>,
    pub monotone: Vec<bool>,
    /// `(σ_q − 1) / σ_q`.
    pub threshold: f64,
}

impl FirstStageProfile {
    pub fn non_monotone_regions(&self) -> Vec<usize> {
        self.monotone
            .iter()
            .enumerate()
            .filter(|(_, m)| !**m)
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_sector(sigma: f64, theta: f64, what: &str) -> Result<()> {
    if !(sigma > 1.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("{what}: sigma must exceed 1, got {sigma}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("{what}: theta must lie in (0, 1), got {theta}")));
    }
    Ok(())
}

/// `δ_s = 1 / (1 + (σ_s − 1)(1 − θ_s))`.
pub fn compute_delta(sigma: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != theta.len() {
        return Err(Error::Dimension("sigma and theta lengths differ".into()));
    }
    sigma
        .iter()
        .zip(theta)
        .enumerate()
        .map(|(s, (&sg, &th))| {
            check_sector(sg, th, &format!("sector {s}"))?;
            Ok(delta_one(sg, th))
        })
        .collect()
}

#[inline]
fn delta_one(sigma: f64, theta: f64) -> f64 {
    1.0 / (1.0 + (sigma - 1.0) * (1.0 - theta))
}

impl LaborModelParams {
    pub fn n_regions(&self) -> usize {
        self.phi.len()
    }

    pub fn n_tradables(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_tradables();
        let n = self.n_regions();
        if s == 0 {
            return Err(Error::Domain("at least one tradable sector is required".into()));
        }
        if self.theta.len() != s || self.rho.len() != s {
            return Err(Error::Dimension("sigma, theta and rho must have one entry per tradable sector".into()));
        }
        for i in 0..s {
            check_sector(self.sigma[i], self.theta[i], &format!("sector {i}"))?;
        }
        check_sector(self.sigma_internal, self.theta_internal, "internal sector")?;
        if n == 0 {
            return Err(Error::Domain("at least one region is required".into()));
        }
        for (i, &p) in self.phi.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Domain(format!("region {i}: phi must be positive, got {p}")));
            }
        }
        if self.shares.dim() != (n, s + 1) {
            return Err(Error::Dimension(format!(
                "shares must be {n} × {} (internal sector first)",
                s + 1
            )));
        }
        for (i, row) in self.shares.rows().into_iter().enumerate() {
            if row.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::Domain(format!("region {i}: employment shares must be nonnegative")));
            }
            let total: f64 = row.sum();
            if (total - 1.0).abs() > SHARE_TOL {
                return Err(Error::Domain(format!("region {i}: employment shares sum to {total}, not 1")));
            }
        }
        for (name, m) in [
            ("productivity", &self.productivity),
            ("capital", &self.capital),
            ("baseline_labor", &self.baseline_labor),
            ("endowment", &self.endowment),
        ] {
            if m.dim() != (n, s) {
                return Err(Error::Dimension(format!("{name} must be {n} × {s}")));
            }
        }
        Ok(())
    }

    fn deltas(&self) -> (Vec<f64>, f64) {
        let d = self.sigma.iter().zip(&self.theta).map(|(&s, &t)| delta_one(s, t)).collect();
        (d, delta_one(self.sigma_internal, self.theta_internal))
    }

    /// `Ē K^{1−θ_q} L_0^{θ_q}` for region `i` in sector `q`.
    fn capacity(&self, i: usize, q: usize) -> Result<f64> {
        let (e, k, l) = (self.productivity[[i, q]], self.capital[[i, q]], self.baseline_labor[[i, q]]);
        if !(e > 0.0 && k > 0.0 && l > 0.0) {
            return Err(Error::Domain(format!(
                "region {i}, sector {q}: capacity inputs must be positive (productivity {e}, capital {k}, labor {l})"
            )));
        }
        let th = self.theta[q];
        Ok(e * k.powf(1.0 - th) * l.powf(th))
    }
}

/// `λ_i = φ_i + Σ_s ℓ_is σ_s δ_s`, summed over tradables and the internal sector.
pub fn compute_lambda(params: &LaborModelParams) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(lambda_unchecked(params))
}

fn lambda_unchecked(params: &LaborModelParams) -> Vec<f64> {
    let (delta, delta0) = params.deltas();
    (0..params.n_regions())
        .map(|i| {
            let mut l = params.phi[i] + params.shares[[i, 0]] * params.sigma_internal * delta0;
            for s in 0..params.n_tradables() {
                l += params.shares[[i, s + 1]] * params.sigma[s] * delta[s];
            }
            l
        })
        .collect()
}

/// Numerator of the wage elasticity, `Σ_{s ∈ S_T} ℓ_is (σ_s − 1) δ_s ρ_qs`.
fn wage_numerator(params: &LaborModelParams, delta: &[f64], i: usize) -> f64 {
    (0..params.n_tradables())
        .map(|s| params.shares[[i, s + 1]] * (params.sigma[s] - 1.0) * delta[s] * params.rho[s])
        .sum()
}

/// Wage elasticity to the focal price. The loadings in `params.rho` are read
/// as `ρ_qs` for the focal sector `q`.
pub fn compute_wage_elasticity(params: &LaborModelParams, focal: usize) -> Result<Vec<f64>> {
    params.validate()?;
    if focal >= params.n_tradables() {
        return Err(Error::Domain(format!("focal sector {focal} out of range")));
    }
    let (delta, _) = params.deltas();
    let lambda = lambda_unchecked(params);
    Ok((0..params.n_regions())
        .map(|i| wage_numerator(params, &delta, i) / lambda[i])
        .collect())
}

pub fn compute_kappa(params: &LaborModelParams, focal: usize) -> Result<FirstStageProfile> {
    let wage = compute_wage_elasticity(params, focal)?;
    let (delta, delta_internal) = params.deltas();
    let lambda = lambda_unchecked(params);
    let q = focal;
    let (sq, tq, dq) = (params.sigma[q], params.theta[q], delta[q]);
    let threshold = (sq - 1.0) / sq;
    let slope = (sq - 1.0) * tq * dq;
    let n = params.n_regions();
    let mut kappa = Vec::with_capacity(n);
    let mut kappa_tilde = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    let mut kappa_e = Vec::with_capacity(n);
    let mut monotone = Vec::with_capacity(n);
    for i in 0..n {
        let cap = params.capacity(i, q)?;
        let a = params.endowment[[i, q]];
        let k = cap * slope * (1.0 - wage[i] / threshold);
        kappa.push(k);
        kappa_tilde.push(a * k);
        alpha.push(a * cap);
        let own = params.shares[[i, q + 1]];
        kappa_e.push(a * cap * (1.0 + slope * (1.0 - sq * dq * own / lambda[i])));
        monotone.push(wage[i] < threshold);
    }
    Ok(FirstStageProfile {
        focal_sector: focal,
        delta,
        delta_internal,
        lambda,
        exposure_index: wage.clone(),
        wage_elasticity: wage,
        kappa_tilde,
        kappa,
        alpha,
        kappa_e,
        monotone,
        threshold,
    })
}

/// Focal-sector output implied by the log-linearized model:
/// `X_it = α_i + A_i κ_i p_qt + κ^E_i e_it + ε_it` with `ε ~ N(0, noise_sd²)`.
///
/// Region `i` draws its noise from its own stream, so the result does not
/// depend on iteration order.
pub fn simulate_structural_first_stage(
    params: &LaborModelParams,
    prices: &PriceSystem,
    efficiency_shocks: Option<&Array2<f64>>,
    noise_sd: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    prices.validate()?;
    let q = prices.focal_sector;
    let profile = compute_kappa(params, q)?;
    let n = params.n_regions();
    let t = prices.n_periods();
    if let Some(e) = efficiency_shocks {
        if e.dim() != (n, t) {
            return Err(Error::Dimension(format!("efficiency shocks must be {n} × {t}")));
        }
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::Domain(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    let p = prices.focal_prices();
    let mut x = Array2::zeros((n, t));
    for i in 0..n {
        let a = params.endowment[[i, q]];
        let mut rng = stream(seed, FIRST_STAGE_STREAM_BASE + i as u64);
        let normal = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
        for tt in 0..t {
            let mut v = profile.alpha[i] + a * profile.kappa[i] * p[tt];
            if let Some(e) = efficiency_shocks {
                v += profile.kappa_e[i] * e[[i, tt]];
            }
            if noise_sd > 0.0 {
                v += normal.sample(&mut rng);
            }
            x[[i, tt]] = v;
        }
    }
    Ok(x)
}

/// One point of a labor-supply elasticity sweep for a single region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub phi: f64,
    pub exposure_index: f64,
    pub kappa: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiSweep {
    pub region: usize,
    /// Value of `φ_i` at which `S_iq` equals the threshold, if positive.
    pub phi_star: Option<f64>,
    pub threshold: f64,
    pub points: Vec<SweepPoint>,
}

/// Recomputes the first stage of `region` over a grid of `φ_i` values and
/// locates the analytic crossing of the monotonicity threshold.
pub fn sweep_phi(params: &LaborModelParams, focal: usize, region: usize, grid: &[f64]) -> Result<PhiSweep> {
    params.validate()?;
    if region >= params.n_regions() {
        return Err(Error::Domain(format!("region {region} out of range")));
    }
    let base = compute_kappa(params, focal)?;
    let (delta, _) = params.deltas();
    let num = wage_numerator(params, &delta, region);
    let rest = base.lambda[region] - params.phi[region];
    let phi_star = num / base.threshold - rest;
    let mut points = Vec::with_capacity(grid.len());
    let mut p = params.clone();
    for &phi in grid {
        p.phi[region] = phi;
        let prof = compute_kappa(&p, focal)?;
        points.push(SweepPoint {
            phi,
            exposure_index: prof.exposure_index[region],
            kappa: prof.kappa[region],
            monotone: prof.monotone[region],
        });
    }
    Ok(PhiSweep {
        region,
        phi_star: (phi_star > 0.0).then_some(phi_star),
        threshold: base.threshold,
        points,
    })
}

/// Ordinary least-squares slope of `X` on `Z = A·p` pooled over all cells,
/// without intercepts. Used to check the first stage against its A²-weighted
/// κ average.
pub fn a2_weighted_kappa(profile: &FirstStageProfile, exposure: &Array1<f64>) -> f64 {
    let num: f64 = exposure.iter().zip(&profile.kappa).map(|(a, k)| a * a * k).sum();
    let den: f64 = exposure.iter().map(|a| a * a).sum();
    num / den
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numeric::ksum;
    use ndarray::array;
    use proptest::prelude::*;

    fn ones(n: usize, s: usize) -> Array2<f64> {
        Array2::from_elem((n, s), 1.0)
    }

    /// Two tradables plus internal sector, the non-monotone worked example.
    pub(crate) fn worked_example() -> LaborModelParams {
        LaborModelParams {
            sigma: vec![2.0, 5.0],
            theta: vec![0.5, 0.5],
            sigma_internal: 2.0,
            theta_internal: 0.5,
            rho: vec![1.0, 1.0],
            phi: vec![0.1],
            shares: array![[0.1, 0.2, 0.7]],
            productivity: ones(1, 2),
            capital: ones(1, 2),
            baseline_labor: ones(1, 2),
            endowment: ones(1, 2),
        }
    }

    fn internal_only(phi: f64) -> LaborModelParams {
        LaborModelParams {
            sigma: vec![2.0],
            theta: vec![0.5],
            sigma_internal: 2.0,
            theta_internal: 0.5,
            rho: vec![0.0],
            phi: vec![phi],
            shares: array![[1.0, 0.0]],
            productivity: ones(1, 1),
            capital: ones(1, 1),
            baseline_labor: ones(1, 1),
            endowment: ones(1, 1),
        }
    }

    #[test]
    fn delta_values() {
        let d = compute_delta(&[2.0, 5.0], &[0.5, 0.5]).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
        let near_one = compute_delta(&[2.0], &[1.0 - 1e-12]).unwrap()[0];
        assert!((near_one - 1.0).abs() < 1e-11);
        assert!(compute_delta(&[1.0], &[0.5]).is_err());
        assert!(compute_delta(&[2.0], &[1.0]).is_err());
    }

    #[test]
    fn delta_comparative_statics() {
        for &s in &[1.1, 2.0, 4.0, 9.0] {
            for &t in &[0.1, 0.3, 0.5, 0.8] {
                let d = delta_one(s, t);
                assert!(d > 0.0 && d < 1.0);
                assert!(delta_one(s, t + 0.05) > d);
                assert!(delta_one(s + 0.1, t) < d);
            }
        }
    }

    #[test]
    fn lambda_examples() {
        let l = compute_lambda(&internal_only(0.1)).unwrap();
        assert!((l[0] - (0.1 + 4.0 / 3.0)).abs() < 1e-14);
        let l = compute_lambda(&worked_example()).unwrap();
        assert!((l[0] - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unexposed_region_has_zero_wage_elasticity() {
        let w = compute_wage_elasticity(&internal_only(0.3), 0).unwrap();
        assert_eq!(w, vec![0.0]);
    }

    #[test]
    fn worked_example_is_non_monotone() {
        let p = compute_kappa(&worked_example(), 0).unwrap();
        assert!((p.exposure_index[0] - 0.64).abs() < 1e-12);
        assert!((p.threshold - 0.5).abs() < 1e-15);
        assert!(p.kappa[0] < 0.0);
        assert_eq!(p.monotone, vec![false]);
        assert_eq!(p.non_monotone_regions(), vec![0]);
    }

    #[test]
    fn no_comovement_kappa_is_one_third() {
        let p = compute_kappa(&internal_only(0.5), 0).unwrap();
        assert!((p.kappa[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(p.monotone[0]);
        // with no own share the wage feedback in κ^E vanishes
        assert!((p.kappa_e[0] - p.alpha[0] * (1.0 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn wage_elasticity_is_linear_in_rho() {
        let mut p = worked_example();
        let w1 = compute_wage_elasticity(&p, 0).unwrap()[0];
        p.rho.iter_mut().for_each(|r| *r *= 2.0);
        let w2 = compute_wage_elasticity(&p, 0).unwrap()[0];
        assert!((w2 - 2.0 * w1).abs() < 1e-14);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = worked_example();
        p.shares[[0, 0]] = 0.2;
        assert!(matches!(compute_lambda(&p), Err(Error::Domain(_))));
        let mut p = worked_example();
        p.capital[[0, 0]] = 0.0;
        assert!(matches!(compute_kappa(&p, 0), Err(Error::Domain(_))));
        let mut p = worked_example();
        p.phi[0] = 0.0;
        assert!(p.validate().is_err());
    }

    fn one_sector_prices(p: Vec<f64>) -> PriceSystem {
        let t = p.len();
        PriceSystem::observed(Array2::from_shape_vec((1, t), p).unwrap(), 0, vec!["q".into()]).unwrap()
    }

    #[test]
    fn simulation_without_prices_or_noise_is_baseline() {
        let mut params = worked_example();
        params.endowment[[0, 0]] = 1.7;
        let prof = compute_kappa(&params, 0).unwrap();
        let x = simulate_structural_first_stage(&params, &one_sector_prices(vec![0.0; 4]), None, 0.0, 1).unwrap();
        assert!(x.iter().all(|v| *v == prof.alpha[0]));
    }

    #[test]
    fn simulation_slope_is_a_kappa() {
        let mut params = internal_only(0.5);
        params.endowment[[0, 0]] = 1.3;
        let prof = compute_kappa(&params, 0).unwrap();
        let x = simulate_structural_first_stage(&params, &one_sector_prices(vec![0.0, 0.25]), None, 0.0, 1).unwrap();
        let slope = (x[[0, 1]] - x[[0, 0]]) / 0.25;
        assert!((slope - 1.3 * prof.kappa[0]).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let params = worked_example();
        let prices = one_sector_prices(vec![0.1, -0.2, 0.3]);
        let a = simulate_structural_first_stage(&params, &prices, None, 1.0, 9).unwrap();
        let b = simulate_structural_first_stage(&params, &prices, None, 1.0, 9).unwrap();
        let c = simulate_structural_first_stage(&params, &prices, None, 1.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn random_region_params(n: usize, seed: u64) -> LaborModelParams {
        use rand::Rng;
        let mut rng = stream(seed, 0);
        let mut shares = Array2::zeros((n, 3));
        for i in 0..n {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let tot: f64 = w.iter().sum();
            for s in 0..3 {
                shares[[i, s]] = w[s] / tot;
            }
        }
        LaborModelParams {
            sigma: vec![3.0, 6.0],
            theta: vec![0.6, 0.4],
            sigma_internal: 2.0,
            theta_internal: 0.5,
            rho: vec![1.0, 0.8],
            phi: (0..n).map(|_| rng.random_range(0.05..0.5)).collect(),
            shares,
            productivity: Array2::from_shape_fn((n, 2), |_| rng.random_range(0.5..2.0)),
            capital: Array2::from_shape_fn((n, 2), |_| rng.random_range(0.5..2.0)),
            baseline_labor: Array2::from_shape_fn((n, 2), |_| rng.random_range(0.5..2.0)),
            endowment: Array2::from_shape_fn((n, 2), |_| rng.random_range(0.5..1.5)),
        }
    }

    #[test]
    fn simulated_first_stage_recovers_a2_weighted_kappa() {
        use crate::dgp::{draw_prices, Law, PriceProcessSpec};
        let params = random_region_params(6, 3);
        let prof = compute_kappa(&params, 0).unwrap();
        let spec = PriceProcessSpec::independent(2, 0, Law::Uniform { lo: -1.0, hi: 1.0 });
        let prices = draw_prices(&spec, 20_000, 4).unwrap();
        let x = simulate_structural_first_stage(&params, &prices, None, 0.5, 5).unwrap();
        let a = params.endowment.column(0).to_owned();
        let p = prices.focal_prices();
        // OLS of X on Z with region intercepts: demean within region
        let mut num = Vec::new();
        let mut den = Vec::new();
        for i in 0..6 {
            let zbar = a[i] * p.mean().unwrap();
            let xbar = x.row(i).mean().unwrap();
            for t in 0..p.len() {
                let z = a[i] * p[t] - zbar;
                num.push(z * (x[[i, t]] - xbar));
                den.push(z * z);
            }
        }
        let slope = ksum(num) / ksum(den);
        let target = a2_weighted_kappa(&prof, &a);
        assert!((slope - target).abs() < 0.01, "{slope} vs {target}");
    }

    #[test]
    fn elasticity_identity() {
        for seed in 0..20 {
            let params = random_region_params(5, seed);
            let prof = compute_kappa(&params, 0).unwrap();
            let (sq, tq, dq) = (params.sigma[0], params.theta[0], prof.delta[0]);
            for i in 0..5 {
                let lhs = (sq - 1.0) * tq * dq * (1.0 - sq / (sq - 1.0) * prof.exposure_index[i]);
                let rhs = prof.kappa_tilde[i] / prof.alpha[i];
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn single_tradable_sector_is_always_monotone(
            sigma in 1.01f64..20.0, theta in 0.01f64..0.99, phi in 1e-4f64..5.0,
            l_q in 0.0f64..1.0, s0 in 1.01f64..20.0, t0 in 0.01f64..0.99,
        ) {
            let params = LaborModelParams {
                sigma: vec![sigma],
                theta: vec![theta],
                sigma_internal: s0,
                theta_internal: t0,
                rho: vec![1.0],
                phi: vec![phi],
                shares: array![[1.0 - l_q, l_q]],
                productivity: ones(1, 1),
                capital: ones(1, 1),
                baseline_labor: ones(1, 1),
                endowment: ones(1, 1),
            };
            let prof = compute_kappa(&params, 0).unwrap();
            prop_assert!(prof.exposure_index[0] <= prof.threshold);
            prop_assert!(prof.monotone[0]);
            prop_assert!(prof.kappa[0] > 0.0);
        }
    }
}
