//! Finite-population generator for simulation designs.
//!
//! A [`FinitePopulation`] fixes everything except prices: untreated outcomes,
//! causal effects, first-stage slopes, exposures and output shocks. Prices are
//! then drawn repeatedly from a [`PriceProcessSpec`] and pushed through
//! [`generate_panel`].

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Panel, PriceSystem};
use crate::rng::{stream, POPULATION_STREAM};

/// A univariate law used for prices and for population primitives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Constant { value: f64 },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Law::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Law::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Law::Uniform { lo, hi } => 0.5 * (lo + hi),
            Law::Normal { mean, .. } => mean,
            Law::Constant { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Law::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Law::Normal { sd, .. } => sd * sd,
            Law::Constant { .. } => 0.0,
        }
    }

    /// Fourth central moment.
    pub fn fourth_central_moment(&self) -> f64 {
        match *self {
            Law::Uniform { lo, hi } => (hi - lo).powi(4) / 80.0,
            Law::Normal { sd, .. } => 3.0 * sd.powi(4),
            Law::Constant { .. } => 0.0,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Law::Uniform { lo, hi } => rng.random_range(lo..hi),
            Law::Normal { mean, sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sd).expect("validated").sample(rng)
                }
            }
            Law::Constant { value } => value,
        }
    }
}

/// Cross-sector dependence of prices within a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dependence {
    Independent,
    /// `p_st = ρ_s p_qt + u_st` for `s ≠ q`, with `u_st` drawn from sector
    /// `s`'s marginal law. `rho[q]` must be 1.
    FocalLoading { rho: Vec<f64> },
}

/// Price law: per-sector marginals, cross-sector dependence, iid over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceProcessSpec {
    pub focal_sector: usize,
    pub marginals: Vec<Law>,
    pub dependence: Dependence,
}

impl PriceProcessSpec {
    pub fn independent(n_sectors: usize, focal_sector: usize, law: Law) -> Self {
        Self {
            focal_sector,
            marginals: vec![law; n_sectors],
            dependence: Dependence::Independent,
        }
    }

    pub fn focal_loading(n_sectors: usize, focal_sector: usize, law: Law, rho: Vec<f64>) -> Self {
        Self {
            focal_sector,
            marginals: vec![law; n_sectors],
            dependence: Dependence::FocalLoading { rho },
        }
    }

    pub fn n_sectors(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_sectors();
        if s == 0 {
            return Err(Error::Domain("price process needs at least one sector".into()));
        }
        if self.focal_sector >= s {
            return Err(Error::Domain(format!("focal sector {} out of range for {s} sectors", self.focal_sector)));
        }
        for (k, m) in self.marginals.iter().enumerate() {
            m.validate()?;
            if m.mean().abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "price law for sector {k} has mean {}; prices must be mean zero",
                    m.mean()
                )));
            }
        }
        if let Dependence::FocalLoading { rho } = &self.dependence {
            if rho.len() != s {
                return Err(Error::Dimension(format!("rho has {} entries for {s} sectors", rho.len())));
            }
            if rho[self.focal_sector] != 1.0 {
                return Err(Error::Domain("the focal sector's own loading must be 1".into()));
            }
            if rho.iter().any(|r| !r.is_finite()) {
                return Err(Error::Domain("rho entries must be finite".into()));
            }
        }
        Ok(())
    }

    /// `ρ_s`, the loading of sector `s` on the focal price (1 for the focal
    /// sector, 0 under independence).
    pub fn loading(&self, s: usize) -> f64 {
        if s == self.focal_sector {
            return 1.0;
        }
        match &self.dependence {
            Dependence::Independent => 0.0,
            Dependence::FocalLoading { rho } => rho[s],
        }
    }

    /// Variance of the idiosyncratic part `u_s` (zero for the focal sector).
    pub fn innovation_variance(&self, s: usize) -> f64 {
        if s == self.focal_sector {
            0.0
        } else {
            self.marginals[s].variance()
        }
    }

    pub fn variance(&self, s: usize) -> f64 {
        let vq = self.marginals[self.focal_sector].variance();
        let r = self.loading(s);
        r * r * vq + self.innovation_variance(s)
    }

    /// `Cov(p_s, p_s')` within a period.
    pub fn covariance(&self, s: usize, s2: usize) -> f64 {
        let vq = self.marginals[self.focal_sector].variance();
        let own = if s == s2 { self.innovation_variance(s) } else { 0.0 };
        self.loading(s) * self.loading(s2) * vq + own
    }

    /// `E[p_q² p_s p_s']`.
    pub fn focal_sq_cross_moment(&self, s: usize, s2: usize) -> f64 {
        let q = self.focal_sector;
        let m2 = self.marginals[q].variance();
        let m4 = self.marginals[q].fourth_central_moment();
        let own = if s == s2 { self.innovation_variance(s) } else { 0.0 };
        self.loading(s) * self.loading(s2) * m4 + m2 * own
    }
}

/// Draws one period's price vector in a fixed order: focal first, then the
/// remaining sectors ascending.
fn draw_period(spec: &PriceProcessSpec, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let q = spec.focal_sector;
    let pq = spec.marginals[q].sample(rng);
    out[q] = pq;
    for s in 0..spec.n_sectors() {
        if s != q {
            out[s] = spec.loading(s) * pq + spec.marginals[s].sample(rng);
        }
    }
}

/// Draws an S × T price system using `rng` and records analytic moments.
pub fn draw_prices_with(spec: &PriceProcessSpec, n_periods: usize, rng: &mut ChaCha8Rng) -> Result<PriceSystem> {
    spec.validate()?;
    if n_periods == 0 {
        return Err(Error::Domain("need at least one period".into()));
    }
    let s = spec.n_sectors();
    let mut p = Array2::zeros((s, n_periods));
    let mut buf = vec![0.0; s];
    for t in 0..n_periods {
        draw_period(spec, rng, &mut buf);
        for k in 0..s {
            p[[k, t]] = buf[k];
        }
    }
    let variances = Array2::from_shape_fn((s, n_periods), |(k, _)| spec.variance(k));
    let covs = Array2::from_shape_fn((s, n_periods), |(k, _)| spec.covariance(spec.focal_sector, k));
    Ok(PriceSystem {
        n_sectors: s,
        focal_sector: spec.focal_sector,
        log_prices: p,
        variances: Some(variances),
        covariances_with_focal: Some(covs),
        sector_labels: (0..s).map(|k| format!("s{k}")).collect(),
        process: Some(spec.clone()),
    })
}

pub fn draw_prices(spec: &PriceProcessSpec, n_periods: usize, seed: u64) -> Result<PriceSystem> {
    draw_prices_with(spec, n_periods, &mut stream(seed, 0))
}

/// Laws and sizes for a finite population. Defaults follow the simulation
/// design used for the coverage tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub n_regions: usize,
    pub n_periods: usize,
    pub n_sectors: usize,
    pub focal_sector: usize,
    pub beta: Law,
    pub kappa: Law,
    pub exposure: Law,
    /// `α_is = alpha_scale · A_is`.
    pub alpha_scale: f64,
    pub eta: Law,
    pub epsilon: Law,
    /// `A_is = c·A_iq + (1 − c)·U_is` for `s ≠ q`, correlating exposures
    /// across sectors. Zero draws every sector independently.
    pub exposure_common_weight: f64,
    /// Law of the cross-price loadings `γ_iss'`; absent means no GE channel.
    pub gamma: Option<Law>,
    /// Require `κ_iq ≥ 0` for every region.
    pub monotone: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_regions: 100,
            n_periods: 10,
            n_sectors: 2,
            focal_sector: 0,
            beta: Law::Uniform { lo: 0.0, hi: 2.0 },
            kappa: Law::Uniform { lo: 0.0, hi: 1.0 },
            exposure: Law::Uniform { lo: 0.5, hi: 1.5 },
            alpha_scale: 2.0,
            eta: Law::Normal { mean: 0.0, sd: 1.0 },
            epsilon: Law::Normal { mean: 0.0, sd: 0.5 },
            exposure_common_weight: 0.0,
            gamma: None,
            monotone: true,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 || self.n_periods == 0 || self.n_sectors == 0 {
            return Err(Error::Domain("n_regions, n_periods and n_sectors must be positive".into()));
        }
        if self.focal_sector >= self.n_sectors {
            return Err(Error::Domain("focal_sector out of range".into()));
        }
        for l in [&self.beta, &self.kappa, &self.exposure, &self.eta, &self.epsilon] {
            l.validate()?;
        }
        if let Some(g) = &self.gamma {
            g.validate()?;
        }
        if !self.alpha_scale.is_finite() {
            return Err(Error::Domain("alpha_scale must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.exposure_common_weight) {
            return Err(Error::Domain("exposure_common_weight must lie in [0, 1]".into()));
        }
        if self.monotone {
            let lo = match self.kappa {
                Law::Uniform { lo, .. } => lo,
                Law::Normal { sd, mean } => {
                    if sd > 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        mean
                    }
                }
                Law::Constant { value } => value,
            };
            if lo < 0.0 {
                return Err(Error::Domain(
                    "monotone design requires a kappa law with nonnegative support".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The conditioning set: everything but prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePopulation {
    pub focal_sector: usize,
    /// N × T.
    pub eta: Array2<f64>,
    /// N × S.
    pub beta: Array2<f64>,
    pub alpha: Array2<f64>,
    pub kappa: Array2<f64>,
    pub exposure: Array2<f64>,
    /// N × S × T.
    pub epsilon: Array3<f64>,
    /// N × S × S, zero diagonal.
    pub gamma: Option<Array3<f64>>,
    pub monotone_design: bool,
}

impl FinitePopulation {
    pub fn n_regions(&self) -> usize {
        self.beta.nrows()
    }
    pub fn n_sectors(&self) -> usize {
        self.beta.ncols()
    }
    pub fn n_periods(&self) -> usize {
        self.eta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, s, t) = (self.n_regions(), self.n_sectors(), self.n_periods());
        if n == 0 || s == 0 || t == 0 {
            return Err(Error::Dimension("population must be nonempty".into()));
        }
        if self.focal_sector >= s {
            return Err(Error::Domain("focal sector out of range".into()));
        }
        if self.eta.nrows() != n
            || self.alpha.dim() != (n, s)
            || self.kappa.dim() != (n, s)
            || self.exposure.dim() != (n, s)
            || self.epsilon.dim() != (n, s, t)
        {
            return Err(Error::Dimension("population arrays have inconsistent shapes".into()));
        }
        if let Some(g) = &self.gamma {
            if g.dim() != (n, s, s) {
                return Err(Error::Dimension("gamma must be N × S × S".into()));
            }
        }
        if self.monotone_design && self.kappa.column(self.focal_sector).iter().any(|k| *k < 0.0) {
            return Err(Error::Domain("monotone design flag set but some focal kappa is negative".into()));
        }
        Ok(())
    }

    /// Focal-sector exposure `A_iq`.
    pub fn focal_exposure(&self) -> Array1<f64> {
        self.exposure.column(self.focal_sector).to_owned()
    }
}

/// Draws a population from a single dedicated stream in a fixed order.
pub fn draw_population(cfg: &PopulationConfig, seed: u64) -> Result<FinitePopulation> {
    draw_population_from(cfg, &mut stream(seed, POPULATION_STREAM))
}

/// [`draw_population`] reading from a caller-supplied stream.
pub fn draw_population_from(cfg: &PopulationConfig, rng: &mut ChaCha8Rng) -> Result<FinitePopulation> {
    cfg.validate()?;
    let (n, s, t, q) = (cfg.n_regions, cfg.n_sectors, cfg.n_periods, cfg.focal_sector);
    let eta = Array2::from_shape_simple_fn((n, t), || cfg.eta.sample(rng));
    let beta = Array2::from_shape_simple_fn((n, s), || cfg.beta.sample(rng));
    let kappa = Array2::from_shape_simple_fn((n, s), || cfg.kappa.sample(rng));
    let mut exposure = Array2::from_shape_simple_fn((n, s), || cfg.exposure.sample(rng));
    let c = cfg.exposure_common_weight;
    if c > 0.0 {
        for i in 0..n {
            let aq = exposure[[i, q]];
            for k in 0..s {
                if k != q {
                    exposure[[i, k]] = c * aq + (1.0 - c) * exposure[[i, k]];
                }
            }
        }
    }
    let alpha = exposure.mapv(|a| cfg.alpha_scale * a);
    let epsilon = Array3::from_shape_simple_fn((n, s, t), || cfg.epsilon.sample(rng));
    let gamma = cfg.gamma.map(|law| {
        let mut g = Array3::zeros((n, s, s));
        for ((_, a, b), v) in g.indexed_iter_mut() {
            if a != b {
                *v = law.sample(rng);
            }
        }
        g
    });
    let pop = FinitePopulation {
        focal_sector: q,
        eta,
        beta,
        alpha,
        kappa,
        exposure,
        epsilon,
        gamma,
        monotone_design: cfg.monotone,
    };
    pop.validate()?;
    Ok(pop)
}

/// A generated panel together with the full output tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: Panel,
    /// `X_ist`, N × S × T.
    pub outputs: Array3<f64>,
}

fn check_compatible(pop: &FinitePopulation, prices: &PriceSystem) -> Result<()> {
    pop.validate()?;
    prices.validate()?;
    if prices.n_sectors != pop.n_sectors() {
        return Err(Error::Dimension(format!(
            "population has {} sectors but prices have {}",
            pop.n_sectors(),
            prices.n_sectors
        )));
    }
    if prices.n_periods() != pop.n_periods() {
        return Err(Error::Dimension(format!(
            "population has {} periods but prices have {}",
            pop.n_periods(),
            prices.n_periods()
        )));
    }
    if prices.focal_sector != pop.focal_sector {
        return Err(Error::Dimension("population and prices disagree on the focal sector".into()));
    }
    Ok(())
}

/// `X_ist = α_is + κ_is A_is p_st + ε_ist + Σ_{s'≠s} γ_iss' p_s't` and
/// `Y_it = η_it + Σ_s β_is X_ist`.
pub fn generate_panel(pop: &FinitePopulation, prices: &PriceSystem) -> Result<SimulatedPanel> {
    check_compatible(pop, prices)?;
    let (n, s, t) = (pop.n_regions(), pop.n_sectors(), pop.n_periods());
    let p = &prices.log_prices;
    let mut x = Array3::zeros((n, s, t));
    let mut y = pop.eta.clone();
    for i in 0..n {
        for k in 0..s {
            let base = pop.alpha[[i, k]];
            let slope = pop.kappa[[i, k]] * pop.exposure[[i, k]];
            let b = pop.beta[[i, k]];
            for tt in 0..t {
                let mut v = base + slope * p[[k, tt]] + pop.epsilon[[i, k, tt]];
                if let Some(g) = &pop.gamma {
                    for k2 in 0..s {
                        if k2 != k {
                            v += g[[i, k, k2]] * p[[k2, tt]];
                        }
                    }
                }
                x[[i, k, tt]] = v;
                y[[i, tt]] += b * v;
            }
        }
    }
    let q = pop.focal_sector;
    let treatment = Array2::from_shape_fn((n, t), |(i, tt)| x[[i, q, tt]]);
    let panel = Panel::new(y, Some(treatment), pop.focal_exposure())?;
    Ok(SimulatedPanel { panel, outputs: x })
}
