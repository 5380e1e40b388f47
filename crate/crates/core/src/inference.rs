//! Variance estimators for fits produced by [`crate::estimators`].
//!
//! All sandwich forms share the bread `D = (1/NT) Σ W R` and differ in the
//! meat. With `Var(β̂) = meat / (NT · D²)` the factors of NT cancel and every
//! estimator reduces to `S / (Σ W R)²` for a method-specific sum of squares `S`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dgp::FinitePopulation;
use crate::error::{Error, Result};
use crate::estimators::FitResult;
use crate::numeric::{ksum, KahanSum};
use crate::panel::PriceSystem;

pub const Z_975: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Ehw,
    ClusterRegion,
    ClusterTime,
    PriceExposure,
}

impl VarianceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ehw => "ehw",
            Self::ClusterRegion => "cluster_region",
            Self::ClusterTime => "cluster_time",
            Self::PriceExposure => "pe",
        }
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ehw" | "robust" => Ok(Self::Ehw),
            "cluster_region" => Ok(Self::ClusterRegion),
            "cluster_time" => Ok(Self::ClusterTime),
            "pe" | "price_exposure" => Ok(Self::PriceExposure),
            other => Err(Error::Config(format!(
                "unknown variance method `{other}` (expected ehw, cluster_region, cluster_time or pe)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub method: VarianceMethod,
    pub variance: f64,
    pub std_error: f64,
    pub dof_adjustment: String,
    pub ci_95: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
}

fn report(fit: &FitResult, method: VarianceMethod, sum_sq: f64, dof: &str, n_clusters: Option<usize>) -> Result<VarianceReport> {
    let cross = fit.denominator * fit.n_obs() as f64;
    if cross == 0.0 || !cross.is_finite() {
        return Err(Error::DegenerateVariance("the fit's denominator is zero".into()));
    }
    let variance = (sum_sq / (cross * cross)).max(0.0);
    let std_error = variance.sqrt();
    Ok(VarianceReport {
        method,
        variance,
        std_error,
        dof_adjustment: dof.to_string(),
        ci_95: [fit.coefficient - Z_975 * std_error, fit.coefficient + Z_975 * std_error],
        n_clusters,
    })
}

/// `V̂_NT = (1/NT) Σ_t p_t² (Σ_i A_i û_it)²` with untransformed exposure.
pub fn pe_variance(fit: &FitResult) -> Result<VarianceReport> {
    let (n, t) = fit.residuals.dim();
    if fit.price.len() != t || fit.exposure.len() != n {
        return Err(Error::Dimension("fit price or exposure does not match its residuals".into()));
    }
    let mut s = KahanSum::new();
    for tt in 0..t {
        let g = ksum((0..n).map(|i| fit.exposure[i] * fit.residuals[[i, tt]]));
        s.add(fit.price[tt] * fit.price[tt] * g * g);
    }
    report(fit, VarianceMethod::PriceExposure, s.value(), "none", Some(t))
}

/// Price-exposure variance computed with the transformed instrument in place
/// of `A_i p_t`. Identical to clustering by period.
pub fn pe_variance_transformed(fit: &FitResult) -> Result<VarianceReport> {
    let s = per_period_sum(&fit.instrument, &fit.residuals);
    report(fit, VarianceMethod::PriceExposure, s, "none (transformed instrument)", Some(fit.n_periods()))
}

fn per_period_sum(w: &Array2<f64>, u: &Array2<f64>) -> f64 {
    let (n, t) = u.dim();
    ksum((0..t).map(|tt| {
        let g = ksum((0..n).map(|i| w[[i, tt]] * u[[i, tt]]));
        g * g
    }))
}

/// Heteroskedasticity-robust (HC0) variance.
pub fn ehw_variance(fit: &FitResult) -> Result<VarianceReport> {
    let s = ksum(
        fit.instrument
            .iter()
            .zip(fit.residuals.iter())
            .map(|(w, u)| (w * u) * (w * u)),
    );
    report(fit, VarianceMethod::Ehw, s, "none (HC0)", None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClusterBy<'a> {
    /// Cluster by region, optionally grouping regions by the given ids.
    Region(Option<&'a [usize]>),
    Time,
}

/// CR0 cluster-robust variance, or CR1 when `small_sample` is set.
pub fn cluster_variance(fit: &FitResult, by: ClusterBy<'_>, small_sample: bool) -> Result<VarianceReport> {
    let (n, t) = fit.residuals.dim();
    let w = &fit.instrument;
    let u = &fit.residuals;
    let (s, g, method) = match by {
        ClusterBy::Time => (per_period_sum(w, u), t, VarianceMethod::ClusterTime),
        ClusterBy::Region(ids) => {
            let region_sums: Vec<f64> = (0..n)
                .map(|i| ksum((0..t).map(|tt| w[[i, tt]] * u[[i, tt]])))
                .collect();
            match ids {
                None => (ksum(region_sums.iter().map(|x| x * x)), n, VarianceMethod::ClusterRegion),
                Some(ids) => {
                    if ids.len() != n {
                        return Err(Error::Dimension(format!("{} cluster ids for {n} regions", ids.len())));
                    }
                    let mut uniq: Vec<usize> = ids.to_vec();
                    uniq.sort_unstable();
                    uniq.dedup();
                    let mut acc = vec![KahanSum::new(); uniq.len()];
                    for (i, id) in ids.iter().enumerate() {
                        let k = uniq.binary_search(id).expect("id present");
                        acc[k].add(region_sums[i]);
                    }
                    let s = ksum(acc.iter().map(|a| a.value() * a.value()));
                    (s, uniq.len(), VarianceMethod::ClusterRegion)
                }
            }
        }
    };
    if g < 2 {
        return Err(Error::DegenerateVariance(format!(
            "cluster-robust variance needs at least two clusters, got {g}"
        )));
    }
    let (s, dof) = if small_sample {
        (s * g as f64 / (g as f64 - 1.0), "CR1: G/(G-1)")
    } else {
        (s, "none (CR0)")
    };
    report(fit, method, s, dof, Some(g))
}

/// Dispatches to the estimator for `method` using the default options: CR0
/// clustering on panel cluster ids when present and untransformed exposure
/// for the price-exposure form.
pub fn variance(fit: &FitResult, method: VarianceMethod, cluster_ids: Option<&[usize]>) -> Result<VarianceReport> {
    match method {
        VarianceMethod::Ehw => ehw_variance(fit),
        VarianceMethod::ClusterRegion => cluster_variance(fit, ClusterBy::Region(cluster_ids), false),
        VarianceMethod::ClusterTime => cluster_variance(fit, ClusterBy::Time, false),
        VarianceMethod::PriceExposure => pe_variance(fit),
    }
}

/// Decomposition of the price-exposure variance under heterogeneous effects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterogeneityDiagnostic {
    pub beta_target: f64,
    /// `(1/NT) Σ_t E[p_qt² R_t²]`, the probability limit of the plug-in meat.
    pub d1: f64,
    /// `(1/NT) Σ_{t≠t'} m_t m_t'`.
    pub d2: f64,
    /// `(1/NT) Σ_t m_t²`.
    pub d3: f64,
    /// True meat `D1 − D3`.
    pub true_meat: f64,
    /// `m_t = E[p_qt R_t]`.
    pub period_means: Vec<f64>,
    /// Set when `D2` is negligible relative to `D1`.
    pub conservative: bool,
}

/// Exact moments of `R_t = Σ_i A_iq (Y_it − β* X_iqt)` for a finite
/// population, given analytic price moments.
///
/// Writing `R_t = c_t + Σ_s L_ts p_st`, the price-free part is `c_t` and the
/// loadings combine direct and cross-price output responses. Odd moments of
/// the mean-zero, symmetric price laws vanish.
pub fn heterogeneity_diagnostic(pop: &FinitePopulation, prices: &PriceSystem, beta_target: f64) -> Result<HeterogeneityDiagnostic> {
    pop.validate()?;
    let (var, cov) = prices.require_moments()?;
    let process = prices.process.as_ref().ok_or_else(|| {
        Error::DegenerateDesign("the price process is required for fourth moments".into())
    })?;
    let (n, s_n, t) = (pop.n_regions(), pop.n_sectors(), pop.n_periods());
    if prices.n_sectors != s_n || prices.n_periods() != t || prices.focal_sector != pop.focal_sector {
        return Err(Error::Dimension("population and prices do not conform".into()));
    }
    let q = pop.focal_sector;
    let b = |i: usize, s: usize| -> f64 {
        if s == q {
            pop.beta[[i, s]] - beta_target
        } else {
            pop.beta[[i, s]]
        }
    };
    // L_s: loading of R_t on p_s (time-invariant).
    let mut load = vec![KahanSum::new(); s_n];
    for i in 0..n {
        let a = pop.exposure[[i, q]];
        for s in 0..s_n {
            load[s].add(a * b(i, s) * pop.kappa[[i, s]] * pop.exposure[[i, s]]);
            if let Some(g) = &pop.gamma {
                for s2 in 0..s_n {
                    if s2 != s {
                        // X_is2 loads on p_s through γ_i s2 s
                        load[s].add(a * b(i, s2) * g[[i, s2, s]]);
                    }
                }
            }
        }
    }
    let load: Vec<f64> = load.iter().map(|k| k.value()).collect();
    let nt = (n * t) as f64;
    let mut m = Vec::with_capacity(t);
    let mut d1 = KahanSum::new();
    for tt in 0..t {
        let mt = ksum((0..s_n).map(|s| load[s] * cov[[s, tt]]));
        m.push(mt);
        let c = ksum((0..n).map(|i| {
            let a = pop.exposure[[i, q]];
            let mut v = pop.eta[[i, tt]];
            for s in 0..s_n {
                v += b(i, s) * (pop.alpha[[i, s]] + pop.epsilon[[i, s, tt]]);
            }
            a * v
        }));
        let m2 = var[[q, tt]];
        let mut e = KahanSum::new();
        e.add(c * c * m2);
        for s in 0..s_n {
            for s2 in 0..s_n {
                e.add(load[s] * load[s2] * process.focal_sq_cross_moment(s, s2));
            }
        }
        d1.add(e.value());
    }
    let d3 = ksum(m.iter().map(|x| x * x)) / nt;
    let total = ksum(m.iter().copied());
    // Σ_{t≠t'} m_t m_t' = (Σ m_t)² − Σ m_t²
    let d2 = (total * total - d3 * nt) / nt;
    let d1 = d1.value() / nt;
    Ok(HeterogeneityDiagnostic {
        beta_target,
        d1,
        d2,
        d3,
        true_meat: d1 - d3,
        period_means: m,
        conservative: d2.abs() <= 1e-10 * d1.abs().max(f64::MIN_POSITIVE),
    })
}
