//! Closed-form finite-population estimands and their causal decompositions.
//!
//! Each estimand is a ratio of conditional expectations given the population,
//! evaluated with the analytic price moments stored in [`PriceSystem`]. The
//! decomposition splits it into a weighted average of focal effects, a
//! cross-price contamination term and a general-equilibrium term.

use ndarray::{Array2, Array3};
use serde::{Serialize, Serializer};

use crate::dgp::FinitePopulation;
use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::panel::PriceSystem;

/// Weight matrices are serialized only when `N · T` is at most this.
pub const WEIGHT_SERIALIZATION_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    TwoSls,
    TwoSlsGe,
    TwfeTwoPeriod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimandDecomposition {
    pub kind: EstimandKind,
    pub main_term: f64,
    pub contamination_price: f64,
    pub contamination_ge: f64,
    pub total: f64,
    /// Denominator of the main and cross weights.
    pub denominator: f64,
    /// `π_iqt`, N × T (N × 1 for the two-period TWFE estimand).
    pub weights_main: Array2<f64>,
    /// `π_isqt` for `s ≠ q` in ascending sector order, N × (S−1) × T.
    pub weights_cross: Array3<f64>,
    /// Focal-exposure-weighted GE loadings `A_iq γ_iss' Cov(p_q, p_s')`,
    /// summed over `s'`, N × S × T. Absent when there is no GE channel.
    pub weights_ge: Option<Array3<f64>>,
    pub convex: bool,
    pub weakly_causal: bool,
    pub notes: Vec<String>,
}

impl Serialize for EstimandDecomposition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            kind: EstimandKind,
            main_term: f64,
            contamination_price: f64,
            contamination_ge: f64,
            total: f64,
            denominator: f64,
            convex: bool,
            weakly_causal: bool,
            #[serde(skip_serializing_if = "<[String]>::is_empty")]
            notes: &'a [String],
            weights_included: bool,
            #[serde(skip_serializing_if = "Option::is_none")]
            weights_main: Option<Vec<Vec<f64>>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            weights_cross: Option<Vec<Vec<Vec<f64>>>>,
        }
        let (n, t) = self.weights_main.dim();
        let include = n * t <= WEIGHT_SERIALIZATION_LIMIT;
        let to_rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        let cross = |m: &Array3<f64>| {
            m.outer_iter()
                .map(|slab| to_rows(&slab.to_owned()))
                .collect::<Vec<_>>()
        };
        Out {
            kind: self.kind,
            main_term: self.main_term,
            contamination_price: self.contamination_price,
            contamination_ge: self.contamination_ge,
            total: self.total,
            denominator: self.denominator,
            convex: self.convex,
            weakly_causal: self.weakly_causal,
            notes: &self.notes,
            weights_included: include,
            weights_main: include.then(|| to_rows(&self.weights_main)),
            weights_cross: include.then(|| cross(&self.weights_cross)),
        }
        .serialize(serializer)
    }
}

fn check_conformable(pop: &FinitePopulation, prices: &PriceSystem) -> Result<(Array2<f64>, Array2<f64>)> {
    pop.validate()?;
    prices.validate()?;
    if prices.n_sectors != pop.n_sectors() {
        return Err(Error::Dimension(format!(
            "population has {} sectors, prices have {}",
            pop.n_sectors(),
            prices.n_sectors
        )));
    }
    if prices.n_periods() != pop.n_periods() {
        return Err(Error::Dimension(format!(
            "population has {} periods, prices have {}",
            pop.n_periods(),
            prices.n_periods()
        )));
    }
    if prices.focal_sector != pop.focal_sector {
        return Err(Error::Dimension("population and prices disagree on the focal sector".into()));
    }
    let (v, c) = prices.require_moments()?;
    Ok((v.clone(), c.clone()))
}

/// Per-period focal variance and focal covariances that drive the weights.
struct Moments {
    /// S × T' matrix of `Cov(p_q, p_s)` (variance on the focal row).
    cov: Array2<f64>,
}

fn others(q: usize, s: usize) -> impl Iterator<Item = usize> {
    (0..s).filter(move |k| *k != q)
}

/// Shared computation for the 2SLS estimands and the two-period TWFE
/// estimand. `kappa_denominator` selects `Σ κ A² V` (2SLS) or `Σ A² V` (TWFE).
fn decompose(
    kind: EstimandKind,
    pop: &FinitePopulation,
    m: &Moments,
    with_gamma: bool,
    kappa_denominator: bool,
) -> Result<EstimandDecomposition> {
    let (n, s_n) = (pop.n_regions(), pop.n_sectors());
    let t = m.cov.ncols();
    let q = pop.focal_sector;
    let gamma = if with_gamma { pop.gamma.as_ref() } else { None };

    let mut weights_main = Array2::zeros((n, t));
    let mut weights_cross = Array3::zeros((n, s_n - 1, t));
    let mut weights_ge = gamma.map(|_| Array3::zeros((n, s_n, t)));
    let (mut p_sum, mut m_sum, mut c_sum, mut ge_num, mut ge_den, mut a2v) = (
        KahanSum::new(),
        KahanSum::new(),
        KahanSum::new(),
        KahanSum::new(),
        KahanSum::new(),
        KahanSum::new(),
    );
    let mut ge_nonneg = true;
    for i in 0..n {
        let aq = pop.exposure[[i, q]];
        for tt in 0..t {
            let vq = m.cov[[q, tt]];
            let w = pop.kappa[[i, q]] * aq * aq * vq;
            weights_main[[i, tt]] = w;
            p_sum.add(w);
            a2v.add(aq * aq * vq);
            m_sum.add(w * pop.beta[[i, q]]);
            for (j, s) in others(q, s_n).enumerate() {
                let wc = pop.kappa[[i, s]] * pop.exposure[[i, s]] * aq * m.cov[[s, tt]];
                weights_cross[[i, j, tt]] = wc;
                c_sum.add(wc * pop.beta[[i, s]]);
            }
            if let (Some(g), Some(wg)) = (gamma, weights_ge.as_mut()) {
                for s in 0..s_n {
                    let mut acc = 0.0;
                    for s2 in others(s, s_n) {
                        let term = aq * g[[i, s, s2]] * m.cov[[s2, tt]];
                        if term < 0.0 {
                            ge_nonneg = false;
                        }
                        acc += term;
                    }
                    wg[[i, s, tt]] = acc;
                    ge_num.add(acc * pop.beta[[i, s]]);
                    if s == q {
                        ge_den.add(acc);
                    }
                }
            }
        }
    }
    let p = if kappa_denominator { p_sum.value() } else { a2v.value() };
    if !(p > 0.0) {
        return Err(Error::DegenerateDesign(format!(
            "estimand denominator is {p}; the focal first stage has no positive weight"
        )));
    }
    let main = m_sum.value() / p;
    let cross = c_sum.value() / p;
    // TWFE keeps its denominator fixed; 2SLS adds the GE first-stage response.
    let g = if kappa_denominator { ge_den.value() } else { 0.0 };
    if p + g <= 0.0 {
        return Err(Error::DegenerateDesign("GE-adjusted denominator is nonpositive".into()));
    }
    let ge = (ge_num.value() - (main + cross) * g) / (p + g);
    let total = main + cross + ge;
    let convex = weights_main.iter().all(|w| *w >= 0.0);
    let weakly_causal = convex && weights_cross.iter().all(|w| *w >= 0.0) && ge_nonneg;
    let mut notes = Vec::new();
    let mut convex_flag = convex;
    if !kappa_denominator {
        let ratio = p_sum.value() / a2v.value();
        if (ratio - 1.0).abs() > 1e-12 {
            convex_flag = false;
            notes.push(format!(
                "A²-weighted average of the focal first stage is {ratio:.6}, not 1; the main term is not a self-normalized average"
            ));
        }
    }
    Ok(EstimandDecomposition {
        kind,
        main_term: main,
        contamination_price: cross,
        contamination_ge: ge,
        total,
        denominator: p,
        weights_main,
        weights_cross,
        weights_ge,
        convex: convex_flag,
        weakly_causal,
        notes,
    })
}

/// Stacked 2SLS estimand without a general-equilibrium channel. Any `γ`
/// stored in the population is ignored.
pub fn iv_estimand(pop: &FinitePopulation, prices: &PriceSystem) -> Result<EstimandDecomposition> {
    let (_, cov) = check_conformable(pop, prices)?;
    decompose(EstimandKind::TwoSls, pop, &Moments { cov }, false, true)
}

/// Stacked 2SLS estimand including cross-price output responses `γ`.
pub fn iv_estimand_ge(pop: &FinitePopulation, prices: &PriceSystem) -> Result<EstimandDecomposition> {
    let (_, cov) = check_conformable(pop, prices)?;
    if pop.gamma.is_none() {
        return Err(Error::Config("the population has no gamma loadings".into()));
    }
    decompose(EstimandKind::TwoSlsGe, pop, &Moments { cov }, true, true)
}

/// The inputs the two-period TWFE estimand actually depends on: effects,
/// first-stage slopes, exposures and the moments of the price changes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaFiltration {
    pub focal_sector: usize,
    pub beta: Array2<f64>,
    pub kappa: Array2<f64>,
    pub exposure: Array2<f64>,
    pub gamma: Option<Array3<f64>>,
    /// `Cov(Δp_q, Δp_s)` per sector; the focal entry is `Var(Δp_q)`.
    pub cov_delta: Vec<f64>,
}

/// Two-period TWFE estimand from the full population. Prices must be
/// independent over time, so `Cov(Δp_q, Δp_s)` is the sum of the two
/// per-period covariances.
pub fn twfe_estimand(pop: &FinitePopulation, prices: &PriceSystem) -> Result<EstimandDecomposition> {
    let (_, cov) = check_conformable(pop, prices)?;
    match pop.n_periods() {
        2 => {}
        t if t < 2 => return Err(Error::InsufficientPeriods { needed: 2, got: t }),
        _ => return Err(Error::Domain("the TWFE estimand is implemented for exactly two periods".into())),
    }
    let s_n = pop.n_sectors();
    let cov_delta = Array2::from_shape_fn((s_n, 1), |(s, _)| cov[[s, 0]] + cov[[s, 1]]);
    if cov_delta[[pop.focal_sector, 0]] <= 0.0 {
        return Err(Error::DegenerateVariance("focal price change has zero variance".into()));
    }
    decompose(EstimandKind::TwfeTwoPeriod, pop, &Moments { cov: cov_delta }, pop.gamma.is_some(), false)
}

/// Two-period TWFE estimand from the Δ-filtration alone.
pub fn twfe_from_delta(delta: &DeltaFiltration) -> Result<EstimandDecomposition> {
    let (n, s_n) = delta.beta.dim();
    if delta.kappa.dim() != (n, s_n) || delta.exposure.dim() != (n, s_n) || delta.cov_delta.len() != s_n {
        return Err(Error::Dimension("Δ-filtration arrays do not conform".into()));
    }
    if delta.cov_delta[delta.focal_sector] <= 0.0 {
        return Err(Error::DegenerateVariance("focal price change has zero variance".into()));
    }
    // Reuse the population form; untreated outcomes, baselines and shocks do
    // not enter, so they are set to zero.
    let pop = FinitePopulation {
        focal_sector: delta.focal_sector,
        eta: Array2::zeros((n, 2)),
        beta: delta.beta.clone(),
        alpha: Array2::zeros((n, s_n)),
        kappa: delta.kappa.clone(),
        exposure: delta.exposure.clone(),
        epsilon: Array3::zeros((n, s_n, 2)),
        gamma: delta.gamma.clone(),
        monotone_design: false,
    };
    let cov = Array2::from_shape_fn((s_n, 1), |(s, _)| delta.cov_delta[s]);
    decompose(EstimandKind::TwfeTwoPeriod, &pop, &Moments { cov }, pop.gamma.is_some(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightAudit {
    pub min_weight: f64,
    pub n_weights: usize,
    pub n_negative: usize,
    /// `Σ |negative weights| / Σ |weights|` over main and cross weights.
    pub negative_mass: f64,
    /// Regions with at least one negative main weight.
    pub flagged_regions: Vec<usize>,
    pub convex: bool,
    pub weakly_causal: bool,
}

pub fn weight_audit(d: &EstimandDecomposition) -> WeightAudit {
    let all = d.weights_main.iter().chain(d.weights_cross.iter());
    let (mut neg, mut tot) = (KahanSum::new(), KahanSum::new());
    let mut n_negative = 0;
    let mut min_weight = f64::INFINITY;
    let mut n_weights = 0;
    for &w in all {
        n_weights += 1;
        min_weight = min_weight.min(w);
        tot.add(w.abs());
        if w < 0.0 {
            n_negative += 1;
            neg.add(-w);
        }
    }
    let flagged_regions = d
        .weights_main
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|w| *w < 0.0))
        .map(|(i, _)| i)
        .collect();
    WeightAudit {
        min_weight,
        n_weights,
        n_negative,
        negative_mass: if tot.value() > 0.0 { neg.value() / tot.value() } else { 0.0 },
        flagged_regions,
        convex: d.convex,
        weakly_causal: d.weakly_causal,
    }
}
