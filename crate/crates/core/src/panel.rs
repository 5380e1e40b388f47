//! Region × period panels, sector price systems, the price-exposure
//! instrument, and the fixed-effect transformations applied before fitting.
//!
//! All matrices are stored row-major by region with time as the column index,
//! so the per-period sums used by the variance estimators walk columns.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dgp::PriceProcessSpec;
use crate::error::{Error, Result};
use crate::numeric::ksum;

/// Balanced N × T panel of outcomes, optional treatment, and a time-invariant
/// exposure per region.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub n_regions: usize,
    pub n_periods: usize,
    /// `Y_it`.
    pub outcome: Array2<f64>,
    /// `X_iqt`, output of the focal sector.
    pub treatment: Option<Array2<f64>>,
    /// `A_iq`.
    pub exposure: Array1<f64>,
    pub cluster_id: Option<Vec<usize>>,
    pub region_labels: Vec<String>,
    pub period_labels: Vec<String>,
}

impl Panel {
    /// Builds a panel with generated labels (`r0, r1, ...` and `0, 1, ...`).
    pub fn new(
        outcome: Array2<f64>,
        treatment: Option<Array2<f64>>,
        exposure: Array1<f64>,
    ) -> Result<Self> {
        let (n, t) = outcome.dim();
        let region_labels = (0..n).map(|i| format!("r{i}")).collect();
        let period_labels = (0..t).map(|p| p.to_string()).collect();
        Self::with_labels(outcome, treatment, exposure, None, region_labels, period_labels)
    }

    pub fn with_labels(
        outcome: Array2<f64>,
        treatment: Option<Array2<f64>>,
        exposure: Array1<f64>,
        cluster_id: Option<Vec<usize>>,
        region_labels: Vec<String>,
        period_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = outcome.dim();
        if n == 0 || t == 0 {
            return Err(Error::Dimension("panel needs at least one region and one period".into()));
        }
        if let Some(x) = &treatment {
            if x.dim() != (n, t) {
                return Err(Error::Dimension(format!(
                    "treatment is {:?} but outcome is {:?}",
                    x.dim(),
                    (n, t)
                )));
            }
        }
        if exposure.len() != n {
            return Err(Error::Dimension(format!(
                "exposure has {} entries for {n} regions",
                exposure.len()
            )));
        }
        if exposure.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("exposure contains missing or non-finite entries".into()));
        }
        if let Some(c) = &cluster_id {
            if c.len() != n {
                return Err(Error::Dimension(format!("cluster_id has {} entries for {n} regions", c.len())));
            }
        }
        if region_labels.len() != n || period_labels.len() != t {
            return Err(Error::Dimension("label vectors do not match the panel shape".into()));
        }
        Ok(Self {
            n_regions: n,
            n_periods: t,
            outcome,
            treatment,
            exposure,
            cluster_id,
            region_labels,
            period_labels,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_regions * self.n_periods
    }

    /// Regions with nonpositive exposure. The monotonicity discussion presumes
    /// `A_iq > 0`, so these are surfaced as warnings rather than rejected.
    pub fn nonpositive_exposure_regions(&self) -> Vec<usize> {
        self.exposure
            .iter()
            .enumerate()
            .filter(|(_, a)| **a <= 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sector price paths (centered log prices) plus, when known, their
/// conditional variances and covariances with the focal sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSystem {
    pub n_sectors: usize,
    pub focal_sector: usize,
    /// S × T matrix of `p_st`.
    pub log_prices: Array2<f64>,
    /// S × T matrix of `Var(p_st | F0)`.
    pub variances: Option<Array2<f64>>,
    /// S × T matrix of `Cov(p_qt, p_st | F0)`.
    pub covariances_with_focal: Option<Array2<f64>>,
    pub sector_labels: Vec<String>,
    /// The generating process, when the prices were simulated. Needed for
    /// moments beyond the second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<PriceProcessSpec>,
}

impl PriceSystem {
    /// Price system from observed log prices, without analytic moments.
    pub fn observed(log_prices: Array2<f64>, focal_sector: usize, sector_labels: Vec<String>) -> Result<Self> {
        let ps = Self {
            n_sectors: log_prices.nrows(),
            focal_sector,
            log_prices,
            variances: None,
            covariances_with_focal: None,
            sector_labels,
            process: None,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, t) = self.log_prices.dim();
        if s == 0 || t == 0 {
            return Err(Error::Dimension("price system needs at least one sector and one period".into()));
        }
        if s != self.n_sectors {
            return Err(Error::Dimension(format!("n_sectors = {} but log_prices has {s} rows", self.n_sectors)));
        }
        if self.focal_sector >= s {
            return Err(Error::Domain(format!("focal sector {} out of range for {s} sectors", self.focal_sector)));
        }
        if self.sector_labels.len() != s {
            return Err(Error::Dimension("sector label count does not match n_sectors".into()));
        }
        if let Some(v) = &self.variances {
            if v.dim() != (s, t) {
                return Err(Error::Dimension("variances must be S × T".into()));
            }
            if v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::Domain("price variances must be finite and nonnegative".into()));
            }
        }
        if let Some(c) = &self.covariances_with_focal {
            if c.dim() != (s, t) {
                return Err(Error::Dimension("covariances_with_focal must be S × T".into()));
            }
            if let Some(v) = &self.variances {
                let q = self.focal_sector;
                for p in 0..t {
                    let (a, b) = (c[[q, p]], v[[q, p]]);
                    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                        return Err(Error::Domain(
                            "covariance of the focal price with itself must equal its variance".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_periods(&self) -> usize {
        self.log_prices.ncols()
    }

    /// Focal price series `p_qt`.
    pub fn focal_prices(&self) -> ndarray::ArrayView1<'_, f64> {
        self.log_prices.row(self.focal_sector)
    }

    pub fn sector_index(&self, label: &str) -> Option<usize> {
        self.sector_labels.iter().position(|l| l == label)
    }

    pub(crate) fn require_moments(&self) -> Result<(&Array2<f64>, &Array2<f64>)> {
        match (&self.variances, &self.covariances_with_focal) {
            (Some(v), Some(c)) => Ok((v, c)),
            _ => Err(Error::DegenerateDesign(
                "analytic price variances and covariances are required".into(),
            )),
        }
    }
}

/// `Z_iqt = A_iq · p_qt`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMatrix {
    pub values: Array2<f64>,
}

/// Which fixed effects are absorbed before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffects {
    None,
    Region,
    Time,
    #[default]
    TwoWay,
}

impl std::str::FromStr for FixedEffects {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "region" => Ok(Self::Region),
            "time" => Ok(Self::Time),
            "two_way" | "two-way" | "twoway" => Ok(Self::TwoWay),
            other => Err(Error::Config(format!("unknown fixed-effects option `{other}`"))),
        }
    }
}

/// Log-transforms raw prices and demeans each sector's series over time.
pub fn center_log_prices(raw_prices: &Array2<f64>) -> Result<Array2<f64>> {
    for ((s, t), &p) in raw_prices.indexed_iter() {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Domain(format!(
                "price for sector {s} in period {t} is {p}; prices must be strictly positive"
            )));
        }
    }
    let mut out = raw_prices.mapv(f64::ln);
    for mut row in out.rows_mut() {
        let mean = ksum(row.iter().copied()) / row.len() as f64;
        row.mapv_inplace(|x| x - mean);
    }
    Ok(out)
}

/// Entrywise product of the panel exposure and the focal price path.
pub fn build_instrument(panel: &Panel, prices: &PriceSystem) -> Result<InstrumentMatrix> {
    instrument_from(&panel.exposure, &prices.focal_prices().to_vec(), panel.n_periods)
}

pub(crate) fn instrument_from(exposure: &Array1<f64>, price: &[f64], n_periods: usize) -> Result<InstrumentMatrix> {
    if price.len() != n_periods {
        return Err(Error::Dimension(format!(
            "price series has {} periods but the panel has {n_periods}",
            price.len()
        )));
    }
    let n = exposure.len();
    let values = Array2::from_shape_fn((n, n_periods), |(i, t)| exposure[i] * price[t]);
    Ok(InstrumentMatrix { values })
}

fn row_means(m: &Array2<f64>) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|r| ksum(r.iter().copied()) / r.len() as f64)
        .collect()
}

fn col_means(m: &Array2<f64>) -> Vec<f64> {
    m.axis_iter(Axis(1))
        .map(|c| ksum(c.iter().copied()) / c.len() as f64)
        .collect()
}

/// Two-way within transformation: `m_it − m̄_i − m̄_t + m̄`.
pub fn within_transform(matrix: &Array2<f64>) -> Array2<f64> {
    let rm = row_means(matrix);
    let cm = col_means(matrix);
    let grand = ksum(rm.iter().copied()) / rm.len() as f64;
    Array2::from_shape_fn(matrix.dim(), |(i, t)| matrix[[i, t]] - rm[i] - cm[t] + grand)
}

/// Subtracts each region's time mean.
pub fn demean_regions(matrix: &Array2<f64>) -> Array2<f64> {
    let rm = row_means(matrix);
    Array2::from_shape_fn(matrix.dim(), |(i, t)| matrix[[i, t]] - rm[i])
}

/// Subtracts each period's cross-sectional mean.
pub fn demean_periods(matrix: &Array2<f64>) -> Array2<f64> {
    let cm = col_means(matrix);
    Array2::from_shape_fn(matrix.dim(), |(i, t)| matrix[[i, t]] - cm[t])
}

pub fn apply_fixed_effects(matrix: &Array2<f64>, fe: FixedEffects) -> Array2<f64> {
    match fe {
        FixedEffects::None => matrix.clone(),
        FixedEffects::Region => demean_regions(matrix),
        FixedEffects::Time => demean_periods(matrix),
        FixedEffects::TwoWay => within_transform(matrix),
    }
}

/// Column `t` of the result is column `t + 1` minus column `t` of the input.
pub fn first_difference(matrix: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, t) = matrix.dim();
    if t < 2 {
        return Err(Error::InsufficientPeriods { needed: 2, got: t });
    }
    Ok(Array2::from_shape_fn((n, t - 1), |(i, p)| matrix[[i, p + 1]] - matrix[[i, p]]))
}
