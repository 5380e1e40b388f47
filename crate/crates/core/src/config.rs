//! TOML schemas for scenario tables, simulated populations and the labor
//! model. Every table rejects unknown keys, so a typo fails with the key's
//! name instead of being ignored.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dgp::{Law, PopulationConfig, PriceProcessSpec};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec};
use crate::inference::VarianceMethod;
use crate::labor_model::{LaborModelParams, DEFAULT_INTERNAL_SIGMA, DEFAULT_INTERNAL_THETA};
use crate::montecarlo::Scenario;
use crate::panel::FixedEffects;

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {}", e.to_string().trim_end())))
}

fn uniform_unit() -> Law {
    Law::Uniform { lo: -1.0, hi: 1.0 }
}

/// Price process section: one marginal law for every sector (or a list, one
/// per sector) and optional loadings on the focal price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    #[serde(default = "uniform_unit")]
    pub law: Law,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Vec<Law>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

impl Default for PriceSection {
    fn default() -> Self {
        Self { law: uniform_unit(), marginals: None, rho: None }
    }
}

impl PriceSection {
    pub fn to_spec(&self, n_sectors: usize, focal_sector: usize) -> Result<PriceProcessSpec> {
        let marginals = match &self.marginals {
            Some(m) if m.len() != n_sectors => {
                return Err(Error::Config(format!(
                    "prices.marginals has {} entries for {n_sectors} sectors",
                    m.len()
                )))
            }
            Some(m) => m.clone(),
            None => vec![self.law; n_sectors],
        };
        let mut spec = PriceProcessSpec::independent(n_sectors, focal_sector, self.law);
        spec.marginals = marginals;
        if let Some(rho) = &self.rho {
            spec.dependence = crate::dgp::Dependence::FocalLoading { rho: rho.clone() };
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn default_methods() -> Vec<String> {
    vec!["ehw".into(), "pe".into()]
}

fn default_replications() -> usize {
    1000
}

/// A Monte Carlo table: shared settings plus one entry per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_kind")]
    pub estimator: EstimatorKind,
    #[serde(default = "no_fe")]
    pub fixed_effects: FixedEffects,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub prices: PriceSection,
    /// Draw a fresh population in every replication.
    #[serde(default)]
    pub redraw_population: bool,
    #[serde(default)]
    pub rows: Vec<RowConfig>,
}

fn default_kind() -> EstimatorKind {
    EstimatorKind::TwoSls
}

fn no_fe() -> FixedEffects {
    FixedEffects::None
}

/// One table row; unset fields inherit the table-level values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub fixed_effects: Option<FixedEffects>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub redraw_population: Option<bool>,
}

pub fn parse_methods(names: &[String]) -> Result<Vec<VarianceMethod>> {
    names.iter().map(|m| m.trim().parse()).collect()
}

impl TableConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        parse_toml(text, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    /// Expands the rows into scenarios. `seed_override` replaces every
    /// master seed.
    pub fn scenarios(&self, seed_override: Option<u64>) -> Result<Vec<Scenario>> {
        let methods = parse_methods(&self.methods)?;
        self.rows
            .iter()
            .map(|row| {
                let mut population = self.population.clone();
                population.n_regions = row.n;
                population.n_periods = row.t;
                if let Some(s) = row.s {
                    population.n_sectors = s;
                }
                let prices = self.prices.to_spec(population.n_sectors, population.focal_sector)?;
                let fe = row.fixed_effects.unwrap_or(self.fixed_effects);
                let sc = Scenario {
                    label: row.label.clone().unwrap_or_else(|| format!("N={}, T={}", row.n, row.t)),
                    population,
                    prices,
                    estimator: EstimatorSpec::new(self.estimator, fe),
                    methods: methods.clone(),
                    replications: row.replications.unwrap_or(self.replications),
                    master_seed: seed_override.or(row.master_seed).unwrap_or(self.master_seed),
                    redraw_population: row.redraw_population.unwrap_or(self.redraw_population),
                };
                sc.validate()?;
                Ok(sc)
            })
            .collect()
    }
}

/// A seeded population and price process, used by `oracle` and `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub prices: PriceSection,
}

impl PopulationFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let f: Self = parse_toml(text, source)?;
        f.population.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn price_spec(&self) -> Result<PriceProcessSpec> {
        self.prices.to_spec(self.population.n_sectors, self.population.focal_sector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorEntry {
    #[serde(default)]
    pub label: Option<String>,
    pub sigma: f64,
    pub theta: f64,
    #[serde(default = "one")]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalEntry {
    pub sigma: f64,
    pub theta: f64,
}

impl Default for InternalEntry {
    fn default() -> Self {
        Self { sigma: DEFAULT_INTERNAL_SIGMA, theta: DEFAULT_INTERNAL_THETA }
    }
}

/// One region. `shares` lists the internal sector first, then each tradable.
/// Capacity inputs default to 1 per tradable sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionEntry {
    #[serde(default)]
    pub label: Option<String>,
    pub phi: f64,
    pub shares: Vec<f64>,
    #[serde(default)]
    pub productivity: Option<Vec<f64>>,
    #[serde(default)]
    pub capital: Option<Vec<f64>>,
    #[serde(default)]
    pub baseline_labor: Option<Vec<f64>>,
    #[serde(default)]
    pub endowment: Option<Vec<f64>>,
}

/// A grid of `phi` values for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub region: usize,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl SweepEntry {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.steps < 2 || !(self.lo < self.hi) {
            return Err(Error::Config("sweep needs lo < hi and at least 2 steps".into()));
        }
        let h = (self.hi - self.lo) / (self.steps - 1) as f64;
        Ok((0..self.steps).map(|k| self.lo + h * k as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub focal_sector: usize,
    #[serde(default)]
    pub internal: InternalEntry,
    pub sectors: Vec<SectorEntry>,
    pub regions: Vec<RegionEntry>,
    #[serde(default)]
    pub sweep: Option<SweepEntry>,
}

impl ModelFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        parse_toml(text, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn region_labels(&self) -> Vec<String> {
        self.regions
            .iter()
            .enumerate()
            .map(|(i, r)| r.label.clone().unwrap_or_else(|| format!("r{i}")))
            .collect()
    }

    pub fn params(&self) -> Result<LaborModelParams> {
        let s = self.sectors.len();
        let n = self.regions.len();
        let matrix = |name: &str, get: &dyn Fn(&RegionEntry) -> Option<&Vec<f64>>, width: usize| -> Result<Array2<f64>> {
            let mut m = Array2::ones((n, width));
            for (i, r) in self.regions.iter().enumerate() {
                if let Some(v) = get(r) {
                    if v.len() != width {
                        return Err(Error::Config(format!(
                            "regions[{i}].{name} has {} entries, expected {width}",
                            v.len()
                        )));
                    }
                    for (k, x) in v.iter().enumerate() {
                        m[[i, k]] = *x;
                    }
                }
            }
            Ok(m)
        };
        let params = LaborModelParams {
            sigma: self.sectors.iter().map(|x| x.sigma).collect(),
            theta: self.sectors.iter().map(|x| x.theta).collect(),
            sigma_internal: self.internal.sigma,
            theta_internal: self.internal.theta,
            rho: self.sectors.iter().map(|x| x.rho).collect(),
            phi: self.regions.iter().map(|r| r.phi).collect(),
            shares: matrix("shares", &|r| Some(&r.shares), s + 1)?,
            productivity: matrix("productivity", &|r| r.productivity.as_ref(), s)?,
            capital: matrix("capital", &|r| r.capital.as_ref(), s)?,
            baseline_labor: matrix("baseline_labor", &|r| r.baseline_labor.as_ref(), s)?,
            endowment: matrix("endowment", &|r| r.endowment.as_ref(), s)?,
        };
        params.validate()?;
        if self.focal_sector >= s {
            return Err(Error::Config(format!("focal_sector {} out of range for {s} sectors", self.focal_sector)));
        }
        Ok(params)
    }
}
