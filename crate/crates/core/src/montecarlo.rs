//! Replication engine for coverage studies.
//!
//! The population is drawn once per scenario unless the scenario asks for a
//! fresh one per replication. Replication `r` redraws prices from stream
//! `(master_seed, r)`, refits and records the estimate and one standard
//! error per variance method. Replications run on rayon and are
//! collected in index order, so aggregates do not depend on the thread count.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{draw_population, draw_population_from, draw_prices_with, generate_panel, FinitePopulation, PopulationConfig, PriceProcessSpec};
use crate::error::{Error, Result};
use crate::estimands::{iv_estimand, iv_estimand_ge, twfe_estimand, EstimandDecomposition};
use crate::estimators::{fit, EstimatorKind, EstimatorSpec};
use crate::inference::{variance, VarianceMethod, Z_975};
use crate::numeric::KahanSum;
use crate::panel::{FixedEffects, PriceSystem};
use crate::rng::{stream, REDRAW_STREAM_BASE};

/// Largest tolerated share of excluded replications.
pub const MAX_EXCLUSION_RATE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub label: String,
    pub population: PopulationConfig,
    pub prices: PriceProcessSpec,
    pub estimator: EstimatorSpec,
    pub methods: Vec<VarianceMethod>,
    pub replications: usize,
    pub master_seed: u64,
    /// Draw a fresh population in every replication. Coverage is then
    /// judged against each replication's own estimand.
    pub redraw_population: bool,
}

impl Scenario {
    /// A scenario with the default design: two sectors with independent
    /// Uniform(−1, 1) prices, stacked 2SLS without fixed effects, and robust
    /// and price-exposure standard errors.
    pub fn default_design(n: usize, t: usize, replications: usize, master_seed: u64) -> Self {
        let population = PopulationConfig { n_regions: n, n_periods: t, ..Default::default() };
        let prices = PriceProcessSpec::independent(
            population.n_sectors,
            population.focal_sector,
            crate::dgp::Law::Uniform { lo: -1.0, hi: 1.0 },
        );
        Self {
            label: format!("N={n}, T={t}"),
            population,
            prices,
            estimator: EstimatorSpec::new(EstimatorKind::TwoSls, FixedEffects::None),
            methods: vec![VarianceMethod::Ehw, VarianceMethod::PriceExposure],
            replications,
            master_seed,
            redraw_population: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config(format!("scenario `{}`: replications must be at least 1", self.label)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config(format!("scenario `{}`: no variance methods", self.label)));
        }
        self.population.validate()?;
        self.prices.validate()?;
        if self.prices.n_sectors() != self.population.n_sectors || self.prices.focal_sector != self.population.focal_sector {
            return Err(Error::Config(format!(
                "scenario `{}`: price process and population disagree on sectors",
                self.label
            )));
        }
        Ok(())
    }
}

/// Per-method aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: VarianceMethod,
    /// Replications for which this standard error could be computed.
    pub available: usize,
    pub mean_se: Option<f64>,
    /// Share of 95% intervals covering the finite-population estimand.
    pub coverage: Option<f64>,
    /// Share of 95% intervals covering 1.
    pub coverage_vs_one: Option<f64>,
    /// `sqrt(c (1 − c) / R)`.
    pub mc_se_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub label: String,
    pub n: usize,
    pub t: usize,
    pub s: usize,
    pub replications: usize,
    pub used: usize,
    pub excluded: usize,
    pub estimand: f64,
    pub mean_estimate: f64,
    /// Mean of `β̂ − estimand`.
    pub mean_bias: f64,
    /// Mean of `β̂ − 1`.
    pub mean_bias_vs_one: f64,
    pub methods: Vec<MethodSummary>,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl ScenarioReport {
    pub fn method(&self, m: VarianceMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub master_seeds: Vec<u64>,
    pub rows: Vec<ScenarioReport>,
}

/// One replication's outcome; `None` estimate means excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub index: usize,
    /// Finite-population estimand this replication is judged against.
    pub estimand: f64,
    pub estimate: Option<f64>,
    pub std_errors: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_reason: Option<String>,
}

/// A price draw whose analytic moments feed the estimand; the draw itself is
/// not used.
fn moment_prices(sc: &Scenario) -> Result<PriceSystem> {
    draw_prices_with(&sc.prices, sc.population.n_periods, &mut stream(sc.master_seed, 0))
}

fn two_period_twfe(sc: &Scenario) -> bool {
    matches!(sc.estimator.kind, EstimatorKind::TwfeWithin | EstimatorKind::TwfeFirstDiff) && sc.population.n_periods == 2
}

fn estimand_for(sc: &Scenario, pop: &FinitePopulation, ps: &PriceSystem) -> Result<EstimandDecomposition> {
    if two_period_twfe(sc) {
        twfe_estimand(pop, ps)
    } else if pop.gamma.is_some() {
        iv_estimand_ge(pop, ps)
    } else {
        iv_estimand(pop, ps)
    }
}

fn estimand_notes(sc: &Scenario) -> Vec<String> {
    let mut notes = Vec::new();
    // region demeaning rescales numerator and denominator alike
    if !two_period_twfe(sc) && matches!(sc.estimator.fixed_effects, FixedEffects::Time | FixedEffects::TwoWay) {
        notes.push("estimand evaluated without fixed-effect adjustment".to_string());
    }
    if sc.redraw_population {
        notes.push("population redrawn in every replication; the estimand column is the mean finite-population estimand".into());
    }
    notes
}

fn replicate(sc: &Scenario, pop: &FinitePopulation, estimand: f64, r: usize) -> Result<Replication> {
    let mut rng = stream(sc.master_seed, r as u64);
    let ps = draw_prices_with(&sc.prices, sc.population.n_periods, &mut rng)?;
    let sim = generate_panel(pop, &ps)?;
    match fit(&sim.panel, &ps, &sc.estimator) {
        Ok(f) => {
            let std_errors = sc
                .methods
                .iter()
                .map(|m| variance(&f, *m, None).ok().map(|v| v.std_error))
                .collect();
            Ok(Replication {
                index: r,
                estimand,
                estimate: Some(f.coefficient),
                std_errors,
                excluded_reason: None,
            })
        }
        Err(e @ (Error::WeakFirstStage { .. } | Error::DegenerateDesign(_))) => Ok(Replication {
            index: r,
            estimand,
            estimate: None,
            std_errors: vec![None; sc.methods.len()],
            excluded_reason: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

/// Runs every replication of `sc` on the fixed population `pop` and returns
/// them in index order.
pub fn run_replications(sc: &Scenario, pop: &FinitePopulation) -> Result<Vec<Replication>> {
    let d = estimand_for(sc, pop, &moment_prices(sc)?)?;
    (0..sc.replications)
        .into_par_iter()
        .map(|r| replicate(sc, pop, d.total, r))
        .collect()
}

/// Replication `r` on its own population, drawn from stream
/// `REDRAW_STREAM_BASE + r`.
fn replicate_redrawn(sc: &Scenario, ps: &PriceSystem, r: usize) -> Result<Replication> {
    let pop = draw_population_from(&sc.population, &mut stream(sc.master_seed, REDRAW_STREAM_BASE + r as u64))?;
    match estimand_for(sc, &pop, ps) {
        Ok(d) => replicate(sc, &pop, d.total, r),
        Err(e @ Error::DegenerateDesign(_)) => Ok(Replication {
            index: r,
            estimand: f64::NAN,
            estimate: None,
            std_errors: vec![None; sc.methods.len()],
            excluded_reason: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

fn summarize(sc: &Scenario, reps: &[Replication], mut annotations: Vec<String>, wall: f64) -> Result<ScenarioReport> {
    let excluded = reps.iter().filter(|r| r.estimate.is_none()).count();
    if excluded as f64 > MAX_EXCLUSION_RATE * sc.replications as f64 {
        return Err(Error::ExcessiveExclusions { excluded, total: sc.replications });
    }
    if excluded > 0 {
        annotations.push(format!("{excluded} replication(s) excluded for a degenerate first stage"));
    }
    let used = sc.replications - excluded;
    let (mut est, mut bias, mut bias1, mut target) = (KahanSum::new(), KahanSum::new(), KahanSum::new(), KahanSum::new());
    for r in reps {
        if let Some(b) = r.estimate {
            est.add(b);
            bias.add(b - r.estimand);
            bias1.add(b - 1.0);
            target.add(r.estimand);
        }
    }
    let denom = used.max(1) as f64;
    let methods = sc
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let (mut se_sum, mut cov, mut cov1, mut avail) = (KahanSum::new(), 0usize, 0usize, 0usize);
            for r in reps {
                if let (Some(b), Some(se)) = (r.estimate, r.std_errors[k]) {
                    avail += 1;
                    se_sum.add(se);
                    if (b - r.estimand).abs() <= Z_975 * se {
                        cov += 1;
                    }
                    if (b - 1.0).abs() <= Z_975 * se {
                        cov1 += 1;
                    }
                }
            }
            if avail == 0 {
                return MethodSummary {
                    method: *m,
                    available: 0,
                    mean_se: None,
                    coverage: None,
                    coverage_vs_one: None,
                    mc_se_coverage: None,
                };
            }
            let a = avail as f64;
            let c = cov as f64 / a;
            MethodSummary {
                method: *m,
                available: avail,
                mean_se: Some(se_sum.value() / a),
                coverage: Some(c),
                coverage_vs_one: Some(cov1 as f64 / a),
                mc_se_coverage: Some((c * (1.0 - c) / a).sqrt()),
            }
        })
        .collect::<Vec<_>>();
    for m in &methods {
        if m.available < used {
            annotations.push(format!(
                "{} standard error unavailable in {} replication(s)",
                m.method.as_str(),
                used - m.available
            ));
        }
    }
    let (n, t) = (sc.population.n_regions, sc.population.n_periods);
    let degenerate = n == 1 || t == 1;
    if degenerate {
        annotations.push(format!(
            "degenerate design ({}); reported for completeness",
            if t == 1 { "a single period" } else { "a single region" }
        ));
    }
    Ok(ScenarioReport {
        label: sc.label.clone(),
        n,
        t,
        s: sc.population.n_sectors,
        replications: sc.replications,
        used,
        excluded,
        estimand: target.value() / denom,
        mean_estimate: est.value() / denom,
        mean_bias: bias.value() / denom,
        mean_bias_vs_one: bias1.value() / denom,
        methods,
        degenerate,
        annotations,
        wall_time_secs: wall,
    })
}

/// Runs one scenario; also returns the per-replication records.
pub fn run_scenario_detailed(sc: &Scenario) -> Result<(ScenarioReport, Vec<Replication>)> {
    sc.validate()?;
    let start = Instant::now();
    let ps = moment_prices(sc)?;
    let reps = if sc.redraw_population {
        (0..sc.replications)
            .into_par_iter()
            .map(|r| replicate_redrawn(sc, &ps, r))
            .collect::<Result<Vec<_>>>()?
    } else {
        let pop = draw_population(&sc.population, sc.master_seed)?;
        let d = estimand_for(sc, &pop, &ps)?;
        (0..sc.replications)
            .into_par_iter()
            .map(|r| replicate(sc, &pop, d.total, r))
            .collect::<Result<Vec<_>>>()?
    };
    let report = summarize(sc, &reps, estimand_notes(sc), start.elapsed().as_secs_f64())?;
    Ok((report, reps))
}

pub fn run_scenario(sc: &Scenario) -> Result<ScenarioReport> {
    run_scenario_detailed(sc).map(|(r, _)| r)
}

/// Runs the rows in order (each internally parallel).
pub fn run_table(rows: &[Scenario]) -> Result<MCReport> {
    run_table_detailed(rows).map(|(r, _)| r)
}

/// [`run_table`] plus the per-replication records of every row.
pub fn run_table_detailed(rows: &[Scenario]) -> Result<(MCReport, Vec<Vec<Replication>>)> {
    if rows.is_empty() {
        return Err(Error::Config("the scenario table has no rows".into()));
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut draws = Vec::with_capacity(rows.len());
    for sc in rows {
        let (r, d) = run_scenario_detailed(sc)?;
        out.push(r);
        draws.push(d);
    }
    let report = MCReport {
        master_seeds: rows.iter().map(|r| r.master_seed).collect(),
        rows: out,
    };
    Ok((report, draws))
}

fn opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:.prec$}"),
        None => "-".to_string(),
    }
}

/// Aligned text rendering with one column group per variance method.
pub fn format_table(report: &MCReport) -> String {
    let methods: Vec<VarianceMethod> = report
        .rows
        .first()
        .map(|r| r.methods.iter().map(|m| m.method).collect())
        .unwrap_or_default();
    let mut header = format!("{:<16} {:>6} {:>6} {:>9} {:>10} {:>10}", "scenario", "N", "T", "estimand", "mean bias", "bias vs 1");
    for m in &methods {
        let name = m.as_str();
        let _ = write!(
            header,
            " | {:>9} {:>8} {:>8}",
            format!("{name} se"),
            format!("{name} cov"),
            "cov vs 1"
        );
    }
    let mut out = String::new();
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.chars().count()));
    out.push('\n');
    for r in &report.rows {
        let _ = write!(
            out,
            "{:<16} {:>6} {:>6} {:>9.4} {:>10.4} {:>10.4}",
            r.label, r.n, r.t, r.estimand, r.mean_bias, r.mean_bias_vs_one
        );
        for m in &methods {
            let s = r.method(*m);
            let _ = write!(
                out,
                " | {:>9} {:>8} {:>8}",
                opt(s.and_then(|x| x.mean_se), 4),
                opt(s.and_then(|x| x.coverage), 3),
                opt(s.and_then(|x| x.coverage_vs_one), 3)
            );
        }
        if r.degenerate {
            out.push_str("  [degenerate]");
        }
        out.push('\n');
    }
    let notes: Vec<String> = report
        .rows
        .iter()
        .flat_map(|r| r.annotations.iter().map(move |a| format!("{}: {a}", r.label)))
        .collect();
    if !notes.is_empty() {
        out.push('\n');
        for n in notes {
            out.push_str(&n);
            out.push('\n');
        }
    }
    out
}

/// Per-replication records as CSV: index, estimate, one column per method.
pub fn replications_csv(methods: &[VarianceMethod], reps: &[Replication]) -> String {
    let mut out = String::from("replication,estimate");
    for m in methods {
        out.push_str(",se_");
        out.push_str(m.as_str());
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in reps {
        let _ = write!(out, "{},{}", r.index, cell(r.estimate));
        for se in &r.std_errors {
            out.push(',');
            out.push_str(&cell(*se));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Law;

    #[test]
    fn homogeneous_noise_free_design_is_exact() {
        let mut sc = Scenario::default_design(20, 5, 1, 3);
        sc.population.n_sectors = 1;
        sc.prices = PriceProcessSpec::independent(1, 0, Law::Uniform { lo: -1.0, hi: 1.0 });
        sc.population.beta = Law::Constant { value: 1.0 };
        sc.population.eta = Law::Constant { value: 0.0 };
        sc.population.epsilon = Law::Constant { value: 0.0 };
        let r = run_scenario(&sc).unwrap();
        assert!(r.mean_bias.abs() < 1e-12);
        assert!((r.estimand - 1.0).abs() < 1e-12);
        for m in &r.methods {
            assert_eq!(m.coverage, Some(1.0));
        }
    }

    #[test]
    fn coverage_is_a_probability_with_binomial_se() {
        let sc = Scenario::default_design(30, 10, 50, 1);
        let r = run_scenario(&sc).unwrap();
        for m in &r.methods {
            let c = m.coverage.unwrap();
            assert!((0.0..=1.0).contains(&c));
            assert!((m.mc_se_coverage.unwrap() - (c * (1.0 - c) / 50.0).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(matches!(run_table(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let sc = Scenario::default_design(40, 8, 64, 9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_table(std::slice::from_ref(&sc))).unwrap();
        let b = four.install(|| run_table(std::slice::from_ref(&sc))).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn single_period_rows_are_annotated() {
        let sc = Scenario::default_design(50, 1, 20, 2);
        let r = run_scenario(&sc).unwrap();
        assert!(r.degenerate);
        assert!(r.annotations.iter().any(|a| a.contains("degenerate")));
        let t = format_table(&MCReport { master_seeds: vec![2], rows: vec![r] });
        assert!(t.contains("[degenerate]"));
    }

    #[test]
    fn excessive_exclusions_fail_loudly() {
        // zero exposure makes every first stage degenerate
        let mut sc = Scenario::default_design(5, 3, 4, 2);
        sc.population.exposure = Law::Constant { value: 0.0 };
        sc.population.monotone = true;
        let err = run_scenario(&sc).unwrap_err();
        assert!(matches!(err, Error::DegenerateDesign(_) | Error::ExcessiveExclusions { .. }));
    }

    #[test]
    fn csv_has_one_line_per_replication() {
        let sc = Scenario::default_design(10, 4, 7, 5);
        let (_, reps) = run_scenario_detailed(&sc).unwrap();
        let csv = replications_csv(&sc.methods, &reps);
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.starts_with("replication,estimate,se_ehw,se_pe"));
    }

    #[test]
    fn redrawn_populations_carry_their_own_estimands() {
        let mut sc = Scenario::default_design(8, 20, 40, 4);
        sc.redraw_population = true;
        let (r, reps) = run_scenario_detailed(&sc).unwrap();
        let first = reps[0].estimand;
        assert!(reps.iter().any(|x| x.estimand != first));
        let mean = reps.iter().map(|x| x.estimand).sum::<f64>() / 40.0;
        assert!((r.estimand - mean).abs() < 1e-12);
        assert!(r.annotations.iter().any(|a| a.contains("redrawn")));

        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_scenario_detailed(&sc)).unwrap();
        let b = four.install(|| run_scenario_detailed(&sc)).unwrap();
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn redrawn_homogeneous_design_stays_exact() {
        let mut sc = Scenario::default_design(12, 4, 10, 8);
        sc.redraw_population = true;
        sc.population.n_sectors = 1;
        sc.prices = PriceProcessSpec::independent(1, 0, Law::Uniform { lo: -1.0, hi: 1.0 });
        sc.population.beta = Law::Constant { value: 1.5 };
        sc.population.eta = Law::Constant { value: 0.0 };
        sc.population.epsilon = Law::Constant { value: 0.0 };
        let r = run_scenario(&sc).unwrap();
        assert!((r.estimand - 1.5).abs() < 1e-12);
        assert!(r.mean_bias.abs() < 1e-12);
    }
}
