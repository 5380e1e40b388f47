//! Command-line interface: argument definitions and one function per
//! subcommand. Each command returns the text for stdout plus warnings for
//! stderr; the binary only prints and maps errors to exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{parse_methods, read_to_string, ModelFile, PopulationFile, SweepEntry, TableConfig};
use crate::dgp::{draw_population, draw_prices, generate_panel};
use crate::error::{Error, Result};
use crate::estimands::{iv_estimand, iv_estimand_ge, twfe_estimand, weight_audit, EstimandDecomposition, WeightAudit};
use crate::estimators::{fit, EstimatorKind, EstimatorSpec, ExtraExposure, FitResult, FitSummary};
use crate::inference::{heterogeneity_diagnostic, variance, HeterogeneityDiagnostic, VarianceMethod, VarianceReport};
use crate::ingest::{panel_to_csv, prices_to_csv, read_panel, read_prices, PriceScale};
use crate::labor_model::{compute_kappa, sweep_phi, FirstStageProfile, PhiSweep};
use crate::montecarlo::{format_table, replications_csv, run_table_detailed, MCReport};
use crate::panel::FixedEffects;
use crate::sensitivity::{breakdown_point, imbens_manski_interval, ImForm, SensitivityResult};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "PEXPOSURE_THREADS";

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Estimation and inference for regional price-exposure designs.
#[derive(Debug, Parser)]
#[command(name = "pexposure", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit first stage, reduced form, OLS and 2SLS on a panel and price file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo coverage table.
    Mc(McArgs),
    /// Closed-form estimand and contamination decomposition of a simulated population.
    Oracle(OracleArgs),
    /// Imbens-Manski interval and breakdown point for a contaminated estimand.
    Sensitivity(SensitivityArgs),
    /// First-stage profile and monotonicity check from the labor model.
    Model(ModelArgs),
    /// Simulate a panel and price file from a population config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Panel CSV with header region,period,outcome,treatment,exposure[,cluster].
    #[arg(long)]
    pub panel: PathBuf,
    /// Price CSV with header period,sector,price.
    #[arg(long)]
    pub prices: PathBuf,
    /// Label of the focal sector in the price file (default: first listed).
    #[arg(long)]
    pub focal: Option<String>,
    /// Treat the price column as centered log prices instead of levels.
    #[arg(long)]
    pub prices_are_log: bool,
    /// Fixed effects absorbed before fitting: none, region, time or two_way.
    #[arg(long, default_value = "two_way")]
    pub fixed_effects: String,
    /// Comma-separated variance methods: ehw, cluster_region, cluster_time, pe.
    #[arg(long, default_value = "cluster_region,pe")]
    pub methods: String,
    /// Price of another sector to add as an exposure-interacted control (repeatable).
    #[arg(long = "control")]
    pub controls: Vec<String>,
    /// Lower contamination bound; adds a sensitivity block when set with --b-upper.
    #[arg(long, allow_hyphen_values = true)]
    pub b_lower: Option<f64>,
    /// Upper contamination bound; adds a sensitivity block when set with --b-lower.
    #[arg(long, allow_hyphen_values = true)]
    pub b_upper: Option<f64>,
    /// Significance level of the sensitivity interval.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Null value for the breakdown point in the sensitivity block.
    #[arg(long, allow_hyphen_values = true)]
    pub null: Option<f64>,
    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Seed recorded in the report (estimation itself is deterministic).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Scenario table (TOML).
    pub config: PathBuf,
    /// Replace every row's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace every row's replication count.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Worker threads (default: $PEXPOSURE_THREADS, else all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output format for stdout.
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
    /// Write the JSON report to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write per-replication estimates and standard errors to this CSV file.
    #[arg(long)]
    pub draws_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Stacked 2SLS, with the general-equilibrium channel when the population has one.
    Auto,
    TwoSls,
    TwoSlsGe,
    /// Two-period TWFE (requires n_periods = 2).
    Twfe,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Population config (TOML).
    pub config: PathBuf,
    /// Replace the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which estimand to decompose.
    #[arg(long, value_enum, default_value = "auto")]
    pub kind: OracleKind,
    /// Add the heterogeneity decomposition of the price-exposure variance.
    #[arg(long)]
    pub diagnostic: bool,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Point estimate (required unless --report is given).
    #[arg(long, allow_hyphen_values = true)]
    pub beta_hat: Option<f64>,
    /// Standard error (required unless --report is given).
    #[arg(long)]
    pub se: Option<f64>,
    /// Read the 2SLS estimate and its price-exposure standard error from an estimate report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Lower bound on the contamination term.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub b_lower: f64,
    /// Upper bound on the contamination term.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub b_upper: f64,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Null value; adds the breakdown point.
    #[arg(long, allow_hyphen_values = true)]
    pub null: Option<f64>,
    /// Interval form: symmetric or bracketing.
    #[arg(long, default_value = "symmetric")]
    pub form: String,
    /// Accepted for uniformity with the other commands; this computation uses no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Labor model config (TOML).
    pub config: PathBuf,
    /// Region index for a phi sweep (overrides the config's sweep table).
    #[arg(long)]
    pub sweep_region: Option<usize>,
    /// Lower end of the phi grid.
    #[arg(long, default_value_t = 0.01)]
    pub phi_lo: f64,
    /// Upper end of the phi grid.
    #[arg(long, default_value_t = 5.0)]
    pub phi_hi: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Accepted for uniformity with the other commands; this computation uses no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Population config (TOML).
    pub config: PathBuf,
    /// Replace the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for panel.csv, prices.csv and population.json (default: panel to stdout).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Output {
    pub stdout: String,
    pub warnings: Vec<String>,
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Thread count from the flag, else the environment variable.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Mc(a) => cmd_mc(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Sensitivity(a) => cmd_sensitivity(&a),
        Command::Model(a) => cmd_model(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecEcho {
    pub fixed_effects: FixedEffects,
    pub focal_sector: String,
    pub methods: Vec<VarianceMethod>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<String>,
    pub n_regions: usize,
    pub n_periods: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateBlock {
    pub fit: FitSummary,
    pub variances: Vec<VarianceReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioCheck {
    pub reduced_form_over_first_stage: f64,
    pub two_sls: f64,
    pub abs_difference: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub metadata: Metadata,
    pub spec: SpecEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<EstimateBlock>,
    pub reduced_form: EstimateBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ols: Option<EstimateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_sls: Option<EstimateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_check: Option<RatioCheck>,
    /// 2SLS price-exposure SE over region-clustered SE, when both are requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe_over_cluster: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Tolerance for the reduced-form over first-stage identity.
pub const RATIO_TOL: f64 = 1e-8;

fn block(f: &FitResult, methods: &[VarianceMethod], clusters: Option<&[usize]>) -> Result<EstimateBlock> {
    let variances = methods.iter().map(|m| variance(f, *m, clusters)).collect::<Result<Vec<_>>>()?;
    Ok(EstimateBlock { fit: f.summary(), variances })
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<Output> {
    let fe: FixedEffects = a.fixed_effects.parse()?;
    let methods = parse_methods(&a.methods.split(',').map(str::to_string).collect::<Vec<_>>())?;
    if methods.is_empty() {
        return Err(Error::Config("--methods is empty".into()));
    }
    let pf = read_panel(&a.panel)?;
    let panel = pf.panel;
    let mut warnings = pf.warnings;
    let scale = if a.prices_are_log { PriceScale::Log } else { PriceScale::Level };
    let prices = read_prices(&a.prices, &panel.period_labels, a.focal.as_deref(), scale)?;

    let mut spec = EstimatorSpec::new(EstimatorKind::TwoSls, fe);
    for label in &a.controls {
        let s = prices
            .sector_index(label)
            .ok_or_else(|| Error::Config(format!("control sector `{label}` does not appear in the price file")))?;
        if s == prices.focal_sector {
            return Err(Error::Config(format!("control sector `{label}` is the focal sector")));
        }
        spec.extra_exposures.push(ExtraExposure {
            label: label.clone(),
            exposure: panel.exposure.clone(),
            price: prices.log_prices.row(s).to_vec(),
        });
    }
    let clusters = panel.cluster_id.as_deref();
    let has_x = panel.treatment.is_some();

    let rf = fit(&panel, &prices, &spec.with_kind(EstimatorKind::ReducedForm))?;
    let reduced_form = block(&rf, &methods, clusters)?;
    let (mut first_stage, mut ols, mut two_sls, mut ratio_check) = (None, None, None, None);
    if has_x {
        let fs = fit(&panel, &prices, &spec.with_kind(EstimatorKind::FirstStage))?;
        let iv = fit(&panel, &prices, &spec)?;
        let ol = fit(&panel, &prices, &spec.with_kind(EstimatorKind::Ols))?;
        let ratio = rf.coefficient / fs.coefficient;
        let diff = (ratio - iv.coefficient).abs();
        ratio_check = Some(RatioCheck {
            reduced_form_over_first_stage: ratio,
            two_sls: iv.coefficient,
            abs_difference: diff,
            consistent: diff <= RATIO_TOL * iv.coefficient.abs().max(1.0),
        });
        warnings.extend(iv.diagnostics.warnings.iter().cloned());
        first_stage = Some(block(&fs, &methods, clusters)?);
        ols = Some(block(&ol, &methods, clusters)?);
        two_sls = Some(block(&iv, &methods, clusters)?);
    } else {
        warnings.push("panel has no treatment column; only the reduced form is reported".into());
    }

    let headline = two_sls.as_ref().unwrap_or(&reduced_form);
    let se_of = |m: VarianceMethod| headline.variances.iter().find(|v| v.method == m).map(|v| v.std_error);
    let pe_over_cluster = match (se_of(VarianceMethod::PriceExposure), se_of(VarianceMethod::ClusterRegion)) {
        (Some(pe), Some(cl)) if cl > 0.0 => Some(pe / cl),
        _ => None,
    };
    let sensitivity = match (a.b_lower, a.b_upper) {
        (Some(lo), Some(hi)) => {
            let se = se_of(VarianceMethod::PriceExposure).unwrap_or(headline.variances[0].std_error);
            Some(sensitivity_block(headline.fit.coefficient, se, lo, hi, a.alpha, a.null, ImForm::Symmetric)?)
        }
        (None, None) => None,
        _ => return Err(Error::Config("--b-lower and --b-upper must be given together".into())),
    };

    let report = EstimateReport {
        metadata: Metadata {
            version: VERSION.into(),
            seed: a.seed,
            inputs: vec![
                InputFile { file: file_name(&a.panel), sha256: file_sha256(&a.panel)? },
                InputFile { file: file_name(&a.prices), sha256: file_sha256(&a.prices)? },
            ],
        },
        spec: SpecEcho {
            fixed_effects: fe,
            focal_sector: prices.sector_labels[prices.focal_sector].clone(),
            methods: methods.clone(),
            controls: a.controls.clone(),
            n_regions: panel.n_regions,
            n_periods: panel.n_periods,
        },
        first_stage,
        reduced_form,
        ols,
        two_sls,
        ratio_check,
        pe_over_cluster,
        sensitivity,
        warnings: warnings.clone(),
    };
    let json = to_json(&report)?;
    if let Some(path) = &a.output {
        write_file(path, &json)?;
    }
    let stdout = match a.format {
        OutputFormat::Json => json,
        OutputFormat::Table => format_estimate_table(&report),
    };
    Ok(Output { stdout, warnings })
}

/// Columns first stage, reduced form, OLS and 2SLS; one standard-error row
/// per method.
pub fn format_estimate_table(r: &EstimateReport) -> String {
    let cols: Vec<(&str, Option<&EstimateBlock>)> = vec![
        ("First stage", r.first_stage.as_ref()),
        ("Reduced form", Some(&r.reduced_form)),
        ("OLS", r.ols.as_ref()),
        ("2SLS", r.two_sls.as_ref()),
    ];
    let mut out = format!("{:<22}", "");
    for (name, _) in &cols {
        out.push_str(&format!("{name:>14}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(22 + 14 * cols.len()));
    out.push('\n');
    out.push_str(&format!("{:<22}", "coefficient"));
    for (_, b) in &cols {
        out.push_str(&match b {
            Some(b) => format!("{:>14.4}", b.fit.coefficient),
            None => format!("{:>14}", "-"),
        });
    }
    out.push('\n');
    for m in &r.spec.methods {
        out.push_str(&format!("{:<22}", format!("se ({})", m.as_str())));
        for (_, b) in &cols {
            let se = b.and_then(|b| b.variances.iter().find(|v| v.method == *m)).map(|v| v.std_error);
            out.push_str(&match se {
                Some(se) => format!("{:>14}", format!("({se:.4})")),
                None => format!("{:>14}", "-"),
            });
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "{:<22}{:>14}\n{:<22}{:>14}\n{:<22}{:>14}\n",
        "regions",
        r.spec.n_regions,
        "periods",
        r.spec.n_periods,
        "fixed effects",
        serde_json::to_value(r.spec.fixed_effects).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    ));
    if let Some(x) = r.pe_over_cluster {
        out.push_str(&format!("{:<22}{:>14.3}\n", "pe / cluster se", x));
    }
    if let Some(s) = &r.sensitivity {
        out.push_str(&format!(
            "{:<22}[{:.4}, {:.4}]\n{:<22}[{:.4}, {:.4}]\n",
            "identified set",
            s.bound_lower,
            s.bound_upper,
            format!("{:.0}% IM interval", 100.0 * (1.0 - s.alpha)),
            s.im_interval[0],
            s.im_interval[1],
        ));
        if let (Some(n), Some(b)) = (s.null_value, s.breakdown_point) {
            out.push_str(&format!("{:<22}{b:.4}\n", format!("breakdown (null {n})")));
        }
    }
    out
}

// ---------------------------------------------------------------- mc

pub fn cmd_mc(a: &McArgs) -> Result<Output> {
    let cfg = TableConfig::load(&a.config)?;
    let mut rows = cfg.scenarios(a.seed)?;
    if let Some(r) = a.replications {
        for sc in &mut rows {
            sc.replications = r;
        }
    }
    let run = || run_table_detailed(&rows);
    let (report, draws) = match thread_count(a.threads)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let json = to_json(&report)?;
    if let Some(path) = &a.json {
        write_file(path, &json)?;
    }
    if let Some(path) = &a.draws_csv {
        write_file(path, &draws_csv(&report, &rows.iter().map(|r| r.methods.clone()).collect::<Vec<_>>(), &draws))?;
    }
    let mut stdout = match a.format {
        OutputFormat::Json => json,
        OutputFormat::Table => format_table(&report),
    };
    if a.format == OutputFormat::Table {
        if let Some(t) = &cfg.title {
            stdout = format!("{t}\n\n{stdout}");
        }
    }
    let warnings = report
        .rows
        .iter()
        .flat_map(|r| r.annotations.iter().map(move |n| format!("{}: {n}", r.label)))
        .collect();
    Ok(Output { stdout, warnings })
}

fn draws_csv(report: &MCReport, methods: &[Vec<VarianceMethod>], draws: &[Vec<crate::montecarlo::Replication>]) -> String {
    let mut out = String::new();
    for (k, (row, reps)) in report.rows.iter().zip(draws).enumerate() {
        let body = replications_csv(&methods[k], reps);
        for (j, line) in body.lines().enumerate() {
            if j == 0 {
                if k == 0 {
                    out.push_str("scenario,");
                    out.push_str(line);
                    out.push('\n');
                }
                continue;
            }
            out.push_str(&format!("\"{}\",{line}\n", row.label));
        }
    }
    out
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub version: String,
    pub seed: u64,
    pub config: PopulationFile,
    pub decomposition: EstimandDecomposition,
    pub weight_audit: WeightAudit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<HeterogeneityDiagnostic>,
}

pub fn cmd_oracle(a: &OracleArgs) -> Result<Output> {
    let mut cfg = PopulationFile::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let spec = cfg.price_spec()?;
    let pop = draw_population(&cfg.population, cfg.seed)?;
    let prices = draw_prices(&spec, cfg.population.n_periods, cfg.seed)?;
    let decomposition = match a.kind {
        OracleKind::Auto if pop.gamma.is_some() => iv_estimand_ge(&pop, &prices)?,
        OracleKind::Auto | OracleKind::TwoSls => iv_estimand(&pop, &prices)?,
        OracleKind::TwoSlsGe => iv_estimand_ge(&pop, &prices)?,
        OracleKind::Twfe => twfe_estimand(&pop, &prices)?,
    };
    let heterogeneity = if a.diagnostic {
        Some(heterogeneity_diagnostic(&pop, &prices, decomposition.total)?)
    } else {
        None
    };
    let report = OracleReport {
        version: VERSION.into(),
        seed: cfg.seed,
        weight_audit: weight_audit(&decomposition),
        config: cfg,
        decomposition,
        heterogeneity,
    };
    let mut warnings = Vec::new();
    let audit = &report.weight_audit;
    if audit.n_negative > 0 {
        warnings.push(format!(
            "estimand weights are not convex: {} negative weight(s) carrying {:.3} of the absolute mass",
            audit.n_negative, audit.negative_mass
        ));
    } else if !audit.convex {
        warnings.push("main-term weights are nonnegative but do not sum to one".into());
    }
    Ok(Output { stdout: to_json(&report)?, warnings })
}

// ---------------------------------------------------------------- sensitivity

fn sensitivity_block(
    beta_hat: f64,
    se: f64,
    b_lower: f64,
    b_upper: f64,
    alpha: f64,
    null: Option<f64>,
    form: ImForm,
) -> Result<SensitivityResult> {
    let mut r = imbens_manski_interval(beta_hat, se, b_lower, b_upper, alpha, form)?;
    if let Some(n) = null {
        r.null_value = Some(n);
        r.breakdown_point = Some(breakdown_point(beta_hat, se, alpha, n)?);
    }
    Ok(r)
}

/// 2SLS estimate and price-exposure SE (else the first reported SE) from a
/// saved estimate report.
pub fn estimate_from_report(path: &Path) -> Result<(f64, f64)> {
    let v: serde_json::Value = serde_json::from_str(&read_to_string(path)?)?;
    let bad = |what: &str| Error::Config(format!("{}: {what}", path.display()));
    let block = v
        .get("two_sls")
        .filter(|b| !b.is_null())
        .or_else(|| v.get("reduced_form"))
        .ok_or_else(|| bad("no two_sls or reduced_form block"))?;
    let beta = block
        .pointer("/fit/coefficient")
        .and_then(|x| x.as_f64())
        .ok_or_else(|| bad("missing fit.coefficient"))?;
    let vars = block.get("variances").and_then(|x| x.as_array()).ok_or_else(|| bad("missing variances"))?;
    let pick = vars
        .iter()
        .find(|x| x.get("method").and_then(|m| m.as_str()) == Some("price_exposure"))
        .or_else(|| vars.first())
        .ok_or_else(|| bad("no variance reports"))?;
    let se = pick.get("std_error").and_then(|x| x.as_f64()).ok_or_else(|| bad("missing std_error"))?;
    Ok((beta, se))
}

pub fn cmd_sensitivity(a: &SensitivityArgs) -> Result<Output> {
    let form: ImForm = a.form.parse()?;
    let (beta, se) = match (&a.report, a.beta_hat, a.se) {
        (Some(p), None, None) => estimate_from_report(p)?,
        (None, Some(b), Some(s)) => (b, s),
        _ => return Err(Error::Config("give either --report, or both --beta-hat and --se".into())),
    };
    let r = sensitivity_block(beta, se, a.b_lower, a.b_upper, a.alpha, a.null, form)?;
    Ok(Output { stdout: to_json(&r)?, warnings: Vec::new() })
}

// ---------------------------------------------------------------- model

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub version: String,
    pub region_labels: Vec<String>,
    pub profile: FirstStageProfile,
    pub non_monotone_regions: Vec<String>,
    pub all_monotone: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<PhiSweep>,
}

pub fn cmd_model(a: &ModelArgs) -> Result<Output> {
    let m = ModelFile::load(&a.config)?;
    let params = m.params()?;
    let profile = compute_kappa(&params, m.focal_sector)?;
    let labels = m.region_labels();
    let non_monotone: Vec<String> = profile.non_monotone_regions().into_iter().map(|i| labels[i].clone()).collect();
    let sweep_cfg = match a.sweep_region {
        Some(region) => Some(SweepEntry { region, lo: a.phi_lo, hi: a.phi_hi, steps: a.steps }),
        None => m.sweep.clone(),
    };
    let sweep = sweep_cfg
        .map(|s| sweep_phi(&params, m.focal_sector, s.region, &s.grid()?))
        .transpose()?;
    let warnings = non_monotone
        .iter()
        .map(|r| format!("region `{r}` violates monotonicity: its exposure index exceeds the threshold"))
        .collect();
    let report = ModelReport {
        version: VERSION.into(),
        region_labels: labels,
        all_monotone: non_monotone.is_empty(),
        non_monotone_regions: non_monotone,
        profile,
        sweep,
    };
    Ok(Output { stdout: to_json(&report)?, warnings })
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Output> {
    let mut cfg = PopulationFile::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let spec = cfg.price_spec()?;
    let pop = draw_population(&cfg.population, cfg.seed)?;
    let prices = draw_prices(&spec, cfg.population.n_periods, cfg.seed)?;
    let sim = generate_panel(&pop, &prices)?;
    let panel_csv = panel_to_csv(&sim.panel);
    match &a.out_dir {
        None => Ok(Output { stdout: panel_csv, warnings: Vec::new() }),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            write_file(&dir.join("panel.csv"), &panel_csv)?;
            write_file(&dir.join("prices.csv"), &prices_to_csv(&prices, &sim.panel.period_labels))?;
            write_file(&dir.join("population.json"), &to_json(&pop)?)?;
            Ok(Output {
                stdout: format!(
                    "wrote panel.csv, prices.csv and population.json to {} (prices are centered logs: pass --prices-are-log to estimate)\n",
                    dir.display()
                ),
                warnings: Vec::new(),
            })
        }
    }
}
