//! The empirical pipeline on the bundled synthetic panel: first stage,
//! reduced form, OLS and 2SLS with two-way fixed effects, and clustered
//! next to price-exposure standard errors.

use std::path::Path;

use pexposure::estimators::{fit, EstimatorKind, EstimatorSpec};
use pexposure::inference::{variance, VarianceMethod};
use pexposure::ingest::{read_panel, read_prices, PriceScale};
use pexposure::panel::FixedEffects;

fn main() -> pexposure::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let pf = read_panel(&dir.join("panel.csv"))?;
    for w in &pf.warnings {
        eprintln!("warning: {w}");
    }
    let panel = pf.panel;
    let prices = read_prices(&dir.join("prices.csv"), &panel.period_labels, Some("gold"), PriceScale::Level)?;

    let spec = EstimatorSpec::new(EstimatorKind::TwoSls, FixedEffects::TwoWay);
    println!("{:<14} {:>10} {:>12} {:>10}", "", "coef", "cluster se", "pe se");
    for (name, kind) in [
        ("first stage", EstimatorKind::FirstStage),
        ("reduced form", EstimatorKind::ReducedForm),
        ("ols", EstimatorKind::Ols),
        ("2sls", EstimatorKind::TwoSls),
    ] {
        let f = fit(&panel, &prices, &spec.with_kind(kind))?;
        let cl = variance(&f, VarianceMethod::ClusterRegion, panel.cluster_id.as_deref())?;
        let pe = variance(&f, VarianceMethod::PriceExposure, None)?;
        println!("{name:<14} {:>10.4} {:>12.4} {:>10.4}", f.coefficient, cl.std_error, pe.std_error);
    }
    Ok(())
}
