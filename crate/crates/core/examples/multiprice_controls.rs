//! Controlling for exposure-interacted prices of other commodities. When the
//! second price co-moves with the focal one, the control removes the
//! contamination it would otherwise carry into the focal coefficient.

use pexposure::dgp::{draw_population, draw_prices, generate_panel, Law, PopulationConfig, PriceProcessSpec};
use pexposure::estimators::{fit, fit_multiprice, EstimatorKind, EstimatorSpec, ExtraExposure};
use pexposure::panel::FixedEffects;

fn main() -> pexposure::Result<()> {
    let cfg = PopulationConfig {
        n_regions: 400,
        n_periods: 60,
        exposure_common_weight: 1.0,
        ..Default::default()
    };
    let pop = draw_population(&cfg, 5)?;
    let spec = PriceProcessSpec::focal_loading(2, 0, Law::Uniform { lo: -1.0, hi: 1.0 }, vec![1.0, 0.8]);
    let prices = draw_prices(&spec, cfg.n_periods, 5)?;
    let sim = generate_panel(&pop, &prices)?;

    let base = EstimatorSpec::new(EstimatorKind::ReducedForm, FixedEffects::TwoWay);
    let alone = fit(&sim.panel, &prices, &base)?;

    let mut with_control = base.clone();
    with_control.extra_exposures.push(ExtraExposure {
        label: "sector 1".into(),
        exposure: pop.exposure.column(1).to_owned(),
        price: prices.log_prices.row(1).to_vec(),
    });
    let joint = fit_multiprice(&sim.panel, &prices, &with_control)?;

    println!("reduced form, focal price only: {:.4}", alone.coefficient);
    for (label, c) in joint.labels.iter().zip(&joint.coefficients) {
        println!("joint fit, {label:<12} {c:.4}");
    }
    Ok(())
}
