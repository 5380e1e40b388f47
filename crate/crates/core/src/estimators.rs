//! Point estimators built on the price-exposure instrument `Z = A·p`.
//!
//! Every single-regressor fit reduces to `β̂ = ΣWỸ / ΣWR` on transformed data,
//! where `W` is the instrument (or the regressor itself for OLS) and `R` the
//! regressor. Sums are compensated and taken in row-major order so results
//! are bit-stable. Extra price-exposure controls are partialled out of all
//! series first (Frisch–Waugh–Lovell), which gives the same focal coefficient
//! as the joint fit.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ksum, KahanSum};
use crate::panel::{apply_fixed_effects, demean_periods, first_difference, instrument_from, FixedEffects, Panel, PriceSystem};

/// Below this absolute correlation between instrument and regressor the
/// first stage is treated as zero.
pub const WEAK_CORRELATION_TOL: f64 = 1e-10;
/// Rank tolerance for control regressors, relative to the largest column norm.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TwoSls,
    ReducedForm,
    FirstStage,
    Ols,
    TwfeWithin,
    TwfeFirstDiff,
}

/// An additional price-exposure regressor `A_c · p_c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtraExposure {
    pub label: String,
    #[serde(skip)]
    pub exposure: Array1<f64>,
    #[serde(skip)]
    pub price: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub fixed_effects: FixedEffects,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extra_exposures: Vec<ExtraExposure>,
    /// Allow first differences with more than two periods, pooling all
    /// adjacent differences.
    pub pooled_differences: bool,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, fixed_effects: FixedEffects) -> Self {
        Self {
            kind,
            fixed_effects,
            extra_exposures: Vec::new(),
            pooled_differences: false,
        }
    }

    pub fn with_kind(&self, kind: EstimatorKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_stage_coefficient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_stage_t: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dropped_controls: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: EstimatorKind,
    pub fixed_effects: FixedEffects,
    pub coefficient: f64,
    /// `û = Ỹ − R β̂`, N × T (N × (T−1) for first differences).
    pub residuals: Array2<f64>,
    /// `(1/NT) Σ W R`.
    pub denominator: f64,
    /// Transformed instrument `W`.
    pub instrument: Array2<f64>,
    /// Transformed regressor `R`.
    pub regressor: Array2<f64>,
    /// Untransformed exposure `A_i`.
    pub exposure: Array1<f64>,
    /// Price series aligned with the residual columns (`p_t`, or `Δp_t` for
    /// first differences).
    pub price: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn n_regions(&self) -> usize {
        self.residuals.nrows()
    }
    pub fn n_periods(&self) -> usize {
        self.residuals.ncols()
    }
    pub fn n_obs(&self) -> usize {
        self.residuals.len()
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            kind: self.kind,
            fixed_effects: self.fixed_effects,
            coefficient: self.coefficient,
            n: self.n_regions(),
            t: self.n_periods(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub kind: EstimatorKind,
    pub fixed_effects: FixedEffects,
    pub coefficient: f64,
    pub n: usize,
    pub t: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiFit {
    pub kind: EstimatorKind,
    /// Focal coefficient first, then one per extra exposure in input order.
    pub coefficients: Vec<f64>,
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// All series after fixed effects (or differencing) and after partialling
/// out controls.
struct Prepared {
    y: Array2<f64>,
    x: Option<Array2<f64>>,
    z: Array2<f64>,
    price: Vec<f64>,
    /// Orthonormal basis of the retained control columns.
    basis: Vec<Array2<f64>>,
    /// Transformed controls, for recovering their coefficients.
    controls: Vec<(String, Option<Array2<f64>>)>,
    dropped: Vec<String>,
    fe: FixedEffects,
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut acc = KahanSum::new();
    Zip::from(a).and(b).for_each(|x, y| acc.add(x * y));
    acc.value()
}

fn sumsq(a: &Array2<f64>) -> f64 {
    ksum(a.iter().map(|x| x * x))
}

fn project_out(v: &mut Array2<f64>, basis: &[Array2<f64>]) {
    for q in basis {
        let c = dot(v, q);
        Zip::from(&mut *v).and(q).for_each(|x, y| *x -= c * y);
    }
}

fn is_differenced(spec: &EstimatorSpec) -> bool {
    spec.kind == EstimatorKind::TwfeFirstDiff
}

fn effective_fe(spec: &EstimatorSpec) -> FixedEffects {
    match spec.kind {
        EstimatorKind::TwfeWithin => FixedEffects::TwoWay,
        // differencing removes region effects; the cross-sectional demeaning
        // absorbs period effects
        EstimatorKind::TwfeFirstDiff => FixedEffects::TwoWay,
        _ => spec.fixed_effects,
    }
}

fn prepare(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<Prepared> {
    prices.validate()?;
    if prices.n_periods() != panel.n_periods {
        return Err(Error::Dimension(format!(
            "prices have {} periods but the panel has {}",
            prices.n_periods(),
            panel.n_periods
        )));
    }
    let needs_x = matches!(
        spec.kind,
        EstimatorKind::TwoSls | EstimatorKind::FirstStage | EstimatorKind::Ols
    );
    if needs_x && panel.treatment.is_none() {
        return Err(Error::MissingTreatment(match spec.kind {
            EstimatorKind::TwoSls => "2SLS",
            EstimatorKind::FirstStage => "the first stage",
            _ => "OLS",
        }));
    }
    let p: Vec<f64> = prices.focal_prices().to_vec();
    let z = instrument_from(&panel.exposure, &p, panel.n_periods)?.values;
    let mut controls_raw = Vec::with_capacity(spec.extra_exposures.len());
    for e in &spec.extra_exposures {
        if e.exposure.len() != panel.n_regions {
            return Err(Error::Dimension(format!("extra exposure `{}` has wrong length", e.label)));
        }
        controls_raw.push((e.label.clone(), instrument_from(&e.exposure, &e.price, panel.n_periods)?.values));
    }

    let differenced = is_differenced(spec);
    let fe = effective_fe(spec);
    let transform = |m: &Array2<f64>| -> Result<Array2<f64>> {
        if differenced {
            Ok(demean_periods(&first_difference(m)?))
        } else {
            Ok(apply_fixed_effects(m, fe))
        }
    };
    if differenced && panel.n_periods != 2 && !spec.pooled_differences {
        return Err(Error::Domain(format!(
            "first-difference TWFE needs exactly two periods (got {}); set pooled_differences to pool",
            panel.n_periods
        )));
    }
    if matches!(spec.kind, EstimatorKind::TwfeWithin | EstimatorKind::TwfeFirstDiff) && panel.n_periods < 2 {
        return Err(Error::InsufficientPeriods { needed: 2, got: panel.n_periods });
    }

    let mut y = transform(&panel.outcome)?;
    let mut x = match (&panel.treatment, needs_x) {
        (Some(x), true) => Some(transform(x)?),
        _ => None,
    };
    let mut zt = transform(&z)?;
    let price = if differenced {
        p.windows(2).map(|w| w[1] - w[0]).collect()
    } else {
        p
    };

    // Gram-Schmidt on [Z, C1, C2, ...] for the rank check, then partial the
    // retained controls out of everything.
    let mut basis: Vec<Array2<f64>> = Vec::new();
    let mut controls = Vec::new();
    let mut dropped = Vec::new();
    if !controls_raw.is_empty() {
        let zt_norm = sumsq(&zt).sqrt();
        let transformed: Vec<(String, Array2<f64>)> = controls_raw
            .into_iter()
            .map(|(l, c)| Ok((l, transform(&c)?)))
            .collect::<Result<_>>()?;
        let max_norm = transformed
            .iter()
            .map(|(_, c)| sumsq(c).sqrt())
            .fold(zt_norm, f64::max);
        let tol = RANK_TOL * max_norm;
        let mut full_basis: Vec<Array2<f64>> = Vec::new();
        if zt_norm > tol {
            full_basis.push(&zt / zt_norm);
        }
        for (label, c) in transformed {
            let norm0 = sumsq(&c).sqrt();
            if norm0 <= tol {
                dropped.push(label.clone());
                controls.push((label, None));
                continue;
            }
            let mut v = c.clone();
            project_out(&mut v, &full_basis);
            let norm = sumsq(&v).sqrt();
            if norm <= tol {
                return Err(Error::Collinear { regressor: label });
            }
            full_basis.push(&v / norm);
            let mut u = c.clone();
            project_out(&mut u, &basis);
            let un = sumsq(&u).sqrt();
            basis.push(&u / un);
            controls.push((label, Some(c)));
        }
        project_out(&mut y, &basis);
        if let Some(xx) = x.as_mut() {
            project_out(xx, &basis);
        }
        project_out(&mut zt, &basis);
    }

    Ok(Prepared {
        y,
        x,
        z: zt,
        price,
        basis,
        controls,
        dropped,
        fe,
    })
}

/// `β̂ = ΣWY / ΣWR`, residuals `Y − Rβ̂`.
fn ratio_fit(w: &Array2<f64>, r: &Array2<f64>, y: &Array2<f64>) -> (f64, Array2<f64>, f64) {
    let num = dot(w, y);
    let den = dot(w, r);
    let beta = num / den;
    let resid = y - &(r * beta);
    (beta, resid, den / w.len() as f64)
}

fn check_identified(w: &Array2<f64>, r: &Array2<f64>) -> Result<()> {
    let ww = sumsq(w);
    if ww == 0.0 {
        return Err(Error::DegenerateDesign(
            "instrument has no variation after fixed effects".into(),
        ));
    }
    let rr = sumsq(r);
    let wr = dot(w, r);
    let corr = if rr == 0.0 { 0.0 } else { wr / (ww.sqrt() * rr.sqrt()) };
    if !(corr.abs() >= WEAK_CORRELATION_TOL) {
        return Err(Error::WeakFirstStage { first_stage: wr / ww });
    }
    Ok(())
}

/// First-stage coefficient and its heteroskedasticity-robust t-ratio.
fn first_stage_stats(z: &Array2<f64>, x: &Array2<f64>) -> (f64, f64) {
    let zz = sumsq(z);
    let pi = dot(z, x) / zz;
    let mut meat = KahanSum::new();
    Zip::from(z).and(x).for_each(|zi, xi| {
        let v = xi - pi * zi;
        meat.add(zi * zi * v * v);
    });
    let se = meat.value().sqrt() / zz;
    (pi, pi / se)
}

fn finish(
    kind: EstimatorKind,
    prep: &Prepared,
    panel: &Panel,
    w: Array2<f64>,
    r: Array2<f64>,
    y: &Array2<f64>,
    mut diagnostics: Diagnostics,
) -> FitResult {
    let (coefficient, residuals, denominator) = ratio_fit(&w, &r, y);
    diagnostics.dropped_controls = prep.dropped.clone();
    for d in &prep.dropped {
        diagnostics
            .warnings
            .push(format!("control `{d}` is identically zero after transformation and was dropped"));
    }
    FitResult {
        kind,
        fixed_effects: prep.fe,
        coefficient,
        residuals,
        denominator,
        instrument: w,
        regressor: r,
        exposure: panel.exposure.clone(),
        price: prep.price.clone(),
        diagnostics,
    }
}

fn fit_prepared(panel: &Panel, spec: &EstimatorSpec, prep: &Prepared) -> Result<FitResult> {
    let kind = spec.kind;
    match kind {
        EstimatorKind::TwoSls => {
            let x = prep.x.as_ref().expect("checked in prepare");
            check_identified(&prep.z, x)?;
            let (pi, t) = first_stage_stats(&prep.z, x);
            let mut d = Diagnostics {
                first_stage_coefficient: Some(pi),
                first_stage_t: Some(t),
                ..Default::default()
            };
            if t.abs() < 1.0 {
                d.warnings
                    .push(format!("weak first stage: robust t-ratio {t:.3} is below 1 in absolute value"));
            }
            Ok(finish(kind, prep, panel, prep.z.clone(), x.clone(), &prep.y, d))
        }
        EstimatorKind::FirstStage => {
            let x = prep.x.as_ref().expect("checked in prepare");
            check_identified(&prep.z, &prep.z)?;
            Ok(finish(kind, prep, panel, prep.z.clone(), prep.z.clone(), x, Diagnostics::default()))
        }
        EstimatorKind::Ols => {
            let x = prep.x.as_ref().expect("checked in prepare");
            if sumsq(x) == 0.0 {
                return Err(Error::DegenerateDesign("treatment has no variation after fixed effects".into()));
            }
            Ok(finish(kind, prep, panel, x.clone(), x.clone(), &prep.y, Diagnostics::default()))
        }
        EstimatorKind::ReducedForm | EstimatorKind::TwfeWithin | EstimatorKind::TwfeFirstDiff => {
            check_identified(&prep.z, &prep.z)?;
            Ok(finish(kind, prep, panel, prep.z.clone(), prep.z.clone(), &prep.y, Diagnostics::default()))
        }
    }
}

/// Fits whichever estimator `spec.kind` names.
pub fn fit(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<FitResult> {
    let prep = prepare(panel, prices, spec)?;
    fit_prepared(panel, spec, &prep)
}

pub fn fit_2sls(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<FitResult> {
    fit(panel, prices, &spec.with_kind(EstimatorKind::TwoSls))
}

pub fn fit_reduced_form(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<FitResult> {
    fit(panel, prices, &spec.with_kind(EstimatorKind::ReducedForm))
}

pub fn fit_first_stage(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<FitResult> {
    fit(panel, prices, &spec.with_kind(EstimatorKind::FirstStage))
}

pub fn fit_ols(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<FitResult> {
    fit(panel, prices, &spec.with_kind(EstimatorKind::Ols))
}

/// Within form unless `spec.kind` already asks for first differences.
pub fn fit_twfe(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<FitResult> {
    let kind = match spec.kind {
        EstimatorKind::TwfeFirstDiff => EstimatorKind::TwfeFirstDiff,
        _ => EstimatorKind::TwfeWithin,
    };
    if panel.n_periods < 2 {
        return Err(Error::InsufficientPeriods { needed: 2, got: panel.n_periods });
    }
    fit(panel, prices, &spec.with_kind(kind))
}

/// Joint fit with extra price-exposure controls. Returns the focal
/// coefficient followed by one coefficient per control; a control that is
/// identically zero after transformation gets coefficient 0 and a note.
pub fn fit_multiprice(panel: &Panel, prices: &PriceSystem, spec: &EstimatorSpec) -> Result<MultiFit> {
    if spec.extra_exposures.is_empty() {
        return Err(Error::Config("fit_multiprice needs at least one extra exposure".into()));
    }
    let prep = prepare(panel, prices, spec)?;
    let focal = fit_prepared(panel, spec, &prep)?;
    // Controls' coefficients: OLS of the focal-adjusted outcome on the
    // retained controls, recovered before the FWL projection.
    let unprojected = prepare(
        panel,
        prices,
        &EstimatorSpec {
            extra_exposures: Vec::new(),
            ..spec.clone()
        },
    )?;
    let focal_reg = match spec.kind {
        EstimatorKind::TwoSls | EstimatorKind::Ols => unprojected.x.clone().expect("treatment present"),
        EstimatorKind::FirstStage => unprojected.z.clone(),
        _ => unprojected.z.clone(),
    };
    let target = match spec.kind {
        EstimatorKind::FirstStage => unprojected.x.clone().expect("treatment present"),
        _ => unprojected.y.clone(),
    };
    let adjusted = &target - &(&focal_reg * focal.coefficient);
    let retained: Vec<&Array2<f64>> = prep.controls.iter().filter_map(|(_, c)| c.as_ref()).collect();
    let k = retained.len();
    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        rhs[a] = dot(retained[a], &adjusted);
        for b in 0..k {
            gram[a][b] = dot(retained[a], retained[b]);
        }
    }
    let sol = crate::numeric::solve_dense(gram, rhs).ok_or_else(|| Error::Collinear {
        regressor: prep.controls.last().map(|c| c.0.clone()).unwrap_or_default(),
    })?;
    debug_assert_eq!(prep.basis.len(), k);
    let mut coefficients = vec![focal.coefficient];
    let mut labels = vec!["focal".to_string()];
    let mut it = sol.into_iter();
    let mut notes = Vec::new();
    for (label, c) in &prep.controls {
        labels.push(label.clone());
        match c {
            Some(_) => coefficients.push(it.next().expect("one per retained control")),
            None => {
                coefficients.push(0.0);
                notes.push(format!("`{label}` is identically zero after transformation; coefficient set to 0"));
            }
        }
    }
    Ok(MultiFit {
        kind: spec.kind,
        coefficients,
        labels,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{draw_population, draw_prices, generate_panel, Law, PopulationConfig, PriceProcessSpec};
    use crate::numeric::solve_dense;
    use crate::rng::stream;
    use ndarray::array;
    use rand::Rng;

    fn prices_1(p: Vec<f64>) -> PriceSystem {
        let t = p.len();
        PriceSystem::observed(Array2::from_shape_vec((1, t), p).unwrap(), 0, vec!["q".into()]).unwrap()
    }

    fn spec(kind: EstimatorKind, fe: FixedEffects) -> EstimatorSpec {
        EstimatorSpec::new(kind, fe)
    }

    fn seeded(n: usize, t: usize, seed: u64) -> (Panel, PriceSystem) {
        let cfg = PopulationConfig { n_regions: n, n_periods: t, ..Default::default() };
        let pop = draw_population(&cfg, seed).unwrap();
        let ps = draw_prices(&PriceProcessSpec::independent(2, 0, Law::Uniform { lo: -1.0, hi: 1.0 }), t, seed + 1)
            .unwrap();
        (generate_panel(&pop, &ps).unwrap().panel, ps)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn two_point_wald_ratio() {
        let panel = Panel::new(array![[0.0, 1.0]], Some(array![[0.0, 2.0]]), array![1.0]).unwrap();
        let f = fit_2sls(&panel, &prices_1(vec![-1.0, 1.0]), &spec(EstimatorKind::TwoSls, FixedEffects::None)).unwrap();
        assert!((f.coefficient - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_linear_model() {
        let (mut panel, ps) = seeded(8, 6, 3);
        panel.outcome = panel.treatment.as_ref().unwrap() * 3.0;
        for fe in [FixedEffects::None, FixedEffects::TwoWay] {
            let f = fit_2sls(&panel, &ps, &spec(EstimatorKind::TwoSls, fe)).unwrap();
            assert!((f.coefficient - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_summation_loop() {
        let (panel, ps) = seeded(50, 50, 11);
        let f = fit_2sls(&panel, &ps, &spec(EstimatorKind::TwoSls, FixedEffects::None)).unwrap();
        let x = panel.treatment.as_ref().unwrap();
        let p = ps.focal_prices();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..50 {
            for t in 0..50 {
                let z = panel.exposure[i] * p[t];
                num += z * panel.outcome[[i, t]];
                den += z * x[[i, t]];
            }
        }
        assert!(rel(f.coefficient, num / den) < 1e-10);
    }

    #[test]
    fn reduced_form_and_first_stage_basics() {
        let ps = prices_1(vec![0.3, -0.4, 0.1]);
        let a = array![1.0, 2.0];
        let z = Array2::from_shape_fn((2, 3), |(i, t)| a[i] * ps.log_prices[[0, t]]);
        let panel = Panel::new(z.clone(), Some(z.clone()), a.clone()).unwrap();
        let s = spec(EstimatorKind::ReducedForm, FixedEffects::None);
        assert!((fit_reduced_form(&panel, &ps, &s).unwrap().coefficient - 1.0).abs() < 1e-14);
        assert!((fit_first_stage(&panel, &ps, &s).unwrap().coefficient - 1.0).abs() < 1e-14);
        // orthogonal outcome: Y·Z sums to zero
        let y = array![[0.4, 0.3, 0.0], [0.0, 0.0, 0.0]];
        let panel = Panel::new(y, None, a).unwrap();
        assert!(fit_reduced_form(&panel, &ps, &s).unwrap().coefficient.abs() < 1e-15);
    }

    #[test]
    fn constant_treatment_absorbed_by_fixed_effects() {
        let (mut panel, ps) = seeded(6, 5, 2);
        panel.treatment = Some(Array2::from_shape_fn((6, 5), |(i, _)| i as f64 + 0.5));
        let f = fit_first_stage(&panel, &ps, &spec(EstimatorKind::FirstStage, FixedEffects::TwoWay)).unwrap();
        assert!(f.coefficient.abs() < 1e-12);
    }

    #[test]
    fn first_stage_recovers_homogeneous_kappa() {
        let cfg = PopulationConfig {
            n_regions: 20,
            n_periods: 4000,
            n_sectors: 1,
            kappa: Law::Constant { value: 0.7 },
            ..Default::default()
        };
        let pop = draw_population(&cfg, 4).unwrap();
        let ps = draw_prices(&PriceProcessSpec::independent(1, 0, Law::Uniform { lo: -1.0, hi: 1.0 }), 4000, 5).unwrap();
        let panel = generate_panel(&pop, &ps).unwrap().panel;
        let f = fit_first_stage(&panel, &ps, &spec(EstimatorKind::FirstStage, FixedEffects::TwoWay)).unwrap();
        assert!((f.coefficient - 0.7).abs() < 0.02, "{}", f.coefficient);
    }

    #[test]
    fn iv_ratio_identity() {
        for seed in 0..5 {
            let (panel, ps) = seeded(15, 7, seed);
            for fe in [FixedEffects::None, FixedEffects::Region, FixedEffects::Time, FixedEffects::TwoWay] {
                let s = spec(EstimatorKind::TwoSls, fe);
                let iv = fit_2sls(&panel, &ps, &s).unwrap().coefficient;
                let rf = fit_reduced_form(&panel, &ps, &s).unwrap().coefficient;
                let fs = fit_first_stage(&panel, &ps, &s).unwrap().coefficient;
                assert!(rel(rf / fs, iv) < 1e-10);
            }
        }
    }

    #[test]
    fn residual_orthogonality() {
        let (panel, ps) = seeded(12, 9, 8);
        for kind in [EstimatorKind::TwoSls, EstimatorKind::ReducedForm, EstimatorKind::Ols, EstimatorKind::TwfeWithin] {
            let f = fit(&panel, &ps, &spec(kind, FixedEffects::TwoWay)).unwrap();
            let s = dot(&f.instrument, &f.residuals);
            let scale = sumsq(&f.instrument).sqrt() * sumsq(&f.residuals).sqrt();
            assert!(s.abs() < 1e-8 * scale, "{kind:?}");
        }
    }

    #[test]
    fn fe_invariance_and_scale_equivariance() {
        let (panel, ps) = seeded(10, 6, 21);
        let s = spec(EstimatorKind::TwoSls, FixedEffects::TwoWay);
        let base = fit_2sls(&panel, &ps, &s).unwrap().coefficient;
        let rf = fit_reduced_form(&panel, &ps, &s).unwrap().coefficient;
        let mut shifted = panel.clone();
        shifted.outcome = Array2::from_shape_fn((10, 6), |(i, t)| panel.outcome[[i, t]] + 3.0 * i as f64 - (t as f64).sqrt());
        assert!(rel(fit_2sls(&shifted, &ps, &s).unwrap().coefficient, base) < 1e-10);
        let mut scaled = panel.clone();
        scaled.outcome = &panel.outcome * -2.5;
        assert!(rel(fit_2sls(&scaled, &ps, &s).unwrap().coefficient, -2.5 * base) < 1e-12);
        // scaling Z through the exposure
        let mut zs = panel.clone();
        zs.exposure = &panel.exposure * 4.0;
        assert!(rel(fit_2sls(&zs, &ps, &s).unwrap().coefficient, base) < 1e-12);
        assert!(rel(fit_reduced_form(&zs, &ps, &s).unwrap().coefficient, rf / 4.0) < 1e-12);
    }

    #[test]
    fn twfe_within_equals_first_difference_for_two_periods() {
        for seed in 0..5 {
            let (panel, ps) = seeded(25, 2, 100 + seed);
            let w = fit_twfe(&panel, &ps, &spec(EstimatorKind::TwfeWithin, FixedEffects::TwoWay)).unwrap();
            let d = fit_twfe(&panel, &ps, &spec(EstimatorKind::TwfeFirstDiff, FixedEffects::TwoWay)).unwrap();
            assert!(rel(d.coefficient, w.coefficient) < 1e-10);
        }
    }

    #[test]
    fn twfe_separable_outcome_is_zero() {
        let (mut panel, ps) = seeded(5, 4, 3);
        panel.outcome = Array2::from_shape_fn((5, 4), |(i, t)| i as f64 * 0.7 + t as f64 * 1.9);
        let f = fit_twfe(&panel, &ps, &spec(EstimatorKind::TwfeWithin, FixedEffects::TwoWay)).unwrap();
        assert!(f.coefficient.abs() < 1e-12);
    }

    #[test]
    fn twfe_matches_dummy_variable_regression() {
        let (panel, ps) = seeded(6, 5, 31);
        let f = fit_twfe(&panel, &ps, &spec(EstimatorKind::TwfeWithin, FixedEffects::TwoWay)).unwrap();
        let (n, t) = (6, 5);
        // columns: Z, region dummies (n), period dummies for t >= 1
        let k = 1 + n + t - 1;
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        for i in 0..n {
            for p in 0..t {
                let mut row = vec![0.0; k];
                row[0] = panel.exposure[i] * ps.log_prices[[0, p]];
                row[1 + i] = 1.0;
                if p > 0 {
                    row[n + p] = 1.0;
                }
                for a in 0..k {
                    xty[a] += row[a] * panel.outcome[[i, p]];
                    for b in 0..k {
                        xtx[a][b] += row[a] * row[b];
                    }
                }
            }
        }
        let beta = solve_dense(xtx, xty).unwrap();
        assert!(rel(f.coefficient, beta[0]) < 1e-8);
    }

    #[test]
    fn first_difference_needs_two_periods() {
        let (panel, ps) = seeded(5, 3, 1);
        assert!(fit_twfe(&panel, &ps, &spec(EstimatorKind::TwfeFirstDiff, FixedEffects::TwoWay)).is_err());
        let mut s = spec(EstimatorKind::TwfeFirstDiff, FixedEffects::TwoWay);
        s.pooled_differences = true;
        assert_eq!(fit_twfe(&panel, &ps, &s).unwrap().n_periods(), 2);
        let (panel, ps) = seeded(5, 1, 1);
        assert!(matches!(
            fit_twfe(&panel, &ps, &spec(EstimatorKind::TwfeWithin, FixedEffects::TwoWay)),
            Err(Error::InsufficientPeriods { .. })
        ));
    }

    #[test]
    fn zero_first_stage_is_weak() {
        let (mut panel, ps) = seeded(5, 4, 1);
        // treatment orthogonal to Z: constant
        panel.treatment = Some(Array2::from_elem((5, 4), 1.0));
        let err = fit_2sls(&panel, &ps, &spec(EstimatorKind::TwoSls, FixedEffects::TwoWay)).unwrap_err();
        assert!(matches!(err, Error::WeakFirstStage { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_treatment() {
        let (mut panel, ps) = seeded(5, 4, 1);
        panel.treatment = None;
        assert!(matches!(
            fit_2sls(&panel, &ps, &spec(EstimatorKind::TwoSls, FixedEffects::TwoWay)),
            Err(Error::MissingTreatment(_))
        ));
        assert!(fit_reduced_form(&panel, &ps, &spec(EstimatorKind::ReducedForm, FixedEffects::TwoWay)).is_ok());
    }

    fn extra(label: &str, a: Array1<f64>, p: Vec<f64>) -> ExtraExposure {
        ExtraExposure { label: label.into(), exposure: a, price: p }
    }

    #[test]
    fn zero_control_leaves_focal_unchanged() {
        let (panel, ps) = seeded(10, 6, 4);
        let base = fit_2sls(&panel, &ps, &spec(EstimatorKind::TwoSls, FixedEffects::TwoWay)).unwrap();
        let mut s = spec(EstimatorKind::TwoSls, FixedEffects::TwoWay);
        s.extra_exposures.push(extra("zero", Array1::zeros(10), vec![0.5; 6]));
        let m = fit_multiprice(&panel, &ps, &s).unwrap();
        assert!(rel(m.coefficients[0], base.coefficient) < 1e-12);
        assert_eq!(m.coefficients[1], 0.0);
        assert_eq!(m.notes.len(), 1);
    }

    #[test]
    fn control_equal_to_instrument_is_collinear() {
        let (panel, ps) = seeded(10, 6, 4);
        let mut s = spec(EstimatorKind::ReducedForm, FixedEffects::TwoWay);
        s.extra_exposures.push(extra("dup", panel.exposure.clone(), ps.focal_prices().to_vec()));
        match fit_multiprice(&panel, &ps, &s) {
            Err(Error::Collinear { regressor }) => assert_eq!(regressor, "dup"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multiprice_matches_normal_equations() {
        let (panel, ps) = seeded(12, 8, 6);
        let mut rng = stream(6, 9);
        let a2 = Array1::from_shape_fn(12, |_| rng.random_range(0.0..1.0));
        let p2: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = spec(EstimatorKind::ReducedForm, FixedEffects::None);
        s.extra_exposures.push(extra("c", a2.clone(), p2.clone()));
        let m = fit_multiprice(&panel, &ps, &s).unwrap();
        // oracle: OLS of Y on [Z, C] via 2×2 normal equations
        let (mut g, mut r) = (vec![vec![0.0; 2]; 2], vec![0.0; 2]);
        for i in 0..12 {
            for t in 0..8 {
                let v = [panel.exposure[i] * ps.log_prices[[0, t]], a2[i] * p2[t]];
                for a in 0..2 {
                    r[a] += v[a] * panel.outcome[[i, t]];
                    for b in 0..2 {
                        g[a][b] += v[a] * v[b];
                    }
                }
            }
        }
        let sol = solve_dense(g, r).unwrap();
        assert!(rel(m.coefficients[0], sol[0]) < 1e-9);
        assert!(rel(m.coefficients[1], sol[1]) < 1e-9);
    }

    #[test]
    fn multiprice_2sls_matches_joint_system() {
        let (panel, ps) = seeded(15, 10, 7);
        let mut rng = stream(7, 9);
        let a2 = Array1::from_shape_fn(15, |_| rng.random_range(0.0..1.0));
        let p2: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = spec(EstimatorKind::TwoSls, FixedEffects::None);
        s.extra_exposures.push(extra("c", a2.clone(), p2.clone()));
        let m = fit_multiprice(&panel, &ps, &s).unwrap();
        // just-identified IV: solve [Z C]'[X C] b = [Z C]'Y
        let x = panel.treatment.as_ref().unwrap();
        let (mut g, mut r) = (vec![vec![0.0; 2]; 2], vec![0.0; 2]);
        for i in 0..15 {
            for t in 0..10 {
                let c = a2[i] * p2[t];
                let inst = [panel.exposure[i] * ps.log_prices[[0, t]], c];
                let reg = [x[[i, t]], c];
                for a in 0..2 {
                    r[a] += inst[a] * panel.outcome[[i, t]];
                    for b in 0..2 {
                        g[a][b] += inst[a] * reg[b];
                    }
                }
            }
        }
        let sol = solve_dense(g, r).unwrap();
        assert!(rel(m.coefficients[0], sol[0]) < 1e-9);
        assert!(rel(m.coefficients[1], sol[1]) < 1e-9);
    }
}
