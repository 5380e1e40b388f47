//! CSV ingestion for long-format panels and sector price files.
//!
//! Panel files carry `region,period,outcome,treatment,exposure[,cluster]` with
//! one row per (region, period); the treatment column may be omitted. Price
//! files carry `period,sector,price`. Numbers use a dot decimal separator.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::panel::{center_log_prices, Panel, PriceSystem};

/// A parsed panel plus non-fatal findings (e.g. nonpositive exposure).
#[derive(Debug, Clone)]
pub struct PanelFile {
    pub panel: Panel,
    pub warnings: Vec<String>,
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn number(source: &str, line: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_err(source, line, format!("column `{column}`: `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(source, line, format!("column `{column}`: value must be finite")));
    }
    Ok(v)
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    fn require(&self, source: &str, name: &str) -> Result<usize> {
        self.get(name)
            .ok_or_else(|| parse_err(source, 1, format!("missing required column `{name}`")))
    }
}

fn reader<R: Read>(input: R, source: &str, allowed: &[&str]) -> Result<(csv::Reader<R>, Columns)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_err(source, 1, e.to_string()))?.clone();
    let mut index = HashMap::new();
    for (k, h) in headers.iter().enumerate() {
        let h = h.to_ascii_lowercase();
        if !allowed.contains(&h.as_str()) {
            return Err(parse_err(source, 1, format!("unexpected column `{h}`")));
        }
        if index.insert(h.clone(), k).is_some() {
            return Err(parse_err(source, 1, format!("duplicate column `{h}`")));
        }
    }
    Ok((rdr, Columns { index }))
}

/// Sorts period labels numerically when every label is a number, and
/// lexicographically otherwise.
pub fn sort_periods(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }),
        None => labels.sort(),
    }
}

struct Row {
    line: usize,
    region: String,
    period: String,
    outcome: f64,
    treatment: Option<f64>,
    exposure: f64,
    cluster: Option<String>,
}

pub fn parse_panel<R: Read>(input: R, source: &str) -> Result<PanelFile> {
    let (mut rdr, cols) = reader(input, source, &["region", "period", "outcome", "treatment", "exposure", "cluster"])?;
    let (c_reg, c_per, c_out, c_exp) = (
        cols.require(source, "region")?,
        cols.require(source, "period")?,
        cols.require(source, "outcome")?,
        cols.require(source, "exposure")?,
    );
    let (c_tr, c_cl) = (cols.get("treatment"), cols.get("cluster"));

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(k).unwrap_or("");
        let region = field(c_reg).to_string();
        let period = field(c_per).to_string();
        if region.is_empty() || period.is_empty() {
            return Err(parse_err(source, line, "region and period must be non-empty"));
        }
        let outcome = number(source, line, "outcome", field(c_out))?;
        let treatment = c_tr.map(|k| number(source, line, "treatment", field(k))).transpose()?;
        let exposure = number(source, line, "exposure", field(c_exp))?;
        let cluster = c_cl.map(|k| field(k).to_string());
        rows.push(Row { line, region, period, outcome, treatment, exposure, cluster });
    }
    if rows.is_empty() {
        return Err(parse_err(source, 1, "no data rows"));
    }

    let mut regions: Vec<String> = Vec::new();
    let mut region_idx: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut seen_periods: HashMap<String, ()> = HashMap::new();
    for r in &rows {
        if !region_idx.contains_key(&r.region) {
            region_idx.insert(r.region.clone(), regions.len());
            regions.push(r.region.clone());
        }
        if seen_periods.insert(r.period.clone(), ()).is_none() {
            periods.push(r.period.clone());
        }
    }
    sort_periods(&mut periods);
    let period_idx: HashMap<&str, usize> = periods.iter().enumerate().map(|(k, p)| (p.as_str(), k)).collect();
    let (n, t) = (regions.len(), periods.len());

    let mut y = Array2::from_elem((n, t), f64::NAN);
    let mut x = c_tr.map(|_| Array2::from_elem((n, t), f64::NAN));
    let mut a: Vec<Option<(f64, usize)>> = vec![None; n];
    let mut cl: Vec<Option<(String, usize)>> = vec![None; n];
    for r in &rows {
        let (i, p) = (region_idx[&r.region], period_idx[r.period.as_str()]);
        if !y[[i, p]].is_nan() {
            return Err(parse_err(
                source,
                r.line,
                format!("duplicate row for region `{}`, period `{}`", r.region, r.period),
            ));
        }
        y[[i, p]] = r.outcome;
        if let (Some(m), Some(v)) = (x.as_mut(), r.treatment) {
            m[[i, p]] = v;
        }
        match a[i] {
            None => a[i] = Some((r.exposure, r.line)),
            Some((prev, first)) if prev != r.exposure => {
                return Err(parse_err(
                    source,
                    r.line,
                    format!(
                        "exposure for region `{}` is {} here but {prev} on line {first}; exposure must be time-invariant",
                        r.region, r.exposure
                    ),
                ))
            }
            _ => {}
        }
        if let Some(c) = &r.cluster {
            match &cl[i] {
                None => cl[i] = Some((c.clone(), r.line)),
                Some((prev, first)) if prev != c => {
                    return Err(parse_err(
                        source,
                        r.line,
                        format!("cluster for region `{}` is `{c}` here but `{prev}` on line {first}", r.region),
                    ))
                }
                _ => {}
            }
        }
    }
    for i in 0..n {
        for p in 0..t {
            if y[[i, p]].is_nan() {
                return Err(parse_err(
                    source,
                    rows.last().map_or(0, |r| r.line),
                    format!(
                        "unbalanced panel: region `{}` has no row for period `{}`",
                        regions[i], periods[p]
                    ),
                ));
            }
        }
    }
    let exposure = Array1::from_iter(a.iter().map(|v| v.map_or(f64::NAN, |(e, _)| e)));
    let cluster_id = if c_cl.is_some() {
        let mut ids: HashMap<String, usize> = HashMap::new();
        Some(
            cl.iter()
                .map(|c| {
                    let label = c.as_ref().map(|(l, _)| l.clone()).unwrap_or_default();
                    let next = ids.len();
                    *ids.entry(label).or_insert(next)
                })
                .collect(),
        )
    } else {
        None
    };
    let panel = Panel::with_labels(y, x, exposure, cluster_id, regions, periods)?;
    let warnings = panel
        .nonpositive_exposure_regions()
        .into_iter()
        .map(|i| {
            format!(
                "region `{}` has nonpositive exposure {}; monotonicity arguments presume positive exposure",
                panel.region_labels[i], panel.exposure[i]
            )
        })
        .collect();
    Ok(PanelFile { panel, warnings })
}

pub fn read_panel(path: &Path) -> Result<PanelFile> {
    parse_panel(open(path)?, &path.display().to_string())
}

/// How the `price` column is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceScale {
    /// Positive price levels; log-transformed and demeaned per sector.
    #[default]
    Level,
    /// Already-centered log prices, used as given.
    Log,
}

/// Parses a price file and aligns it with `periods`. Periods absent from
/// `periods` are ignored; a period of `periods` missing for any sector is an
/// error. `focal` selects the focal sector by label (default: first listed).
pub fn parse_prices<R: Read>(
    input: R,
    source: &str,
    periods: &[String],
    focal: Option<&str>,
    scale: PriceScale,
) -> Result<PriceSystem> {
    let (mut rdr, cols) = reader(input, source, &["period", "sector", "price"])?;
    let (c_per, c_sec, c_pr) = (
        cols.require(source, "period")?,
        cols.require(source, "sector")?,
        cols.require(source, "price")?,
    );
    let period_idx: HashMap<&str, usize> = periods.iter().enumerate().map(|(k, p)| (p.as_str(), k)).collect();
    let mut sectors: Vec<String> = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let period = rec.get(c_per).unwrap_or("");
        let sector = rec.get(c_sec).unwrap_or("").to_string();
        if sector.is_empty() || period.is_empty() {
            return Err(parse_err(source, line, "period and sector must be non-empty"));
        }
        let price = number(source, line, "price", rec.get(c_pr).unwrap_or(""))?;
        if scale == PriceScale::Level && price <= 0.0 {
            return Err(parse_err(
                source,
                line,
                format!("price for sector `{sector}` in period `{period}` is {price}; price levels must be positive"),
            ));
        }
        let s = match sectors.iter().position(|x| *x == sector) {
            Some(s) => s,
            None => {
                sectors.push(sector.clone());
                values.push(vec![None; periods.len()]);
                sectors.len() - 1
            }
        };
        if let Some(&p) = period_idx.get(period) {
            if values[s][p].replace(price).is_some() {
                return Err(parse_err(
                    source,
                    line,
                    format!("duplicate price for sector `{sector}`, period `{period}`"),
                ));
            }
        }
    }
    if sectors.is_empty() {
        return Err(parse_err(source, 1, "no data rows"));
    }
    let mut raw = Array2::zeros((sectors.len(), periods.len()));
    for (s, row) in values.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            raw[[s, p]] = v.ok_or_else(|| Error::MissingPeriod(periods[p].clone()))?;
        }
    }
    let focal_sector = match focal {
        None => 0,
        Some(label) => sectors
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| Error::Config(format!("focal sector `{label}` does not appear in {source}")))?,
    };
    let log_prices = match scale {
        PriceScale::Level => center_log_prices(&raw)?,
        PriceScale::Log => raw,
    };
    PriceSystem::observed(log_prices, focal_sector, sectors)
}

pub fn read_prices(path: &Path, periods: &[String], focal: Option<&str>, scale: PriceScale) -> Result<PriceSystem> {
    parse_prices(open(path)?, &path.display().to_string(), periods, focal, scale)
}

/// Writes a panel in the long format read by [`parse_panel`].
pub fn panel_to_csv(panel: &Panel) -> String {
    let mut out = String::from("region,period,outcome");
    if panel.treatment.is_some() {
        out.push_str(",treatment");
    }
    out.push_str(",exposure");
    if panel.cluster_id.is_some() {
        out.push_str(",cluster");
    }
    out.push('\n');
    for i in 0..panel.n_regions {
        for t in 0..panel.n_periods {
            out.push_str(&format!("{},{},{:?}", panel.region_labels[i], panel.period_labels[t], panel.outcome[[i, t]]));
            if let Some(x) = &panel.treatment {
                out.push_str(&format!(",{:?}", x[[i, t]]));
            }
            out.push_str(&format!(",{:?}", panel.exposure[i]));
            if let Some(c) = &panel.cluster_id {
                out.push_str(&format!(",{}", c[i]));
            }
            out.push('\n');
        }
    }
    out
}

/// Writes log prices as `period,sector,price`.
pub fn prices_to_csv(prices: &PriceSystem, periods: &[String]) -> String {
    let mut out = String::from("period,sector,price\n");
    for (t, label) in periods.iter().enumerate() {
        for s in 0..prices.n_sectors {
            out.push_str(&format!("{label},{},{:?}\n", prices.sector_labels[s], prices.log_prices[[s, t]]));
        }
    }
    out
}
