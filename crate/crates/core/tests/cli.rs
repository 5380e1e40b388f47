use std::path::Path;
use std::process::Command;

use clap::CommandFactory;
use pexposure::cli::{estimate_from_report, Cli};
use pexposure::config::PopulationFile;
use pexposure::dgp::{draw_population, draw_prices, generate_panel};
use pexposure::estimators::{fit_2sls, EstimatorKind, EstimatorSpec};
use pexposure::panel::FixedEffects;
use pexposure::sensitivity::{breakdown_point, imbens_manski_interval, ImForm};
use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_pexposure")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn json(args: &[&str]) -> Value {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    serde_json::from_str(&r.stdout).unwrap()
}

const ESTIMATE: [&str; 7] = ["estimate", "--panel", "data/panel.csv", "--prices", "data/prices.csv", "--focal", "gold"];

fn close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{path}: {x} vs {y}");
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in x {
                close(v, &y[k], &format!("{path}.{k}"));
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (k, (u, v)) in x.iter().zip(y).enumerate() {
                close(u, v, &format!("{path}[{k}]"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn estimate_matches_golden_report() {
    let got = json(&ESTIMATE);
    let want: Value = serde_json::from_str(&std::fs::read_to_string("tests/golden/estimate.json").unwrap()).unwrap();
    close(&got, &want, "$");
    assert_eq!(got["ratio_check"]["consistent"], Value::Bool(true));
}

#[test]
fn requested_methods_give_one_block_each() {
    let mut args = ESTIMATE.to_vec();
    args.extend(["--methods", "pe,cluster_region"]);
    let v = json(&args);
    let blocks = v["two_sls"]["variances"].as_array().unwrap();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0]["method"], "price_exposure");
    assert_eq!(blocks[1]["method"], "cluster_region");
}

#[test]
fn table_format_is_plain_text() {
    let mut args = ESTIMATE.to_vec();
    args.extend(["--format", "table"]);
    let r = run(&args);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("two_way"));
    assert!(serde_json::from_str::<Value>(&r.stdout).is_err());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "replicatons = 5\n[[rows]]\nn = 5\nt = 5\n").unwrap();
    let r = run(&["mc", cfg.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("replicatons"), "{}", r.stderr);
}

#[test]
fn missing_file_exits_with_input_error() {
    let r = run(&["estimate", "--panel", "no/such/panel.csv", "--prices", "data/prices.csv", "--focal", "gold"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("no/such/panel.csv"), "{}", r.stderr);
}

#[test]
fn zero_exposure_is_a_degenerate_design() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let text = std::fs::read_to_string("data/panel.csv").unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let at = header.split(',').position(|c| c == "exposure").unwrap();
    let mut out = vec![header.to_string()];
    for line in lines {
        let mut cells: Vec<&str> = line.split(',').collect();
        cells[at] = "0";
        out.push(cells.join(","));
    }
    std::fs::write(&panel, out.join("\n")).unwrap();
    let r = run(&["estimate", "--panel", panel.to_str().unwrap(), "--prices", "data/prices.csv", "--focal", "gold"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn missing_price_period_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    let text = std::fs::read_to_string("data/prices.csv").unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("2013,")).collect();
    std::fs::write(&prices, kept.join("\n")).unwrap();
    let r = run(&["estimate", "--panel", "data/panel.csv", "--prices", prices.to_str().unwrap(), "--focal", "gold"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("2013"), "{}", r.stderr);
}

#[test]
fn help_lists_every_flag() {
    let cli = Cli::command();
    for sub in cli.get_subcommands() {
        let name = sub.get_name();
        let r = run(&[name, "--help"]);
        assert_eq!(r.code, 0);
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(r.stdout.contains(&format!("--{long}")), "`{name} --help` lacks --{long}");
            }
        }
    }
}

#[test]
fn sensitivity_from_report_matches_direct_call() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("estimate.json");
    std::fs::write(&report, run(&ESTIMATE).stdout).unwrap();
    let v = json(&[
        "sensitivity", "--report", report.to_str().unwrap(), "--b-lower", "-0.1", "--b-upper", "0.25", "--null", "0",
    ]);
    let (beta, se) = estimate_from_report(&report).unwrap();
    let direct = imbens_manski_interval(beta, se, -0.1, 0.25, 0.05, ImForm::Symmetric).unwrap();
    assert_eq!(v["beta_hat"].as_f64().unwrap(), beta);
    assert_eq!(v["std_error"].as_f64().unwrap(), se);
    let near = |key: &Value, want: f64| assert!((key.as_f64().unwrap() - want).abs() < 1e-12, "{key} vs {want}");
    near(&v["im_interval"][0], direct.im_interval[0]);
    near(&v["im_interval"][1], direct.im_interval[1]);
    near(&v["breakdown_point"], breakdown_point(beta, se, 0.05, 0.0).unwrap());
}

#[test]
fn sensitivity_needs_an_estimate() {
    assert_eq!(run(&["sensitivity", "--beta-hat", "1.0"]).code, 2);
}

#[test]
fn oracle_reports_decomposition_and_audit() {
    let v = json(&["oracle", "configs/independent.toml"]);
    assert_eq!(v["decomposition"]["contamination_price"].as_f64(), Some(0.0));
    assert!(v["weight_audit"].is_object());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ge0.toml");
    let text = std::fs::read_to_string("configs/general_equilibrium.toml").unwrap();
    let text = text
        .lines()
        .map(|l| if l.starts_with("gamma") { r#"gamma = { family = "constant", value = 0.0 }"# } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&cfg, text).unwrap();
    let v = json(&["oracle", cfg.to_str().unwrap()]);
    assert_eq!(v["decomposition"]["contamination_ge"].as_f64(), Some(0.0));

    let v = json(&["oracle", "configs/general_equilibrium.toml"]);
    assert_ne!(v["decomposition"]["contamination_ge"].as_f64(), Some(0.0));
}

#[test]
fn model_flags_non_monotone_regions() {
    let v = json(&["model", "configs/model_single_sector.toml"]);
    assert_eq!(v["all_monotone"], Value::Bool(true));
    let v = json(&["model", "configs/model_non_monotone.toml"]);
    assert_eq!(v["all_monotone"], Value::Bool(false));
    assert_eq!(v["non_monotone_regions"].as_array().unwrap().len(), 1);
    let sweep = &v["sweep"];
    assert!(sweep["points"].as_array().unwrap().len() > 2);
    assert!(sweep["phi_star"].is_number());

    let v = json(&["model", "configs/model_single_sector.toml", "--sweep-region", "0", "--steps", "7"]);
    assert_eq!(v["sweep"]["points"].as_array().unwrap().len(), 7);
}

#[test]
fn mc_seed_override_changes_numbers_not_layout() {
    let a = json(&["mc", "configs/quick.toml", "--format", "json"]);
    let b = json(&["mc", "configs/quick.toml", "--format", "json", "--seed", "99"]);
    assert_ne!(a["rows"], b["rows"]);
    assert_eq!(b["master_seeds"][0].as_u64(), Some(99));

    let ta = run(&["mc", "configs/quick.toml"]).stdout;
    let tb = run(&["mc", "configs/quick.toml", "--seed", "99"]).stdout;
    let header = |t: &str| t.lines().find(|l| l.contains("scenario")).map(String::from);
    assert!(header(&ta).is_some());
    assert_eq!(header(&ta), header(&tb));
}

#[test]
fn mc_writes_per_replication_draws() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("draws.csv");
    let r = run(&["mc", "configs/quick.toml", "--replications", "5", "--draws-csv", csv.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("scenario,"));
    assert_eq!(text.lines().count(), 1 + 2 * 5);
}

#[test]
fn simulate_round_trips_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["simulate", "configs/simulate.toml", "--out-dir", out]).code, 0);
    let v = json(&[
        "estimate",
        "--panel",
        &format!("{out}/panel.csv"),
        "--prices",
        &format!("{out}/prices.csv"),
        "--prices-are-log",
        "--focal",
        "s0",
    ]);
    let file = PopulationFile::load(Path::new("configs/simulate.toml")).unwrap();
    let pop = draw_population(&file.population, file.seed).unwrap();
    let prices = draw_prices(&file.price_spec().unwrap(), file.population.n_periods, file.seed).unwrap();
    let panel = generate_panel(&pop, &prices).unwrap().panel;
    let spec = EstimatorSpec::new(EstimatorKind::TwoSls, FixedEffects::TwoWay);
    let direct = fit_2sls(&panel, &prices, &spec).unwrap().coefficient;
    let via_files = v["two_sls"]["fit"]["coefficient"].as_f64().unwrap();
    assert!((direct - via_files).abs() < 1e-9, "{direct} vs {via_files}");
}
