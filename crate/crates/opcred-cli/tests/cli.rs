//! End-to-end tests of the opcred binary: command wiring, exit codes,
//! report content against the bundled demo panel, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use opcred::report::{CapitalReport, FrequencyReport, SeverityReport};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opcred"))
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn opcred")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    let text = std::fs::read_to_string(path).expect("read report");
    serde_json::from_str(&text).expect("parse report")
}

fn assert_row(actual: f64, row: &[f64; 10], cell_id: &str, what: &str) {
    let expected = row[cell_id.parse::<usize>().unwrap() - 1];
    assert!(
        (actual - expected).abs() <= 0.005,
        "{what} for cell {cell_id}: {actual:.4} vs {expected:.4}"
    );
}

const MLE_ROW: [f64; 10] = [2.499, 1.280, 3.688, 2.487, 2.264, 1.992, 6.963, 3.335, 4.194, 2.870];
const BANK_ROW: [f64; 10] = [2.863, 2.319, 3.394, 2.858, 2.759, 2.637, 4.855, 3.236, 3.620, 3.029];
const INDUSTRY_ROW: [f64; 10] =
    [3.085, 2.541, 3.616, 3.080, 2.981, 2.859, 5.077, 3.458, 3.842, 3.251];

#[test]
fn fit_severity_reports_all_three_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-severity",
        demo("losses.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--industry-profile",
        "5.0",
        "--industry-var",
        "0.9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: SeverityReport = read(&dir.path().join("severity_report.json"));
    assert_eq!(report.cells.len(), 10);
    let industry = report.industry.as_ref().unwrap();
    assert!(industry.injected);
    assert_eq!(industry.collective, 5.0);
    let bank = &report.banks[0];
    assert!((bank.profile.unwrap() - 3.157).abs() <= 0.005);
    assert!((bank.bank_weight.unwrap() - 0.782).abs() <= 0.002);
    assert!((bank.adjusted_profile.unwrap() - 3.558).abs() <= 0.005);
    for cell in &report.cells {
        assert_row(cell.mle.unwrap(), &MLE_ROW, &cell.cell_id, "MLE");
        assert_row(cell.bank_credibility, &BANK_ROW, &cell.cell_id, "bank tier");
        assert_row(
            cell.industry_credibility.unwrap(),
            &INDUSTRY_ROW,
            &cell.cell_id,
            "industry tier",
        );
        // Final column carries the deepest tier.
        assert_eq!(cell.tail_parameter, cell.industry_tail_parameter.unwrap());
    }
}

#[test]
fn fit_severity_without_industry_flags_stops_at_the_bank_tier() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-severity",
        demo("losses.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: SeverityReport = read(&dir.path().join("severity_report.json"));
    assert!(report.industry.is_none());
    for cell in &report.cells {
        assert!(cell.industry_credibility.is_none());
        assert_eq!(cell.tail_parameter, cell.bank_tail_parameter);
    }
}

#[test]
fn missing_config_exits_three_and_names_the_path() {
    let out = run(&[
        "fit-severity",
        demo("losses.csv").to_str().unwrap(),
        "/nonexistent/cells.json",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("/nonexistent/cells.json"));
}

#[test]
fn exhausted_iteration_budget_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-severity",
        demo("losses.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--max-iter",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("did not converge"));
}

#[test]
fn fit_frequency_matches_the_recorded_fixture_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-frequency",
        demo("counts.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: FrequencyReport = read(&dir.path().join("frequency_report.json"));
    let profile = report.banks[0].profile.unwrap();
    let reference = 1.8610963332961417;
    assert!(
        ((profile - reference) / reference).abs() <= 1e-6,
        "profile {profile}"
    );
    assert_eq!(report.banks[0].total_volume, Some(125.0));
}

#[test]
fn identical_counts_report_the_degenerate_branch() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"[
        {"bank_id": "1", "cell_id": "a", "threshold": 1.0},
        {"bank_id": "1", "cell_id": "b", "threshold": 1.0}
    ]"#;
    let mut counts = String::from("bank_id,cell_id,year,count\n");
    for cell in ["a", "b"] {
        for year in 2020..2023 {
            counts.push_str(&format!("1,{cell},{year},4\n"));
        }
    }
    std::fs::write(dir.path().join("cells.json"), config).unwrap();
    std::fs::write(dir.path().join("counts.csv"), counts).unwrap();

    let out = run(&[
        "fit-frequency",
        dir.path().join("counts.csv").to_str().unwrap(),
        dir.path().join("cells.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: FrequencyReport = read(&dir.path().join("frequency_report.json"));
    assert_eq!(report.banks[0].degenerate, Some(true));
    assert_eq!(report.banks[0].between_variance, Some(0.0));
    for cell in &report.cells {
        assert_eq!(cell.weight, 0.0);
        assert_eq!(cell.credibility, report.banks[0].profile.unwrap());
    }
}

#[test]
fn zero_industry_variance_pins_the_profile_to_the_collective() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fit-frequency",
        demo("counts.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--industry-rate",
        "2.0",
        "--industry-var",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: FrequencyReport = read(&dir.path().join("frequency_report.json"));
    // Zero collective variance: the collective is exact, the bank weight
    // collapses to zero and the adjusted profile equals the collective.
    assert_eq!(report.banks[0].bank_weight, Some(0.0));
    assert_eq!(report.banks[0].adjusted_profile, Some(2.0));
}

#[test]
fn multi_bank_panels_reject_injection_flags() {
    let dir = tempfile::tempdir().unwrap();
    let synth_out = run(&[
        "synth",
        "--banks",
        "2",
        "--cells",
        "4",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(synth_out.status.success(), "{}", stderr(&synth_out));

    let out = run(&[
        "fit-severity",
        dir.path().join("losses.csv").to_str().unwrap(),
        dir.path().join("cells.json").to_str().unwrap(),
        "--industry-profile",
        "3.0",
        "--industry-var",
        "0.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("single-bank"));
}

#[test]
fn fit_reports_are_byte_identical_across_reruns() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "fit-severity",
            demo("losses.csv").to_str().unwrap(),
            demo("cells.json").to_str().unwrap(),
            "--industry-profile",
            "5.0",
            "--industry-var",
            "0.9",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["severity_report.json", "severity_report.txt"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

fn fit_demo_reports(dir: &Path) {
    let out = run(&[
        "fit-severity",
        demo("losses.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "fit-frequency",
        demo("counts.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn capital_reports_are_byte_identical_for_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    fit_demo_reports(dir.path());
    let severity = dir.path().join("severity_report.json");
    let frequency = dir.path().join("frequency_report.json");

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "capital",
            severity.to_str().unwrap(),
            frequency.to_str().unwrap(),
            "--paths",
            "100000",
            "--seed",
            "42",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["capital_report.json", "capital_report.txt"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs for a fixed seed");
    }
}

#[test]
fn zero_rates_give_zero_var_at_every_quantile() {
    let dir = tempfile::tempdir().unwrap();
    fit_demo_reports(dir.path());

    // All-zero counts for the same cells: every arrival rate collapses to 0.
    let mut counts = String::from("bank_id,cell_id,year,count\n");
    for cell in 1..=10 {
        for year in 2015..2025 {
            counts.push_str(&format!("1,{cell},{year},0\n"));
        }
    }
    std::fs::write(dir.path().join("zero_counts.csv"), counts).unwrap();
    let out = run(&[
        "fit-frequency",
        dir.path().join("zero_counts.csv").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.path().join("zero").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(&[
        "capital",
        dir.path().join("severity_report.json").to_str().unwrap(),
        dir.path().join("zero/frequency_report.json").to_str().unwrap(),
        "--paths",
        "20000",
        "--quantile",
        "0.9",
        "--quantile",
        "0.999",
        "--out",
        dir.path().join("zero").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: CapitalReport = read(&dir.path().join("zero/capital_report.json"));
    for q in &report.bank.quantiles {
        assert_eq!(q.value, 0.0);
    }
    for cell in &report.cells {
        assert_eq!(cell.summary.mean, 0.0);
        for q in &cell.summary.quantiles {
            assert_eq!(q.value, 0.0);
        }
    }
}

#[test]
fn doubling_every_rate_does_not_lower_var() {
    let dir = tempfile::tempdir().unwrap();
    fit_demo_reports(dir.path());

    let mut doubled: FrequencyReport = read(&dir.path().join("frequency_report.json"));
    for cell in &mut doubled.cells {
        cell.arrival_rate *= 2.0;
    }
    let doubled_path = dir.path().join("frequency_doubled.json");
    std::fs::write(&doubled_path, serde_json::to_string_pretty(&doubled).unwrap()).unwrap();

    let var_for = |frequency: &Path, out_dir: &Path| -> f64 {
        let out = run(&[
            "capital",
            dir.path().join("severity_report.json").to_str().unwrap(),
            frequency.to_str().unwrap(),
            "--paths",
            "100000",
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let report: CapitalReport = read(&out_dir.join("capital_report.json"));
        report.bank.quantiles[0].value
    };
    let base = var_for(&dir.path().join("frequency_report.json"), &dir.path().join("base"));
    let double = var_for(&doubled_path, &dir.path().join("double"));
    assert!(
        double >= base,
        "doubled rates lowered VaR: {double:.3} < {base:.3}"
    );
}

#[test]
fn mismatched_reports_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fit_demo_reports(dir.path());

    // A different panel: same bank id but a different cell set.
    let synth_dir = dir.path().join("other");
    let out = run(&[
        "synth",
        "--banks",
        "1",
        "--cells",
        "3",
        "--seed",
        "5",
        "--out",
        synth_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "fit-frequency",
        synth_dir.join("counts.csv").to_str().unwrap(),
        synth_dir.join("cells.json").to_str().unwrap(),
        "--out",
        synth_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = run(&[
        "capital",
        dir.path().join("severity_report.json").to_str().unwrap(),
        synth_dir.join("frequency_report.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("only in the"));
}

#[test]
fn synth_is_deterministic_and_fits_cleanly() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "synth",
            "--banks",
            "3",
            "--cells",
            "5",
            "--seed",
            "11",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["losses.csv", "counts.csv", "cells.json", "truth.json", "manifest.json"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between equal-seed runs");
    }

    // The generated panel feeds both industry fits without error.
    let out = run(&[
        "fit-severity",
        dir_a.path().join("losses.csv").to_str().unwrap(),
        dir_a.path().join("cells.json").to_str().unwrap(),
        "--out",
        dir_a.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: SeverityReport = read(&dir_a.path().join("severity_report.json"));
    assert!(report.industry.is_some());
    assert_eq!(report.banks.len(), 3);

    let out = run(&[
        "fit-frequency",
        dir_a.path().join("counts.csv").to_str().unwrap(),
        dir_a.path().join("cells.json").to_str().unwrap(),
        "--out",
        dir_a.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn zero_mixing_variance_collapses_the_truth_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--banks",
        "2",
        "--cells",
        "4",
        "--severity-between",
        "0",
        "--severity-within",
        "0",
        "--seed",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let truth: serde_json::Value = read(&dir.path().join("truth.json"));
    for bank in truth.as_array().unwrap() {
        assert_eq!(bank["severity_profile"].as_f64().unwrap(), 3.0);
        for cell in bank["cells"].as_array().unwrap() {
            assert_eq!(cell["severity"].as_f64().unwrap(), 3.0);
        }
    }
}

#[test]
fn calibrate_fills_the_example_scales() {
    let dir = tempfile::tempdir().unwrap();
    let opinions = r#"[
        {"bank_id": "1", "cell_id": "1", "kind": "severity", "level": 10.0, "probability": 0.1},
        {"bank_id": "1", "cell_id": "2", "kind": "frequency", "expected_count": 5.0}
    ]"#;
    std::fs::write(dir.path().join("opinions.json"), opinions).unwrap();

    let out = run(&[
        "calibrate",
        dir.path().join("opinions.json").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let configs: Vec<serde_json::Value> = read(&dir.path().join("calibrated_cells.json"));
    for config in &configs {
        let cell = config["cell_id"].as_str().unwrap();
        let severity = config["severity_scale"].as_f64().unwrap();
        let frequency = config["frequency_scale"].as_f64().unwrap();
        match cell {
            // -ln(0.1) / ln(10/1) = 1 against the unit reference profile.
            "1" => {
                assert!((severity - 1.0).abs() <= 1e-12);
                assert_eq!(frequency, 1.0);
            }
            // Expected count 5 against the unit reference rate.
            "2" => {
                assert_eq!(severity, 1.0);
                assert_eq!(frequency, 5.0);
            }
            _ => {
                assert_eq!(severity, 1.0);
                assert_ne!(frequency, 0.0);
            }
        }
    }
}

#[test]
fn empty_opinions_warn_and_leave_the_config_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("opinions.json"), "[]").unwrap();

    let out = run(&[
        "calibrate",
        dir.path().join("opinions.json").to_str().unwrap(),
        demo("cells.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("no opinions"));

    // The output is in canonical key order; compare cell by cell.
    let by_cell = |configs: Vec<serde_json::Value>| -> std::collections::BTreeMap<String, serde_json::Value> {
        configs
            .into_iter()
            .map(|c| (c["cell_id"].as_str().unwrap().to_string(), c))
            .collect()
    };
    let before = by_cell(read(&demo("cells.json")));
    let after = by_cell(read(&dir.path().join("calibrated_cells.json")));
    assert_eq!(before.len(), after.len());
    for (cell, b) in &before {
        let a = &after[cell];
        assert_eq!(b["bank_id"], a["bank_id"]);
        assert_eq!(b["threshold"].as_f64(), a["threshold"].as_f64());
        assert_eq!(
            b.get("severity_scale").and_then(|v| v.as_f64()).unwrap_or(1.0),
            a["severity_scale"].as_f64().unwrap()
        );
        assert_eq!(
            b.get("frequency_scale").and_then(|v| v.as_f64()).unwrap_or(1.0),
            a["frequency_scale"].as_f64().unwrap()
        );
    }
}
