//! End-to-end runs of the `miph` binary.

mod common;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use miph::data::write_model;
use miph::{InitialVector, SubIntensity};
use ndarray::array;

fn miph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miph")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = miph(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Rows of a CSV body as maps from header to value.
fn rows(text: &str) -> Vec<HashMap<String, String>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

#[test]
fn fit_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("truth.json");
    write_model(&model, &common::small_model()).unwrap();
    let data = dir.path().join("data.csv");
    ok(&["simulate", "--model", p(&model), "--ages", "63,60", "--n", "80", "--censoring", "0.2", "--seed", "3", "--output", p(&data)]);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("fit{k}.json"));
        let summary = ok(&[
            "fit", "--data", p(&data), "--p", "2", "--iterations", "4", "--seed", "9", "--threads", "1", "--output", p(&out),
        ]);
        assert!(summary.contains("p = 2") && summary.contains("iterations = "));
        let trace = fs::read_to_string(format!("{}.trace.csv", out.display())).unwrap();
        assert_eq!(trace.lines().next(), Some("iteration,log_lik"));
        outputs.push((fs::read(&out).unwrap(), trace));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(text.contains("\"format\": \"miph-v1\""));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = dir.path().join("m.json");
    assert_eq!(miph(&["fit", "--data", p(&missing), "--p", "2", "--output", p(&out)]).status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "time1,time2,delta1,delta2,age1,age2\n1,2,7,1,60,60\n").unwrap();
    let res = miph(&["fit", "--data", p(&bad), "--p", "2", "--output", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("row 1"));
    assert_eq!(miph(&["eval", "--model", p(&missing), "--point", "1,1"]).status.code(), Some(2));
    assert_eq!(miph(&["fit", "--p", "2"]).status.code(), Some(2));

    // a query far from every observed age underflows the kernel
    let data = dir.path().join("d.csv");
    fs::write(&data, "time1,time2,delta1,delta2,age1,age2\n1,2,1,1,60,60\n3,4,1,0,61,62\n").unwrap();
    let res = miph(&["beran", "--data", p(&data), "--ages", "100,100"]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn eval_values_and_grid() {
    let couple1 = common::data_path("couple1.json");
    let text = ok(&["eval", "--model", p(&couple1), "--point", "0,0", "--point", "12,30", "--point", "30,12"]);
    let r = rows(&text);
    assert_eq!(num(&r[0], "survival"), 1.0);
    assert_eq!(num(&r[0], "cdf"), 0.0);
    assert!((num(&r[1], "survival") - 0.32).abs() < 0.01);
    assert!((num(&r[2], "survival") - 0.118).abs() < 0.01);

    let grid = ok(&["eval", "--model", p(&couple1), "--grid", "40,7"]);
    assert_eq!(rows(&grid).len(), 49);

    let scaled = ok(&["eval", "--model", p(&couple1), "--point", "0.12,0.30", "--scaled"]);
    assert_eq!(num(&rows(&scaled)[0], "survival"), num(&r[1], "survival"));

    let reg = common::data_path("couple_regression.json");
    assert_eq!(miph(&["eval", "--model", p(&reg), "--point", "1,1"]).status.code(), Some(2));
    let res = miph(&["eval", "--model", p(&reg), "--ages", "160,63", "--point", "1,1"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("extrapolating"));
}

#[test]
fn measures_agree_with_eval() {
    let couple3 = common::data_path("couple3.json");
    let dir = tempfile::tempdir().unwrap();
    let curves = dir.path().join("curves.csv");
    let stdout = ok(&["measures", "--model", p(&couple3), "--grid-max", "20", "--grid-points", "5", "--output", p(&curves)]);
    assert!(stdout.contains("kendall_tau"));
    let r = rows(&fs::read_to_string(&curves).unwrap());
    let scalar = |name: &str| num(r.iter().find(|x| x["curve"] == name).unwrap(), "value");
    assert!((scalar("kendall_tau") - 0.4367).abs() < 0.02);
    assert!((scalar("spearman_rho") - 0.6144).abs() < 0.03);

    let cr: Vec<_> = r.iter().filter(|x| x["curve"] == "cross_ratio").collect();
    assert_eq!(cr.len(), 30);
    assert_eq!(num(cr[0], "y1"), 0.0);
    assert_eq!(num(cr[29], "y1"), 29.0);

    let psi1: Vec<_> = r.iter().filter(|x| x["curve"] == "psi1").collect();
    assert_eq!(psi1.len(), 25);
    let mut args = vec!["eval".to_string(), "--model".into(), p(&couple3).into()];
    for row in &psi1 {
        let (a, b) = (&row["y1"], &row["y2"]);
        for pt in [format!("{a},{b}"), format!("{a},0"), format!("0,{b}")] {
            args.push("--point".into());
            args.push(pt);
        }
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let ev = rows(&ok(&args));
    for (k, row) in psi1.iter().enumerate() {
        let s = num(&ev[3 * k], "survival");
        let from_eval = s / (num(&ev[3 * k + 1], "survival") * num(&ev[3 * k + 2], "survival"));
        assert!((from_eval - num(row, "value")).abs() < 1e-10);
    }
}

#[test]
fn single_state_model_has_flat_curves() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("one.json");
    let sub = SubIntensity::new(array![[-2.0]]).unwrap();
    write_model(&model, &common::bivariate(sub.clone(), 1.0, sub, 3.0, InitialVector::uniform(1))).unwrap();
    let r = rows(&ok(&["measures", "--model", p(&model), "--grid-points", "4", "--cr-points", "4"]));
    for row in &r {
        if row["curve"] == "kendall_tau" || row["curve"] == "spearman_rho" {
            assert!(num(row, "value").abs() < 1e-12);
        } else {
            assert!((num(row, "value") - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn simulate_and_beran() {
    let dir = tempfile::tempdir().unwrap();
    let couple1 = common::data_path("couple1.json");
    let empty = dir.path().join("empty.csv");
    ok(&["simulate", "--model", p(&couple1), "--ages", "63,63", "--n", "0", "--output", p(&empty)]);
    assert_eq!(fs::read_to_string(&empty).unwrap(), "time1,time2,delta1,delta2,age1,age2\n");

    let ages = dir.path().join("ages.csv");
    fs::write(&ages, "age1,age2\n63,63\n68,63\n").unwrap();
    let mut files = Vec::new();
    for (k, seed) in [(0, "1"), (1, "1"), (2, "2")] {
        let out = dir.path().join(format!("s{k}.csv"));
        ok(&["simulate", "--model", p(&couple1), "--ages-csv", p(&ages), "--n", "50", "--censoring", "0.1", "--seed", seed, "--output", p(&out)]);
        files.push(fs::read_to_string(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
    assert!(rows(&files[0])[1]["age1"] == "68");

    let data = dir.path().join("s0.csv");
    let r = rows(&ok(&["beran", "--data", p(&data), "--ages", "63,63", "--grid-points", "11"]));
    assert_eq!(r.len(), 11);
    assert_eq!(num(&r[0], "survival1"), 1.0);
    assert!(r.windows(2).all(|w| num(&w[1], "survival1") <= num(&w[0], "survival1")));
}
