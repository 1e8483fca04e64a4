use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use dissdim_core::io;
use dissdim_core::weak_balance::{GridSpec, GriddedField};
use serde_json::Value;

fn dissdim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dissdim")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = dissdim(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(args: &[&str], code: i32) -> Value {
    let out = dissdim(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    serde_json::from_slice(&out.stderr).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn exponent_examples() {
    let v = ok_json(&["exponents", "--regime", "euler", "--d", "3", "--q", "inf", "--r", "inf"]);
    assert_eq!((v["s"].as_f64(), v["alpha"].as_f64()), (Some(3.0), Some(1.0)));
    assert_eq!(v["schema"], "dissdim/1");
    assert_eq!(v["r"], "inf");

    let v = ok_json(&["exponents", "--regime", "claw", "--d", "1", "--r", "inf"]);
    assert_eq!(v["s"].as_f64(), Some(1.0));

    // outside the Serrin range the three-term minimum is reported, not the closed form
    let v = ok_json(&[
        "exponents",
        "--regime",
        "ns",
        "--d",
        "3",
        "--q",
        "8",
        "--r",
        "6",
        "--alpha",
        "2",
    ]);
    assert_eq!(v["s"].as_f64(), Some(1.5));
    assert!(v.get("closed_form").is_none());

    let v = ok_json(&["exponents", "--regime", "ns", "--d", "3", "--q", "4", "--r", "6"]);
    assert!((v["s"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["closed_form"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let v = ok_json(&[
        "exponents",
        "--regime",
        "euler",
        "--d",
        "3",
        "--case",
        "sobolev_beta",
        "--param",
        "0.5",
    ]);
    assert!((v["s"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let v = ok_json(&["exponents", "--regime", "euler", "--d", "3", "--case", "besov_13"]);
    assert!((v["s"].as_f64().unwrap() - 5.0 / 3.0).abs() < 1e-12);
    assert_eq!(v["endpoint_limit"], true);
}

#[test]
fn validation_errors_exit_with_two() {
    let e = err_json(&["exponents", "--regime", "euler", "--d", "3", "--q", "2"], 2);
    assert_eq!(e["error"]["kind"], "invalid_parameter");
    let e = err_json(&["exponents", "--regime", "ns", "--d", "3", "--case", "besov_13"], 2);
    assert_eq!(e["error"]["kind"], "invalid_parameter");

    let dir = tempfile::tempdir().unwrap();
    let empty = path(dir.path(), "empty.txt");
    std::fs::write(&empty, "dissdim-measure v1 d=1 n=0\n").unwrap();
    let e = err_json(&["dimension", "--measure", &empty], 2);
    assert_eq!(e["error"]["kind"], "empty_support");
    assert_eq!(e["error"]["message"], "empty support");

    let bad = path(dir.path(), "bad.txt");
    std::fs::write(&bad, "dissdim-measure v1 d=1 n=2\n0 0.5 1\n0 oops 1\n").unwrap();
    let e = err_json(&["dimension", "--measure", &bad], 2);
    assert_eq!(e["error"]["line"], 3);

    let e = err_json(&["dimension", "--measure", &path(dir.path(), "missing.txt")], 2);
    assert_eq!(e["error"]["kind"], "io");

    let meas = path(dir.path(), "m.txt");
    std::fs::write(&meas, "dissdim-measure v1 d=1 n=1\n0 0.5 1\n").unwrap();
    let e = err_json(&["dimension", "--measure", &meas, "--ratio", "1.5"], 2);
    assert_eq!(e["error"]["kind"], "invalid_parameter");

    let out = Command::new(env!("CARGO_BIN_EXE_dissdim"))
        .args(["exponents", "--regime", "claw", "--d", "1"])
        .env("DISSDIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn burgers_shock_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (field, measure, csv) = (
        path(dir.path(), "f.bin"),
        path(dir.path(), "m.bin"),
        path(dir.path(), "d.csv"),
    );
    let manifest = ok_json(&[
        "burgers",
        "--ul",
        "1",
        "--ur",
        "-1",
        "--nx",
        "1601",
        "--nt",
        "2049",
        "--field-out",
        &field,
        "--measure-out",
        &measure,
        "--measure-format",
        "binary",
    ]);
    assert!((manifest["total_dissipation"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(manifest["shock_speed"].as_f64(), Some(0.0));

    let dim = ok_json(&[
        "dimension",
        "--measure",
        &measure,
        "--alpha",
        "1",
        "--delta-max",
        "0.125",
        "--csv",
        &csv,
    ]);
    assert!((dim["dim_estimate"].as_f64().unwrap() - 1.0).abs() < 0.1);
    assert!(dim["certified_s"].as_f64().unwrap() >= 0.9);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().next(), Some("delta,count,density,fit_slope,residual"));
    assert_eq!(table.lines().count(), 7);

    // on-shock sweep: weak mass ≈ 2δ, slope one
    let v = path(dir.path(), "v.csv");
    let summary = ok_json(&[
        "verify",
        "--field",
        &field,
        "--alpha",
        "1",
        "--delta-max",
        "0.2",
        "--count",
        "4",
        "--csv",
        &v,
    ]);
    assert!(
        (summary["fitted_slope"].as_f64().unwrap() - 1.0).abs() < 0.1,
        "{summary}"
    );
    assert!(summary["max_ratio"].as_f64().unwrap() <= 1.0);
    assert_eq!(summary["rows"], 4);

    // cylinders leaving the domain are counted, not fatal
    let summary = ok_json(&[
        "verify",
        "--field",
        &field,
        "--center",
        "1.9,0.5",
        "--delta-max",
        "0.25",
        "--count",
        "3",
    ]);
    assert_eq!(summary["skipped"], 3);
}

#[test]
fn viscous_run_and_morrey_column() {
    let dir = tempfile::tempdir().unwrap();
    let (field, manifest) = (path(dir.path(), "f.csv"), path(dir.path(), "run.json"));
    let m = ok_json(&[
        "burgers",
        "--ul",
        "1",
        "--ur",
        "-1",
        "--nu",
        "1e-3",
        "--a",
        "-0.05",
        "--b",
        "0.05",
        "--nx",
        "500",
        "--t-end",
        "0.2",
        "--nt",
        "201",
        "--field-out",
        &field,
        "--manifest-out",
        &manifest,
    ]);
    assert_eq!(m["kind"], "viscous");
    assert!(m["stability_margin"].as_f64().unwrap() <= 0.9 + 1e-12);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(saved, m);

    let rows = path(dir.path(), "rows.csv");
    ok_json(&[
        "verify",
        "--field",
        &field,
        "--alpha",
        "2",
        "--nu",
        "1e-3",
        "--center",
        "0,0.1",
        "--delta-max",
        "0.02",
        "--count",
        "3",
        "--csv",
        &rows,
    ]);
    let table = std::fs::read_to_string(&rows).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("x0,t,delta,weak_mass,holder_bound,ratio,morrey"));
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (weak, bound, morrey) = (cols[3], cols[4], cols[6]);
        assert!(morrey >= 0.0 && morrey <= weak && weak <= bound, "{line}");
    }
}

#[test]
fn shear_flow_sweep_is_null() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::new(2, 0.0, 1.0, 129, 1.0, 65).unwrap();
    let field = GriddedField::sample(spec, |x, _, u| {
        u[0] = (2.0 * std::f64::consts::PI * x[1]).cos();
        u[1] = 0.0;
    })
    .unwrap()
    .with_pressure_fn(|_, _| 0.0)
    .unwrap();
    let file = path(dir.path(), "shear.bin");
    io::write_field_binary(&field, File::create(&file).unwrap()).unwrap();
    let summary = ok_json(&["verify", "--field", &file, "--delta-max", "0.2", "--count", "3"]);
    assert_eq!(summary["pair"], "euler_energy");
    assert!(summary["max_ratio"].as_f64().unwrap() < 1e-10, "{summary}");
}

#[test]
fn vfield_masses_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "v.bin");
    let v = ok_json(&[
        "vfield", "--d", "3", "--eps", "0.5", "--delta", "0.25", "--nx", "17", "--out", &out,
    ]);
    let ball = &v["balls"][0];
    assert!((ball["quadrature"].as_f64().unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-6);
    let field = io::read_field(Path::new(&out)).unwrap();
    assert_eq!((field.d(), field.spec().nt), (3, 2));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let field = path(dir.path(), "f.bin");
    ok_json(&[
        "burgers",
        "--ul",
        "2",
        "--ur",
        "0",
        "--x0",
        "-0.5",
        "--nx",
        "401",
        "--nt",
        "201",
        "--field-out",
        &field,
    ]);
    let args = [
        "verify",
        "--field",
        &field,
        "--center",
        "0,0.5",
        "--center=-0.2,0.3",
        "--delta-max",
        "0.2",
    ];
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|n| {
            let out = Command::new(env!("CARGO_BIN_EXE_dissdim"))
                .args(args)
                .env("DISSDIM_THREADS", n)
                .output()
                .unwrap();
            assert!(out.status.success());
            out.stdout
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}
