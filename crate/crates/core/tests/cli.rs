use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_epiextinct"));
    c.env_remove("EPIEXTINCT_SEED");
    c
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    let body: String = csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn validator() -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/summary.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

#[test]
fn bounds_row() {
    let (code, out, _) = run(&["bounds", "--model", "sis", "--lambda", "2", "--gamma", "1", "--a", "0.2", "--pop-size", "100", "--alpha", "0.25"]);
    assert_eq!(code, 0);
    let rows = data_rows(&out);
    let v: Vec<f64> = rows[0].iter().map(|x| x.parse().unwrap()).collect();
    assert!((v[4] - 0.04).abs() < 1e-12);
    assert!((v[5] - 0.4).abs() < 1e-12);
    assert!((v[6] - 4.6752).abs() < 1e-4);
}

#[test]
fn critical_size_from_decimal_epsilon() {
    let (code, out, _) = run(&["critical-size", "--r0", "15", "--epsilon", "2.6667e-4", "--simplified"]);
    assert_eq!(code, 0);
    let n: f64 = data_rows(&out)[0][3].parse().unwrap();
    // The rounded epsilon moves the result by about 25 from 3750^2/15.
    assert!((n - 937_500.0).abs() < 50.0, "{n}");
}

#[test]
fn extinction_mc_repeats_byte_for_byte() {
    let args = ["extinction-mc", "--model", "sis", "--lambda", "1.5", "--gamma", "1", "--pop-size", "60", "--reps", "200", "--seed", "42"];
    let (c1, a, _) = run(&args);
    let (c2, b, _) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    assert_eq!(data_rows(&a).len(), 200);
}

#[test]
fn seed_from_environment_and_flag_precedence() {
    let base = ["simulate", "--model", "sis", "--lambda", "2", "--gamma", "1", "--pop-size", "50", "--t-max", "2"];
    let env_run = bin().args(base).env("EPIEXTINCT_SEED", "17").output().unwrap();
    let env_out = String::from_utf8(env_run.stdout).unwrap();
    assert!(env_out.contains("#@ seed=17\n"));
    let mut with_flag = base.to_vec();
    with_flag.extend(["--seed", "17"]);
    assert_eq!(run(&with_flag).1, env_out);
    let flag_wins = bin().args(&with_flag).env("EPIEXTINCT_SEED", "3").output().unwrap();
    assert_eq!(String::from_utf8(flag_wins.stdout).unwrap(), env_out);
    let bad = bin().args(base).env("EPIEXTINCT_SEED", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(64));
}

#[test]
fn embedded_config_reproduces_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("run.csv");
    let second = dir.path().join("again.csv");
    let f = first.to_str().unwrap();
    let (code, _, _) = run(&["extinction-mc", "--model", "sirs", "--lambda", "3", "--gamma", "1", "--rho", "2", "--pop-size", "15,20", "--reps", "8", "--seed", "5", "--out", f]);
    assert_eq!(code, 0);
    let (code, _, _) = run(&["extinction-mc", "--config", f, "--workers", "2", "--out", second.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    // A config written by one command is refused by another.
    assert_eq!(run(&["ode", "--config", f]).0, 64);
}

#[test]
fn exit_codes() {
    let (code, _, err) = run(&["model-info", "--model", "sis", "--lambda", "1", "--gamma", "2"]);
    assert_eq!(code, 2);
    assert!(err.contains("no endemic equilibrium"), "{err}");
    let (code, _, err) = run(&["model-info", "--model", "sis", "--lambda", "2", "--gamma", "1", "--frobnicate"]);
    assert_eq!(code, 64);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(run(&["bounds", "--model", "sis", "--lambda", "2", "--gamma", "1", "--a", "0.2", "--pop-size", "100", "--alpha", "0.7"]).0, 2);
    assert_eq!(run(&["quasipotential", "--model", "sirs", "--lambda", "2", "--gamma", "1"]).0, 64);
}

#[test]
fn infinite_actions_print_as_inf() {
    let (code, out, _) = run(&["quasipotential", "--model", "sis", "--lambda", "2", "--gamma", "1"]);
    assert_eq!(code, 0);
    let row = &data_rows(&out)[0];
    assert_eq!(row[2], "closed-form");
    assert_eq!(row[3], "inf");
}

#[test]
fn json_outputs_validate() {
    let v = validator();
    let sis = ["--model", "sis", "--lambda", "2", "--gamma", "1"];
    let commands: Vec<Vec<&str>> = vec![
        vec!["model-info"],
        vec!["simulate", "--pop-size", "40", "--t-max", "1"],
        vec!["extinction-mc", "--pop-size", "10,15", "--reps", "10"],
        vec!["ode", "--z0", "0.1", "--t-max", "1", "--dt", "0.01"],
        vec!["quasipotential", "--regime", "md", "--a", "0.1"],
        vec!["bounds", "--a", "0.2", "--pop-size", "100", "--alpha", "0.25"],
        vec!["critical-size", "--r0", "15", "--epsilon", "1/3750", "--alpha", "0.25"],
    ];
    for cmd in commands {
        let mut args = cmd.clone();
        args.extend(sis);
        args.extend(["--format", "json"]);
        let (code, out, err) = run(&args);
        assert_eq!(code, 0, "{cmd:?}: {err}");
        let doc: Value = serde_json::from_str(&out).unwrap();
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{cmd:?}: {errors:?}");
        assert_eq!(doc["schema"], format!("{}/1", cmd[0]));
    }
    let mut broken: Value = serde_json::from_str(&run(&["model-info", "--format", "json", "--model", "sis", "--lambda", "2", "--gamma", "1"]).1).unwrap();
    broken["result"].as_object_mut().unwrap().remove("equilibrium");
    assert!(!v.is_valid(&broken));
}

#[test]
fn ode_columns_follow_model() {
    let (code, out, _) = run(&["ode", "--model", "sir-demography", "--lambda", "10", "--gamma", "1", "--mu", "0.1", "--z0", "0.02,0.5", "--t-max", "0.5", "--dt", "0.1"]);
    assert_eq!(code, 0);
    assert!(out.contains("#@ schema=ode/1\ntime,i,s\n"), "{out}");
    assert_eq!(data_rows(&out).len(), 6);
}
