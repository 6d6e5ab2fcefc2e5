use std::fs;
use std::process::{Command, Output};

use rglab_cli::{all_checks_pass, parse_range, run, sweep, ExperimentConfig, HarnessError, Record, SWEEP_HEADER};

fn rglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rglab")).args(args).output().unwrap()
}

fn records(stdout: &[u8]) -> Vec<Record> {
    String::from_utf8_lossy(stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn closed_form_shub_smale() {
    let out = rglab(&["closed-form", "--formula", "shub-smale", "--degrees", "4,9"]);
    assert!(out.status.success());
    let r = records(&out.stdout);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].value, 6.0);
}

#[test]
fn mc_count_circle_degree_four() {
    let out = rglab(&["mc-count", "--kind", "circle", "--d", "4", "--trials", "2000", "--seed", "7", "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &records(&out.stdout)[0];
    assert!((r.value - 4.0).abs() <= 4.0 * r.stderr);
    assert_eq!(r.check, Some(true));
    assert_eq!(r.config.trials, Some(2000));
    assert_eq!(r.config.params["d"], "4");
}

#[test]
fn param_flag_forms_agree() {
    let a = rglab(&["mc-count", "--d", "9", "--trials", "100", "--seed", "3"]);
    let b = rglab(&["mc-count", "--param", "d=9", "--trials", "100", "--seed", "3"]);
    let c = rglab(&["mc-count", "--d=9", "--trials", "100", "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn rescale_distance_decreases() {
    let at = |d: &str| {
        let cfg = ExperimentConfig::new("rescale-distance").with("d", d);
        run(&cfg).unwrap()[0].value
    };
    let (d10, d100) = (at("10"), at("100"));
    assert!(d100 >= 0.0 && d100 < d10);
}

#[test]
fn sweep_circle_degrees() {
    let cfg = ExperimentConfig {
        seed: 5,
        trials: Some(1000),
        ..ExperimentConfig::new("mc-count")
    };
    let (_, values) = parse_range("d=1,4,9,16,25").unwrap();
    let (csv, recs) = sweep(&cfg, "d", &values).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 6);
    let means: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(recs.len(), 5);
    assert!(lines[1..].iter().all(|l| l.starts_with("mc-count,d,") && l.ends_with(",5")));
}

#[test]
fn empty_range_is_an_error() {
    assert!(matches!(parse_range("d="), Err(HarnessError::InvalidParams(_))));
    assert!(matches!(parse_range("d"), Err(HarnessError::InvalidParams(_))));
    let cfg = ExperimentConfig::new("mc-count");
    assert!(matches!(sweep(&cfg, "d", &[]), Err(HarnessError::InvalidParams(_))));
    let out = rglab(&["sweep", "mc-count", "--range", "d="]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_sweep_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = (0..2).map(|i| dir.path().join(format!("s{i}.csv")).display().to_string()).collect();
    for p in &paths {
        let out = rglab(&["sweep", "mc-count", "--range", "d=1,4,9", "--trials", "300", "--seed", "11", "--out", p]);
        assert!(out.status.success());
    }
    let (a, b) = (fs::read(&paths[0]).unwrap(), fs::read(&paths[1]).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn records_round_trip_through_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("run.jsonl").display().to_string();
    let cases: [&[&str]; 4] = [
        &["mc-count", "--kind", "mixture", "--trials", "200", "--seed", "9"],
        &["kacrice-quadrature", "--kernel", "kostlan", "--d", "25"],
        &["nodal-betti", "--d", "3", "--trials", "4", "--seed", "2"],
        &["kappa", "--field", "kostlan", "--d", "2", "--h", "0.02", "--seed", "4"],
    ];
    for args in cases {
        let mut full = args.to_vec();
        full.extend(["--out", out_path.as_str()]);
        assert!(rglab(&full).status.success());
        let first = records(&fs::read(&out_path).unwrap());
        let cfg_path = dir.path().join("cfg.json");
        fs::write(&cfg_path, serde_json::to_string(&first[0].config).unwrap()).unwrap();
        assert!(rglab(&["--config", cfg_path.to_str().unwrap()]).status.success());
        let second = records(&fs::read(&out_path).unwrap());
        assert_eq!(first, second);
        assert_eq!(first[0].value.to_bits(), second[0].value.to_bits());
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"experiment":"closed-form","params":{"formula":"circle","d":"9"}}"#).unwrap();
    let r = records(&rglab(&["--config", cfg_path.to_str().unwrap()]).stdout);
    assert_eq!(r[0].value, 6.0);
    let r = records(&rglab(&["--config", cfg_path.to_str().unwrap(), "--d", "16"]).stdout);
    assert_eq!(r[0].value, 8.0);
}

#[test]
fn thread_cap_does_not_change_output() {
    let run_with = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_rglab"))
            .args(["mc-count", "--d", "16", "--trials", "500", "--seed", "1"])
            .env("RGLAB_THREADS", threads)
            .output()
            .unwrap()
    };
    let (a, b) = (run_with("1"), run_with("4"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn errors_are_actionable() {
    let out = rglab(&["nope"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("unknown experiment 'nope'") && msg.contains("mc-count"));
    let out = rglab(&["mc-count", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("accepted: kind, d, degrees, series"));
    let out = rglab(&["mc-count", "--d", "four"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot parse d='four'"));
    assert!(matches!(
        run(&ExperimentConfig::new("mc-count").with("kind", "torus")),
        Err(HarnessError::InvalidParams(_))
    ));
}

#[test]
fn check_flag_sets_exit_code() {
    let ok = rglab(&["kappa", "--field", "reach", "--rho", "0.5", "--h", "0.005", "--check"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(records(&ok.stdout)[0].check, Some(true));
    let mut r = records(&ok.stdout);
    assert!(all_checks_pass(&r));
    r[0].check = None;
    assert!(all_checks_pass(&r));
    r[0].check = Some(false);
    assert!(!all_checks_pass(&r));
}

#[test]
fn remaining_experiments_run() {
    for cfg in [
        ExperimentConfig::new("closed-form").with("formula", "mixture"),
        ExperimentConfig {
            trials: Some(20),
            ..ExperimentConfig::new("semicontinuity")
        },
        ExperimentConfig::new("sharp-family").with("ks", "2"),
        ExperimentConfig::new("nodal-betti").with("field", "circle"),
    ] {
        let r = run(&cfg).unwrap();
        assert!(all_checks_pass(&r), "{:?}", r);
    }
    let circle = run(&ExperimentConfig::new("nodal-betti").with("field", "circle")).unwrap();
    assert_eq!(circle[0].value, 1.0);
    let mix = run(&ExperimentConfig::new("closed-form").with("formula", "mixture")).unwrap();
    assert!((mix[0].value - 2.0 * 1.5f64.sqrt()).abs() < 1e-12);
}
