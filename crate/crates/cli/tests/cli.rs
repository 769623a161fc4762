use std::fs;
use std::path::Path;
use std::process::Command;

use contraq::scenario::{CheckSpec, ConstraintSpec, FieldSpec, Kind, MetricSpec};
use contraq::{list_scenarios, load_bundled, load_scenario, parse_scenario, run, CliError, RunOptions};

fn parse(text: &str) -> contraq::Result<contraq::Scenario> {
    parse_scenario(text, Path::new("test.json"))
}

const MINIMAL_FLOW: &str = r#"{
  "schema_version": 1,
  "name": "free",
  "kind": "flow",
  "field": {"type": "linear_decay", "dim": 2, "rate": 1.0},
  "constraints": [],
  "initial": {"x": [1.0, 0.5]},
  "sim": {"dt": 0.01, "t_end": 1.0},
  "checks": [{"type": "bounds", "expect": {"lambda_min": -1.0, "lambda_max": -1.0, "tol": 1e-12}}]
}"#;

#[test]
fn bundled_parabola_loads() {
    let s = load_bundled("example1_parabola").unwrap();
    assert_eq!(s.kind, Kind::Flow);
    assert_eq!(s.constraints.len(), 1);
    assert!(matches!(&s.constraints[0], ConstraintSpec::Quadratic { label, .. } if label == "parabola"));
    match s.field.unwrap() {
        FieldSpec::Affine { a, b } => {
            assert_eq!(a, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
            assert_eq!(b, Some(vec![0.0, 1.0]));
        }
        other => panic!("unexpected field {other:?}"),
    }
}

#[test]
fn bundled_envelope_loads() {
    let s = load_bundled("example3_envelope").unwrap();
    assert_eq!(s.kind, Kind::Hamiltonian);
    assert_eq!(s.constraints.len(), 2);
    assert!(s.constraints.iter().all(|c| matches!(c, ConstraintSpec::Linear { .. })));
    match s.metric.unwrap() {
        MetricSpec::Constant { m } => assert_eq!(m, vec![vec![2.0, 1.0], vec![1.0, 2.0]]),
        other => panic!("unexpected metric {other:?}"),
    }
}

#[test]
fn loads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("free.json");
    fs::write(&path, MINIMAL_FLOW).unwrap();
    let s = load_scenario(&path).unwrap();
    assert!(s.constraints.is_empty());
    let missing = load_scenario(dir.path().join("nope.json")).unwrap_err();
    assert!(matches!(missing, CliError::Io { .. }));
    assert_eq!(missing.exit_code(), 3);
}

#[test]
fn unconstrained_scenario_runs() {
    let s = parse(MINIMAL_FLOW).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run(&s, dir.path(), &RunOptions::default()).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.exit_code(), 0);
    let csv = fs::read_to_string(dir.path().join("free_traj.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x1,x2,event"));
    assert_eq!(csv.lines().count(), 102);
}

#[test]
fn equivalence_on_flow_is_rejected() {
    let text = MINIMAL_FLOW.replace(
        r#"[{"type": "bounds", "expect": {"lambda_min": -1.0, "lambda_max": -1.0, "tol": 1e-12}}]"#,
        r#"[
    {"type": "equivalence", "tol": 1e-6}
  ]"#,
    );
    match parse(&text).unwrap_err() {
        CliError::Schema { location, message, .. } => {
            assert_eq!(location.field.as_deref(), Some("checks[0].type"));
            assert_eq!(location.line, Some(10));
            assert!(message.contains("equivalence"), "{message}");
        }
        other => panic!("expected a schema error, got {other}"),
    }
}

#[test]
fn unknown_builtin_is_named() {
    let text = MINIMAL_FLOW.replace("linear_decay", "vortex");
    match parse(&text).unwrap_err() {
        CliError::UnknownBuiltin { name, location, .. } => {
            assert_eq!(name, "vortex");
            assert_eq!(location.line, Some(5));
        }
        other => panic!("expected an unknown built-in, got {other}"),
    }
}

#[test]
fn schema_diagnostics() {
    let no_version = MINIMAL_FLOW.replace(r#""schema_version": 1,"#, "");
    let e = parse(&no_version).unwrap_err();
    assert!(matches!(&e, CliError::Schema { location, .. } if location.field.as_deref() == Some("schema_version")));
    assert_eq!(e.exit_code(), 3);

    let future = MINIMAL_FLOW.replace(r#""schema_version": 1"#, r#""schema_version": 9"#);
    assert!(parse(&future).unwrap_err().to_string().contains("unsupported schema version"));

    let extra = MINIMAL_FLOW.replace(r#""kind": "flow","#, r#""kind": "flow", "colour": 3,"#);
    match parse(&extra).unwrap_err() {
        CliError::Schema { location, .. } => {
            assert_eq!(location.field.as_deref(), Some("colour"));
            assert_eq!(location.line, Some(4));
        }
        other => panic!("{other}"),
    }

    let short = MINIMAL_FLOW.replace("[1.0, 0.5]", "[1.0]");
    let e = parse(&short).unwrap_err().to_string();
    assert!(e.contains("initial.x") && e.contains("expected 2 entries"), "{e}");

    let broken = parse("{\n  \"schema_version\": 1,\n  \"name\": }").unwrap_err();
    assert!(matches!(broken, CliError::Schema { location, .. } if location.line == Some(3)));
}

#[test]
fn list_is_the_bundled_set() {
    assert_eq!(
        list_scenarios(),
        vec![
            "example1_parabola",
            "example2_moving_circle",
            "example3_envelope",
            "example4_double_slit",
            "example5_single_slit",
        ]
    );
}

#[test]
fn moving_circle_rate_check_passes() {
    let s = load_bundled("example2_moving_circle").unwrap();
    assert!(s.checks.iter().any(|c| matches!(c, CheckSpec::EmpiricalRate { .. })));
    let dir = tempfile::tempdir().unwrap();
    let report = run(&s, dir.path(), &RunOptions::default()).unwrap();
    let rate = report.checks.iter().find(|c| c.name == "empirical_rate").unwrap();
    assert!(rate.passed, "{}", rate.detail);
    let bounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("example2_moving_circle_bounds.json")).unwrap())
            .unwrap();
    assert!(bounds["lambda_min"].as_f64().unwrap() <= bounds["lambda_max"].as_f64().unwrap());
    assert!(!bounds["rate"]["value"].as_array().unwrap().is_empty());
}

#[test]
fn double_slit_matches_golden_files() {
    let s = load_bundled("example4_double_slit").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run(&s, dir.path(), &RunOptions::default()).unwrap();
    assert!(report.passed());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for file in ["example4_double_slit_paths.csv", "example4_double_slit_report.json"] {
        let got = fs::read_to_string(dir.path().join(file)).unwrap();
        let want = fs::read_to_string(golden.join(file)).unwrap();
        assert_eq!(got, want, "{file}");
    }
    let paths = fs::read_to_string(dir.path().join("example4_double_slit_paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 3);
}

#[test]
fn every_bundled_scenario_passes() {
    let dir = tempfile::tempdir().unwrap();
    for name in list_scenarios() {
        let report = run(&load_bundled(name).unwrap(), dir.path(), &RunOptions::default()).unwrap();
        assert!(report.passed(), "{name}: {:?}", report.checks);
        assert!(report.outputs.iter().all(|p| p.exists()));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for name in ["example1_parabola", "example5_single_slit"] {
        let s = load_bundled(name).unwrap();
        let ra = run(&s, a.path(), &RunOptions::default()).unwrap();
        run(&s, b.path(), &RunOptions::default()).unwrap();
        for p in &ra.outputs {
            let file = p.file_name().unwrap();
            let (x, y) = (fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
            assert!(!x.contains(&b'\r'));
            assert_eq!(x, y, "{}", file.to_string_lossy());
        }
    }
}

#[test]
fn random_direction_follows_seed() {
    let text = MINIMAL_FLOW.replace(
        r#"[{"type": "bounds", "expect": {"lambda_min": -1.0, "lambda_max": -1.0, "tol": 1e-12}}]"#,
        r#"[{"type": "empirical_rate", "epsilon": 1e-6, "tol": 0.01}]"#,
    );
    let s = parse(&text).unwrap();
    let read = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let r = run(&s, dir.path(), &RunOptions { dt: None, seed: Some(seed) }).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
        fs::read_to_string(dir.path().join("free_bounds.json")).unwrap()
    };
    assert_eq!(read(3), read(3));
}

fn contraq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contraq"))
}

#[test]
fn binary_list_and_exit_codes() {
    let out = contraq().arg("list").output().unwrap();
    assert!(out.status.success());
    let names: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(names, list_scenarios());

    let dir = tempfile::tempdir().unwrap();
    let status = contraq()
        .args(["run", "example4_double_slit"])
        .env("CONTRAQ_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(dir.path().join("example4_double_slit_paths.csv").exists());

    // a check that cannot pass
    let failing = dir.path().join("three.json");
    let text = contraq::bundled::bundled_source("example4_double_slit")
        .unwrap()
        .replace(r#""expected": 2"#, r#""expected": 3"#);
    fs::write(&failing, text).unwrap();
    let status = contraq()
        .args(["run", failing.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"name\": \"x\"}").unwrap();
    let out = contraq().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
}

#[test]
fn binary_bounds_prints_json() {
    let out = contraq().args(["bounds", "example3_envelope"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["lambda_min"].as_f64().unwrap() + 0.5).abs() < 1e-12);
}
