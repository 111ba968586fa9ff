use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlcap::quantum::{born_box, GammaState, MeasurementSetup};
use nlcap::{BoxShape, NSBox};
use serde_json::Value;

fn nlcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlcap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_box(dir: &Path, name: &str, b: &NSBox) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(b).unwrap()).unwrap();
    path
}

fn tsirelson_box() -> NSBox {
    let rho = GammaState::new(1.0, 0.0).unwrap().density().unwrap();
    born_box(&rho, &MeasurementSetup::tsirelson()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn capacity_of_pr_and_uniform_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let pr = write_box(dir.path(), "pr.json", &NSBox::pr_box());
    let out = nlcap(&["capacity", "--box", s(&pr)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_json(&out)["capacity"].as_f64().unwrap() > 0.1);

    let uniform = write_box(
        dir.path(),
        "u.json",
        &NSBox::uniform(NSBox::pr_box().shape()).unwrap(),
    );
    let out = nlcap(&["capacity", "--box", s(&uniform)]);
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["capacity"].as_f64().unwrap() < 1e-6);
}

#[test]
fn signaling_box_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    // Alice's outcome copies Bob's setting.
    let shape = BoxShape::new(2, 2, 2, 2).unwrap();
    let p: Vec<f64> = (0..shape.len())
        .map(|i| {
            let (r, s, _, b) = shape.unindex(i);
            if r == b {
                0.5 * (s as f64 + 0.5)
            } else {
                0.0
            }
        })
        .collect();
    let path = dir.path().join("sig.json");
    std::fs::write(
        &path,
        serde_json::json!({"shape": shape, "p": p}).to_string(),
    )
    .unwrap();
    let out = nlcap(&["capacity", "--box", s(&path)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("signaling"));
}

#[test]
fn iteration_limit_exits_with_two_and_keeps_the_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_box(dir.path(), "t.json", &tsirelson_box());
    let out = nlcap(&[
        "capacity",
        "--box",
        s(&b),
        "--max-iters",
        "1",
        "--gap-tol",
        "1e-14",
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["converged"], Value::Bool(false));
}

#[test]
fn capacity_file_output_carries_a_manifest_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_box(dir.path(), "t.json", &tsirelson_box());
    let res = dir.path().join("res.json");
    assert_eq!(
        code(&nlcap(&["capacity", "--box", s(&b), "--out", s(&res)])),
        0
    );
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("res.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "capacity");
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let out = nlcap(&["verify", s(&res), "--box", s(&b)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn violation_examples() {
    let dir = tempfile::tempdir().unwrap();
    let pr = write_box(dir.path(), "pr.json", &NSBox::pr_box());
    let v = stdout_json(&nlcap(&[
        "violation",
        "--box",
        s(&pr),
        "--functional",
        "chsh",
    ]));
    assert!((v["delta_b"].as_f64().unwrap() - 2.0).abs() < 1e-12);

    let u3 = write_box(
        dir.path(),
        "u3.json",
        &NSBox::uniform(BoxShape::new(2, 2, 3, 3).unwrap()).unwrap(),
    );
    let v = stdout_json(&nlcap(&[
        "violation",
        "--box",
        s(&u3),
        "--functional",
        "cglmp3",
    ]));
    assert!((v["delta_b"].as_f64().unwrap() + 2.0).abs() < 1e-12);

    let t = write_box(dir.path(), "t.json", &tsirelson_box());
    let v = stdout_json(&nlcap(&["violation", "--box", s(&t)]));
    assert!((v["cmin_bell"].as_f64().unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-9);

    let out = nlcap(&["violation", "--box", s(&pr), "--functional", "cglmp3"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn optimize_maximally_entangled_qubits() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("opt");
    let out = nlcap(&["optimize", "--gamma", "1,0", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let f: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("functional.json")).unwrap())
            .unwrap();
    assert!((f["s_b"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    for name in [
        "setup.json",
        "witness.json",
        "result.json",
        "trace.csv",
        "manifest.json",
    ] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    // The functional file doubles as a functional input.
    let b = write_box(dir.path(), "t.json", &tsirelson_box());
    let v = nlcap(&[
        "violation",
        "--box",
        s(&b),
        "--functional",
        s(&out_dir.join("functional.json")),
    ]);
    assert_eq!(code(&v), 0);
}

#[test]
fn optimize_separable_state_and_qutrit_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlcap(&[
        "optimize",
        "--gamma",
        "0,0",
        "--restarts",
        "2",
        "--out",
        s(&dir.path().join("sep")),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["capacity"].as_f64().unwrap() < 1e-6);

    let state = dir.path().join("state.json");
    std::fs::write(&state, r#"{"gamma1": 1.0, "gamma2": 1.0}"#).unwrap();
    let qutrit = dir.path().join("q");
    let out = nlcap(&[
        "optimize",
        "--state",
        s(&state),
        "--shape",
        "2x2x3x3",
        "--restarts",
        "2",
        "--out",
        s(&qutrit),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(qutrit.join("trace.csv")).unwrap();
    let caps: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!caps.is_empty());
    for w in caps.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{caps:?}");
    }
}

#[test]
fn optimize_rejects_unequal_dimensions_and_missing_state() {
    assert_eq!(
        code(&nlcap(&["optimize", "--gamma", "1", "--shape", "2x2x2x3"])),
        1
    );
    assert_eq!(code(&nlcap(&["optimize"])), 1);
}

#[test]
fn sweep_is_deterministic_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let csv = dir.path().join(name);
        let out = nlcap(&[
            "sweep",
            "--mode",
            "bell-then-capacity",
            "--gamma1",
            "0.5,0.8,1",
            "--jobs",
            jobs,
            "--out",
            s(&csv),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        csv
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "1");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = run("c.csv", "2");
    let sidecar: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(sidecar["execution"], "parallel-cold");
    assert!(dir.path().join("c.manifest.json").exists());

    assert_eq!(code(&nlcap(&["verify", s(&a)])), 0);
    assert_eq!(code(&nlcap(&["verify", s(&dir.path().join("a.json"))])), 0);

    // A capacity above cmin breaks the bracket.
    let text = std::fs::read_to_string(&c).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[3].split(',').map(String::from).collect();
    cols[3] = "0.9".into();
    lines[3] = cols.join(",");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    assert_eq!(code(&nlcap(&["verify", s(&bad)])), 3);
}

#[test]
fn sweep_rejects_bad_arguments() {
    assert_eq!(
        code(&nlcap(&["sweep", "--gamma1", "1.5", "--out", "/dev/null"])),
        1
    );
    assert_eq!(code(&nlcap(&["sweep", "--shape", "2x2"])), 1);
    assert_eq!(code(&nlcap(&["sweep", "--mode", "sideways"])), 1);
    assert_eq!(code(&nlcap(&["--help"])), 0);
}
