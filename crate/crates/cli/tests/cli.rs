use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdrlmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdrlmi")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn model_synthesis_and_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sdrlmi(&["synth", "--mode", "model", "--example", "example1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("r0 = 1.100000"), "{}", stdout(&o));
    let result = out.join("result.json");
    let doc = json(&result);
    assert_eq!(doc["format_version"], 1);
    assert_eq!(doc["mode"], "model");

    let o = sdrlmi(&["analyze", "--example", "example1", "--result", s(&result), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("certificate re-check: passed"));
    let rob = json(&out.join("robustness.json"));
    // δ_x0 from the stored Γ's eigenvalues
    let g = &doc["gamma"]["data"];
    let (a, b, c) = (g[0].as_f64().unwrap(), g[1].as_f64().unwrap(), g[3].as_f64().unwrap());
    let mid = (a + c) / 2.0;
    let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let (lmax, lmin) = (mid + rad, mid - rad);
    let eps = doc["eps"].as_f64().unwrap();
    let expected = (2.0 * lmax * lmax - eps * lmin) / (2.0 * lmin * lmax);
    assert!((rob["delta_x0"].as_f64().unwrap() - expected).abs() < 1e-9);

    let mut r = fs::read_to_string(out.join("decrease.csv")).unwrap();
    r.truncate(r.find('\n').unwrap());
    assert_eq!(r, "x1,x2,v,level,decreasing,in_sublevel");
    let b = fs::read_to_string(out.join("boundary.csv")).unwrap();
    assert!(b.starts_with("set,x1,x2\n"));
    let sub = json(&out.join("sublevel.json"));
    assert!(sub["gamma"].as_f64().unwrap() > 0.0);
    assert_eq!(sub["union"]["set"], "ball-or-sublevel");
}

#[test]
fn data_pipeline_from_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = sdrlmi(&["gendata", "--example", "example3", "--seed", "7", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = data.join("manifest.json");
    let csvs = fs::read_dir(&data).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
    assert_eq!(csvs, 10);
    assert_eq!(json(&manifest)["files"].as_array().unwrap().len(), 10);

    let out = dir.path().join("run");
    let o = sdrlmi(&["synth", "--mode", "data", "--example", "example3", "--data", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("true coefficients in consistency set: yes"), "{text}");
    assert!(text.contains("posterior check: passed"), "{text}");
    let result = out.join("result.json");
    assert_eq!(json(&result)["mode"], "data");

    let o = sdrlmi(&["analyze", "--example", "example3", "--result", s(&result), "--data", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&out.join("robustness.json"))["gamma_is_upper_bound"], true);

    let o = sdrlmi(&[
        "simulate", "--example", "example3", "--result", s(&result), "--x0", "-0.4,-0.4", "--disturbance", "0.1", "--steps", "300",
        "--seed", "1", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 301);
    assert!(!stdout(&o).contains("Diverged"));
}

#[test]
fn generated_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&sdrlmi(&["gendata", "--example", "example3", "--seed", "3", "--out", s(d)])), 0);
    }
    for name in ["manifest.json", "exp_00.csv", "exp_09.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "format_version = 1\n[model\na = 3\n").unwrap();
    let o = sdrlmi(&["synth", "--config", s(&path)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("malformed config"), "{}", stderr(&o));
}

#[test]
fn infeasible_problem_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("unstable.toml");
    fs::write(&path, "format_version = 1\n[model]\na = [[\"2\"]]\nb = [[\"0\"]]\n[synthesis]\nradius = 1.0\n").unwrap();
    let o = sdrlmi(&["synth", "--config", s(&path), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn phase_portrait_rejects_three_states() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.toml");
    let cfg = "format_version = 1\n[model]\na = [[\"0.5\", \"0\", \"0\"], [\"0\", \"0.5\", \"0\"], [\"0\", \"0\", \"0.5\"]]\nb = [[\"1\"], [\"0\"], [\"0\"]]\n";
    fs::write(&path, cfg).unwrap();
    let o = sdrlmi(&["simulate", "--config", s(&path), "--phase-portrait", "--out", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn phase_portrait_on_two_states() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdrlmi(&["simulate", "--example", "example1", "--phase-portrait", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("portrait.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,dx1,dx2,u_pre,u_post\n"));
    assert_eq!(csv.lines().count(), 1 + 21 * 21);
}

#[test]
fn usage_errors_exit_with_three() {
    assert_eq!(code(&sdrlmi(&["synth", "--example", "example1", "--bogus"])), 3);
    assert_eq!(code(&sdrlmi(&["synth"])), 3);
    assert_eq!(code(&sdrlmi(&["synth", "--example", "example1", "--mode", "fast"])), 3);
    assert_eq!(code(&sdrlmi(&["--help"])), 0);
}

#[test]
fn unknown_example_is_a_config_error() {
    assert_eq!(code(&sdrlmi(&["print-config", "--example", "example9"])), 2);
}

#[test]
fn printed_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdrlmi(&["print-config", "--example", "example3"]);
    assert_eq!(code(&o), 0);
    let path = dir.path().join("example3.toml");
    fs::write(&path, stdout(&o)).unwrap();
    let again = sdrlmi(&["print-config", "--config", s(&path)]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    // only output.dir changes: it is resolved against the config location
    let strip = |t: &str| t.lines().filter(|l| !l.starts_with("dir = ")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&stdout(&again)), strip(&stdout(&o)));
}

#[test]
fn saturated_model_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdrlmi(&["synth", "--example", "example1", "--mode", "model-sat", "--u-bar", "2.0", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&dir.path().join("result.json"));
    assert_eq!(doc["u_bar"][0], 2.0);
    assert_eq!(doc["roa"]["set"], "ball-and-ellipsoid");
}
