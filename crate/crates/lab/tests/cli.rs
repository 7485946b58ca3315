use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[grid]
dim = 2
points = 16

[model]
preset = "abs"

[reg]
eps = 1e-2

[noise]
seed = 4
k_max = 4

[solver]
dt = 1e-3
t_end = 0.02

[initial.phi]
kind = "bump"
center = [0.5, 0.5]
width = 0.35
height = 0.9
floor = 0.05

[initial.c]
kind = "wave"
mean = 0.4
amplitude = 0.1

[output]
plots = false
"#;

fn phasefield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasefield")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn record(id: &str, pass: bool) -> String {
    format!("id={id} value=1e-3 tolerance=1e-2 pass={pass} config_hash=00 formula=\"x\"\n")
}

#[test]
fn validate_model_passes_on_the_bundled_config() {
    let out = phasefield(&["validate-model", "--config", "abs_smoke", "--samples", "500"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("violations=0"));
}

#[test]
fn empty_box_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("preset = \"abs\"", "preset = \"abs\"\nparams = { lower_0 = 1.0 }"));
    let run_dir = dir.path().join("run");
    let out = phasefield(&["run", "--config", &cfg, "--out", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
    assert!(!run_dir.join("manifest.toml").exists());
}

#[test]
fn unknown_key_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("points = 16", "points = 16\nspacing = 2"));
    let out = phasefield(&["run", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spacing"));
}

#[test]
fn small_run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let run_dir = dir.path().join("run");
    let out = phasefield(&["run", "--config", &cfg, "--out", run_dir.to_str().unwrap()]);
    let code = out.status.code();
    assert!(code == Some(0) || code == Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(run_dir.join("summary.txt")).unwrap();
    // exit status mirrors the summary
    assert_eq!(code == Some(0), summary.contains("failed: 0"), "{summary}");
    let manifest = run_dir.join("manifest.toml");
    assert!(manifest.exists());
    let again = dir.path().join("again");
    let out = phasefield(&["run", "--replay", "--config", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn report_exit_codes_follow_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    write(&a, "report.txt", &record("good", true));
    write(&b, "report.txt", &(record("fine", true) + &record("broken", false)));

    let ok = dir.path().join("ok");
    let out = phasefield(&["report", a.to_str().unwrap(), "--out", ok.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    let mixed = dir.path().join("mixed");
    let out = phasefield(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", mixed.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let summary = std::fs::read_to_string(mixed.join("summary.txt")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[1].starts_with("FAIL broken"), "{summary}");
    assert_eq!(lines.len(), 4);

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    write(&empty, "report.txt", "");
    let out = phasefield(&["report", empty.to_str().unwrap(), "--out", dir.path().join("e").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    let out = phasefield(&["report", dir.path().join("missing").to_str().unwrap(), "--out", ok.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
