use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn regionctl(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_regionctl"))
        .args(args)
        .env("REGIONCTL_LOG", "error")
        .output()
        .expect("spawn regionctl");
    assert!(
        out.status.success(),
        "regionctl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_calibrate_run_compare_report() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("corridor.toml");
    regionctl(&["generate", "--kind", "corridor", "--out", s(&scenario)]);
    assert!(!fs::read_to_string(&scenario).unwrap().contains("[mfd"));

    let out = regionctl(&["calibrate", "--scenario", s(&scenario), "--factors", "0.5,1,1.5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("N_crit"));
    assert!(fs::read_to_string(&scenario).unwrap().contains("mfd"));

    let run_dir = tmp.path().join("run");
    let out = regionctl(&[
        "run", "--scenario", s(&scenario), "--strategy", "msjc", "--seed", "3", "--out", s(&run_dir),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("strategy"));
    for f in ["metrics.csv", "summary.csv", "manifest.toml", "msjc_seed3_arcs.csv"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }

    let cmp_dir = tmp.path().join("cmp");
    let out = regionctl(&[
        "compare",
        "--scenario",
        s(&scenario),
        "--strategy",
        "msjc,bp",
        "--reps",
        "2",
        "--until-cleared",
        "--cap",
        "20000",
        "--out",
        s(&cmp_dir),
    ]);
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    let metrics = fs::read_to_string(cmp_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    let manifest = fs::read_to_string(cmp_dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("until_cleared = true"));

    let report = regionctl(&["report", "--out", s(&cmp_dir)]);
    assert_eq!(String::from_utf8_lossy(&report.stdout), table);
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_regionctl"))
        .args(["run", "--scenario", s(&missing), "--strategy", "bp", "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading scenario"));

    let out = Command::new(env!("CARGO_BIN_EXE_regionctl"))
        .args(["run", "--scenario", s(&missing), "--strategy", "fixed-ish", "--out", "x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
