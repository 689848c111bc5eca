use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn eigenprice(args: &[&str], cfg: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eigenprice"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = cfg {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn verdicts(dir: &Path) -> Vec<(String, String)> {
    read_json(&dir.join("conditions.json"))
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["condition_id"].as_str().unwrap().to_string(), r["verdict"].as_str().unwrap().to_string()))
        .collect()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn constant_sdf_gives_flat_yields() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["price"], Some(&config("constant_sdf.toml")), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.path().join("yield_curve.csv"));
    assert_eq!(rows.len(), 50);
    let target = 1.0 / 0.98 - 1.0;
    for row in rows {
        assert!(row[1..].iter().all(|y| (y - target).abs() < 1e-12));
    }
}

#[test]
fn periodic_chain_fails_esp_with_exit_3() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["check"], Some(&config("permutation_chain.toml")), out.path());
    assert_eq!(o.status.code(), Some(3));
    let v = verdicts(out.path());
    assert!(v.contains(&("EventualStrongPositivity".into(), "Fail".into())), "{v:?}");
    assert!(v.contains(&("Positivity".into(), "Pass".into())));
}

#[test]
fn irreducible_chain_passes_every_check() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["check"], Some(&config("irreducible_chain.toml")), out.path());
    assert_eq!(o.status.code(), Some(0));
    let v = verdicts(out.path());
    assert_eq!(v.len(), 6);
    assert!(v.iter().all(|(_, verdict)| verdict == "Pass"), "{v:?}");
}

#[test]
fn reference_config_matches_closed_form() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["solve"], Some(&config("ccapm_ar1.toml")), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.path().join("manifest.txt")).unwrap();
    let line = manifest.lines().find(|l| l.starts_with("compare rho")).unwrap();
    let rel: f64 = line.rsplit("rel_error=").next().unwrap().parse().unwrap();
    assert!(rel < 1e-10, "{line}");
    assert!(manifest.contains("exit_code 0"));
}

#[test]
fn solve_is_bit_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = eigenprice(&["solve", "--seed", "17"], Some(&config("irreducible_chain.toml")), d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &Path| std::fs::read(d.join("eigenpair.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let manifest = std::fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed 17"));
}

#[test]
fn strict_stops_after_failed_checks() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["decompose", "--strict"], Some(&config("permutation_chain.toml")), out.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(out.path().join("conditions.json").exists());
    assert!(!out.path().join("eigenpair.csv").exists());
}

#[test]
fn plotdata_is_idempotent() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["price"], Some(&config("constant_sdf.toml")), out.path());
    assert_eq!(o.status.code(), Some(0));
    let cfg = config("constant_sdf.toml");
    assert_eq!(eigenprice(&["plotdata"], Some(&cfg), out.path()).status.code(), Some(0));
    let first = std::fs::read(out.path().join("plotdata/phi.csv")).unwrap();
    assert_eq!(eigenprice(&["plotdata"], Some(&cfg), out.path()).status.code(), Some(0));
    assert_eq!(first, std::fs::read(out.path().join("plotdata/phi.csv")).unwrap());
}

#[test]
fn habit_config_recovers_beta() {
    let out = tempfile::tempdir().unwrap();
    let o = eigenprice(&["habit"], Some(&config("habit_ar2.toml")), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let habit = read_json(&out.path().join("habit.json"));
    assert!((habit["beta"].as_f64().unwrap() - 0.97).abs() < 1e-8, "{habit}");
}

#[test]
fn usage_errors_exit_2() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(eigenprice(&["frobnicate"], None, out.path()).status.code(), Some(2));
    assert_eq!(eigenprice(&["solve"], None, out.path()).status.code(), Some(2));
    assert_eq!(eigenprice(&["solve"], Some(Path::new("/nonexistent.toml")), out.path()).status.code(), Some(2));
    let bad = out.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[model]\nkind = \"gaussian_ar1\"\na = 1.5\nsigma = 0.1\n[sdf]\nkind = \"unit\"\n").unwrap();
    assert_eq!(eigenprice(&["solve"], Some(&bad), out.path()).status.code(), Some(2));
}
