use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ctns(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctns"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn ctns")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
[domain]
lx = 1.0
ly = 1.0
nx = 16
ny = 16

[sensitivity]
kind = "rotation"
chi = 0.5
theta = 1.5707963267948966

[stepping]
dt = 1e-3
horizon = 0.1
snapshot_every = 10
"#;

#[test]
fn corrupt_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[domain]\nlx = 1.0\nly = \n");
    let out = ctns(&["simulate"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[bogus]\nx = 1\n"));
    assert_eq!(ctns(&["simulate"], &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn missing_config_exits_with_code_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_ctns")).arg("eigen").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn p0_equal_to_dimension_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[params]\np0 = 2.0\n"));
    let out = ctns(&["constants"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("p0"), "{err}");
}

#[test]
fn rest_state_keeps_velocity_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctns(&["simulate"], &configs().join("zero.toml"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("trace.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let u_cols: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("u_") || h.starts_with("grad_u")).map(|(i, _)| i).collect();
    assert_eq!(u_cols.len(), 4);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for &i in &u_cols {
            assert_eq!(rec[i].parse::<f64>().unwrap(), 0.0);
        }
        rows += 1;
    }
    assert_eq!(rows, 101);
    for f in ["report.json", "certificate.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn single_eta_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[eta_study]\netas = [0.1]\nhorizon = 0.1\n"));
    let out = ctns(&["eta-study"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[eta_study]\netas = [0.1, 0.2]\nhorizon = 0.1\n"));
    assert_eq!(ctns(&["eta-study"], &cfg, dir.path()).status.code(), Some(1));
}

#[test]
fn coarse_grid_eigen_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = ctns(&["eigen"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["lambda1"].as_f64().unwrap() > 9.0);
    assert!(dir.path().join("eigen.json").exists());
}

#[test]
fn certify_reads_back_a_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(ctns(&["simulate"], &cfg, dir.path()).status.success());
    let out = ctns(&["certify"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["inequalities"].as_array().unwrap().len(), 5);
}

#[test]
fn heat_check_writes_inf_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[heat_check]\ncases = [\"i\"]\npairs = [[\"inf\", 2.0]]\nsamples = 3\nt_min = 0.01\nt_max = 1.0\nn_times = 5\nseed = 1\n"),
    );
    let out = ctns(&["heat-check"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["p"], "inf");
    assert_eq!(v[0]["case"], "i");
    assert!(v[0]["k_hat"].as_f64().unwrap().is_finite());
}
