use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(dir: &Path, cmd: &str, cfg: &str) -> Output {
    let path = dir.join(format!("{cmd}.cfg"));
    std::fs::write(&path, cfg).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mabesov"))
        .args([cmd, "--config", path.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .env("MABESOV_THREADS", "1")
        .output()
        .unwrap()
}

fn out(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

const SMALL: &str = "resolution=256\nscales.k_min=1\nscales.k_max=7\nensemble=10\n";

#[test]
fn constants_on_quadratic() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "constants", "samples=1000\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out(d.path(), "constants.csv");
    let val = |k: &str| -> f64 {
        csv.lines().find_map(|l| l.strip_prefix(&format!("{k},"))).unwrap().parse().unwrap()
    };
    assert!((val("a0") - 2.0).abs() < 0.1);
    assert!((val("theta") - 4.0).abs() < 0.4);
    assert!((val("doubling") - 2f64.sqrt()).abs() < 0.03);
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    for cfg in ["potential.name=cubic\n", "domain.lower=1\ndomain.upper=1\n", "resolution=abc\n", "typo.key=3\n"] {
        let o = run(d.path(), "constants", cfg);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
    }
    let o = Command::new(env!("CARGO_BIN_EXE_mabesov"))
        .args(["constants", "--config", "/nonexistent/cfg"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("c.cfg");
    std::fs::write(&path, "").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mabesov"))
        .args(["constants", "--config", path.to_str().unwrap()])
        .env("MABESOV_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ai_check_pass_and_injected_failure() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "ai-check", SMALL);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out(d.path(), "ai_properties.csv");
    assert!(csv.starts_with("property,scale_k,constant,exponent,max_violation\n"));

    let o = run(d.path(), "ai-check", &format!("{SMALL}test.inject_asymmetry=true\n"));
    assert_eq!(o.status.code(), Some(4));
    // the report is still written
    assert!(out_path(d.path(), "ai_properties.csv").exists());
}

#[test]
fn ai_check_at_coarse_resolution() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "ai-check", "resolution=16\nsamples=20\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reproduce_residuals_nonincreasing() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "reproduce", SMALL);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = out(d.path(), "reproduce.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("N,residual,neumann_terms_used,rn_norm2"));
    let rows: Vec<(f64, f64)> = lines
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].parse().unwrap(), c[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 6);
    for w in rows.windows(2) {
        assert!(w[1].0 <= w[0].0 + 1e-6);
    }
    assert!(rows.iter().any(|r| r.1 < 1.0));
    assert!(csv.lines().last().unwrap().starts_with("# config_hash="));
}

#[test]
fn besov_inadmissible_alpha_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "besov", &format!("{SMALL}besov.params=0,2,2; 0.3eps,1,1\n"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("measured eps="), "{err}");
}

#[test]
fn besov_outputs() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "besov", SMALL);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = out(d.path(), "besov.csv");
    assert!(b.starts_with("alpha,p,q,k,block_norm,total_norm\n"));
    assert!(b.lines().any(|l| l.starts_with("0,2,2,")));
    assert!(out(d.path(), "equivalence.csv").starts_with("sample,ratio_ab,ratio_ba\n"));
}

#[test]
fn sio_canonical_and_negative_control() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "sio", SMALL);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out(d.path(), "sio_conditions.csv").starts_with("condition,i,constant,max_violation\n"));
    let bounds = out(d.path(), "sio_bounds.csv");
    assert!(bounds.starts_with("alpha,p,q,seed,ratio\n"));
    assert_eq!(bounds.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let o = run(d.path(), "sio", &format!("{SMALL}family.kind=mean-shifted\n"));
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("D3"));

    let o = run(d.path(), "sio", &format!("{SMALL}family.kind=two-bump\n"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seeds_give_close_ratios() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}ensemble=30\n").replace("ensemble=10\n", "");
    let ratios = |d: &Path, seed: &str| -> Vec<f64> {
        let p = d.join("c.cfg");
        std::fs::write(&p, &cfg).unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_mabesov"))
            .args(["sio", "--config", p.to_str().unwrap(), "--seed", seed, "--out", d.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        std::fs::read_to_string(d.join("sio_bounds.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect()
    };
    let (a, b) = (ratios(d1.path(), "1"), ratios(d2.path(), "2"));
    for (x, y) in a.iter().zip(&b) {
        assert!(x.max(*y) / x.min(*y) < 1.2, "{a:?} {b:?}");
    }
}
