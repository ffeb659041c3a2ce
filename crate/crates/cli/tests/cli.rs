use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn estent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    estent(&args)
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or("").to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let runs: &[&[&str]] = &[
        &["--seed", "5", "entropy-sep", "--eps", "0.3", "--grid", "60", "--tmin", "1", "--tmax", "4"],
        &["--seed", "5", "bound", "--alpha", "0,0.5", "--samples", "4", "--n", "500"],
        &["--seed", "5", "ballvolume", "--particles", "1000", "--n", "4", "--alpha", "0.5"],
        &["--seed", "5", "simulate-coder", "--horizon", "20", "--samples", "3", "--n", "500"],
    ];
    for args in runs {
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        let oa = run_in(a.path(), args);
        let ob = run_in(b.path(), args);
        assert!(oa.status.success(), "{args:?}: {}", String::from_utf8_lossy(&oa.stderr));
        assert!(ob.status.success());
        let fa = files(a.path());
        assert!(!fa.is_empty());
        assert_eq!(fa, files(b.path()), "{args:?}");
    }
}

#[test]
fn csv_headers() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    assert!(run_in(p, &["lyapunov", "--n", "200"]).status.success());
    assert!(run_in(p, &["entropy-span", "--eps", "0.3", "--grid", "60", "--tmin", "1", "--tmax", "3"]).status.success());
    assert!(run_in(p, &["ballvolume", "--particles", "1000", "--n", "3"]).status.success());
    assert!(run_in(p, &["simulate-coder", "--horizon", "10", "--samples", "2", "--n", "200"]).status.success());
    assert_eq!(first_line(&p.join("lyapunov.csv")), "index,exponent,units");
    assert_eq!(first_line(&p.join("entropy_span.csv")), "alpha,epsilon,horizon,count,kind,rate_units");
    assert_eq!(first_line(&p.join("ballvolume.csv")), "level,survival,mu_hat,rate_running");
    assert_eq!(first_line(&p.join("coder.csv")), "t,err,bound,bits");
    let rows: Vec<String> = fs::read_to_string(p.join("entropy_span.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",spanning,bits/step")), "{rows:?}");
}

#[test]
fn format_flag_limits_outputs() {
    let d = TempDir::new().unwrap();
    assert!(run_in(d.path(), &["--format", "json", "lyapunov", "--n", "100"]).status.success());
    assert!(d.path().join("lyapunov.json").exists());
    assert!(!d.path().join("lyapunov.csv").exists());
}

#[test]
fn config_file_is_honored_and_flags_override() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("exp.toml");
    fs::write(
        &cfg,
        "seed = 3\n[system]\nkind = \"scalar_contraction\"\ntau = 1.0\n[command]\nepsilon = 0.5\nalpha = [2.0]\ngrid = 2001\ntmin = 1.0\ntmax = 3.0\n",
    )
    .unwrap();
    let out = d.path().join("out");
    let o = estent(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "entropy-sep", "--tmax", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("entropy_sep.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().starts_with("2,0.5,1,"));
    assert!(text.contains("nats/time"));
}

#[test]
fn exit_codes() {
    let d = TempDir::new().unwrap();
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[command]\nalpah = [1.0]\n").unwrap();
    assert_eq!(estent(&["--config", bad.to_str().unwrap(), "lyapunov"]).status.code(), Some(1));
    assert_eq!(estent(&["lyapunov", "--bogus"]).status.code(), Some(1));
    assert_eq!(run_in(d.path(), &["lyapunov", "--n", "10", "--x0", "0.1"]).status.code(), Some(1));
    assert_eq!(estent(&["--help"]).status.code(), Some(0));

    // Two horizons cannot support a fit.
    let o = run_in(d.path(), &["entropy-sep", "--grid", "10", "--tmin", "1", "--tmax", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("entropy_sep.csv").exists());

    // No level reaches the complement bound this early.
    let o = run_in(d.path(), &["partitions", "--nmax", "4"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("partitions.json").exists());
}

#[test]
fn resolution_check_is_opt_in() {
    let d = TempDir::new().unwrap();
    let args = ["entropy-sep", "--eps", "0.3", "--grid", "60", "--tmin", "1", "--tmax", "4"];
    assert!(run_in(d.path(), &args).status.success());
    assert!(!fs::read_to_string(d.path().join("entropy_sep.json")).unwrap().contains("resolution_check"));
    let mut with = args.to_vec();
    with.push("--resolution-check");
    assert!(run_in(d.path(), &with).status.success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("entropy_sep.json")).unwrap()).unwrap();
    assert_eq!(v["resolution_check"]["fine_resolution"], serde_json::json!([60, 60]));
    assert!(v["resolution_check"]["coarse_count"].as_u64().unwrap() > 0);
}
