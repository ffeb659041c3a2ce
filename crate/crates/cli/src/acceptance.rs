//! The acceptance suite: eleven end-to-end criteria with tolerances and
//! runtime budgets. Most criteria drive the command-line front end and read
//! back its JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use estent_core::entropy::{
    estimate_entropy, flow_discretization_rate, max_separated, min_spanning, AlphaBowenContext, CandidateGrid, CountKind,
};
use estent_core::lyapunov::{
    deep_branch, linear_closed_form, lyapunov_qr, oseledets_oracle, preserves_volume, sample_spectra, shallow_branch,
    Sampling, BURN_IN,
};
use estent_core::partitions::{build_partition_sequence, shrink_constant, Domain, PartitionParams};
use estent_core::seed::derive_seed;
use estent_core::{Matrix, MetricSpec, SystemDefinition, Units};
use serde::Serialize;
use serde_json::Value;

const CAT: &str = "[system]\nkind = \"cat_map\"\n";
const CONTRACTION_D: &str = "[system]\nkind = \"scalar_contraction\"\ntau = 1.0\n[metric]\nkind = \"euclidean\"\n";
const CONTRACTION_DP: &str = "[system]\nkind = \"scalar_contraction\"\ntau = 1.0\n[metric]\nkind = \"sqrt_scalar\"\n";

/// `log₂((3+√5)/2)`
pub fn cat_lambda() -> f64 {
    ((3.0 + 5f64.sqrt()) / 2.0).log2()
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    /// Tolerance checks passed (runtime not included).
    pub checks_passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub runtime: Duration,
    #[serde(skip)]
    pub budget: Option<Duration>,
    pub runtime_s: f64,
    pub budget_s: Option<f64>,
    pub within_budget: bool,
}

impl CriterionResult {
    pub fn passed(&self) -> bool {
        self.checks_passed && self.within_budget
    }

    pub fn status(&self) -> &'static str {
        if self.passed() {
            "PASS"
        } else {
            "FAIL"
        }
    }

    pub fn line(&self) -> String {
        let budget = match self.budget {
            Some(b) => format!(" / budget {} s", b.as_secs()),
            None => String::new(),
        };
        let over = if self.within_budget { "" } else { " [over budget]" };
        format!(
            "{} [{:>2}] {} ({:.2} s{budget}){over}: {}",
            self.status(),
            self.id,
            self.name,
            self.runtime.as_secs_f64(),
            self.detail
        )
    }
}

struct Check {
    passed: bool,
    detail: String,
}

struct Env {
    work: PathBuf,
    seed: u64,
}

impl Env {
    /// Runs one subcommand with its own output directory and config file.
    fn cli(&self, tag: &str, config: &str, args: &[&str]) -> anyhow::Result<(anyhow::Result<String>, PathBuf)> {
        let dir = self.work.join(tag);
        fs::create_dir_all(&dir)?;
        let cfg = dir.join("config.toml");
        fs::write(&cfg, config)?;
        let seed = self.seed.to_string();
        let mut argv: Vec<String> = ["estent", "--out", dir.to_str().ok_or_else(|| anyhow!("non-UTF-8 path"))?]
            .into_iter()
            .map(String::from)
            .collect();
        argv.extend(["--config".into(), cfg.to_string_lossy().into_owned(), "--seed".into(), seed]);
        argv.extend(args.iter().map(|s| s.to_string()));
        Ok((crate::execute_args(argv), dir))
    }
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("missing {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn f(v: &Value) -> anyhow::Result<f64> {
    v.as_f64().ok_or_else(|| anyhow!("expected a number, got {v}"))
}

fn within_rel(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

type CriterionFn = fn(&Env) -> anyhow::Result<Check>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<u64>,
    run: CriterionFn,
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "cat-map Lyapunov spectrum", budget: Some(1), run: c1_lyapunov },
        Criterion { id: 2, name: "piecewise lower bound", budget: Some(5), run: c2_bound },
        Criterion { id: 3, name: "cat-map separated-set slope", budget: Some(240), run: c3_entropy },
        Criterion { id: 4, name: "contraction flow metric dependence", budget: Some(60), run: c4_metrics },
        Criterion { id: 5, name: "power rule", budget: Some(180), run: c5_power },
        Criterion { id: 6, name: "flow versus time-1 factor", budget: Some(60), run: c6_flow },
        Criterion { id: 7, name: "Bowen-ball decay", budget: Some(300), run: c7_ballvolume },
        Criterion { id: 8, name: "coder soundness and bracket", budget: Some(10), run: c8_coder },
        Criterion { id: 9, name: "partition geometry", budget: Some(30), run: c9_partitions },
        Criterion { id: 10, name: "sandwich and invariance suites", budget: Some(180), run: c10_suites },
        Criterion { id: 11, name: "standard map regression", budget: None, run: c11_standard_map },
    ]
}

/// Runs every criterion in order, calling `report` after each one.
pub fn run_suite(work: &Path, seed: u64, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let env = Env {
        work: work.to_path_buf(),
        seed,
    };
    let mut out = Vec::new();
    for c in criteria() {
        let start = Instant::now();
        let check = (c.run)(&env).unwrap_or_else(|e| Check {
            passed: false,
            detail: format!("error: {e:#}"),
        });
        let runtime = start.elapsed();
        let budget = c.budget.map(Duration::from_secs);
        let r = CriterionResult {
            id: c.id,
            name: c.name,
            checks_passed: check.passed,
            detail: check.detail,
            runtime,
            budget,
            runtime_s: runtime.as_secs_f64(),
            budget_s: budget.map(|b| b.as_secs_f64()),
            within_budget: budget.is_none_or(|b| runtime <= b),
        };
        report(&r);
        out.push(r);
    }
    out
}

fn c1_lyapunov(env: &Env) -> anyhow::Result<Check> {
    let (res, dir) = env.cli("c1", CAT, &["lyapunov", "--n", "10000"])?;
    res?;
    let v = read_json(&dir.join("lyapunov.json"))?;
    let l1 = f(&v["exponents"][0])?;
    let l2 = f(&v["exponents"][1])?;
    let e1 = (l1 - cat_lambda()).abs();
    let es = (l1 + l2).abs();
    Ok(Check {
        passed: e1 <= 1e-9 && es <= 1e-9 && v["units"] == "bits/step",
        detail: format!("λ1 = {l1:.12} (error {e1:.1e}), λ1+λ2 = {:.1e}", l1 + l2),
    })
}

fn c2_bound(env: &Env) -> anyhow::Result<Check> {
    let lambda = cat_lambda();
    let mut alphas: Vec<String> = (0..=15).map(|i| format!("{}", 0.2 * f64::from(i))).collect();
    alphas.push(format!("{lambda}"));
    let list = alphas.join(",");
    let (res, dir) = env.cli("c2", CAT, &["bound", "--alpha", &list])?;
    res?;
    let v = read_json(&dir.join("bound.json"))?;
    let cat = SystemDefinition::cat_map();
    let a = cat.linear_matrix().expect("linear");
    let mut worst: f64 = 0.0;
    let bounds = v["bounds"].as_array().ok_or_else(|| anyhow!("bound.json has no bounds"))?;
    for b in bounds {
        let alpha = f(&b["alpha"])?;
        let cf = linear_closed_form(&a, alpha, Units::BitsPerStep)?;
        worst = worst.max((f(&b["mean"])? - cf).abs());
    }
    let at_boundary = f(&bounds.last().expect("nonempty")["mean"])?;
    let s = lyapunov_qr(&cat, &[0.1, 0.2], 10_000, 1)?;
    let gap = (deep_branch(&s, lambda) - shallow_branch(&s, lambda)).abs();
    let boundary_err = (at_boundary - 2.0 * lambda).abs();
    Ok(Check {
        passed: worst <= 1e-6 && gap <= 1e-6 && boundary_err <= 1e-6 && bounds.len() == 17,
        detail: format!(
            "max |bound − closed form| = {worst:.1e} over 16 alphas; branches at α = λ1 differ by {gap:.1e}, bound there = {at_boundary:.6} vs λ1 − λ2 = {:.6}",
            2.0 * lambda
        ),
    })
}

fn entropy_rate(env: &Env, tag: &str, config: &str, args: &[&str]) -> anyhow::Result<(f64, Value)> {
    let (res, dir) = env.cli(tag, config, args)?;
    res?;
    let v = read_json(&dir.join("entropy_sep.json"))?;
    Ok((f(&v["estimate"]["rate"])?, v))
}

fn c3_entropy(env: &Env) -> anyhow::Result<Check> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (tag, alpha, target) in [("c3a", "0", cat_lambda()), ("c3b", "0.5", cat_lambda() + 0.5)] {
        let start = Instant::now();
        let args = [
            "entropy-sep", "--alpha", alpha, "--eps", "0.1", "--grid", "256", "--tmin", "4", "--tmax", "10",
        ];
        match entropy_rate(env, tag, CAT, &args) {
            Ok((rate, v)) => {
                let ok = within_rel(rate, target, 0.15) && start.elapsed() < Duration::from_secs(120);
                passed &= ok;
                parts.push(format!(
                    "α = {alpha}: {rate:.4} vs {target:.4} bits/step from T = {} ({:.1} s)",
                    v["estimate"]["fitted_horizons"],
                    start.elapsed().as_secs_f64()
                ));
            }
            Err(e) => {
                passed = false;
                let counts = read_json(&env.work.join(tag).join("entropy_sep.json"))
                    .map(|v| {
                        v["records"]
                            .as_array()
                            .map(|r| r.iter().map(|x| x["count"].to_string()).collect::<Vec<_>>().join(" "))
                            .unwrap_or_default()
                    })
                    .unwrap_or_default();
                parts.push(format!("α = {alpha}: {e} (counts {counts} on a 65536-point grid)"));
            }
        }
    }
    Ok(Check {
        passed,
        detail: parts.join("; "),
    })
}

fn c4_metrics(env: &Env) -> anyhow::Result<Check> {
    let args = ["entropy-sep", "--alpha", "2", "--eps", "0.5", "--grid", "20001", "--tmin", "1", "--tmax", "5"];
    let (d, _) = entropy_rate(env, "c4d", CONTRACTION_D, &args)?;
    let (dp, v) = entropy_rate(env, "c4dp", CONTRACTION_DP, &args)?;
    Ok(Check {
        passed: (d - 1.0).abs() <= 0.1 && (dp - 1.5).abs() <= 0.15 && v["estimate"]["units"] == "nats/time",
        detail: format!("metric d: {d:.4} nats/time (target 1.0 ± 0.1); metric d′: {dp:.4} nats/time (target 1.5 ± 0.15)"),
    })
}

fn c5_power(env: &Env) -> anyhow::Result<Check> {
    let args = [
        "power-check", "--alpha", "0", "--k", "2", "--eps", "0.1", "--grid", "256", "--tmin", "2", "--tmax", "6",
    ];
    let (res, dir) = env.cli("c5", CAT, &args)?;
    res?;
    let v = read_json(&dir.join("power_check.json"))?;
    let ratio = f(&v["ratio"])?;
    Ok(Check {
        passed: (1.8..=2.2).contains(&ratio),
        detail: format!(
            "rate(f²) / rate(f) = {ratio:.4} ({:.4} / {:.4} bits/step)",
            f(&v["power"]["rate"])?,
            f(&v["base"]["rate"])?
        ),
    })
}

fn c6_flow(_env: &Env) -> anyhow::Result<Check> {
    let sys = SystemDefinition::scalar_contraction(1.0, MetricSpec::Euclidean)?;
    let grid = CandidateGrid::uniform(&sys.space, &[20_001])?;
    let fd = flow_discretization_rate(&sys, 2.0, 0.5, &[1.0, 2.0, 3.0, 4.0, 5.0], &grid)?;
    let scaled = fd.ratio / std::f64::consts::LN_2;
    Ok(Check {
        passed: (0.9..=1.1).contains(&scaled),
        detail: format!(
            "dense {:.4} nats/time, time-1 {:.4} bits/step, ratio = {:.4}·ln 2",
            fd.dense.rate, fd.time_one.rate, scaled
        ),
    })
}

fn c7_ballvolume(env: &Env) -> anyhow::Result<Check> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (tag, alpha, target) in [("c7a", "0", cat_lambda()), ("c7b", "0.5", cat_lambda() + 0.5), ("c7c", "2", 4.0)] {
        let args = [
            "ballvolume", "--alpha", alpha, "--eps", "0.1", "--n", "20", "--particles", "10000", "--x0", "0.3141,0.5926",
        ];
        let (res, dir) = env.cli(tag, CAT, &args)?;
        match res {
            Ok(_) => {
                let v = read_json(&dir.join("ballvolume.json"))?;
                let rate = f(&v["fitted_rate"])?;
                let ok = within_rel(rate, target, 0.15);
                passed &= ok;
                parts.push(format!("α = {alpha}: {rate:.4} vs {target:.4}"));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("α = {alpha}: {e}"));
            }
        }
    }
    Ok(Check {
        passed,
        detail: format!("{} bits/step", parts.join("; ")),
    })
}

fn c8_coder(env: &Env) -> anyhow::Result<Check> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (tag, alpha) in [("c8a", "0"), ("c8b", "0.5"), ("c8c", "1")] {
        let (res, dir) = env.cli(tag, CAT, &["simulate-coder", "--alpha", alpha, "--horizon", "100"])?;
        match res {
            Ok(_) => {
                let v = read_json(&dir.join("coder.json"))?;
                let rate = f(&v["avg_rate_bits_per_step"])?;
                let lb = f(&v["lyapunov_lower_bound"])?;
                let ratio = f(&v["max_error_ratio"])?;
                let ok = ratio < 1.0 && rate >= lb;
                passed &= ok;
                parts.push(format!("α = {alpha}: {rate} ≥ {lb:.4} bits/step, max err/bound {ratio:.2e}"));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("α = {alpha}: {e}"));
            }
        }
    }
    Ok(Check {
        passed,
        detail: parts.join("; "),
    })
}

fn c9_partitions(env: &Env) -> anyhow::Result<Check> {
    let args = ["partitions", "--eps", "0.5", "--beta", "0.3", "--alpha", "0.6", "--nmax", "12"];
    let (res, dir) = env.cli("c9", "", &args)?;
    let v = read_json(&dir.join("partitions.json"))?;
    let report = &v["report"];
    let property_i = report["property_i_all"].as_bool().unwrap_or(false);
    let slope = report["scaling_exponent"].as_f64();
    let slope_ok = slope.is_some_and(|s| within_rel(s, -0.6, 0.05));
    let n0 = report["n0"].as_u64();
    let n0_ok = n0.is_some_and(|n| n <= 12);

    let params = PartitionParams::new(0.5, 0.6, 0.3, 12);
    let seq = build_partition_sequence(Domain::UnitSquare, &params)?;
    let c = shrink_constant(2)?;
    let mut worst: f64 = 0.0;
    let mut cores = 0;
    for level in &seq.levels {
        for (cell, core) in level.cells.iter().zip(&level.cores) {
            if let Some(core) = core {
                cores += 1;
                worst = worst.max((core.diameter - (cell.diameter - 3.0 * c * level.shrink_depth)).abs());
            }
        }
    }
    let shrink_ok = cores > 0 && worst <= 1e-12;
    let cli_note = match res {
        Ok(_) => String::new(),
        Err(e) => format!("; command reported: {e}"),
    };
    Ok(Check {
        passed: property_i && slope_ok && n0_ok && shrink_ok,
        detail: format!(
            "property (i) at all levels: {property_i}; scaling exponent {} (target −0.6 ± 5%); n0 = {} (needs ≤ 12; closed-form n0 = {}); shrink diameter error {worst:.1e} over {cores} cores{cli_note}",
            slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "none".into()),
            n0.map(|n| n.to_string()).unwrap_or_else(|| "none".into()),
            report["n0_extended"],
        ),
    })
}

fn sandwich() -> anyhow::Result<(bool, usize)> {
    let mut checked = 0;
    for sys in [SystemDefinition::cat_map(), SystemDefinition::standard_map(1.0)] {
        let grid = CandidateGrid::square(&sys.space, 40)?;
        let scale = sys.space.periods().map_or(1.0, |p| p[0]);
        for eps in [0.05, 0.1, 0.2] {
            for t in 0..=8 {
                let t = f64::from(t);
                let ctx = AlphaBowenContext::new(&sys, 0.0, eps * scale, t)?;
                let sep = max_separated(&ctx, &grid)?.count;
                let span = min_spanning(&ctx, &grid)?.count;
                let wide = AlphaBowenContext::new(&sys, 0.0, 2.0 * eps * scale, t)?;
                let sep2 = max_separated(&wide, &grid)?.count;
                if !(span <= sep && sep2 <= span) {
                    return Ok((false, checked));
                }
                checked += 1;
            }
        }
    }
    Ok((true, checked))
}

fn c10_suites(_env: &Env) -> anyhow::Result<Check> {
    let mut parts = Vec::new();

    let (sandwich_ok, cases) = sandwich()?;
    parts.push(format!("sandwich {} ({cases} cases)", if sandwich_ok { "holds" } else { "fails" }));

    let cat = SystemDefinition::cat_map();
    let grid = CandidateGrid::square(&cat.space, 256)?;
    let hs: Vec<f64> = (1..=8).map(f64::from).collect();
    let base = estimate_entropy(&cat, 0.0, 0.1, &hs, &grid, CountKind::Separated)?;
    let mut scaling_ok = true;
    for c in [0.5, 3.0] {
        let scaled = cat.clone().with_metric(MetricSpec::scaled(c, MetricSpec::FlatTorus))?;
        let e = estimate_entropy(&scaled, 0.0, 0.1, &hs, &grid, CountKind::Separated)?;
        let diff = (e.rate - base.rate).abs();
        scaling_ok &= diff < base.residual;
        parts.push(format!("scale {c}: |Δrate| {diff:.4} vs residual {:.4}", base.residual));
    }

    let q = lyapunov_qr(&cat, &[0.1, 0.2], 50, 1)?;
    let o = oseledets_oracle(&cat, &[0.1, 0.2], 50)?;
    let cat_gap = q.exponents.iter().zip(&o.exponents).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let std5 = SystemDefinition::standard_map(5.0);
    let x0 = [0.3, 0.4];
    let burned = std5.orbit(&x0, BURN_IN)?.pop().expect("orbit");
    let q = lyapunov_qr(&std5, &x0, 1000, 1)?;
    let o = oseledets_oracle(&std5, &burned, 1000)?;
    let std_gap = q.exponents.iter().zip(&o.exponents).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let oracle_ok = cat_gap <= 1e-4 && std_gap <= 0.05;
    parts.push(format!("QR vs oracle {cat_gap:.1e} (cat), {std_gap:.4} (standard a = 5)"));

    let mut det_ok = true;
    for sys in [cat.clone(), SystemDefinition::standard_map(1.0), std5.clone()] {
        det_ok &= preserves_volume(&sys, 3)?;
        det_ok &= lyapunov_qr(&sys, &x0, 10_000, 1)?.sum().abs() <= 1e-3;
    }
    let cat_det = Matrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 1.0])?.det();
    det_ok &= (cat_det - 1.0).abs() <= 1e-12;
    parts.push(format!("det preservation {}", if det_ok { "holds" } else { "fails" }));

    Ok(Check {
        passed: sandwich_ok && scaling_ok && oracle_ok && det_ok,
        detail: parts.join("; "),
    })
}

fn c11_standard_map(env: &Env) -> anyhow::Result<Check> {
    let sys = SystemDefinition::standard_map(10.0);
    let sampled = sample_spectra(
        &sys,
        &Sampling::Random {
            count: 50,
            seed: derive_seed(env.seed, "standard-map-regression", 0),
        },
        10_000,
    )?;
    let worst = sampled.spectra.iter().map(|s| s.sum().abs()).fold(0.0, f64::max);
    let l1: Vec<f64> = sampled.spectra.iter().map(|s| s.exponents[0]).collect();
    let mean = l1.iter().sum::<f64>() / l1.len() as f64;
    let (lo, hi) = l1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(Check {
        passed: worst <= 1e-3 && sampled.spectra.len() == 50,
        detail: format!(
            "max |λ1+λ2| = {worst:.1e} over 50 samples; baseline mean λ1 = {mean:.4} bits/step (range {lo:.4}..{hi:.4})"
        ),
    })
}
