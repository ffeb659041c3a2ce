use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use estent_core::ballvolume::{ball_decay, BallDecayEstimate};
use estent_core::coder::{bound_bits_per_step, run_estimation, BoundSampling, CoderConfig, EstimationTrace};
use estent_core::entropy::{
    count_sweep, fit_entropy_rate, power_rule_check, resolution_check, AlphaBowenContext, CandidateGrid, CountKind,
    CountRecord, ResolutionCheck,
};
use estent_core::lyapunov::{bound_from_spectra, lyapunov_qr, sample_spectra, LowerBound, Sampling, BURN_IN};
use estent_core::partitions::{build_partition_sequence, verify_partition_properties, write_mesh, Domain, MeshPart, PartitionParams};
use estent_core::seed::derive_seed;
use estent_core::{Error, SystemDefinition, Units};
use serde::Serialize;

use crate::acceptance;
use crate::config::{CommandBlock, ExperimentConfig};
use crate::output::{num, Sink};
use crate::{BallArgs, BoundArgs, Cli, CoderArgs, Command, EntropyArgs, LyapunovArgs, PartitionArgs, PowerArgs};

pub const COUNT_HEADER: [&str; 6] = ["alpha", "epsilon", "horizon", "count", "kind", "rate_units"];
pub const LEVEL_HEADER: [&str; 4] = ["level", "survival", "mu_hat", "rate_running"];
pub const TRACE_HEADER: [&str; 4] = ["t", "err", "bound", "bits"];

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    sink: Sink,
}

impl Ctx {
    fn cmd(&self) -> &CommandBlock {
        &self.cfg.command
    }

    fn system(&self) -> anyhow::Result<SystemDefinition> {
        self.cfg.system()
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

fn scalar_alpha(flag: Option<f64>, cfg: &CommandBlock, default: f64) -> anyhow::Result<f64> {
    if let Some(a) = flag {
        return Ok(a);
    }
    match cfg.alpha.as_deref() {
        None => Ok(default),
        Some([a]) => Ok(*a),
        Some(_) => Err(usage("this command takes a single alpha")),
    }
}

fn initial_point(sys: &SystemDefinition, given: Option<Vec<f64>>, seed: u64) -> anyhow::Result<Vec<f64>> {
    match given {
        Some(x) => {
            if x.len() != sys.dimension() {
                return Err(usage(format!("x0 has {} coordinates, the system has {}", x.len(), sys.dimension())));
            }
            sys.space.check(&x)?;
            Ok(x)
        }
        None => Ok(sys.space.seeded_point(seed)),
    }
}

fn horizons(tmin: f64, tmax: f64, step: f64) -> anyhow::Result<Vec<f64>> {
    if !(tmin >= 0.0 && tmax >= tmin) {
        return Err(usage(format!("need 0 ≤ tmin ≤ tmax, got {tmin}..{tmax}")));
    }
    let n = ((tmax - tmin) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| tmin + i as f64 * step).collect())
}

pub(crate) fn dispatch(cli: Cli) -> anyhow::Result<String> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let format = cli.format.or(cfg.output.format).unwrap_or_default();
    let sink = Sink::new(&dir, format)?;
    log::info!("seed {seed}, writing to {}", dir.display());
    let ctx = Ctx { cfg, seed, sink };
    match cli.command {
        Command::Lyapunov(a) => lyapunov(&ctx, a),
        Command::Bound(a) => bound(&ctx, a),
        Command::EntropySep(a) => entropy(&ctx, a, CountKind::Separated),
        Command::EntropySpan(a) => entropy(&ctx, a, CountKind::Spanning),
        Command::PowerCheck(a) => power_check(&ctx, a),
        Command::Ballvolume(a) => ballvolume(&ctx, a),
        Command::SimulateCoder(a) => simulate_coder(&ctx, a),
        Command::Partitions(a) => partitions(&ctx, a),
        Command::Repro => repro(&ctx),
    }
}

#[derive(Serialize)]
struct LyapunovDiagnostics {
    x0: Vec<f64>,
    sum: f64,
    tail_spread: f64,
    history: Vec<Vec<f64>>,
    reorth_every: usize,
    burn_in: usize,
}

#[derive(Serialize)]
struct LyapunovOut {
    exponents: Vec<f64>,
    units: Units,
    n: usize,
    diagnostics: LyapunovDiagnostics,
}

fn lyapunov(ctx: &Ctx, a: LyapunovArgs) -> anyhow::Result<String> {
    let sys = ctx.system()?;
    let c = ctx.cmd();
    let n = a.n.or(c.n).unwrap_or(10_000);
    let reorth = a.reorth.or(c.reorth).unwrap_or(1);
    let x0 = initial_point(&sys, a.x0.or_else(|| c.x0.clone()), ctx.seed)?;
    let s = lyapunov_qr(&sys, &x0, n, reorth)?;
    let rows: Vec<Vec<String>> = s
        .exponents
        .iter()
        .enumerate()
        .map(|(i, l)| vec![(i + 1).to_string(), num(*l), s.units.to_string()])
        .collect();
    ctx.sink.csv("lyapunov", &["index", "exponent", "units"], &rows)?;
    let out = LyapunovOut {
        exponents: s.exponents.clone(),
        units: s.units,
        n,
        diagnostics: LyapunovDiagnostics {
            x0,
            sum: s.sum(),
            tail_spread: s.tail_spread(),
            history: s.history.clone(),
            reorth_every: reorth,
            burn_in: BURN_IN,
        },
    };
    ctx.sink.json("lyapunov", &out)?;
    let shown: Vec<String> = s.exponents.iter().map(|l| format!("{l:.6}")).collect();
    Ok(format!("lyapunov: exponents [{}] {} over n = {n}", shown.join(", "), s.units))
}

#[derive(Serialize)]
struct BoundOut {
    units: Units,
    samples: usize,
    n: usize,
    volume_preserving: bool,
    bounds: Vec<LowerBound>,
}

fn bound(ctx: &Ctx, a: BoundArgs) -> anyhow::Result<String> {
    let sys = ctx.system()?;
    let c = ctx.cmd();
    let alphas = a.alpha.or_else(|| c.alpha.clone()).unwrap_or_else(|| vec![0.0]);
    if alphas.is_empty() {
        return Err(usage("empty alpha list"));
    }
    let n = a.n.or(c.n).unwrap_or(10_000);
    let samples = a.samples.or(c.samples).unwrap_or(50);
    let sampling = match a.x0.or_else(|| c.x0.clone()) {
        Some(x) => Sampling::SingleOrbit {
            x0: initial_point(&sys, Some(x), ctx.seed)?,
        },
        None => Sampling::Random {
            count: samples,
            seed: derive_seed(ctx.seed, "bound", 0),
        },
    };
    let sampled = sample_spectra(&sys, &sampling, n)?;
    let bounds = alphas
        .iter()
        .map(|&al| bound_from_spectra(&sampled, al))
        .collect::<estent_core::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = bounds
        .iter()
        .map(|b| {
            let count = |r| b.regime_histogram.get(&r).copied().unwrap_or(0).to_string();
            vec![
                num(b.alpha),
                num(b.mean),
                num(b.min),
                num(b.max),
                count(estent_core::lyapunov::Regime::Deep),
                count(estent_core::lyapunov::Regime::Shallow),
                b.units.to_string(),
            ]
        })
        .collect();
    ctx.sink.csv("bound", &["alpha", "mean", "min", "max", "deep", "shallow", "units"], &rows)?;
    let units = sys.units();
    ctx.sink.json(
        "bound",
        &BoundOut {
            units,
            samples: sampled.spectra.len(),
            n,
            volume_preserving: sampled.volume_preserving,
            bounds: bounds.clone(),
        },
    )?;
    let first = &bounds[0];
    Ok(format!(
        "bound: {} alpha values, alpha = {} gives {:.6} {units} (min {:.6}, max {:.6})",
        bounds.len(),
        first.alpha,
        first.mean,
        first.min,
        first.max
    ))
}

fn count_rows(records: &[CountRecord], units: Units) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            vec![
                num(r.alpha),
                num(r.epsilon),
                num(r.horizon),
                r.count.to_string(),
                r.kind.as_str().to_string(),
                units.to_string(),
            ]
        })
        .collect()
}

fn grid_for(sys: &SystemDefinition, per_axis: usize) -> anyhow::Result<CandidateGrid> {
    Ok(CandidateGrid::square(&sys.space, per_axis)?)
}

#[derive(Serialize)]
struct EntropyOut<'a> {
    grid: usize,
    records: &'a [CountRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<estent_core::entropy::EntropyEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolution_check: Option<ResolutionCheck>,
}

fn entropy(ctx: &Ctx, a: EntropyArgs, kind: CountKind) -> anyhow::Result<String> {
    let sys = ctx.system()?;
    let c = ctx.cmd();
    let alpha = scalar_alpha(a.alpha, c, 0.0)?;
    let eps = a.eps.or(c.epsilon).unwrap_or(0.1);
    let step = sys.step_time();
    let tmin = a.tmin.or(c.tmin).unwrap_or(step);
    let tmax = a.tmax.or(c.tmax).unwrap_or(8.0 * step);
    let per_axis = a.grid.or(c.grid).unwrap_or(256);
    let grid = grid_for(&sys, per_axis)?;
    let hs = horizons(tmin, tmax, step)?;
    let records = count_sweep(&sys, alpha, eps, &hs, &grid, kind)?;
    let units = sys.units();
    let name = match kind {
        CountKind::Separated => "entropy_sep",
        CountKind::Spanning => "entropy_span",
    };
    ctx.sink.csv(name, &COUNT_HEADER, &count_rows(&records, units))?;
    let fit = fit_entropy_rate(&records, units);
    let (estimate, error) = match &fit {
        Ok(e) => (Some(e.clone()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let resolution = if a.resolution_check {
        // At the deepest horizon that entered the fit.
        let t = estimate
            .as_ref()
            .and_then(|e| e.fitted_horizons.last().copied())
            .unwrap_or(hs[hs.len() - 1]);
        let check = resolution_check(&AlphaBowenContext::new(&sys, alpha, eps, t)?, &grid.resolution)?;
        if check.unstable {
            log::warn!("separated count at T = {t} moves by {:.1}% when the grid is halved", 100.0 * (check.ratio - 1.0));
        }
        Some(check)
    } else {
        None
    };
    ctx.sink.json(
        name,
        &EntropyOut {
            grid: per_axis,
            records: &records,
            estimate,
            error,
            resolution_check: resolution,
        },
    )?;
    let est = fit?;
    let counts: Vec<String> = records.iter().map(|r| r.count.to_string()).collect();
    Ok(format!(
        "{}: rate {:.6} {} (residual {:.4}) from horizons {:?}; counts [{}]",
        name.replace('_', "-"),
        est.rate,
        est.units,
        est.residual,
        est.fitted_horizons,
        counts.join(", ")
    ))
}

fn power_check(ctx: &Ctx, a: PowerArgs) -> anyhow::Result<String> {
    let sys = ctx.system()?;
    let c = ctx.cmd();
    let alpha = scalar_alpha(a.alpha, c, 0.0)?;
    let k = a.k.or(c.k).unwrap_or(2);
    let eps = a.eps.or(c.epsilon).unwrap_or(0.1);
    let tmin = a.tmin.or(c.tmin).unwrap_or(2.0);
    let tmax = a.tmax.or(c.tmax).unwrap_or(6.0);
    let per_axis = a.grid.or(c.grid).unwrap_or(256);
    let grid = grid_for(&sys, per_axis)?;
    let hs = horizons(tmin, tmax, 1.0)?;
    let report = power_rule_check(&sys, alpha, k, eps, &hs, &grid)?;
    let units = sys.units();
    ctx.sink.csv("power_check_base", &COUNT_HEADER, &count_rows(&report.base.records, units))?;
    ctx.sink.csv("power_check_power", &COUNT_HEADER, &count_rows(&report.power.records, units))?;
    ctx.sink.json("power_check", &report)?;
    Ok(format!(
        "power-check: rate(f^{k}) / rate(f) = {:.4} ({:.4} / {:.4} {units})",
        report.ratio, report.power.rate, report.base.rate
    ))
}

fn write_ball(ctx: &Ctx, est: &BallDecayEstimate) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = est
        .levels
        .iter()
        .map(|l| vec![l.level.to_string(), num(l.survival), num(l.mu_hat), num(l.rate_running)])
        .collect();
    ctx.sink.csv("ballvolume", &LEVEL_HEADER, &rows)?;
    ctx.sink.json("ballvolume", est)
}

fn ballvolume(ctx: &Ctx, a: BallArgs) -> anyhow::Result<String> {
    let sys = ctx.system()?;
    let c = ctx.cmd();
    let alpha = scalar_alpha(a.alpha, c, 0.0)?;
    let eps = a.eps.or(c.epsilon).unwrap_or(0.1);
    let n = a.n.or(c.n).unwrap_or(20);
    let particles = a.particles.or(c.particles).unwrap_or(10_000);
    let x0 = initial_point(&sys, a.x0.or_else(|| c.x0.clone()), ctx.seed)?;
    let est = match ball_decay(&sys, &x0, eps, alpha, n, particles, ctx.seed) {
        Ok(e) => e,
        Err(Error::LevelFailure { level, partial }) => {
            write_ball(ctx, &partial)?;
            return Err(Error::LevelFailure { level, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_ball(ctx, &est)?;
    Ok(format!(
        "ballvolume: rate {:.4} {} over levels {:?} (stable: {}, reliable: {})",
        est.fitted_rate, est.units, est.fit_levels, est.stable, est.reliable
    ))
}

#[derive(Serialize)]
struct CoderOut<'a> {
    alpha: f64,
    avg_rate_bits_per_step: f64,
    lyapunov_lower_bound: f64,
    units: Units,
    epsilon0: f64,
    horizon: usize,
    total_bits: u64,
    bits_per_step: u64,
    subdivisions: u64,
    lipschitz: f64,
    max_error_ratio: f64,
    bound: &'a LowerBound,
}

fn simulate_coder(ctx: &Ctx, a: CoderArgs) -> anyhow::Result<String> {
    let sys = ctx.system()?;
    let c = ctx.cmd();
    let mut cfg = CoderConfig::new(
        scalar_alpha(a.alpha, c, 0.0)?,
        a.eps0.or(c.epsilon).unwrap_or(0.1),
        a.horizon.or(c.horizon).unwrap_or(100),
    );
    cfg.lipschitz = a.lipschitz.or(c.lipschitz);
    cfg.safety = a.safety.or(c.safety).unwrap_or(1.0);
    let sampling = BoundSampling {
        samples: a.samples.or(c.samples).unwrap_or(50),
        steps: a.n.or(c.n).unwrap_or(10_000),
    };
    let x0 = initial_point(&sys, a.x0.or_else(|| c.x0.clone()), ctx.seed)?;
    let trace: EstimationTrace = run_estimation(&sys, &x0, &cfg, ctx.seed)?;
    let bound = bound_bits_per_step(&sys, cfg.alpha, sampling, ctx.seed)?;
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| vec![r.t.to_string(), num(r.error), num(r.bound), r.bits.to_string()])
        .collect();
    ctx.sink.csv("coder", &TRACE_HEADER, &rows)?;
    let max_error_ratio = trace.records.iter().map(|r| r.error / r.bound).fold(0.0, f64::max);
    ctx.sink.json(
        "coder",
        &CoderOut {
            alpha: cfg.alpha,
            avg_rate_bits_per_step: trace.avg_rate_bits_per_step,
            lyapunov_lower_bound: bound.mean,
            units: Units::BitsPerStep,
            epsilon0: cfg.epsilon0,
            horizon: cfg.horizon,
            total_bits: trace.total_bits,
            bits_per_step: trace.bits_per_step,
            subdivisions: trace.subdivisions,
            lipschitz: trace.lipschitz,
            max_error_ratio,
            bound: &bound,
        },
    )?;
    if trace.avg_rate_bits_per_step < bound.mean {
        return Err(Error::Verification(format!(
            "coder rate {} bits/step is below the Lyapunov lower bound {}",
            trace.avg_rate_bits_per_step, bound.mean
        ))
        .into());
    }
    Ok(format!(
        "simulate-coder: {:.4} bits/step against lower bound {:.4} bits/step at alpha = {}; max err/bound {:.3e}",
        trace.avg_rate_bits_per_step, bound.mean, cfg.alpha, max_error_ratio
    ))
}

fn partitions(ctx: &Ctx, a: PartitionArgs) -> anyhow::Result<String> {
    let c = ctx.cmd();
    let domain = match a.domain.as_deref().or(c.domain.as_deref()).unwrap_or("square") {
        "square" => Domain::UnitSquare,
        "torus" => Domain::UnitTorus,
        other => return Err(usage(format!("unknown domain {other}; expected square or torus"))),
    };
    let mut params = PartitionParams::new(
        a.eps.or(c.epsilon).unwrap_or(0.5),
        scalar_alpha(a.alpha, c, 0.6)?,
        a.beta.or(c.beta).unwrap_or(0.3),
        a.nmax.or(c.n).unwrap_or(12),
    );
    params.chart_lipschitz = a.chart_lipschitz.or(c.chart_lipschitz).unwrap_or(1.0);
    let density = a.density.or(c.density).unwrap_or(1.0);
    let seq = build_partition_sequence(domain, &params)?;
    let report = verify_partition_properties(&seq, density)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.n.to_string(),
                l.l_n.to_string(),
                l.k_n.to_string(),
                num(l.max_diameter),
                num(l.diameter_bound),
                l.property_i.to_string(),
                l.nonempty_cores.to_string(),
                opt(l.min_core_distance),
                opt(l.delta_n),
                num(l.max_complement_measure),
                num(l.measure_bound),
                l.property_c.to_string(),
            ]
        })
        .collect();
    ctx.sink.csv(
        "partitions",
        &[
            "n",
            "l_n",
            "k_n",
            "max_diameter",
            "diameter_bound",
            "property_i",
            "nonempty_cores",
            "min_core_distance",
            "delta_n",
            "max_complement_measure",
            "measure_bound",
            "property_c",
        ],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Out<'a> {
        params: &'a PartitionParams,
        domain: Domain,
        k0: usize,
        pre_subdivisions: usize,
        report: &'a estent_core::partitions::PartitionReport,
    }
    // the verification report is always JSON
    let json = Sink {
        dir: ctx.sink.dir.clone(),
        format: crate::Format::Json,
    };
    json.json(
        "partitions",
        &Out {
            params: &params,
            domain,
            k0: seq.k0,
            pre_subdivisions: seq.pre_subdivisions,
            report: &report,
        },
    )?;
    if a.mesh {
        for level in 0..seq.levels.len() {
            for (part, tag) in [(MeshPart::Cells, "cells"), (MeshPart::Cores, "cores")] {
                let path = ctx.sink.path(&format!("mesh_{tag}_{level}.txt"));
                let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?);
                write_mesh(&seq, level, part, &mut w)?;
            }
        }
    }
    let summary = format!(
        "partitions: {} levels, k0 = {}, delta = {}, scaling exponent {}, n0 = {} (closed-form n0 = {})",
        report.levels.len(),
        seq.k0,
        report.delta.map(num).unwrap_or_else(|| "none".into()),
        report.scaling_exponent.map(|s| format!("{s:.4}")).unwrap_or_else(|| "none".into()),
        report.n0.map(|n| n.to_string()).unwrap_or_else(|| "none".into()),
        report.n0_extended.map(|n| n.to_string()).unwrap_or_else(|| "none".into()),
    );
    if !report.failures.is_empty() {
        return Err(Error::Verification(format!("{summary}; {}", report.failures.join("; "))).into());
    }
    Ok(summary)
}

fn repro(ctx: &Ctx) -> anyhow::Result<String> {
    let work = ctx.sink.path("repro");
    let results = acceptance::run_suite(&work, ctx.seed, |r| println!("{}", r.line()));
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.name.to_string(),
                r.status().to_string(),
                format!("{:.3}", r.runtime.as_secs_f64()),
                r.budget.map(|b| format!("{}", b.as_secs())).unwrap_or_default(),
                r.detail.clone(),
            ]
        })
        .collect();
    ctx.sink.csv("repro", &["criterion", "name", "status", "runtime_s", "budget_s", "detail"], &rows)?;
    ctx.sink.json("repro", &results)?;
    let passed = results.iter().filter(|r| r.passed()).count();
    let summary = format!("repro: {passed}/{} criteria pass", results.len());
    if passed < results.len() {
        return Err(Error::Verification(summary).into());
    }
    Ok(summary)
}
