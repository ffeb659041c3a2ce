//! Decay of the volume of α-weighted Bowen balls
//! `Bⁿ_α(x, ε) = {y : 2^{αk}·d(f^k y, f^k x) < ε for 0 ≤ k ≤ n}`
//! by multilevel splitting.
//!
//! Each level holds a population spread over `Bⁿ`. The fraction that also
//! lies in `Bⁿ⁺¹` estimates the conditional mass, survivors are resampled
//! and moved by a jittered Metropolis walk restricted to `Bⁿ⁺¹`.
//!
//! Particles are stored as offsets from the centre. For real
//! diagonalizable linear maps the offsets are eigen-coordinates, so
//! `f^k y − f^k x = Σ c_j γ_j^k v_j` is evaluated without cancellation even
//! when the ball is many orders of magnitude thinner than `f64` resolution
//! at the centre.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::least_squares;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lyapunov::{thieullen_rate, LyapunovSpectrum, Regime};
use crate::seed::derive_seed;
use crate::systems::{wrap_diff, StateSpace, SystemDefinition, TimeSemantics, Units};

/// Populations below this size end the run.
pub const MIN_SURVIVORS: usize = 100;

pub const DEFAULT_SWEEPS: usize = 16;

/// Jitter step as a fraction of the population half-extent per axis.
pub const JITTER_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    /// `p_n = μ̂(Bⁿ) / μ̂(Bⁿ⁻¹)`
    pub survival: f64,
    pub mu_hat: f64,
    /// `−(1/n) log μ̂(Bⁿ)`
    pub rate_running: f64,
    pub survivors: usize,
    /// Fraction of jitter proposals accepted while refilling this level.
    pub acceptance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallDecayEstimate {
    pub center: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    pub units: Units,
    pub particles_per_level: usize,
    /// Normalized volume of `B⁰`.
    pub mu0: f64,
    pub levels: Vec<LevelRecord>,
    /// Slope of `−log μ̂(Bⁿ)` against `n` over the later half of the levels.
    pub fitted_rate: f64,
    pub fit_levels: Vec<usize>,
    /// Spread of the last three `r_n` is below 20% of their mean.
    pub stable: bool,
    /// Every level kept at least [`MIN_SURVIVORS`] particles.
    pub reliable: bool,
    /// Set when the run stopped before `n_max`.
    pub terminated_at: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplittingOptions {
    pub sweeps: usize,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        SplittingOptions { sweeps: DEFAULT_SWEEPS }
    }
}

/// How offsets are evolved.
enum Tracker<'a> {
    Eigen {
        /// `powers[k][j] = γ_j^k`
        powers: Vec<Vec<f64>>,
        vectors: Matrix,
        scale: f64,
    },
    /// Ambient offsets through a linear map, wrapped on tori.
    Linear {
        a: Matrix,
        periods: Option<Vec<f64>>,
        scale: f64,
    },
    Orbit {
        system: &'a SystemDefinition,
        reference: Vec<Vec<f64>>,
    },
}

struct Ball<'a> {
    tracker: Tracker<'a>,
    /// `ε / 2^{αk}`
    radii: Vec<f64>,
    center: Vec<f64>,
}

impl Ball<'_> {
    fn distance_at(&self, c: &[f64], k: usize, scratch: &mut Vec<f64>) -> f64 {
        match &self.tracker {
            Tracker::Eigen { powers, vectors, scale } => {
                let d = c.len();
                scratch.clear();
                scratch.resize(d, 0.0);
                for (j, cj) in c.iter().enumerate() {
                    let w = cj * powers[k][j];
                    for (i, s) in scratch.iter_mut().enumerate() {
                        *s += w * vectors[(i, j)];
                    }
                }
                scale * scratch.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            Tracker::Linear { .. } | Tracker::Orbit { .. } => unreachable!("sequential trackers use `inside`"),
        }
    }

    /// `c ∈ B^level`, checking only the times in `from..=level`.
    fn inside(&self, c: &[f64], from: usize, level: usize) -> bool {
        match &self.tracker {
            Tracker::Eigen { .. } => {
                let mut scratch = Vec::with_capacity(c.len());
                (from..=level).all(|k| self.distance_at(c, k, &mut scratch) < self.radii[k])
            }
            Tracker::Linear { a, periods, scale } => {
                let mut u = c.to_vec();
                for k in 0..=level {
                    if k > 0 {
                        u = a.mul_vec(&u);
                        if let Some(p) = periods {
                            for (v, p) in u.iter_mut().zip(p) {
                                *v = wrap_diff(*v, *p);
                            }
                        }
                    }
                    if k >= from && scale * u.iter().map(|v| v * v).sum::<f64>().sqrt() >= self.radii[k] {
                        return false;
                    }
                }
                true
            }
            Tracker::Orbit { system, reference } => {
                let mut y: Vec<f64> = self.center.iter().zip(c).map(|(x, u)| x + u).collect();
                system.space.reduce(&mut y);
                for k in 0..=level {
                    if k > 0 {
                        y = match system.step(&y) {
                            Ok(v) => v,
                            Err(_) => return false,
                        };
                    }
                    if k >= from && system.metric.distance_unchecked(&system.space, &y, &reference[k]) >= self.radii[k] {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

fn build_ball<'a>(system: &'a SystemDefinition, x: &[f64], epsilon: f64, alpha: f64, n_max: usize) -> Result<(Ball<'a>, Option<Matrix>)> {
    let scale = system.metric.flat_scale().ok_or_else(|| Error::usage("ball volumes need a flat metric"))?;
    let radii: Vec<f64> = (0..=n_max).map(|k| epsilon / 2f64.powf(alpha * k as f64)).collect();
    let rho = epsilon / scale;
    let periods = system.space.periods().map(<[f64]>::to_vec);
    let center = {
        let mut c = x.to_vec();
        system.space.reduce(&mut c);
        c
    };
    if let Some(a) = system.linear_matrix() {
        let no_wrap = match &periods {
            Some(p) => rho * a.inf_norm().max(1.0) < 0.5 * p.iter().copied().fold(f64::INFINITY, f64::min),
            None => true,
        };
        if no_wrap {
            if let Some((gammas, vectors)) = a.real_eigen_decomposition() {
                if let Some(inv) = vectors.inverse() {
                    let mut powers = vec![vec![1.0; gammas.len()]];
                    for k in 1..=n_max {
                        let prev = &powers[k - 1];
                        powers.push(prev.iter().zip(&gammas).map(|(p, g)| p * g).collect());
                    }
                    let ball = Ball {
                        tracker: Tracker::Eigen { powers, vectors, scale },
                        radii,
                        center,
                    };
                    return Ok((ball, Some(inv)));
                }
            }
        }
        return Ok((
            Ball {
                tracker: Tracker::Linear { a, periods, scale },
                radii,
                center,
            },
            None,
        ));
    }
    let reference = system.orbit(&center, n_max)?;
    Ok((
        Ball {
            tracker: Tracker::Orbit { system, reference },
            radii,
            center,
        },
        None,
    ))
}

/// Per-axis half-extent of the population.
fn half_extent(population: &[Vec<f64>]) -> Vec<f64> {
    let d = population[0].len();
    (0..d)
        .map(|j| {
            let (lo, hi) = population
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[j]), hi.max(p[j])));
            0.5 * (hi - lo)
        })
        .collect()
}

/// Multilevel-splitting estimate of `μ(Bⁿ_α(x, ε))` for `n ≤ n_max`.
pub fn ball_decay(
    system: &SystemDefinition,
    x: &[f64],
    epsilon: f64,
    alpha: f64,
    n_max: usize,
    particles_per_level: usize,
    seed: u64,
) -> Result<BallDecayEstimate> {
    ball_decay_with(system, x, epsilon, alpha, n_max, particles_per_level, seed, SplittingOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn ball_decay_with(
    system: &SystemDefinition,
    x: &[f64],
    epsilon: f64,
    alpha: f64,
    n_max: usize,
    particles_per_level: usize,
    seed: u64,
    opts: SplittingOptions,
) -> Result<BallDecayEstimate> {
    if system.time_semantics() != TimeSemantics::Discrete {
        return Err(Error::usage("ball decay is measured for discrete-time maps"));
    }
    if !(epsilon > 0.0) || !(alpha >= 0.0) {
        return Err(Error::usage("epsilon must be positive and alpha nonnegative"));
    }
    if particles_per_level < 1000 {
        return Err(Error::usage(format!(
            "particles_per_level = {particles_per_level} is below 1000"
        )));
    }
    if n_max == 0 {
        return Err(Error::usage("n_max must be positive"));
    }
    if matches!(system.space, StateSpace::HalfLine) {
        return Err(Error::usage("ball decay needs a torus or box"));
    }
    system.space.check(x)?;
    let units = system.units();
    let d = system.dimension();
    let (ball, inverse) = build_ball(system, x, epsilon, alpha, n_max)?;
    let scale = system.metric.flat_scale().expect("checked in build_ball");
    let rho = epsilon / scale;
    if let StateSpace::Box { lower, upper } = &system.space {
        if ball.center.iter().zip(lower.iter().zip(upper)).any(|(c, (l, u))| c - rho < *l || c + rho > *u) {
            log::warn!("B⁰ is clipped by the box; μ(B⁰) uses the unclipped volume");
        }
    }
    let mu0 = unit_ball_volume(d) * rho.powi(d as i32) / system.space.sampling_volume();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ballvolume-init", 0));
    let mut population: Vec<Vec<f64>> = Vec::with_capacity(particles_per_level);
    while population.len() < particles_per_level {
        let u: Vec<f64> = (0..d).map(|_| rho * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        if u.iter().map(|v| v * v).sum::<f64>() < rho * rho {
            population.push(match &inverse {
                Some(inv) => inv.mul_vec(&u),
                None => u,
            });
        }
    }

    let mut levels = Vec::with_capacity(n_max);
    let mut mu = mu0;
    let mut reliable = true;
    let mut terminated_at = None;
    for level in 1..=n_max {
        let survivors: Vec<Vec<f64>> = population
            .par_iter()
            .filter(|c| ball.inside(c, level, level))
            .cloned()
            .collect();
        let p = survivors.len() as f64 / population.len() as f64;
        if survivors.is_empty() {
            let partial = finish(ball.center.clone(), epsilon, alpha, units, particles_per_level, mu0, levels, false, Some(level))?;
            return Err(Error::LevelFailure {
                level,
                partial: Box::new(partial),
            });
        }
        mu *= p;
        let mut record = LevelRecord {
            level,
            survival: p,
            mu_hat: mu,
            rate_running: -units.log(mu) / level as f64,
            survivors: survivors.len(),
            acceptance: 1.0,
        };
        if survivors.len() < MIN_SURVIVORS {
            reliable = false;
            levels.push(record);
            if level < n_max {
                terminated_at = Some(level);
            }
            log::warn!("only {} particles reached level {level}; stopping", survivors.len());
            break;
        }

        let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ballvolume-resample", level as u64));
        let resampled: Vec<Vec<f64>> = (0..particles_per_level)
            .map(|_| survivors[pick.gen_range(0..survivors.len())].clone())
            .collect();
        let steps: Vec<f64> = half_extent(&survivors)
            .into_iter()
            .map(|h| JITTER_FRACTION * if h > 0.0 { h } else { f64::MIN_POSITIVE })
            .collect();
        let level_seed = derive_seed(seed, "ballvolume-jitter", level as u64);
        let moved: Vec<(Vec<f64>, usize)> = resampled
            .into_par_iter()
            .enumerate()
            .map(|(i, mut c)| {
                let mut r = ChaCha8Rng::seed_from_u64(derive_seed(level_seed, "particle", i as u64));
                let mut accepted = 0;
                for _ in 0..opts.sweeps {
                    let proposal: Vec<f64> = c.iter().zip(&steps).map(|(v, s)| v + s * (2.0 * r.gen::<f64>() - 1.0)).collect();
                    if ball.inside(&proposal, 0, level) {
                        c = proposal;
                        accepted += 1;
                    }
                }
                (c, accepted)
            })
            .collect();
        let accepted: usize = moved.iter().map(|(_, a)| a).sum();
        record.acceptance = accepted as f64 / (particles_per_level * opts.sweeps.max(1)) as f64;
        if opts.sweeps > 0 && record.acceptance < 0.01 {
            log::warn!("jitter rejection rate above 99% at level {level}");
        }
        population = moved.into_iter().map(|(c, _)| c).collect();
        levels.push(record);
    }
    finish(ball.center, epsilon, alpha, units, particles_per_level, mu0, levels, reliable, terminated_at)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    center: Vec<f64>,
    epsilon: f64,
    alpha: f64,
    units: Units,
    particles_per_level: usize,
    mu0: f64,
    levels: Vec<LevelRecord>,
    reliable: bool,
    terminated_at: Option<usize>,
) -> Result<BallDecayEstimate> {
    let last = levels.len();
    let mut fit: Vec<&LevelRecord> = levels.iter().filter(|r| 2 * r.level >= last).collect();
    if fit.len() < 3 {
        fit = levels.iter().collect();
    }
    let (fitted_rate, fit_levels) = if fit.len() >= 2 {
        let xs: Vec<f64> = fit.iter().map(|r| r.level as f64).collect();
        let ys: Vec<f64> = fit.iter().map(|r| -units.log(r.mu_hat)).collect();
        (least_squares(&xs, &ys).0, fit.iter().map(|r| r.level).collect())
    } else {
        (f64::NAN, Vec::new())
    };
    let tail: Vec<f64> = levels.iter().rev().take(3).map(|r| r.rate_running).collect();
    let stable = tail.len() == 3 && {
        let mean = tail.iter().sum::<f64>() / 3.0;
        let spread = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max) - tail.iter().copied().fold(f64::INFINITY, f64::min);
        spread < 0.2 * mean.abs()
    };
    Ok(BallDecayEstimate {
        center,
        epsilon,
        alpha,
        units,
        particles_per_level,
        mu0,
        levels,
        fitted_rate,
        fit_levels,
        stable,
        reliable,
        terminated_at,
    })
}

/// Estimates at `ε` and `ε/2`.
pub fn epsilon_pair(
    system: &SystemDefinition,
    x: &[f64],
    epsilon: f64,
    alpha: f64,
    n_max: usize,
    particles_per_level: usize,
    seed: u64,
) -> Result<[BallDecayEstimate; 2]> {
    Ok([
        ball_decay(system, x, epsilon, alpha, n_max, particles_per_level, seed)?,
        ball_decay(system, x, epsilon / 2.0, alpha, n_max, particles_per_level, derive_seed(seed, "epsilon-half", 0))?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaComparison {
    pub fitted: f64,
    pub predicted: f64,
    /// `|fitted − predicted| / predicted` (absolute deviation when the
    /// prediction is zero).
    pub relative_deviation: f64,
    pub regime: Regime,
    pub units: Units,
}

pub fn compare_with_formula(estimate: &BallDecayEstimate, spectrum: &LyapunovSpectrum) -> Result<FormulaComparison> {
    let predicted = thieullen_rate(spectrum, estimate.alpha, estimate.units)?;
    let dev = (estimate.fitted_rate - predicted.value).abs();
    Ok(FormulaComparison {
        fitted: estimate.fitted_rate,
        predicted: predicted.value,
        relative_deviation: if predicted.value != 0.0 { dev / predicted.value } else { dev },
        regime: predicted.regime,
        units: estimate.units,
    })
}
