//! Finite-rate state estimation over a noiseless binary channel.
//!
//! Encoder and decoder share a certified hypercube around the estimate.
//! Each step both propagate it through the dynamics (centre image,
//! half-width scaled by `L`), the encoder sends the index of the cell of an
//! `m`-per-axis subdivision that contains the true state, and both shrink to
//! that cell. With `m = ⌈s·L·2^α⌉` the cube radius falls by at least `2^{-α}`
//! per step.
//!
//! The cube is kept as an anchor in the state space plus the true state's
//! offset from it, so offsets far below the anchor's rounding error stay
//! exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{lower_bound, linear_closed_form, LowerBound, Sampling};
use crate::seed::derive_seed;
use crate::systems::{SystemDefinition, TimeSemantics, Units};

/// Sample count for the default Lipschitz estimate.
pub const LIPSCHITZ_SAMPLES: usize = 10_000;

/// Safety factor applied to the sampled Lipschitz estimate.
pub const LIPSCHITZ_MARGIN: f64 = 1.1;

const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoderConfig {
    /// Exponent in bits per step.
    pub alpha: f64,
    /// Initial certified radius.
    pub epsilon0: f64,
    pub horizon: usize,
    /// Per-axis expansion bound; estimated when absent.
    pub lipschitz: Option<f64>,
    pub safety: f64,
    /// Publicly known initial estimate; when absent, the centre of the
    /// lattice cell of side `2ε₀/√d` containing `x0`.
    pub center: Option<Vec<f64>>,
}

impl CoderConfig {
    pub fn new(alpha: f64, epsilon0: f64, horizon: usize) -> Self {
        CoderConfig {
            alpha,
            epsilon0,
            horizon,
            lipschitz: None,
            safety: 1.0,
            center: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::usage("alpha must be nonnegative"));
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            return Err(Error::usage("epsilon0 must be positive"));
        }
        if !(self.safety >= 1.0 && self.safety.is_finite()) {
            return Err(Error::usage("safety factor must be at least 1"));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::usage("lipschitz bound must be positive"));
            }
        }
        Ok(())
    }

    /// `m = ⌈s·L·2^α⌉`
    pub fn subdivisions(&self, lipschitz: f64) -> u64 {
        ((self.safety * lipschitz * 2f64.powf(self.alpha)) * (1.0 - 1e-15)).ceil().max(1.0) as u64
    }
}

/// `d·⌈log₂ m⌉`
pub fn bits_per_step(d: usize, m: u64) -> u64 {
    d as u64 * u64::from(64 - (m - 1).leading_zeros())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub estimate: Vec<f64>,
    pub error: f64,
    /// `ε₀·2^{−αt}`
    pub bound: f64,
    pub bits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationTrace {
    pub records: Vec<StepRecord>,
    pub total_bits: u64,
    pub steps: usize,
    pub avg_rate_bits_per_step: f64,
    pub lipschitz: f64,
    pub subdivisions: u64,
    pub bits_per_step: u64,
}

/// Largest induced ∞-norm of `Df` over uniform samples, times 1.1.
/// Linear maps return `‖A‖∞` exactly.
pub fn estimate_lipschitz(system: &SystemDefinition, seed: u64) -> Result<f64> {
    if let Some(a) = system.linear_matrix() {
        return Ok(a.inf_norm());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "coder-lipschitz", 0));
    let mut best: f64 = 0.0;
    for _ in 0..LIPSCHITZ_SAMPLES {
        let x = system.space.sample_uniform(&mut rng);
        best = best.max(system.jacobian(&x)?.inf_norm());
    }
    Ok(best * LIPSCHITZ_MARGIN)
}

fn default_center(x0: &[f64], half: f64) -> Vec<f64> {
    x0.iter().map(|v| ((v / (2.0 * half)).floor() + 0.5) * 2.0 * half).collect()
}

/// Runs encoder and decoder in lock step for `config.horizon` steps.
pub fn run_estimation(system: &SystemDefinition, x0: &[f64], config: &CoderConfig, seed: u64) -> Result<EstimationTrace> {
    config.validate()?;
    system.space.check(x0)?;
    let d = system.dimension();
    let scale = system
        .metric
        .flat_scale()
        .ok_or_else(|| Error::usage("the coder needs a flat metric"))?;
    let lipschitz = match config.lipschitz {
        Some(l) => l,
        None => estimate_lipschitz(system, seed)?,
    };
    let m = config.subdivisions(lipschitz);
    let bits = bits_per_step(d, m);
    let sqrt_d = (d as f64).sqrt();

    let mut half = config.epsilon0 / (sqrt_d * scale);
    let mut anchor = match &config.center {
        Some(c) => {
            system.space.check(c)?;
            c.clone()
        }
        None => default_center(x0, half),
    };
    let mut offset: Vec<f64> = x0.iter().zip(&anchor).map(|(x, a)| x - a).collect();
    if offset.iter().any(|e| e.abs() > half * (1.0 + TOLERANCE)) {
        return Err(Error::usage(format!(
            "x0 lies outside the initial cube of half-width {half} around {anchor:?}"
        )));
    }
    system.space.reduce(&mut anchor);

    let record = |t: usize, anchor: &[f64], offset: &[f64], bits: u64| -> Result<StepRecord> {
        let bound = config.epsilon0 / 2f64.powf(config.alpha * t as f64);
        let error = system.metric.displacement_norm(&system.space, anchor, offset);
        let mut state: Vec<f64> = anchor.iter().zip(offset).map(|(a, e)| a + e).collect();
        system.space.reduce(&mut state);
        if !(error < bound) {
            return Err(Error::Soundness {
                step: t,
                message: format!("error {error:e} is not below the bound {bound:e}"),
            });
        }
        Ok(StepRecord {
            t,
            state,
            estimate: anchor.to_vec(),
            error,
            bound,
            bits,
        })
    };

    let mut records = Vec::with_capacity(config.horizon + 1);
    records.push(record(0, &anchor, &offset, 0)?);
    for t in 0..config.horizon {
        let image = system.step_lift(&anchor)?;
        let moved = system.step_difference(&anchor, &offset)?;
        let reach = lipschitz * half;
        if moved.iter().any(|e| e.abs() > reach * (1.0 + TOLERANCE)) {
            return Err(Error::Soundness {
                step: t + 1,
                message: format!("true state left the propagated cube (offset {moved:?}, half-width {reach:e})"),
            });
        }
        let cell = 2.0 * reach / m as f64;
        let mut shift = Vec::with_capacity(d);
        for e in &moved {
            let i = (((e + reach) / cell).floor() as i64).clamp(0, m as i64 - 1);
            shift.push(-reach + (i as f64 + 0.5) * cell);
        }
        anchor = image.iter().zip(&shift).map(|(c, s)| c + s).collect();
        offset = moved.iter().zip(&shift).map(|(e, s)| e - s).collect();
        system.space.reduce(&mut anchor);
        half = reach / m as f64;

        let radius = scale * sqrt_d * half;
        let bound = config.epsilon0 / 2f64.powf(config.alpha * (t + 1) as f64);
        if radius > bound * (1.0 + TOLERANCE) {
            return Err(Error::SchemeViolation { step: t + 1, radius, bound });
        }
        records.push(record(t + 1, &anchor, &offset, bits)?);
    }
    let total_bits = bits * config.horizon as u64;
    Ok(EstimationTrace {
        records,
        total_bits,
        steps: config.horizon,
        avg_rate_bits_per_step: if config.horizon == 0 {
            0.0
        } else {
            total_bits as f64 / config.horizon as f64
        },
        lipschitz,
        subdivisions: m,
        bits_per_step: bits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub measured_rate: f64,
    pub lower_bound: f64,
    pub closed_form: Option<f64>,
    /// `measured_rate ≥ lower_bound`
    pub holds: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundSampling {
    pub samples: usize,
    pub steps: usize,
}

impl Default for BoundSampling {
    fn default() -> Self {
        BoundSampling {
            samples: 50,
            steps: 10_000,
        }
    }
}

/// Lyapunov lower bound in bits per step of the sampled map.
pub fn bound_bits_per_step(system: &SystemDefinition, alpha: f64, sampling: BoundSampling, seed: u64) -> Result<LowerBound> {
    let count = if system.linear_matrix().is_some() { 1 } else { sampling.samples };
    let s = Sampling::Random {
        count,
        seed: derive_seed(seed, "coder-bound", 0),
    };
    match system.time_semantics() {
        TimeSemantics::Discrete => lower_bound(system, alpha, &s, sampling.steps),
        TimeSemantics::Continuous => {
            let tau = system.step_time();
            let nats_alpha = alpha * std::f64::consts::LN_2 / tau;
            let mut b = lower_bound(system, nats_alpha, &s, sampling.steps)?;
            let k = tau / std::f64::consts::LN_2;
            for v in b.values.iter_mut() {
                *v *= k;
            }
            b.mean *= k;
            b.min *= k;
            b.max *= k;
            b.alpha = alpha;
            b.units = Units::BitsPerStep;
            Ok(b)
        }
    }
}

/// Coder rate against the Lyapunov lower bound for each α.
pub fn rate_vs_bound_sweep(
    system: &SystemDefinition,
    x0: &[f64],
    alphas: &[f64],
    template: &CoderConfig,
    sampling: BoundSampling,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::usage("alpha list is empty"));
    }
    if template.horizon == 0 {
        return Ok(Vec::new());
    }
    alphas
        .par_iter()
        .map(|&alpha| {
            let config = CoderConfig {
                alpha,
                ..template.clone()
            };
            let trace = run_estimation(system, x0, &config, seed)?;
            let bound = bound_bits_per_step(system, alpha, sampling, seed)?;
            let closed_form = match (&system.dynamics, system.time_semantics()) {
                (_, TimeSemantics::Discrete) => match system.linear_matrix() {
                    Some(a) => Some(linear_closed_form(&a, alpha, Units::BitsPerStep)?),
                    None => None,
                },
                _ => None,
            };
            Ok(SweepRow {
                alpha,
                measured_rate: trace.avg_rate_bits_per_step,
                lower_bound: bound.mean,
                closed_form,
                holds: trace.avg_rate_bits_per_step >= bound.mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::MetricSpec;

    #[test]
    fn bits_formula() {
        assert_eq!(bits_per_step(2, 1), 0);
        assert_eq!(bits_per_step(2, 2), 2);
        assert_eq!(bits_per_step(2, 3), 4);
        assert_eq!(bits_per_step(2, 4), 4);
        assert_eq!(bits_per_step(2, 5), 6);
        assert_eq!(bits_per_step(1, 1025), 11);
    }

    #[test]
    fn cat_map_rates() {
        let cat = SystemDefinition::cat_map();
        for (alpha, m, bits) in [(0.0, 3, 4), (0.5, 5, 6), (1.0, 6, 6)] {
            let cfg = CoderConfig::new(alpha, 0.1, 100);
            let tr = run_estimation(&cat, &[0.3, 0.4], &cfg, 0).unwrap();
            assert_eq!(tr.lipschitz, 3.0);
            assert_eq!(tr.subdivisions, m);
            assert_eq!(tr.bits_per_step, bits);
            assert_eq!(tr.avg_rate_bits_per_step, bits as f64);
            assert!(tr.records.iter().all(|r| r.error < r.bound));
        }
    }

    #[test]
    fn contraction_needs_no_bits() {
        let flow = SystemDefinition::scalar_contraction(1.0, MetricSpec::Euclidean).unwrap();
        let tr = run_estimation(&flow, &[0.5], &CoderConfig::new(0.0, 0.1, 30), 0).unwrap();
        assert_eq!(tr.subdivisions, 1);
        assert_eq!(tr.total_bits, 0);
        assert!(tr.records.last().unwrap().error < 1e-12);
    }

    #[test]
    fn underestimated_lipschitz_is_caught() {
        let cat = SystemDefinition::cat_map();
        let mut cfg = CoderConfig::new(0.0, 0.1, 20);
        cfg.lipschitz = Some(1.5);
        let err = run_estimation(&cat, &[0.3, 0.4], &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Soundness { .. } | Error::SchemeViolation { .. }), "{err}");
    }

    #[test]
    fn standard_map_estimation_is_sound() {
        let sm = SystemDefinition::standard_map(2.0);
        let tr = run_estimation(&sm, &[1.0, 2.5], &CoderConfig::new(0.5, 0.05, 60), 9).unwrap();
        assert!(tr.lipschitz >= 4.0);
        assert!(tr.records.iter().all(|r| r.error < r.bound));
    }

    #[test]
    fn sweep_rows() {
        let cat = SystemDefinition::cat_map();
        let template = CoderConfig::new(0.0, 0.1, 50);
        let rows = rate_vs_bound_sweep(&cat, &[0.2, 0.3], &[0.0, 0.5, 1.0, 2.0], &template, BoundSampling { samples: 1, steps: 200 }, 0).unwrap();
        let l1 = ((3.0 + 5f64.sqrt()) / 2.0).log2();
        for (row, expected) in rows.iter().zip([l1, l1 + 0.5, l1 + 1.0, 4.0]) {
            assert!((row.lower_bound - expected).abs() < 1e-9);
            assert!((row.closed_form.unwrap() - expected).abs() < 1e-9);
            assert!(row.holds);
        }
        let empty = CoderConfig::new(0.0, 0.1, 0);
        assert!(rate_vs_bound_sweep(&cat, &[0.2, 0.3], &[0.0], &empty, BoundSampling::default(), 0).unwrap().is_empty());
        assert!(rate_vs_bound_sweep(&cat, &[0.2, 0.3], &[], &template, BoundSampling::default(), 0).is_err());
    }
}
