//! Lyapunov spectra, Thieullen's rate and the volume-preserving lower bound
//! on estimation entropy.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr_positive, Matrix};
use crate::seed::derive_seed;
use crate::systems::{SystemDefinition, Units};

/// Steps discarded before averaging.
pub const BURN_IN: usize = 100;

/// Length of the running-average tail kept as a diagnostic.
pub const HISTORY_TAIL: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Sorted descending.
    pub exponents: Vec<f64>,
    pub units: Units,
    pub n: usize,
    /// Running averages of each exponent over the last steps, oldest first.
    pub history: Vec<Vec<f64>>,
}

impl LyapunovSpectrum {
    pub fn new(mut exponents: Vec<f64>, units: Units, n: usize) -> Self {
        exponents.sort_by(|a, b| b.total_cmp(a));
        LyapunovSpectrum {
            exponents,
            units,
            n,
            history: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.exponents.len()
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    /// Largest spread of the running averages in the history tail.
    pub fn tail_spread(&self) -> f64 {
        (0..self.exponents.len())
            .map(|i| {
                let vals = self.history.iter().map(|h| h[i]);
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                if self.history.is_empty() {
                    0.0
                } else {
                    hi - lo
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `α ≥ −λ_d`
    Deep,
    /// `0 ≤ α < −λ_d`
    Shallow,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Deep => "deep",
            Regime::Shallow => "shallow",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateValue {
    pub value: f64,
    pub regime: Regime,
    pub units: Units,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QrOptions {
    pub reorth_every: usize,
    pub burn_in: usize,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions {
            reorth_every: 1,
            burn_in: BURN_IN,
        }
    }
}

fn check_reduction(r: &[f64], step: usize) -> Result<()> {
    for &v in r {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Numerical {
                step,
                message: format!("degenerate frame (R diagonal {v:e}); singular Jacobian along the orbit"),
            });
        }
    }
    Ok(())
}

/// Benettin QR cascade with the default burn-in of 100 steps.
pub fn lyapunov_qr(system: &SystemDefinition, x0: &[f64], n: usize, reorth_every: usize) -> Result<LyapunovSpectrum> {
    lyapunov_qr_with(
        system,
        x0,
        n,
        QrOptions {
            reorth_every,
            burn_in: BURN_IN,
        },
    )
}

/// Propagates an orthonormal frame through the Jacobian cocycle and averages
/// the logs of the positive R-diagonal over `n` steps after the burn-in.
pub fn lyapunov_qr_with(system: &SystemDefinition, x0: &[f64], n: usize, opts: QrOptions) -> Result<LyapunovSpectrum> {
    let d = system.dimension();
    if n < d {
        return Err(Error::usage(format!("horizon n = {n} must be at least the dimension {d}")));
    }
    if opts.reorth_every == 0 {
        return Err(Error::usage("reorth_every must be positive"));
    }
    system.space.check(x0)?;
    let units = system.units();
    let mut x = x0.to_vec();
    let mut frame = Matrix::identity(d);
    let mut sums = vec![0.0; d];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(HISTORY_TAIL);
    let total = opts.burn_in + n;
    let dt = system.step_time();
    let mut since = 0;
    for step in 0..total {
        let j = system.jacobian(&x)?;
        frame = &j * &frame;
        x = system.step(&x)?;
        since += 1;
        let last = step + 1 == total;
        let boundary = step + 1 == opts.burn_in;
        if since == opts.reorth_every || last || boundary {
            since = 0;
            let qr = qr_positive(&frame);
            let r = qr.r_diagonal();
            check_reduction(&r, step)?;
            if step >= opts.burn_in {
                for (s, v) in sums.iter_mut().zip(&r) {
                    *s += units.log(*v);
                }
            }
            frame = qr.q;
        }
        let averaged = step + 1 - opts.burn_in.min(step + 1);
        if step >= opts.burn_in && total - step <= HISTORY_TAIL {
            history.push(sums.iter().map(|s| s / (averaged as f64 * dt)).collect());
        }
    }
    let exponents = sums.iter().map(|s| s / (n as f64 * dt)).collect();
    let mut spectrum = LyapunovSpectrum::new(exponents, units, n);
    spectrum.history = history;
    Ok(spectrum)
}

/// Exponents `(1/n)·log σ_i(T_x^n)` of the explicit Jacobian product.
///
/// `Σ_{i≤k} log σ_i` is the log of the top singular value of the k-th
/// compound of the product, which is the product of the compounds. Each of
/// those products is accumulated with per-step max-norm scaling.
pub fn oseledets_oracle(system: &SystemDefinition, x0: &[f64], n: usize) -> Result<LyapunovSpectrum> {
    let d = system.dimension();
    if n == 0 {
        return Err(Error::usage("oracle horizon must be positive"));
    }
    system.space.check(x0)?;
    let units = system.units();
    let mut x = x0.to_vec();
    let mut products: Vec<Matrix> = (1..=d).map(|k| Matrix::identity(Matrix::identity(d).compound(k).rows())).collect();
    let mut logs = vec![0.0; d];
    for step in 0..n {
        let j = system.jacobian(&x)?;
        for k in 1..=d {
            let c = j.compound(k);
            let p = &c * &products[k - 1];
            let s = p.max_abs();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Numerical {
                    step,
                    message: format!("compound product of order {k} lost rank"),
                });
            }
            logs[k - 1] += units.log(s);
            products[k - 1] = p.scale(1.0 / s);
        }
        x = system.step(&x)?;
    }
    let mut partial = Vec::with_capacity(d);
    for k in 0..d {
        let top = products[k].singular_values()[0];
        let total = logs[k] + units.log(top);
        if !total.is_finite() {
            return Err(Error::Numerical {
                step: n,
                message: "singular value overflow".into(),
            });
        }
        partial.push(total);
    }
    let time = n as f64 * system.step_time();
    let exponents = (0..d)
        .map(|k| (partial[k] - if k == 0 { 0.0 } else { partial[k - 1] }) / time)
        .collect();
    Ok(LyapunovSpectrum::new(exponents, units, n))
}

/// `α·d`
pub fn deep_branch(spectrum: &LyapunovSpectrum, alpha: f64) -> f64 {
    alpha * spectrum.dimension() as f64
}

/// `Σ (λ_i + α)⁺`
pub fn shallow_branch(spectrum: &LyapunovSpectrum, alpha: f64) -> f64 {
    spectrum.exponents.iter().map(|l| (l + alpha).max(0.0)).sum()
}

/// Thieullen's decay rate of α-weighted Bowen balls. `alpha` is given in
/// `units`, which must match the spectrum.
pub fn thieullen_rate(spectrum: &LyapunovSpectrum, alpha: f64, units: Units) -> Result<RateValue> {
    if !(alpha >= 0.0) {
        return Err(Error::usage(format!("alpha must be nonnegative, got {alpha}")));
    }
    if units != spectrum.units {
        return Err(Error::usage(format!(
            "alpha in {units} cannot be combined with exponents in {}",
            spectrum.units
        )));
    }
    let sum = spectrum.sum();
    if sum.abs() > 0.01 {
        log::warn!("exponent sum {sum:.4} is not zero; the two branches need not agree at the regime boundary");
    }
    let lambda_d = *spectrum.exponents.last().ok_or_else(|| Error::usage("empty spectrum"))?;
    Ok(if alpha >= -lambda_d {
        RateValue {
            value: deep_branch(spectrum, alpha),
            regime: Regime::Deep,
            units,
        }
    } else {
        RateValue {
            value: shallow_branch(spectrum, alpha),
            regime: Regime::Shallow,
            units,
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    SingleOrbit { x0: Vec<f64> },
    /// `count` uniform initial points drawn from `seed`.
    Random { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub alpha: f64,
    pub units: Units,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub regime_histogram: BTreeMap<Regime, usize>,
    pub values: Vec<f64>,
    pub exponent_sums: Vec<f64>,
    pub volume_preserving: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectra {
    pub points: Vec<Vec<f64>>,
    pub spectra: Vec<LyapunovSpectrum>,
    pub volume_preserving: bool,
}

/// `|det Df| = 1` within 1e-6 at 100 uniform points.
pub fn preserves_volume(system: &SystemDefinition, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "volume-check", 0));
    for _ in 0..100 {
        let x = system.space.sample_uniform(&mut rng);
        if (system.jacobian(&x)?.det().abs() - 1.0).abs() > 1e-6 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// QR spectra at the sampled initial points (in parallel).
pub fn sample_spectra(system: &SystemDefinition, sampling: &Sampling, n: usize) -> Result<SampledSpectra> {
    let (points, seed) = match sampling {
        Sampling::SingleOrbit { x0 } => (vec![x0.clone()], 0),
        Sampling::Random { count, seed } => {
            if *count == 0 {
                return Err(Error::usage("sample count must be positive"));
            }
            let pts = (0..*count as u64)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, "lower-bound", i));
                    system.space.sample_uniform(&mut rng)
                })
                .collect();
            (pts, *seed)
        }
    };
    let volume_preserving = preserves_volume(system, seed)?;
    if !volume_preserving {
        log::warn!("Df does not preserve volume; the lower bound's hypothesis fails");
    }
    let spectra = points
        .par_iter()
        .map(|x| lyapunov_qr(system, x, n, 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampledSpectra {
        points,
        spectra,
        volume_preserving,
    })
}

/// Averages Thieullen's rate over precomputed spectra.
pub fn bound_from_spectra(sampled: &SampledSpectra, alpha: f64) -> Result<LowerBound> {
    let units = sampled.spectra[0].units;
    let mut values = Vec::with_capacity(sampled.spectra.len());
    let mut histogram = BTreeMap::new();
    for s in &sampled.spectra {
        let r = thieullen_rate(s, alpha, units)?;
        *histogram.entry(r.regime).or_insert(0) += 1;
        values.push(r.value);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(LowerBound {
        alpha,
        units,
        mean,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        regime_histogram: histogram,
        exponent_sums: sampled.spectra.iter().map(LyapunovSpectrum::sum).collect(),
        values,
        volume_preserving: sampled.volume_preserving,
    })
}

/// Monte-Carlo estimate of `∫ v_μ(α, x, f) dμ(x)` with volume as `μ`.
pub fn lower_bound(system: &SystemDefinition, alpha: f64, sampling: &Sampling, n: usize) -> Result<LowerBound> {
    if !(alpha >= 0.0) {
        return Err(Error::usage(format!("alpha must be nonnegative, got {alpha}")));
    }
    bound_from_spectra(&sample_spectra(system, sampling, n)?, alpha)
}

/// `Σ_i (log|γ_i(A)| + α)⁺`
pub fn linear_closed_form(a: &Matrix, alpha: f64, units: Units) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::usage("closed form needs a square matrix"));
    }
    Ok(a.eigenvalue_moduli()
        .into_iter()
        .map(|m| (units.log(m) + alpha).max(0.0))
        .sum())
}

/// `log J^u` for a hyperbolic linear torus map, checked to be constant by
/// measuring the unstable volume growth of `Df` at `n_samples` points.
pub fn unstable_jacobian_integral(system: &SystemDefinition, n_samples: usize, seed: u64) -> Result<f64> {
    let a = system
        .linear_matrix()
        .ok_or_else(|| Error::usage("unstable Jacobian integral needs a linear torus map"))?;
    let units = system.units();
    let moduli = a.eigenvalue_moduli();
    if moduli.iter().any(|m| (m - 1.0).abs() < 1e-9) {
        return Err(Error::usage("matrix is not hyperbolic (eigenvalue on the unit circle)"));
    }
    let value: f64 = moduli.iter().filter(|&&m| m > 1.0).map(|&m| units.log(m)).sum();
    let (values, vectors) = a
        .real_eigen_decomposition()
        .ok_or_else(|| Error::usage("unstable directions are not real eigenvectors"))?;
    let unstable: Vec<Vec<f64>> = values
        .iter()
        .enumerate()
        .filter(|(_, g)| g.abs() > 1.0)
        .map(|(i, _)| vectors.column(i))
        .collect();
    let base_volume = gram_volume(&unstable);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "unstable-jacobian", 0));
    for _ in 0..n_samples {
        let x = system.space.sample_uniform(&mut rng);
        let j = system.jacobian(&x)?;
        let imaged: Vec<Vec<f64>> = unstable.iter().map(|v| j.mul_vec(v)).collect();
        let local = units.log(gram_volume(&imaged) / base_volume);
        if (local - value).abs() > 1e-9 * value.abs().max(1.0) {
            return Err(Error::Verification(format!(
                "unstable Jacobian {local} at {x:?} differs from {value}"
            )));
        }
    }
    Ok(value)
}

/// `sqrt(det G)` for the Gram matrix of `vectors`.
fn gram_volume(vectors: &[Vec<f64>]) -> f64 {
    let k = vectors.len();
    let mut g = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
        }
    }
    g.det().abs().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{MetricSpec, StateSpace};

    fn lambda_cat() -> f64 {
        ((3.0 + 5f64.sqrt()) / 2.0).log2()
    }

    #[test]
    fn cat_map_qr_is_exact() {
        let cat = SystemDefinition::cat_map();
        let s = lyapunov_qr(&cat, &[0.3, 0.7], 100, 1).unwrap();
        assert!((s.exponents[0] - lambda_cat()).abs() < 1e-9);
        assert!((s.exponents[1] + lambda_cat()).abs() < 1e-9);
        assert_eq!(s.units, Units::BitsPerStep);
        assert_eq!(s.history.len(), HISTORY_TAIL);
    }

    #[test]
    fn shear_exponents_vanish() {
        let sm = SystemDefinition::standard_map(0.0);
        let s = lyapunov_qr(&sm, &[0.4, 1.1], 20_000, 1).unwrap();
        assert!(s.exponents.iter().all(|l| l.abs() < 2e-3), "{:?}", s.exponents);
        let o = oseledets_oracle(&sm, &[0.0, 0.0], 100).unwrap();
        let o2 = oseledets_oracle(&sm, &[0.0, 0.0], 1000).unwrap();
        assert!(o.exponents[0] > o2.exponents[0] && o2.exponents[0] > 0.0);
        assert!((o2.exponents[0] - (1000f64).log2() / 1000.0).abs() < 2e-3);
    }

    #[test]
    fn scalar_flow_exponent_is_minus_one() {
        let flow = SystemDefinition::scalar_contraction(1.0, MetricSpec::Euclidean).unwrap();
        let s = lyapunov_qr(&flow, &[0.5], 200, 1).unwrap();
        assert!((s.exponents[0] + 1.0).abs() < 1e-12);
        assert_eq!(s.units, Units::NatsPerTime);
    }

    #[test]
    fn singular_jacobian_is_a_numerical_error() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let sys = SystemDefinition::linear_map(a, StateSpace::unit_box(2)).unwrap();
        assert!(matches!(lyapunov_qr(&sys, &[0.1, 0.1], 10, 1), Err(Error::Numerical { .. })));
    }

    #[test]
    fn oracle_matches_qr_on_cat_map() {
        let cat = SystemDefinition::cat_map();
        let o = oseledets_oracle(&cat, &[0.1, 0.2], 20).unwrap();
        let q = lyapunov_qr(&cat, &[0.1, 0.2], 20, 1).unwrap();
        for (a, b) in o.exponents.iter().zip(&q.exponents) {
            assert!((a - b).abs() < 1e-6);
        }
        let long = oseledets_oracle(&cat, &[0.1, 0.2], 2000).unwrap();
        assert!((long.exponents[0] - lambda_cat()).abs() < 1e-9);
    }

    #[test]
    fn oracle_on_non_normal_constant_matrix() {
        let a = Matrix::from_rows(&[vec![1.0, 3.0], vec![0.5, 2.5]]).unwrap();
        let sys = SystemDefinition::linear_map(a.clone(), StateSpace::unit_box(2)).unwrap();
        let n = oseledets_oracle(&sys, &[0.0, 0.0], 40).unwrap();
        let n2 = oseledets_oracle(&sys, &[0.0, 0.0], 80).unwrap();
        assert!((n.exponents[0] - n2.exponents[0]).abs() < 0.05);
        let one = oseledets_oracle(&sys, &[0.0, 0.0], 1).unwrap();
        let sv = a.singular_values();
        assert!((one.exponents[0] - sv[0].log2()).abs() < 1e-12);
        assert!((one.exponents[1] - sv[1].log2()).abs() < 1e-12);
    }

    #[test]
    fn thieullen_examples() {
        let cat = LyapunovSpectrum::new(vec![lambda_cat(), -lambda_cat()], Units::BitsPerStep, 100);
        let r0 = thieullen_rate(&cat, 0.0, Units::BitsPerStep).unwrap();
        assert_eq!(r0.regime, Regime::Shallow);
        assert_eq!(r0.value, lambda_cat());
        let r2 = thieullen_rate(&cat, 2.0, Units::BitsPerStep).unwrap();
        assert_eq!((r2.value, r2.regime), (4.0, Regime::Deep));
        let zero = LyapunovSpectrum::new(vec![0.0, 0.0], Units::BitsPerStep, 1);
        assert_eq!(thieullen_rate(&zero, 0.7, Units::BitsPerStep).unwrap().value, 1.4);
        assert!(thieullen_rate(&cat, -0.1, Units::BitsPerStep).is_err());
        assert!(thieullen_rate(&cat, 0.5, Units::NatsPerTime).is_err());
        let boundary = lambda_cat();
        assert!((deep_branch(&cat, boundary) - shallow_branch(&cat, boundary)).abs() < 1e-12);
    }

    #[test]
    fn closed_forms() {
        let cat = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!((linear_closed_form(&cat, 0.0, Units::BitsPerStep).unwrap() - 1.38848).abs() < 1e-5);
        assert!((linear_closed_form(&Matrix::identity(2), 1.0, Units::BitsPerStep).unwrap() - 2.0).abs() < 1e-12);
        let d = Matrix::diagonal(&[4.0, 0.25]);
        assert!((linear_closed_form(&d, 1.0, Units::BitsPerStep).unwrap() - 3.0).abs() < 1e-12);
        assert!(linear_closed_form(&Matrix::zeros(2, 3), 1.0, Units::BitsPerStep).is_err());
    }

    #[test]
    fn unstable_jacobian_examples() {
        let cat = SystemDefinition::cat_map();
        assert!((unstable_jacobian_integral(&cat, 100, 1).unwrap() - lambda_cat()).abs() < 1e-12);
        let shear = SystemDefinition::torus_automorphism(Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        assert!(matches!(unstable_jacobian_integral(&shear, 10, 1), Err(Error::Usage(_))));
        let b = SystemDefinition::torus_automorphism(Matrix::from_rows(&[vec![3.0, 2.0], vec![1.0, 1.0]]).unwrap()).unwrap();
        assert!((unstable_jacobian_integral(&b, 100, 1).unwrap() - (2.0 + 3f64.sqrt()).log2()).abs() < 1e-12);
    }

    #[test]
    fn cat_lower_bound_examples() {
        let cat = SystemDefinition::cat_map();
        let sampling = Sampling::Random { count: 5, seed: 7 };
        let b = lower_bound(&cat, 0.5, &sampling, 1000).unwrap();
        assert!((b.mean - (lambda_cat() + 0.5)).abs() < 1e-9);
        assert!(b.max - b.min < 1e-9);
        assert!(b.volume_preserving);
        let at = lower_bound(&cat, lambda_cat(), &sampling, 1000).unwrap();
        assert!((at.mean - 2.0 * lambda_cat()).abs() < 1e-9);
        let single = lower_bound(&cat, 0.0, &Sampling::SingleOrbit { x0: vec![0.2, 0.9] }, 500).unwrap();
        assert_eq!(single.values.len(), 1);
    }

    #[test]
    fn non_volume_preserving_map_is_flagged() {
        let sys = SystemDefinition::linear_map(Matrix::diagonal(&[2.0, 1.0]), StateSpace::unit_box(2)).unwrap();
        let b = lower_bound(&sys, 0.0, &Sampling::Random { count: 2, seed: 1 }, 200).unwrap();
        assert!(!b.volume_preserving);
    }
}
