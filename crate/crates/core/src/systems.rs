//! State spaces, metrics and the concrete dynamical systems.
//!
//! Torus states are stored as canonical representatives in `[0, period)`
//! per axis. Boxes describe a compact set of initial conditions inside the
//! ambient `R^d`; linear maps are allowed to carry states out of the box.

use std::f64::consts::{E, PI};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StateSpace {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Torus { periods: Vec<f64> },
    /// `[0, ∞)`; one-dimensional only.
    HalfLine,
}

impl StateSpace {
    pub fn unit_box(d: usize) -> Self {
        StateSpace::Box {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn unit_torus(d: usize) -> Self {
        StateSpace::Torus {
            periods: vec![1.0; d],
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            StateSpace::Box { lower, .. } => lower.len(),
            StateSpace::Torus { periods } => periods.len(),
            StateSpace::HalfLine => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StateSpace::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::usage("box bounds must be nonempty and of equal length"));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if !(l.is_finite() && u.is_finite() && l < u) {
                        return Err(Error::usage(format!("invalid box axis [{l}, {u}]")));
                    }
                }
            }
            StateSpace::Torus { periods } => {
                if periods.is_empty() || periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(Error::usage("torus periods must be positive and finite"));
                }
            }
            StateSpace::HalfLine => {}
        }
        Ok(())
    }

    /// Checks membership; torus states may be any finite representative.
    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::domain(format!(
                "state of dimension {} in a space of dimension {}",
                x.len(),
                self.dimension()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite state {x:?}")));
        }
        if let StateSpace::HalfLine = self {
            if x[0] < 0.0 {
                return Err(Error::domain(format!("{} lies outside the half-line", x[0])));
            }
        }
        Ok(())
    }

    /// Reduces torus coordinates into `[0, period)`.
    pub fn reduce(&self, x: &mut [f64]) {
        if let StateSpace::Torus { periods } = self {
            for (v, p) in x.iter_mut().zip(periods) {
                *v = v.rem_euclid(*p);
                if *v >= *p {
                    *v = 0.0;
                }
            }
        }
    }

    /// Bounds of the region used for uniform sampling and grids. The
    /// half-line uses `[0, 1]`.
    pub fn sampling_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            StateSpace::Box { lower, upper } => lower.iter().copied().zip(upper.iter().copied()).collect(),
            StateSpace::Torus { periods } => periods.iter().map(|p| (0.0, *p)).collect(),
            StateSpace::HalfLine => vec![(0.0, 1.0)],
        }
    }

    pub fn sampling_volume(&self) -> f64 {
        self.sampling_bounds().iter().map(|(l, u)| u - l).product()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sampling_bounds()
            .iter()
            .map(|&(l, u)| l + (u - l) * rng.gen::<f64>())
            .collect()
    }

    /// A uniform point drawn from `derive_seed(seed, "initial-point", 0)`.
    pub fn seeded_point(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "initial-point", 0));
        self.sample_uniform(&mut rng)
    }

    pub fn periods(&self) -> Option<&[f64]> {
        match self {
            StateSpace::Torus { periods } => Some(periods),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricSpec {
    Euclidean,
    /// Minimum over integer translates of the euclidean distance.
    FlatTorus,
    /// `|√x − √y|` on the half-line.
    SqrtScalar,
    Scaled { scale: f64, inner: Box<MetricSpec> },
}

impl MetricSpec {
    pub fn scaled(scale: f64, inner: MetricSpec) -> Self {
        MetricSpec::Scaled {
            scale,
            inner: Box::new(inner),
        }
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        match (self, space) {
            (MetricSpec::Euclidean, StateSpace::Torus { .. }) => Err(Error::usage(
                "torus states need the flat-torus metric",
            )),
            (MetricSpec::FlatTorus, StateSpace::Torus { .. }) => Ok(()),
            (MetricSpec::FlatTorus, _) => Err(Error::usage("flat-torus metric on a non-torus space")),
            (MetricSpec::SqrtScalar, StateSpace::HalfLine) => Ok(()),
            (MetricSpec::SqrtScalar, _) => Err(Error::usage("sqrt-scalar metric needs the half-line")),
            (MetricSpec::Scaled { scale, inner }, _) => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::usage(format!("metric scale {scale} must be positive")));
                }
                inner.validate(space)
            }
            (MetricSpec::Euclidean, _) => Ok(()),
        }
    }

    pub fn distance(&self, space: &StateSpace, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            MetricSpec::SqrtScalar => {
                if x[0] < 0.0 || y[0] < 0.0 {
                    return Err(Error::domain("sqrt-scalar metric on a negative state"));
                }
                Ok((x[0].sqrt() - y[0].sqrt()).abs())
            }
            _ => Ok(self.distance_unchecked(space, x, y)),
        }
    }

    /// Hot-path distance; callers guarantee valid states.
    #[inline]
    pub fn distance_unchecked(&self, space: &StateSpace, x: &[f64], y: &[f64]) -> f64 {
        match self {
            MetricSpec::Euclidean => x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            MetricSpec::FlatTorus => {
                let periods = space.periods().expect("validated torus metric");
                x.iter()
                    .zip(y)
                    .zip(periods)
                    .map(|((a, b), p)| {
                        let d = wrap_diff(a - b, *p);
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            MetricSpec::SqrtScalar => (x[0].max(0.0).sqrt() - y[0].max(0.0).sqrt()).abs(),
            MetricSpec::Scaled { scale, inner } => scale * inner.distance_unchecked(space, x, y),
        }
    }

    /// Size of a small displacement `v` at a point (used by offset-based
    /// computations where `v` is far below the torus period).
    pub fn displacement_norm(&self, space: &StateSpace, at: &[f64], v: &[f64]) -> f64 {
        match self {
            MetricSpec::Euclidean => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            MetricSpec::FlatTorus => {
                let periods = space.periods().expect("validated torus metric");
                v.iter()
                    .zip(periods)
                    .map(|(a, p)| {
                        let d = wrap_diff(*a, *p);
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            MetricSpec::SqrtScalar => {
                let y: Vec<f64> = at.iter().zip(v).map(|(a, b)| a + b).collect();
                self.distance_unchecked(space, at, &y)
            }
            MetricSpec::Scaled { scale, inner } => scale * inner.displacement_norm(space, at, v),
        }
    }

    /// Factor `s` with `d(x, y) = s·‖x − y‖₂` for nearby points, when the
    /// metric is flat.
    pub fn flat_scale(&self) -> Option<f64> {
        match self {
            MetricSpec::Euclidean | MetricSpec::FlatTorus => Some(1.0),
            MetricSpec::Scaled { scale, inner } => inner.flat_scale().map(|s| s * scale),
            MetricSpec::SqrtScalar => None,
        }
    }

    /// Coordinates in which every axis difference is bounded by the
    /// distance: `d(x, y) ≥ max_i |e_i(x) − e_i(y)|` (wrapped by
    /// [`MetricSpec::embedding_periods`]).
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        match self {
            MetricSpec::Euclidean | MetricSpec::FlatTorus => x.to_vec(),
            MetricSpec::SqrtScalar => vec![x[0].max(0.0).sqrt()],
            MetricSpec::Scaled { scale, inner } => inner.embed(x).into_iter().map(|v| v * scale).collect(),
        }
    }

    pub fn embedding_periods(&self, space: &StateSpace) -> Vec<Option<f64>> {
        match self {
            MetricSpec::FlatTorus => space
                .periods()
                .map(|p| p.iter().map(|v| Some(*v)).collect())
                .unwrap_or_default(),
            MetricSpec::Scaled { scale, inner } => inner
                .embedding_periods(space)
                .into_iter()
                .map(|p| p.map(|v| v * scale))
                .collect(),
            _ => vec![None; space.dimension()],
        }
    }
}

/// Shortest signed representative of `d` modulo `p`.
#[inline]
pub fn wrap_diff(d: f64, p: f64) -> f64 {
    if d.abs() <= 0.5 * p {
        return d;
    }
    let r = d.rem_euclid(p);
    if r > 0.5 * p {
        r - p
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeSemantics {
    /// Integer time; logarithms base 2, weights `2^{αk}`.
    Discrete,
    /// Real time; natural logarithms, weights `e^{αt}`.
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "bits/step")]
    BitsPerStep,
    #[serde(rename = "nats/time")]
    NatsPerTime,
}

impl Units {
    pub fn log(self, x: f64) -> f64 {
        match self {
            Units::BitsPerStep => x.log2(),
            Units::NatsPerTime => x.ln(),
        }
    }

    /// Base of both the logarithm and the α-weight.
    pub fn base(self) -> f64 {
        match self {
            Units::BitsPerStep => 2.0,
            Units::NatsPerTime => E,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Units::BitsPerStep => "bits/step",
            Units::NatsPerTime => "nats/time",
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TimeSemantics {
    pub fn units(self) -> Units {
        match self {
            TimeSemantics::Discrete => Units::BitsPerStep,
            TimeSemantics::Continuous => Units::NatsPerTime,
        }
    }
}

/// Right-hand sides available to the fixed-step integrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OdeRhs {
    /// `ẋ = A x`
    Linear(Matrix),
    /// `θ̇ = ω, ω̇ = −sin θ`
    Pendulum,
}

impl OdeRhs {
    fn dimension(&self) -> usize {
        match self {
            OdeRhs::Linear(a) => a.rows(),
            OdeRhs::Pendulum => 2,
        }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            OdeRhs::Linear(a) => a.mul_vec(x),
            OdeRhs::Pendulum => vec![x[1], -x[0].sin()],
        }
    }

    fn derivative(&self, x: &[f64]) -> Matrix {
        match self {
            OdeRhs::Linear(a) => a.clone(),
            OdeRhs::Pendulum => {
                let mut m = Matrix::zeros(2, 2);
                m[(0, 1)] = 1.0;
                m[(1, 0)] = -x[0].cos();
                m
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    Linear { matrix: Matrix },
    TorusAutomorphism { matrix: Matrix },
    /// `(x, y) ↦ (x + a sin y, y + x + a sin y)` on the 2π-torus.
    StandardMap { a: f64 },
    /// `ẋ = −x` sampled exactly at time `tau`.
    ScalarContraction { tau: f64 },
    /// Fixed-step RK4 with step `h`, sampled every `tau`.
    Ode { rhs: OdeRhs, tau: f64, h: f64 },
}

impl Dynamics {
    fn time_semantics(&self) -> TimeSemantics {
        match self {
            Dynamics::ScalarContraction { .. } | Dynamics::Ode { .. } => TimeSemantics::Continuous,
            _ => TimeSemantics::Discrete,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDefinition {
    pub space: StateSpace,
    pub metric: MetricSpec,
    pub dynamics: Dynamics,
    /// Number of base-dynamics applications per step (`f^k`).
    pub iterate: u32,
}

impl SystemDefinition {
    pub fn new(space: StateSpace, metric: MetricSpec, dynamics: Dynamics) -> Result<Self> {
        let sys = SystemDefinition {
            space,
            metric,
            dynamics,
            iterate: 1,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// The cat map `[[2,1],[1,1]]` on the unit torus.
    ///
    /// Its eigenvalues are `(3 ± √5)/2`, both positive. Some texts quote them
    /// as `−3/2 ∓ √5/2`; only the moduli enter the exponents, so the sign
    /// changes nothing downstream.
    pub fn cat_map() -> Self {
        let a = Matrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 1.0]).expect("static matrix");
        Self::torus_automorphism(a).expect("cat matrix is unimodular")
    }

    pub fn torus_automorphism(matrix: Matrix) -> Result<Self> {
        let d = matrix.rows();
        SystemDefinition::new(
            StateSpace::unit_torus(d),
            MetricSpec::FlatTorus,
            Dynamics::TorusAutomorphism { matrix },
        )
    }

    pub fn standard_map(a: f64) -> Self {
        SystemDefinition::new(
            StateSpace::Torus {
                periods: vec![2.0 * PI; 2],
            },
            MetricSpec::FlatTorus,
            Dynamics::StandardMap { a },
        )
        .expect("standard map is well formed")
    }

    /// `ẋ = −x` on the half-line, sampled every `tau`.
    pub fn scalar_contraction(tau: f64, metric: MetricSpec) -> Result<Self> {
        SystemDefinition::new(StateSpace::HalfLine, metric, Dynamics::ScalarContraction { tau })
    }

    pub fn linear_map(matrix: Matrix, space: StateSpace) -> Result<Self> {
        SystemDefinition::new(space, MetricSpec::Euclidean, Dynamics::Linear { matrix })
    }

    /// ODE flow; `h` defaults to `tau / 100`.
    pub fn ode(rhs: OdeRhs, space: StateSpace, tau: f64, h: Option<f64>) -> Result<Self> {
        let h = h.unwrap_or(tau / 100.0);
        SystemDefinition::new(space, MetricSpec::Euclidean, Dynamics::Ode { rhs, tau, h })
    }

    pub fn with_metric(mut self, metric: MetricSpec) -> Result<Self> {
        self.metric = metric;
        self.validate()?;
        Ok(self)
    }

    /// The system `f^k`.
    pub fn power(&self, k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::usage("power must be at least 1"));
        }
        let mut s = self.clone();
        s.iterate = self.iterate * k;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.metric.validate(&self.space)?;
        if self.iterate == 0 {
            return Err(Error::usage("iterate must be positive"));
        }
        let d = self.space.dimension();
        let check_square = |m: &Matrix| -> Result<()> {
            if !m.is_square() || m.rows() != d {
                return Err(Error::usage(format!(
                    "matrix is {}x{} but the space has dimension {d}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        match &self.dynamics {
            Dynamics::Linear { matrix } => {
                check_square(matrix)?;
                if matches!(self.space, StateSpace::Torus { .. }) {
                    return Err(Error::usage("use a torus automorphism for linear maps on a torus"));
                }
            }
            Dynamics::TorusAutomorphism { matrix } => {
                check_square(matrix)?;
                if !matches!(self.space, StateSpace::Torus { .. }) {
                    return Err(Error::usage("torus automorphism needs a torus space"));
                }
                if !matrix.is_integer() {
                    return Err(Error::usage("torus automorphism matrix must be integer"));
                }
                if (matrix.det().abs() - 1.0).abs() > 1e-9 {
                    return Err(Error::usage("torus automorphism matrix must have |det| = 1"));
                }
            }
            Dynamics::StandardMap { a } => {
                if !a.is_finite() {
                    return Err(Error::usage("standard map parameter must be finite"));
                }
                match &self.space {
                    StateSpace::Torus { periods }
                        if periods.len() == 2 && periods.iter().all(|p| (p - 2.0 * PI).abs() < 1e-12) => {}
                    _ => return Err(Error::usage("standard map lives on the 2π-torus")),
                }
            }
            Dynamics::ScalarContraction { tau } => {
                if !(tau.is_finite() && *tau > 0.0) {
                    return Err(Error::usage("tau must be positive"));
                }
                if self.space != StateSpace::HalfLine {
                    return Err(Error::usage("scalar contraction flow lives on the half-line"));
                }
            }
            Dynamics::Ode { rhs, tau, h } => {
                if rhs.dimension() != d {
                    return Err(Error::usage("ODE dimension does not match the space"));
                }
                if let OdeRhs::Linear(m) = rhs {
                    check_square(m)?;
                }
                if !(*tau > 0.0 && *h > 0.0 && h <= tau) {
                    return Err(Error::usage("need 0 < h <= tau"));
                }
                steps_per(*tau, *h)?;
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.space.dimension()
    }

    pub fn time_semantics(&self) -> TimeSemantics {
        self.dynamics.time_semantics()
    }

    pub fn units(&self) -> Units {
        self.time_semantics().units()
    }

    /// Time elapsed per step: 1 for maps, `iterate · tau` for sampled flows.
    pub fn step_time(&self) -> f64 {
        match &self.dynamics {
            Dynamics::ScalarContraction { tau } | Dynamics::Ode { tau, .. } => tau * f64::from(self.iterate),
            _ => 1.0,
        }
    }

    /// Constant derivative of linear dynamics (`A^k` for the k-th power).
    pub fn linear_matrix(&self) -> Option<Matrix> {
        match &self.dynamics {
            Dynamics::Linear { matrix } | Dynamics::TorusAutomorphism { matrix } => {
                let mut m = Matrix::identity(matrix.rows());
                for _ in 0..self.iterate {
                    m = matrix * &m;
                }
                Some(m)
            }
            _ => None,
        }
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.space.check(x)?;
        self.space.check(y)?;
        self.metric.distance(&self.space, x, y)
    }

    fn base_lift(&self, x: &[f64]) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Linear { matrix } | Dynamics::TorusAutomorphism { matrix } => matrix.mul_vec(x),
            Dynamics::StandardMap { a } => {
                let xn = x[0] + a * x[1].sin();
                vec![xn, x[1] + xn]
            }
            Dynamics::ScalarContraction { tau } => vec![(-tau).exp() * x[0]],
            Dynamics::Ode { rhs, tau, h } => {
                let n = steps_per(*tau, *h).expect("validated step");
                let mut s = x.to_vec();
                for _ in 0..n {
                    s = rk4(rhs, &s, *h);
                }
                s
            }
        }
    }

    fn base_jacobian(&self, x: &[f64]) -> Matrix {
        match &self.dynamics {
            Dynamics::Linear { matrix } | Dynamics::TorusAutomorphism { matrix } => matrix.clone(),
            Dynamics::StandardMap { a } => {
                let c = a * x[1].cos();
                Matrix::from_row_major(2, 2, vec![1.0, c, 1.0, 1.0 + c]).expect("2x2")
            }
            Dynamics::ScalarContraction { tau } => Matrix::diagonal(&[(-tau).exp()]),
            Dynamics::Ode { rhs, tau, h } => {
                let n = steps_per(*tau, *h).expect("validated step");
                let mut s = x.to_vec();
                let mut phi = Matrix::identity(x.len());
                for _ in 0..n {
                    let (ns, nphi) = rk4_variational(rhs, &s, &phi, *h);
                    s = ns;
                    phi = nphi;
                }
                phi
            }
        }
    }

    /// One step in the covering space (no torus reduction).
    pub fn step_lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.space.check(x)?;
        let mut s = x.to_vec();
        for _ in 0..self.iterate {
            s = self.base_lift(&s);
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("step from {x:?} left the finite range")));
        }
        Ok(s)
    }

    /// `f(a + e) − f(a)` in the covering space, evaluated so that small
    /// offsets keep their relative precision (ODE flows fall back to a
    /// difference of lifts).
    pub fn step_difference(&self, a: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        self.space.check(a)?;
        let mut base = a.to_vec();
        let mut diff = e.to_vec();
        for _ in 0..self.iterate {
            diff = match &self.dynamics {
                Dynamics::Linear { matrix } | Dynamics::TorusAutomorphism { matrix } => matrix.mul_vec(&diff),
                Dynamics::StandardMap { a } => {
                    let ds = 2.0 * (base[1] + 0.5 * diff[1]).cos() * (0.5 * diff[1]).sin();
                    let dx = diff[0] + a * ds;
                    vec![dx, diff[1] + dx]
                }
                Dynamics::ScalarContraction { tau } => vec![(-tau).exp() * diff[0]],
                Dynamics::Ode { .. } => {
                    let moved: Vec<f64> = base.iter().zip(&diff).map(|(x, d)| x + d).collect();
                    let fm = self.base_lift(&moved);
                    let fb = self.base_lift(&base);
                    fm.iter().zip(&fb).map(|(p, q)| p - q).collect()
                }
            };
            base = self.base_lift(&base);
        }
        if diff.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("offset left the finite range"));
        }
        Ok(diff)
    }

    /// `f(x)` reduced into the state space; iterates are reduced after
    /// every sub-step so that `f^k` follows the orbit of `f` exactly.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.space.check(x)?;
        let mut s = x.to_vec();
        for _ in 0..self.iterate {
            s = self.base_lift(&s);
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("step from {x:?} left the finite range")));
            }
            self.space.reduce(&mut s);
        }
        Ok(s)
    }

    /// Derivative of one step; for sampled ODE flows it is obtained by
    /// integrating the variational equation alongside the state.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        self.space.check(x)?;
        let mut s = x.to_vec();
        let mut jac = Matrix::identity(x.len());
        for _ in 0..self.iterate {
            let j = self.base_jacobian(&s);
            jac = &j * &jac;
            s = self.base_lift(&s);
            self.space.reduce(&mut s);
        }
        Ok(jac)
    }

    /// `[x0, f(x0), …, fⁿ(x0)]`.
    pub fn orbit(&self, x0: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
        let mut x = x0.to_vec();
        self.space.check(&x)?;
        self.space.reduce(&mut x);
        let mut out = Vec::with_capacity(n + 1);
        out.push(x.clone());
        for _ in 0..n {
            x = self.step(&x)?;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Flow map `φ_t(x)` of a continuous-time system. ODE flows need `t`
    /// to be a multiple of the integrator step.
    pub fn flow(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.space.check(x)?;
        if t < 0.0 {
            return Err(Error::usage("negative flow time"));
        }
        let mut out = match &self.dynamics {
            Dynamics::ScalarContraction { .. } => vec![(-t).exp() * x[0]],
            Dynamics::Ode { rhs, h, .. } => {
                let n = steps_per(t, *h)?;
                let mut s = x.to_vec();
                for _ in 0..n {
                    s = rk4(rhs, &s, *h);
                }
                s
            }
            _ => return Err(Error::usage("flow evaluation needs a continuous-time system")),
        };
        self.space.reduce(&mut out);
        Ok(out)
    }

    /// States at times `0, dt, …, count·dt` of a continuous-time system.
    pub fn sampled_flow(&self, x0: &[f64], dt: f64, count: usize) -> Result<Vec<Vec<f64>>> {
        self.space.check(x0)?;
        let mut out = Vec::with_capacity(count + 1);
        match &self.dynamics {
            Dynamics::ScalarContraction { .. } => {
                for j in 0..=count {
                    out.push(vec![(-(j as f64) * dt).exp() * x0[0]]);
                }
            }
            Dynamics::Ode { .. } => {
                let mut s = x0.to_vec();
                out.push(s.clone());
                for _ in 0..count {
                    s = self.flow(&s, dt)?;
                    out.push(s.clone());
                }
            }
            _ => return Err(Error::usage("sampled flow needs a continuous-time system")),
        }
        Ok(out)
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        cfg.build()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        SystemConfig::from_toml_str(text)?.build()
    }
}

fn steps_per(t: f64, h: f64) -> Result<usize> {
    let r = t / h;
    let n = r.round();
    if (r - n).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::usage(format!("integrator step {h} does not divide {t}")));
    }
    Ok(n as usize)
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

fn rk4(rhs: &OdeRhs, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = rhs.eval(x);
    let k2 = rhs.eval(&axpy(x, h / 2.0, &k1));
    let k3 = rhs.eval(&axpy(x, h / 2.0, &k2));
    let k4 = rhs.eval(&axpy(x, h, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// RK4 on the augmented system `(ẋ, Φ̇) = (f(x), Df(x) Φ)`.
fn rk4_variational(rhs: &OdeRhs, x: &[f64], phi: &Matrix, h: f64) -> (Vec<f64>, Matrix) {
    let eval = |s: &[f64], p: &Matrix| (rhs.eval(s), &rhs.derivative(s) * p);
    let shift = |p: &Matrix, a: f64, k: &Matrix| {
        Matrix::from_row_major(p.rows(), p.cols(), axpy(p.as_slice(), a, k.as_slice())).expect("same shape")
    };
    let (k1, l1) = eval(x, phi);
    let (k2, l2) = eval(&axpy(x, h / 2.0, &k1), &shift(phi, h / 2.0, &l1));
    let (k3, l3) = eval(&axpy(x, h / 2.0, &k2), &shift(phi, h / 2.0, &l2));
    let (k4, l4) = eval(&axpy(x, h, &k3), &shift(phi, h, &l3));
    let xs = x
        .iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let ps: Vec<f64> = (0..phi.as_slice().len())
        .map(|i| {
            phi.as_slice()[i]
                + h / 6.0
                    * (l1.as_slice()[i] + 2.0 * l2.as_slice()[i] + 2.0 * l3.as_slice()[i] + l4.as_slice()[i])
        })
        .collect();
    (xs, Matrix::from_row_major(phi.rows(), phi.cols(), ps).expect("same shape"))
}

/// Structured text configuration of a system.
///
/// Recognized keys: `system.kind` (`cat_map`, `torus_automorphism`,
/// `standard_map`, `linear`, `scalar_contraction`, `ode_linear`,
/// `ode_pendulum`), `system.matrix`, `system.a`, `system.tau`, `system.h`,
/// `system.power`, `space.kind` (`box`, `torus`, `half_line`),
/// `space.bounds` (per-axis `[lo, hi]`; for a torus `[0, period]`),
/// `metric.kind` (`euclidean`, `flat_torus`, `sqrt_scalar`, `scaled`) and
/// `metric.scale`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub system: SystemBlock,
    #[serde(default)]
    pub space: Option<SpaceBlock>,
    #[serde(default)]
    pub metric: Option<MetricBlock>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub kind: String,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub a: Option<f64>,
    pub tau: Option<f64>,
    pub h: Option<f64>,
    pub power: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceBlock {
    pub kind: String,
    pub bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    pub kind: String,
    pub scale: Option<f64>,
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::usage(format!("invalid system config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn matrix(&self) -> Result<Matrix> {
        let rows = self
            .system
            .matrix
            .as_ref()
            .ok_or_else(|| Error::usage(format!("system.kind = {} needs system.matrix", self.system.kind)))?;
        Matrix::from_rows(rows)
    }

    fn space_or(&self, default: StateSpace) -> Result<StateSpace> {
        let Some(block) = &self.space else {
            return Ok(default);
        };
        let bounds = || -> Result<&Vec<[f64; 2]>> {
            block
                .bounds
                .as_ref()
                .ok_or_else(|| Error::usage(format!("space.kind = {} needs space.bounds", block.kind)))
        };
        match block.kind.as_str() {
            "box" => {
                let b = bounds()?;
                Ok(StateSpace::Box {
                    lower: b.iter().map(|r| r[0]).collect(),
                    upper: b.iter().map(|r| r[1]).collect(),
                })
            }
            "torus" => {
                let b = bounds()?;
                if b.iter().any(|r| r[0] != 0.0) {
                    return Err(Error::usage("torus bounds must start at 0"));
                }
                Ok(StateSpace::Torus {
                    periods: b.iter().map(|r| r[1]).collect(),
                })
            }
            "half_line" => Ok(StateSpace::HalfLine),
            other => Err(Error::usage(format!("unknown space.kind {other}"))),
        }
    }

    fn metric_for(&self, space: &StateSpace) -> Result<MetricSpec> {
        let natural = match space {
            StateSpace::Torus { .. } => MetricSpec::FlatTorus,
            _ => MetricSpec::Euclidean,
        };
        let Some(block) = &self.metric else {
            return Ok(natural);
        };
        match block.kind.as_str() {
            "euclidean" => Ok(MetricSpec::Euclidean),
            "flat_torus" => Ok(MetricSpec::FlatTorus),
            "sqrt_scalar" => Ok(MetricSpec::SqrtScalar),
            "scaled" => {
                let scale = block
                    .scale
                    .ok_or_else(|| Error::usage("metric.kind = scaled needs metric.scale"))?;
                Ok(MetricSpec::scaled(scale, natural))
            }
            other => Err(Error::usage(format!("unknown metric.kind {other}"))),
        }
    }

    pub fn build(&self) -> Result<SystemDefinition> {
        let kind = self.system.kind.as_str();
        let (space, dynamics) = match kind {
            "cat_map" => (
                self.space_or(StateSpace::unit_torus(2))?,
                Dynamics::TorusAutomorphism {
                    matrix: Matrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 1.0])?,
                },
            ),
            "torus_automorphism" => {
                let m = self.matrix()?;
                (self.space_or(StateSpace::unit_torus(m.rows()))?, Dynamics::TorusAutomorphism { matrix: m })
            }
            "standard_map" => (
                self.space_or(StateSpace::Torus {
                    periods: vec![2.0 * PI; 2],
                })?,
                Dynamics::StandardMap {
                    a: self.system.a.unwrap_or(1.0),
                },
            ),
            "linear" => {
                let m = self.matrix()?;
                (self.space_or(StateSpace::unit_box(m.rows()))?, Dynamics::Linear { matrix: m })
            }
            "scalar_contraction" => (
                self.space_or(StateSpace::HalfLine)?,
                Dynamics::ScalarContraction {
                    tau: self.system.tau.unwrap_or(1.0),
                },
            ),
            "ode_linear" | "ode_pendulum" => {
                let rhs = if kind == "ode_linear" {
                    OdeRhs::Linear(self.matrix()?)
                } else {
                    OdeRhs::Pendulum
                };
                let tau = self.system.tau.unwrap_or(1.0);
                let d = rhs.dimension();
                let default_space = if kind == "ode_pendulum" {
                    StateSpace::Box {
                        lower: vec![-PI, -2.0],
                        upper: vec![PI, 2.0],
                    }
                } else {
                    StateSpace::unit_box(d)
                };
                (
                    self.space_or(default_space)?,
                    Dynamics::Ode {
                        rhs,
                        tau,
                        h: self.system.h.unwrap_or(tau / 100.0),
                    },
                )
            }
            other => return Err(Error::usage(format!("unknown system.kind {other}"))),
        };
        let metric = self.metric_for(&space)?;
        let sys = SystemDefinition::new(space, metric, dynamics)?;
        match self.system.power {
            Some(k) => sys.power(k),
            None => Ok(sys),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn contraction() -> SystemDefinition {
        SystemDefinition::scalar_contraction(1.0, MetricSpec::Euclidean).unwrap()
    }

    #[test]
    fn step_examples() {
        assert_close(&SystemDefinition::cat_map().step(&[0.0, 0.0]).unwrap(), &[0.0, 0.0], 0.0);
        assert_close(&contraction().step(&[1.0]).unwrap(), &[0.367_879_441_171_442_3], 1e-15);
        let std0 = SystemDefinition::standard_map(0.0);
        assert_close(&std0.step(&[0.3, 0.4]).unwrap(), &[0.3, 0.7], 1e-15);
    }

    #[test]
    fn negative_state_on_half_line_is_a_domain_error() {
        assert!(matches!(contraction().step(&[-0.5]), Err(Error::Domain(_))));
        let sqrt = MetricSpec::SqrtScalar;
        assert!(matches!(sqrt.distance(&StateSpace::HalfLine, &[-1.0], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobian_examples() {
        let j = SystemDefinition::cat_map().jacobian(&[0.3, 0.9]).unwrap();
        assert_eq!(j.as_slice(), &[2.0, 1.0, 1.0, 1.0]);
        let j = SystemDefinition::standard_map(0.0).jacobian(&[1.0, 2.0]).unwrap();
        assert_eq!(j.as_slice(), &[1.0, 0.0, 1.0, 1.0]);
        let j = contraction().jacobian(&[0.7]).unwrap();
        let fd = (contraction().step(&[0.7 + 1e-6]).unwrap()[0] - contraction().step(&[0.7 - 1e-6]).unwrap()[0]) / 2e-6;
        assert!((j[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
        assert!((j[(0, 0)] - fd).abs() < 1e-9);
    }

    #[test]
    fn orbit_examples() {
        let o = SystemDefinition::standard_map(0.0).orbit(&[0.0, 0.0], 3).unwrap();
        assert_eq!(o, vec![vec![0.0, 0.0]; 4]);
        let o = SystemDefinition::cat_map().orbit(&[0.1, 0.2], 1).unwrap();
        assert_close(&o[1], &[0.4, 0.3], 1e-15);
        let o = contraction().orbit(&[1.0], 2).unwrap();
        assert_close(&[o[0][0], o[1][0], o[2][0]], &[1.0, (-1f64).exp(), (-2f64).exp()], 1e-15);
    }

    #[test]
    fn distance_examples() {
        let t1 = StateSpace::unit_torus(1);
        assert!((MetricSpec::FlatTorus.distance(&t1, &[0.95], &[0.05]).unwrap() - 0.1).abs() < 1e-12);
        let d = MetricSpec::SqrtScalar.distance(&StateSpace::HalfLine, &[0.25], &[1.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        let b = StateSpace::unit_box(2);
        assert_eq!(MetricSpec::Euclidean.distance(&b, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let scaled = MetricSpec::scaled(3.0, MetricSpec::Euclidean);
        assert_eq!(scaled.distance(&b, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 15.0);
    }

    #[test]
    fn invalid_definitions_are_rejected() {
        let shear = Matrix::from_row_major(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(SystemDefinition::torus_automorphism(shear).is_err());
        let frac = Matrix::from_row_major(2, 2, vec![1.5, 0.0, 0.0, 1.0 / 1.5]).unwrap();
        assert!(SystemDefinition::torus_automorphism(frac).is_err());
        assert!(SystemDefinition::scalar_contraction(1.0, MetricSpec::FlatTorus).is_err());
        let rhs = OdeRhs::Pendulum;
        assert!(SystemDefinition::ode(rhs, StateSpace::unit_box(2), 1.0, Some(0.3)).is_err());
        assert!(SystemDefinition::cat_map().with_metric(MetricSpec::Euclidean).is_err());
    }

    #[test]
    fn config_round_trip() {
        let sys = SystemDefinition::from_toml_str(
            r#"
            [system]
            kind = "torus_automorphism"
            matrix = [[2, 1], [1, 1]]
            [metric]
            kind = "scaled"
            scale = 3.0
            "#,
        )
        .unwrap();
        assert_eq!(sys.dimension(), 2);
        assert_eq!(sys.metric, MetricSpec::scaled(3.0, MetricSpec::FlatTorus));
        let flow = SystemDefinition::from_toml_str(
            "[system]\nkind = \"scalar_contraction\"\ntau = 1.0\n[metric]\nkind = \"sqrt_scalar\"\n",
        )
        .unwrap();
        assert_eq!(flow.time_semantics(), TimeSemantics::Continuous);
        assert!(SystemDefinition::from_toml_str("[system]\nkind = \"nope\"\n").is_err());
        assert!(SystemDefinition::from_toml_str("[system]\nkind = \"cat_map\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn ode_flow_matches_exponential_and_variational_jacobian() {
        let a = Matrix::from_row_major(2, 2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        let sys = SystemDefinition::ode(OdeRhs::Linear(a), StateSpace::unit_box(2), 1.0, None).unwrap();
        let y = sys.step(&[1.0, 0.0]).unwrap();
        assert_close(&y, &[1f64.cos(), -1f64.sin()], 1e-9);
        let j = sys.jacobian(&[0.3, 0.1]).unwrap();
        assert_close(j.as_slice(), &[1f64.cos(), 1f64.sin(), -1f64.sin(), 1f64.cos()], 1e-9);
    }

    fn finite_difference_jacobian(sys: &SystemDefinition, x: &[f64], h: f64) -> Matrix {
        let d = x.len();
        let mut m = Matrix::zeros(d, d);
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = sys.step_lift(&xp).unwrap();
            let fm = sys.step_lift(&xm).unwrap();
            for i in 0..d {
                m[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        m
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases: Vec<(SystemDefinition, f64)> = vec![
            (SystemDefinition::cat_map(), 1e-5),
            (SystemDefinition::standard_map(1.3), 1e-5),
            (SystemDefinition::standard_map(5.0).power(2).unwrap(), 1e-5),
            (contraction(), 1e-5),
            (
                SystemDefinition::ode(OdeRhs::Pendulum, StateSpace::unit_box(2), 1.0, None).unwrap(),
                1e-4,
            ),
        ];
        for (sys, tol) in cases {
            for _ in 0..100 {
                let x = sys.space.sample_uniform(&mut rng);
                let j = sys.jacobian(&x).unwrap();
                let fd = finite_difference_jacobian(&sys, &x, 1e-6);
                let scale = j.max_abs().max(1.0);
                for (a, b) in j.as_slice().iter().zip(fd.as_slice()) {
                    assert!((a - b).abs() / scale <= tol, "{sys:?}: {j:?} vs {fd:?}");
                }
            }
        }
    }

    #[test]
    fn area_preservation_of_cat_and_standard_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sys in [SystemDefinition::cat_map(), SystemDefinition::standard_map(2.5)] {
            for _ in 0..100 {
                let x = sys.space.sample_uniform(&mut rng);
                assert!((sys.jacobian(&x).unwrap().det() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let torus = StateSpace::Torus { periods: vec![1.0, 2.0] };
        let cases = vec![
            (StateSpace::unit_box(2), MetricSpec::Euclidean),
            (torus.clone(), MetricSpec::FlatTorus),
            (torus, MetricSpec::scaled(0.5, MetricSpec::FlatTorus)),
            (StateSpace::HalfLine, MetricSpec::SqrtScalar),
            (StateSpace::HalfLine, MetricSpec::scaled(3.0, MetricSpec::Euclidean)),
        ];
        for (space, metric) in cases {
            for _ in 0..10_000 {
                let x = space.sample_uniform(&mut rng);
                let y = space.sample_uniform(&mut rng);
                let z = space.sample_uniform(&mut rng);
                let dxy = metric.distance(&space, &x, &y).unwrap();
                assert_eq!(dxy, metric.distance(&space, &y, &x).unwrap());
                assert_eq!(metric.distance(&space, &x, &x).unwrap(), 0.0);
                assert!(dxy > 0.0 || x == y);
                let via = metric.distance(&space, &x, &z).unwrap() + metric.distance(&space, &z, &y).unwrap();
                assert!(dxy <= via + 1e-12);
                let ex = metric.embed(&x);
                let ey = metric.embed(&y);
                let periods = metric.embedding_periods(&space);
                for i in 0..ex.len() {
                    let diff = match periods[i] {
                        Some(p) => wrap_diff(ex[i] - ey[i], p).abs(),
                        None => (ex[i] - ey[i]).abs(),
                    };
                    assert!(diff <= dxy + 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn torus_step_ignores_integer_translates(
            x in 0.0f64..1.0, y in 0.0f64..1.0, i in -5i32..5, j in -5i32..5
        ) {
            let cat = SystemDefinition::cat_map();
            let a = cat.step(&[x, y]).unwrap();
            let b = cat.step(&[x + f64::from(i), y + f64::from(j)]).unwrap();
            let space = &cat.space;
            prop_assert!(MetricSpec::FlatTorus.distance(space, &a, &b).unwrap() < 1e-12);
        }
    }
}
