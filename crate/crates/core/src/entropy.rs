//! Separated and spanning sets under the α-weighted Bowen metric
//! `d_T^α(x, y) = max_t w(t)·d(x_t, y_t)` and exponential growth rates of
//! their cardinalities.
//!
//! The weight is `w(t) = 2^{αt}` for discrete-time systems and `e^{αt}` for
//! sampled flows. Candidate grids stand in for the compact set of initial
//! conditions, so every count here is grid-restricted: separated counts
//! bound `n*` from below, spanning counts bound `s*` (at grid resolution)
//! from above.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{StateSpace, SystemDefinition, TimeSemantics, Units};

/// Number of grid points whose orbits are computed together.
const ORBIT_CHUNK: usize = 4096;

/// Default dense time step for flows, as a fraction of the sample time.
pub const FLOW_SUBSAMPLING: f64 = 20.0;

#[derive(Clone, Debug)]
pub struct AlphaBowenContext<'a> {
    pub system: &'a SystemDefinition,
    pub alpha: f64,
    pub epsilon: f64,
    pub horizon: f64,
    /// Spacing of sample times; `None` for discrete-time systems.
    pub time_step: Option<f64>,
    times: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> AlphaBowenContext<'a> {
    /// Discrete systems sample every step up to `horizon` steps; flows use
    /// the dense grid `Δt = τ/20`.
    pub fn new(system: &'a SystemDefinition, alpha: f64, epsilon: f64, horizon: f64) -> Result<Self> {
        match system.time_semantics() {
            TimeSemantics::Discrete => Self::build(system, alpha, epsilon, horizon, None),
            TimeSemantics::Continuous => {
                let dt = system.step_time() / FLOW_SUBSAMPLING;
                Self::build(system, alpha, epsilon, horizon, Some(dt))
            }
        }
    }

    /// Flow sampled every `dt` (weights stay `e^{αt}`).
    pub fn with_time_step(system: &'a SystemDefinition, alpha: f64, epsilon: f64, horizon: f64, dt: f64) -> Result<Self> {
        if system.time_semantics() != TimeSemantics::Continuous {
            return Err(Error::usage("explicit time steps apply to flows only"));
        }
        Self::build(system, alpha, epsilon, horizon, Some(dt))
    }

    fn build(system: &'a SystemDefinition, alpha: f64, epsilon: f64, horizon: f64, time_step: Option<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::usage(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::usage(format!("alpha must be nonnegative, got {alpha}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::usage(format!("horizon must be nonnegative, got {horizon}")));
        }
        let times: Vec<f64> = match time_step {
            None => {
                if horizon.fract() != 0.0 {
                    return Err(Error::usage("discrete horizons are whole steps"));
                }
                (0..=horizon as usize).map(|k| k as f64).collect()
            }
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(Error::usage("time step must be positive"));
                }
                let n = (horizon / dt).round();
                if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
                    return Err(Error::usage(format!("horizon {horizon} is not a multiple of {dt}")));
                }
                (0..=n as usize).map(|j| j as f64 * dt).collect()
            }
        };
        let base = system.units().base();
        let weights = times.iter().map(|t| base.powf(alpha * t)).collect();
        Ok(AlphaBowenContext {
            system,
            alpha,
            epsilon,
            horizon,
            time_step,
            times,
            weights,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> usize {
        self.times.len()
    }

    /// Weight applied to the distance at sample `j`.
    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Flattened orbit samples (`samples × dimension`).
    pub fn orbit(&self, x: &[f64]) -> Result<Vec<f64>> {
        let states = match self.time_step {
            None => self.system.orbit(x, self.times.len() - 1)?,
            Some(dt) => self.system.sampled_flow(x, dt, self.times.len() - 1)?,
        };
        Ok(states.concat())
    }

    /// Weighted distance at sample `j` between two flattened orbits.
    #[inline]
    fn weighted(&self, ox: &[f64], oy: &[f64], j: usize) -> f64 {
        let d = self.system.dimension();
        let s = j * d..(j + 1) * d;
        self.weights[j]
            * self
                .system
                .metric
                .distance_unchecked(&self.system.space, &ox[s.clone()], &oy[s])
    }

    /// True when the Bowen distance over the first `samples` samples is at
    /// least `threshold` (early exit).
    #[inline]
    fn at_least(&self, ox: &[f64], oy: &[f64], samples: usize, threshold: f64) -> bool {
        (0..samples).any(|j| self.weighted(ox, oy, j) >= threshold)
    }
}

/// `max_t w(t)·d(x_t, y_t)` with the time of the maximum.
pub fn alpha_bowen_distance(ctx: &AlphaBowenContext<'_>, orbit_x: &[f64], orbit_y: &[f64]) -> Result<(f64, f64)> {
    let expected = ctx.samples() * ctx.system.dimension();
    if orbit_x.len() != expected || orbit_y.len() != expected {
        return Err(Error::usage(format!(
            "orbit lengths {} and {} do not match the context ({expected})",
            orbit_x.len(),
            orbit_y.len()
        )));
    }
    let mut best = (0.0, 0.0);
    for j in 0..ctx.samples() {
        let v = ctx.weighted(orbit_x, orbit_y, j);
        if v > best.0 {
            best = (v, ctx.times[j]);
        }
    }
    Ok(best)
}

/// Uniform lattice standing in for the compact set `K`, in lexicographic
/// order (first axis slowest).
#[derive(Clone, Debug)]
pub struct CandidateGrid {
    pub resolution: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    spacing: Vec<f64>,
}

impl CandidateGrid {
    /// Torus axes use `i·p/n`; box and half-line axes include both ends of
    /// their sampling bounds.
    pub fn uniform(space: &StateSpace, resolution: &[usize]) -> Result<Self> {
        let bounds = space.sampling_bounds();
        if resolution.len() != bounds.len() || resolution.contains(&0) {
            return Err(Error::usage("grid resolution must be positive per axis"));
        }
        let periodic = matches!(space, StateSpace::Torus { .. });
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .zip(resolution)
            .map(|(&(lo, hi), &n)| {
                if periodic {
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
                } else if n == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                }
            })
            .collect();
        let spacing = bounds
            .iter()
            .zip(resolution)
            .map(|(&(lo, hi), &n)| {
                if periodic || n == 1 {
                    (hi - lo) / n as f64
                } else {
                    (hi - lo) / (n - 1) as f64
                }
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(CandidateGrid {
            resolution: resolution.to_vec(),
            points,
            spacing,
        })
    }

    pub fn square(space: &StateSpace, n: usize) -> Result<Self> {
        CandidateGrid::uniform(space, &vec![n; space.dimension()])
    }

    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        CandidateGrid {
            resolution: vec![points.len()],
            points,
            spacing: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    fn warn_if_coarse(&self, epsilon: f64) {
        if let Some(s) = self.spacing.iter().copied().reduce(f64::max) {
            if s >= epsilon / 4.0 {
                log::warn!("grid spacing {s} is not below epsilon/4 = {}", epsilon / 4.0);
            }
        }
    }
}

/// Buckets of width ≥ ε in metric-embedded coordinates at time 0.
struct NeighborIndex {
    width: Vec<f64>,
    buckets_per_axis: Vec<Option<i64>>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl NeighborIndex {
    fn new(ctx: &AlphaBowenContext<'_>) -> Self {
        let periods = ctx.system.metric.embedding_periods(&ctx.system.space);
        let eps = ctx.epsilon;
        let mut width = Vec::with_capacity(periods.len());
        let mut per_axis = Vec::with_capacity(periods.len());
        for p in periods {
            match p {
                Some(p) => {
                    let n = ((p / eps).floor() as i64).max(1);
                    width.push(p / n as f64);
                    per_axis.push(Some(n));
                }
                None => {
                    width.push(eps);
                    per_axis.push(None);
                }
            }
        }
        NeighborIndex {
            width,
            buckets_per_axis: per_axis,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, e: &[f64]) -> Vec<i64> {
        e.iter()
            .zip(&self.width)
            .zip(&self.buckets_per_axis)
            .map(|((v, w), n)| {
                let k = (v / w).floor() as i64;
                match n {
                    Some(n) => k.rem_euclid(*n),
                    None => k,
                }
            })
            .collect()
    }

    fn insert(&mut self, e: &[f64], id: usize) {
        let k = self.key(e);
        self.buckets.entry(k).or_default().push(id);
    }

    /// Ids in the neighboring buckets (each once).
    fn candidates(&self, e: &[f64], out: &mut Vec<usize>) {
        out.clear();
        let center = self.key(e);
        let mut keys: Vec<Vec<i64>> = vec![Vec::with_capacity(center.len())];
        for (axis, &c) in center.iter().enumerate() {
            let mut offsets: Vec<i64> = (-1..=1)
                .map(|o| match self.buckets_per_axis[axis] {
                    Some(n) => (c + o).rem_euclid(n),
                    None => c + o,
                })
                .collect();
            offsets.sort_unstable();
            offsets.dedup();
            keys = keys
                .into_iter()
                .flat_map(|k| {
                    offsets.iter().map(move |&o| {
                        let mut k2 = k.clone();
                        k2.push(o);
                        k2
                    })
                })
                .collect();
        }
        for k in keys {
            if let Some(ids) = self.buckets.get(&k) {
                out.extend_from_slice(ids);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedSet {
    /// Indices into the candidate grid, in selection order.
    pub indices: Vec<usize>,
    pub count: usize,
}

/// Greedy lexicographic packing: a grid point is kept iff its Bowen
/// distance to every kept point is at least ε. The result is maximal within
/// the grid, hence also spanning over it.
pub fn max_separated(ctx: &AlphaBowenContext<'_>, grid: &CandidateGrid) -> Result<SeparatedSet> {
    max_separated_seeded(ctx, grid, &[])
}

/// Greedy packing that starts from `seed` (grid indices that must already
/// be pairwise separated under `ctx`) and then scans the grid in order.
pub fn max_separated_seeded(ctx: &AlphaBowenContext<'_>, grid: &CandidateGrid, seed: &[usize]) -> Result<SeparatedSet> {
    if grid.is_empty() {
        return Err(Error::usage("empty candidate grid"));
    }
    grid.warn_if_coarse(ctx.epsilon);
    let samples = ctx.samples();
    let metric = &ctx.system.metric;
    let mut index = NeighborIndex::new(ctx);
    let mut kept_orbits: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut is_seed = vec![false; grid.len()];
    let mut scratch = Vec::new();

    let mut offer = |i: usize, orbit: Vec<f64>, force: bool, kept: &mut Vec<usize>, kept_orbits: &mut Vec<Vec<f64>>| {
        let e = metric.embed(&orbit[..ctx.system.dimension()]);
        if !force {
            index.candidates(&e, &mut scratch);
            if scratch
                .iter()
                .any(|&k| !ctx.at_least(&orbit, &kept_orbits[k], samples, ctx.epsilon))
            {
                return;
            }
        }
        index.insert(&e, kept.len());
        kept.push(i);
        kept_orbits.push(orbit);
    };

    for &s in seed {
        if s >= grid.len() {
            return Err(Error::usage(format!("seed index {s} outside the grid")));
        }
        is_seed[s] = true;
        let orbit = ctx.orbit(&grid.points[s])?;
        offer(s, orbit, true, &mut kept, &mut kept_orbits);
    }
    let order: Vec<usize> = (0..grid.len()).filter(|&i| !is_seed[i]).collect();
    for chunk in order.chunks(ORBIT_CHUNK) {
        let orbits = chunk
            .par_iter()
            .map(|&i| ctx.orbit(&grid.points[i]))
            .collect::<Result<Vec<_>>>()?;
        for (&i, orbit) in chunk.iter().zip(orbits) {
            offer(i, orbit, false, &mut kept, &mut kept_orbits);
        }
    }
    Ok(SeparatedSet {
        count: kept.len(),
        indices: kept,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanningSource {
    GreedyCover,
    /// The maximal separated set was smaller than the greedy cover.
    SeparatedSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanningSet {
    pub indices: Vec<usize>,
    pub count: usize,
    pub source: SpanningSource,
}

fn all_orbits(ctx: &AlphaBowenContext<'_>, grid: &CandidateGrid) -> Result<Vec<Vec<f64>>> {
    grid.points.par_iter().map(|p| ctx.orbit(p)).collect()
}

/// For every grid point, the grid points within Bowen distance `< ε`
/// (including itself).
fn bowen_neighborhoods(ctx: &AlphaBowenContext<'_>, orbits: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let dim = ctx.system.dimension();
    let samples = ctx.samples();
    let metric = &ctx.system.metric;
    let mut index = NeighborIndex::new(ctx);
    let embedded: Vec<Vec<f64>> = orbits.iter().map(|o| metric.embed(&o[..dim])).collect();
    for (i, e) in embedded.iter().enumerate() {
        index.insert(e, i);
    }
    embedded
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut cand = Vec::new();
            index.candidates(e, &mut cand);
            let mut out: Vec<usize> = cand
                .into_iter()
                .filter(|&j| j == i || !ctx.at_least(&orbits[i], &orbits[j], samples, ctx.epsilon))
                .collect();
            out.sort_unstable();
            out
        })
        .collect()
}

/// Greedy set cover of the grid by Bowen ε-balls centred at grid points
/// (largest uncovered gain first, ties to the lowest index), followed by
/// removal of redundant centres. When the maximal separated set is smaller
/// it is returned instead, since it is spanning as well.
pub fn min_spanning(ctx: &AlphaBowenContext<'_>, grid: &CandidateGrid) -> Result<SpanningSet> {
    if grid.is_empty() {
        return Err(Error::usage("empty candidate grid"));
    }
    grid.warn_if_coarse(ctx.epsilon);
    let orbits = all_orbits(ctx, grid)?;
    let hoods = bowen_neighborhoods(ctx, &orbits);
    let n = grid.len();

    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> = hoods.iter().enumerate().map(|(i, h)| (h.len(), Reverse(i))).collect();
    let mut chosen = Vec::new();
    while remaining > 0 {
        let (gain, Reverse(i)) = heap.pop().expect("uncovered points remain coverable");
        let actual = hoods[i].iter().filter(|&&j| !covered[j]).count();
        if actual == 0 {
            continue;
        }
        if actual < gain {
            heap.push((actual, Reverse(i)));
            continue;
        }
        for &j in &hoods[i] {
            if !covered[j] {
                covered[j] = true;
                remaining -= 1;
            }
        }
        chosen.push(i);
    }

    let mut cover_count = vec![0u32; n];
    for &i in &chosen {
        for &j in &hoods[i] {
            cover_count[j] += 1;
        }
    }
    let mut keep = vec![true; chosen.len()];
    for (slot, &i) in chosen.iter().enumerate().rev() {
        if hoods[i].iter().all(|&j| cover_count[j] >= 2) {
            keep[slot] = false;
            for &j in &hoods[i] {
                cover_count[j] -= 1;
            }
        }
    }
    let cover: Vec<usize> = chosen.into_iter().zip(keep).filter_map(|(i, k)| k.then_some(i)).collect();

    let separated = max_separated(ctx, grid)?;
    if separated.count < cover.len() {
        Ok(SpanningSet {
            count: separated.count,
            indices: separated.indices,
            source: SpanningSource::SeparatedSet,
        })
    } else {
        Ok(SpanningSet {
            count: cover.len(),
            indices: cover,
            source: SpanningSource::GreedyCover,
        })
    }
}

/// Checks that `indices` are pairwise at Bowen distance `≥ ε`.
pub fn verify_separated(ctx: &AlphaBowenContext<'_>, grid: &CandidateGrid, indices: &[usize]) -> Result<bool> {
    let orbits = indices
        .par_iter()
        .map(|&i| ctx.orbit(&grid.points[i]))
        .collect::<Result<Vec<_>>>()?;
    for a in 0..orbits.len() {
        for b in a + 1..orbits.len() {
            if alpha_bowen_distance(ctx, &orbits[a], &orbits[b])?.0 < ctx.epsilon {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Checks that every grid point lies within Bowen distance `< ε` of one of
/// `indices`.
pub fn verify_spanning(ctx: &AlphaBowenContext<'_>, grid: &CandidateGrid, indices: &[usize]) -> Result<bool> {
    let centres = indices
        .iter()
        .map(|&i| ctx.orbit(&grid.points[i]))
        .collect::<Result<Vec<_>>>()?;
    let covered = grid
        .points
        .par_iter()
        .map(|p| {
            let o = ctx.orbit(p)?;
            Ok(centres
                .iter()
                .any(|c| !ctx.at_least(&o, c, ctx.samples(), ctx.epsilon)))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(covered.into_iter().all(|c| c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountKind {
    Separated,
    Spanning,
}

impl CountKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CountKind::Separated => "separated",
            CountKind::Spanning => "spanning",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub alpha: f64,
    pub epsilon: f64,
    pub horizon: f64,
    pub count: usize,
    pub kind: CountKind,
    /// Size of the candidate grid the count was taken over.
    pub candidates: usize,
}

impl CountRecord {
    /// The packing uses more than [`SATURATION_FRACTION`] of the grid, so
    /// growth is limited by the grid rather than the dynamics.
    pub fn saturated(&self) -> bool {
        self.candidates > 0 && self.count as f64 > SATURATION_FRACTION * self.candidates as f64
    }
}

pub const SATURATION_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub records: Vec<CountRecord>,
    /// Horizons that entered the fit.
    pub fitted_horizons: Vec<f64>,
    /// Least-squares slope of `log(count)` against the horizon.
    pub rate: f64,
    /// Root-mean-square residual of `log(count)` about the fitted line.
    pub residual: f64,
    /// Standard error of the fitted slope.
    pub slope_stderr: f64,
    pub kind: CountKind,
    pub units: Units,
    /// Some horizons were dropped because the grid saturated.
    pub grid_restricted: bool,
}

/// Fits `log(count) ≈ a + rate·T`. Horizons that fill more than a quarter
/// of the grid, or whose count did not grow since the previous horizon, are
/// excluded; when no count grows at all the rate is fitted over every
/// remaining horizon.
pub fn fit_entropy_rate(records: &[CountRecord], units: Units) -> Result<EntropyEstimate> {
    let mut sorted: Vec<&CountRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.horizon.total_cmp(&b.horizon));
    let positive: Vec<&CountRecord> = sorted
        .into_iter()
        .filter(|r| r.count > 0 && !r.saturated())
        .collect();
    let flat = positive.windows(2).all(|w| w[1].count <= w[0].count);
    let usable: Vec<&CountRecord> = if flat {
        positive.clone()
    } else {
        positive
            .iter()
            .enumerate()
            .filter(|(i, r)| *i == 0 || r.count > positive[i - 1].count)
            .map(|(_, r)| *r)
            .collect()
    };
    if usable.len() < 3 {
        return Err(Error::InsufficientData {
            usable: usable.len(),
            required: 3,
        });
    }
    let xs: Vec<f64> = usable.iter().map(|r| r.horizon).collect();
    let ys: Vec<f64> = usable.iter().map(|r| units.log(r.count as f64)).collect();
    let (slope, intercept, stderr) = least_squares(&xs, &ys);
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(EntropyEstimate {
        records: records.to_vec(),
        fitted_horizons: xs,
        rate: slope,
        residual: rms,
        slope_stderr: stderr,
        kind: usable[0].kind,
        units,
        grid_restricted: records.iter().any(CountRecord::saturated),
    })
}

/// Returns `(slope, intercept, standard error of slope)`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = if xs.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, stderr)
}

/// Counts over increasing horizons at fixed (α, ε). Separated sweeps seed
/// each horizon with the previous horizon's set, so counts never decrease
/// in the horizon.
pub fn count_sweep(
    system: &SystemDefinition,
    alpha: f64,
    epsilon: f64,
    horizons: &[f64],
    grid: &CandidateGrid,
    kind: CountKind,
) -> Result<Vec<CountRecord>> {
    let mut hs = horizons.to_vec();
    hs.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(hs.len());
    let mut previous: Vec<usize> = Vec::new();
    for &h in &hs {
        let ctx = AlphaBowenContext::new(system, alpha, epsilon, h)?;
        let count = match kind {
            CountKind::Separated => {
                let set = max_separated_seeded(&ctx, grid, &previous)?;
                previous = set.indices;
                set.count
            }
            CountKind::Spanning => min_spanning(&ctx, grid)?.count,
        };
        out.push(CountRecord {
            alpha,
            epsilon,
            horizon: h,
            count,
            kind,
            candidates: grid.len(),
        });
    }
    Ok(out)
}

/// Sweep plus fit in the system's own units.
pub fn estimate_entropy(
    system: &SystemDefinition,
    alpha: f64,
    epsilon: f64,
    horizons: &[f64],
    grid: &CandidateGrid,
    kind: CountKind,
) -> Result<EntropyEstimate> {
    let records = count_sweep(system, alpha, epsilon, horizons, grid, kind)?;
    fit_entropy_rate(&records, system.units())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRuleReport {
    pub k: u32,
    pub base: EntropyEstimate,
    pub power: EntropyEstimate,
    /// `rate(f^k, kα) / rate(f, α)`
    pub ratio: f64,
}

/// Compares the rate of `(f, α)` with that of `(f^k, kα)` over the same
/// physical time window: `f^k` uses the horizons `T/k` for every `T` in
/// `horizons` divisible by `k`.
pub fn power_rule_check(
    system: &SystemDefinition,
    alpha: f64,
    k: u32,
    epsilon: f64,
    horizons: &[f64],
    grid: &CandidateGrid,
) -> Result<PowerRuleReport> {
    if system.time_semantics() != TimeSemantics::Discrete {
        return Err(Error::usage("the power rule check applies to discrete-time systems"));
    }
    if k == 0 {
        return Err(Error::usage("power k must be positive"));
    }
    let base = estimate_entropy(system, alpha, epsilon, horizons, grid, CountKind::Separated)?;
    let power_system = system.power(k)?;
    let kf = f64::from(k);
    let power_horizons: Vec<f64> = horizons
        .iter()
        .filter(|t| (*t / kf).fract() == 0.0)
        .map(|t| t / kf)
        .collect();
    let power = if k == 1 {
        base.clone()
    } else {
        estimate_entropy(&power_system, kf * alpha, epsilon, &power_horizons, grid, CountKind::Separated)?
    };
    let ratio = if k == 1 { 1.0 } else { power.rate / base.rate };
    Ok(PowerRuleReport { k, base, power, ratio })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDiscretization {
    /// Dense time grid, natural log per unit time.
    pub dense: EntropyEstimate,
    /// Integer sample times only, log base 2 per step.
    pub time_one: EntropyEstimate,
    /// `dense.rate / time_one.rate`, expected near `ln 2`.
    pub ratio: f64,
}

/// Rate of a flow on the dense grid versus its time-1 samples. Both runs
/// keep the weights `e^{αt}`; only the sampled times and the logarithm base
/// change.
pub fn flow_discretization_rate(
    system: &SystemDefinition,
    alpha: f64,
    epsilon: f64,
    horizons: &[f64],
    grid: &CandidateGrid,
) -> Result<FlowDiscretization> {
    if system.time_semantics() != TimeSemantics::Continuous {
        return Err(Error::usage("flow discretization needs a continuous-time system"));
    }
    if horizons.iter().any(|t| t.fract() != 0.0) {
        return Err(Error::usage("flow discretization horizons must be integers"));
    }
    let dense = estimate_entropy(system, alpha, epsilon, horizons, grid, CountKind::Separated)?;

    let mut hs = horizons.to_vec();
    hs.sort_by(f64::total_cmp);
    let mut records = Vec::with_capacity(hs.len());
    let mut previous = Vec::new();
    for &h in &hs {
        let ctx = AlphaBowenContext::with_time_step(system, alpha, epsilon, h, 1.0)?;
        let set = max_separated_seeded(&ctx, grid, &previous)?;
        records.push(CountRecord {
            alpha,
            epsilon,
            horizon: h,
            count: set.count,
            kind: CountKind::Separated,
            candidates: grid.len(),
        });
        previous = set.indices;
    }
    let time_one = fit_entropy_rate(&records, Units::BitsPerStep)?;
    let ratio = if time_one.rate == 0.0 && dense.rate == 0.0 {
        f64::NAN
    } else {
        dense.rate / time_one.rate
    };
    Ok(FlowDiscretization { dense, time_one, ratio })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCheck {
    pub fine_resolution: Vec<usize>,
    pub fine_count: usize,
    pub coarse_count: usize,
    /// `fine_count / coarse_count`
    pub ratio: f64,
    /// Counts differ by more than 10%.
    pub unstable: bool,
}

/// Separated counts at `resolution` and at half of it per axis.
pub fn resolution_check(ctx: &AlphaBowenContext<'_>, resolution: &[usize]) -> Result<ResolutionCheck> {
    let fine = CandidateGrid::uniform(&ctx.system.space, resolution)?;
    let half: Vec<usize> = resolution.iter().map(|n| (n / 2).max(1)).collect();
    let coarse = CandidateGrid::uniform(&ctx.system.space, &half)?;
    let f = max_separated(ctx, &fine)?.count;
    let c = max_separated(ctx, &coarse)?.count;
    let ratio = f as f64 / c as f64;
    Ok(ResolutionCheck {
        fine_resolution: resolution.to_vec(),
        fine_count: f,
        coarse_count: c,
        ratio,
        unstable: (ratio - 1.0).abs() > 0.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::systems::MetricSpec;

    fn record(h: f64, count: usize) -> CountRecord {
        CountRecord {
            alpha: 0.0,
            epsilon: 0.1,
            horizon: h,
            count,
            kind: CountKind::Separated,
            candidates: 0,
        }
    }

    #[test]
    fn dyadic_counts_fit_one_bit_per_step() {
        let recs: Vec<_> = (0..4).map(|t| record(t as f64, 1 << t)).collect();
        let est = fit_entropy_rate(&recs, Units::BitsPerStep).unwrap();
        assert!((est.rate - 1.0).abs() < 1e-12);
        assert!(est.residual < 1e-12);
    }

    #[test]
    fn saturated_horizons_are_excluded_and_short_fits_fail() {
        let recs = vec![record(0.0, 1), record(1.0, 2), record(2.0, 4), record(3.0, 4), record(4.0, 4)];
        let est = fit_entropy_rate(&recs, Units::BitsPerStep).unwrap();
        assert_eq!(est.fitted_horizons, vec![0.0, 1.0, 2.0]);
        let short = vec![record(0.0, 1), record(1.0, 2)];
        assert!(matches!(
            fit_entropy_rate(&short, Units::BitsPerStep),
            Err(Error::InsufficientData { usable: 2, required: 3 })
        ));
        let flat = vec![record(0.0, 5), record(1.0, 5), record(2.0, 5)];
        assert_eq!(fit_entropy_rate(&flat, Units::BitsPerStep).unwrap().rate, 0.0);
    }

    #[test]
    fn alpha_zero_is_the_plain_bowen_distance() {
        let cat = SystemDefinition::cat_map();
        let ctx = AlphaBowenContext::new(&cat, 0.0, 0.1, 5.0).unwrap();
        let ox = ctx.orbit(&[0.1, 0.2]).unwrap();
        let oy = ctx.orbit(&[0.13, 0.21]).unwrap();
        let plain = (0..6)
            .map(|j| {
                MetricSpec::FlatTorus.distance(&cat.space, &ox[2 * j..2 * j + 2], &oy[2 * j..2 * j + 2]).unwrap()
            })
            .fold(0.0, f64::max);
        assert_eq!(alpha_bowen_distance(&ctx, &ox, &oy).unwrap().0, plain);
        assert_eq!(alpha_bowen_distance(&ctx, &ox, &ox).unwrap().0, 0.0);
        assert!(alpha_bowen_distance(&ctx, &ox, &oy[..4]).is_err());
    }

    #[test]
    fn example_flow_weighted_distance_is_e_to_the_t() {
        let flow = SystemDefinition::scalar_contraction(1.0, MetricSpec::Euclidean).unwrap();
        let ctx = AlphaBowenContext::new(&flow, 2.0, 0.1, 3.0).unwrap();
        let c = 0.01;
        let (d, t) = alpha_bowen_distance(&ctx, &ctx.orbit(&[0.0]).unwrap(), &ctx.orbit(&[c]).unwrap()).unwrap();
        assert!((d - 3f64.exp() * c).abs() < 1e-14);
        assert!((t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn huge_epsilon_gives_single_point() {
        let cat = SystemDefinition::cat_map();
        let grid = CandidateGrid::square(&cat.space, 16).unwrap();
        let ctx = AlphaBowenContext::new(&cat, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(max_separated(&ctx, &grid).unwrap().count, 1);
        assert_eq!(min_spanning(&ctx, &grid).unwrap().count, 1);
        let empty = CandidateGrid::from_points(Vec::new());
        assert!(max_separated(&ctx, &empty).is_err());
        assert!(min_spanning(&ctx, &empty).is_err());
    }

    #[test]
    fn separated_sets_verify_and_cover() {
        let sys = SystemDefinition::standard_map(1.0);
        let grid = CandidateGrid::square(&sys.space, 24).unwrap();
        let ctx = AlphaBowenContext::new(&sys, 0.3, 0.4, 3.0).unwrap();
        let sep = max_separated(&ctx, &grid).unwrap();
        assert!(verify_separated(&ctx, &grid, &sep.indices).unwrap());
        assert!(verify_spanning(&ctx, &grid, &sep.indices).unwrap());
        let span = min_spanning(&ctx, &grid).unwrap();
        assert!(verify_spanning(&ctx, &grid, &span.indices).unwrap());
        assert!(span.count <= sep.count);
    }

    #[test]
    fn doubling_map_power_rule_ratio_is_three() {
        let a = Matrix::diagonal(&[2.0]);
        let sys = SystemDefinition::linear_map(a, crate::systems::StateSpace::unit_box(1)).unwrap();
        let grid = CandidateGrid::uniform(&sys.space, &[4097]).unwrap();
        let horizons: Vec<f64> = (0..=9).map(f64::from).collect();
        let rep = power_rule_check(&sys, 0.0, 3, 0.5, &horizons, &grid).unwrap();
        assert!((rep.base.rate - 1.0).abs() < 0.1, "{}", rep.base.rate);
        assert!((rep.ratio - 3.0).abs() < 0.15, "{}", rep.ratio);
        let same = power_rule_check(&sys, 0.0, 1, 0.5, &horizons, &grid).unwrap();
        assert_eq!(same.ratio, 1.0);
    }
}
