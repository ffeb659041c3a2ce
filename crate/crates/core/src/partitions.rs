//! Regular simplexes, standard subdivision, shrunk simplexes and the
//! refining partitions with separated compact cores.
//!
//! Flat domains only: the unit square (or unit torus) is the image of an
//! equilateral rhombus of side `√2/L` under a fixed linear chart `Φ` with
//! `‖Φ‖₂ = L`; the rhombus splits into two regular triangles, which `Φ`
//! maps onto the two halves of the square cut along the anti-diagonal.
//! Cells and cores live in reference coordinates and are mapped through
//! `Φ` for every physical measurement.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simplex {
    pub vertices: Vec<Vec<f64>>,
    /// Longest edge.
    pub diameter: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl Simplex {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::usage("a simplex needs at least one vertex"));
        }
        let n = vertices[0].len();
        if vertices.iter().any(|v| v.len() != n) || vertices.len() > n + 1 {
            return Err(Error::usage("simplex vertices must share an ambient dimension n ≥ d"));
        }
        let mut diameter: f64 = 0.0;
        for i in 0..vertices.len() {
            for j in i + 1..vertices.len() {
                diameter = diameter.max(dist(&vertices[i], &vertices[j]));
            }
        }
        let s = Simplex { vertices, diameter };
        let d = s.dimension();
        if d > 0 && s.gram_determinant() / diameter.powi(2 * d as i32) <= 1e-12 {
            return Err(Error::usage("simplex vertices are affinely dependent"));
        }
        Ok(s)
    }

    pub fn dimension(&self) -> usize {
        self.vertices.len() - 1
    }

    fn edge_matrix(&self) -> Vec<Vec<f64>> {
        let v0 = &self.vertices[0];
        self.vertices[1..]
            .iter()
            .map(|v| v.iter().zip(v0).map(|(a, b)| a - b).collect())
            .collect()
    }

    fn gram_determinant(&self) -> f64 {
        let e = self.edge_matrix();
        let d = e.len();
        let mut g = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                g[(i, j)] = e[i].iter().zip(&e[j]).map(|(a, b)| a * b).sum();
            }
        }
        g.det()
    }

    /// d-dimensional volume.
    pub fn volume(&self) -> f64 {
        self.gram_determinant().max(0.0).sqrt() / factorial(self.dimension())
    }

    pub fn centroid(&self) -> Vec<f64> {
        let k = self.vertices.len() as f64;
        (0..self.vertices[0].len())
            .map(|j| self.vertices.iter().map(|v| v[j]).sum::<f64>() / k)
            .collect()
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                out.push(dist(&self.vertices[i], &self.vertices[j]));
            }
        }
        out
    }

    /// All edges of equal length within `tol` (relative).
    pub fn is_regular(&self, tol: f64) -> bool {
        self.edge_lengths()
            .iter()
            .all(|l| (l - self.diameter).abs() <= tol * self.diameter)
    }

    pub fn point(&self, barycentric: &[f64]) -> Vec<f64> {
        (0..self.vertices[0].len())
            .map(|j| self.vertices.iter().zip(barycentric).map(|(v, t)| t * v[j]).sum())
            .collect()
    }

    pub fn map(&self, chart: &Matrix) -> Simplex {
        let vertices = self.vertices.iter().map(|v| chart.mul_vec(v)).collect();
        Simplex::new(vertices).expect("linear image of a simplex under an invertible chart")
    }

    /// Euclidean distance from `p` to the simplex (d ≤ 2, planar or on a line).
    pub fn distance_to_point(&self, p: &[f64]) -> f64 {
        match self.dimension() {
            0 => dist(p, &self.vertices[0]),
            1 => point_segment(p, &self.vertices[0], &self.vertices[1]),
            _ => {
                if self.contains(p) {
                    0.0
                } else {
                    let v = &self.vertices;
                    point_segment(p, &v[0], &v[1])
                        .min(point_segment(p, &v[1], &v[2]))
                        .min(point_segment(p, &v[2], &v[0]))
                }
            }
        }
    }

    /// Planar point-in-triangle test (boundary included).
    pub fn contains(&self, p: &[f64]) -> bool {
        let v = &self.vertices;
        let cross = |a: &[f64], b: &[f64], c: &[f64]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let d1 = cross(&v[0], &v[1], p);
        let d2 = cross(&v[1], &v[2], p);
        let d3 = cross(&v[2], &v[0], p);
        let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
        let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
        !(neg && pos)
    }
}

fn point_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        (ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ap.iter().zip(&ab).map(|(u, v)| (u - t * v).powi(2)).sum::<f64>().sqrt()
}

/// Distance between two disjoint planar triangles.
fn triangle_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        for v in p {
            for i in 0..3 {
                best = best.min(point_segment(v, &q[i], &q[(i + 1) % 3]));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplicialComplex {
    /// Top-dimensional simplexes.
    pub simplices: Vec<Simplex>,
    /// Every (d−1)-face is shared by at most two simplexes and the
    /// simplexes do not overlap in volume.
    pub consistent: bool,
}

impl SimplicialComplex {
    pub fn new(simplices: Vec<Simplex>) -> Result<Self> {
        if simplices.is_empty() {
            return Err(Error::usage("empty complex"));
        }
        let d = simplices[0].dimension();
        if simplices.iter().any(|s| s.dimension() != d) {
            return Err(Error::usage("mixed simplex dimensions"));
        }
        let consistent = face_consistency(&simplices);
        Ok(SimplicialComplex { simplices, consistent })
    }

    pub fn dimension(&self) -> usize {
        self.simplices[0].dimension()
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn total_volume(&self) -> f64 {
        self.simplices.iter().map(Simplex::volume).sum()
    }

    pub fn max_diameter(&self) -> f64 {
        self.simplices.iter().map(|s| s.diameter).fold(0.0, f64::max)
    }
}

fn vertex_key(v: &[f64], unit: f64) -> Vec<i64> {
    v.iter().map(|x| (x / unit).round() as i64).collect()
}

/// Counts incidences of (d−1)-faces keyed by rounded vertex coordinates;
/// a face used more than twice means overlapping simplexes.
fn face_consistency(simplices: &[Simplex]) -> bool {
    let d = simplices[0].dimension();
    if d == 0 {
        return true;
    }
    let unit = simplices.iter().map(|s| s.diameter).fold(f64::INFINITY, f64::min) * 1e-6;
    let mut faces: HashMap<Vec<Vec<i64>>, usize> = HashMap::new();
    for s in simplices {
        for skip in 0..=d {
            let mut face: Vec<Vec<i64>> = s
                .vertices
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| vertex_key(v, unit))
                .collect();
            face.sort();
            *faces.entry(face).or_insert(0) += 1;
        }
    }
    faces.values().all(|&c| c <= 2)
}

/// Replaces every segment by its two halves and every triangle by its four
/// midpoint triangles.
pub fn standard_subdivide(complex: &SimplicialComplex) -> Result<SimplicialComplex> {
    let d = complex.dimension();
    let mid = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
    let children: Vec<Simplex> = match d {
        1 => complex
            .simplices
            .par_iter()
            .flat_map_iter(|s| {
                let (a, b) = (&s.vertices[0], &s.vertices[1]);
                let m = mid(a, b);
                [vec![a.clone(), m.clone()], vec![m, b.clone()]]
                    .into_iter()
                    .map(|v| Simplex::new(v).expect("half segment"))
            })
            .collect(),
        2 => complex
            .simplices
            .par_iter()
            .flat_map_iter(|s| {
                let (a, b, c) = (&s.vertices[0], &s.vertices[1], &s.vertices[2]);
                let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
                [
                    vec![a.clone(), ab.clone(), ca.clone()],
                    vec![ab.clone(), b.clone(), bc.clone()],
                    vec![ca.clone(), bc.clone(), c.clone()],
                    vec![bc, ca, ab],
                ]
                .into_iter()
                .map(|v| Simplex::new(v).expect("midpoint triangle"))
            })
            .collect(),
        _ => return Err(Error::UnsupportedDimension(d)),
    };
    Ok(SimplicialComplex {
        consistent: complex.consistent && face_consistency(&children),
        simplices: children,
    })
}

/// Vertices of the regular d-simplex with unit edges.
pub fn unit_regular_simplex(d: usize) -> Result<Simplex> {
    match d {
        1 => Simplex::new(vec![vec![0.0], vec![1.0]]),
        2 => Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]),
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

/// `c = ‖A₀⁻¹‖₂` where `A₀ e_i = w_i − w_0` for the unit regular simplex.
pub fn shrink_constant(d: usize) -> Result<f64> {
    let s = unit_regular_simplex(d)?;
    let e = s.edge_matrix();
    let mut a0 = Matrix::zeros(d, d);
    for (j, col) in e.iter().enumerate() {
        for i in 0..d {
            a0[(i, j)] = col[i];
        }
    }
    let sv = a0.singular_values();
    Ok(1.0 / sv[d - 1])
}

/// `σ_δ = {Σ t_i v_i : t_i ≥ cδ/diam(σ), Σ t_i = 1}`.
pub fn shrink_simplex(sigma: &Simplex, delta: f64) -> Result<Simplex> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::usage("delta must be nonnegative"));
    }
    if !sigma.is_regular(1e-9) {
        return Err(Error::usage("shrink_simplex needs a regular simplex"));
    }
    let d = sigma.dimension();
    let c = shrink_constant(d)?;
    let b = c * delta / sigma.diameter;
    let limit = 1.0 / (d + 1) as f64;
    if b >= limit {
        return Err(Error::DegenerateShrink { ratio: b, limit });
    }
    let vertices = (0..=d)
        .map(|i| {
            let t: Vec<f64> = (0..=d).map(|j| if i == j { 1.0 - d as f64 * b } else { b }).collect();
            sigma.point(&t)
        })
        .collect();
    Simplex::new(vertices)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    UnitSquare,
    UnitTorus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_max: usize,
    /// `‖Φ‖₂` of the chart from reference to physical coordinates.
    pub chart_lipschitz: f64,
}

impl PartitionParams {
    pub fn new(epsilon: f64, alpha: f64, beta: f64, n_max: usize) -> Self {
        PartitionParams {
            epsilon,
            alpha,
            beta,
            n_max,
            chart_lipschitz: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::usage("epsilon must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < self.alpha && self.alpha.is_finite()) {
            return Err(Error::usage(format!(
                "need 0 < beta < alpha, got beta = {}, alpha = {}",
                self.beta, self.alpha
            )));
        }
        if !(self.chart_lipschitz > 0.0 && self.chart_lipschitz.is_finite()) {
            return Err(Error::usage("chart Lipschitz constant must be positive"));
        }
        Ok(())
    }
}

/// `l_n = ⌈βn / ln 2⌉`
pub fn refinement_depth(beta: f64, n: usize) -> usize {
    (beta * n as f64 / LN_2).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionLevel {
    pub n: usize,
    pub l_n: usize,
    pub k_n: usize,
    /// `e^{−αn}`
    pub shrink_depth: f64,
    /// Reference coordinates.
    pub cells: Vec<Simplex>,
    /// `None` where the shrink is degenerate (empty core).
    pub cores: Vec<Option<Simplex>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSequence {
    pub domain: Domain,
    pub params: PartitionParams,
    /// Reference to physical coordinates.
    pub chart: Matrix,
    /// Number of pre-subdivisions applied to the two base triangles.
    pub pre_subdivisions: usize,
    pub k0: usize,
    /// Largest reference diameter in the base complex.
    pub zeta0: f64,
    /// `c = ‖A₀⁻¹‖₂`
    pub c: f64,
    pub levels: Vec<PartitionLevel>,
}

/// `Φ = [[1/s, −1/(s√3)], [0, 2/(s√3)]]` with `s = √2/L`.
pub fn rhombus_chart(lipschitz: f64) -> Matrix {
    let s = 2f64.sqrt() / lipschitz;
    let r3 = 3f64.sqrt();
    Matrix::from_rows(&[vec![1.0 / s, -1.0 / (s * r3)], vec![0.0, 2.0 / (s * r3)]]).expect("2x2")
}

fn base_complex(lipschitz: f64) -> SimplicialComplex {
    let s = 2f64.sqrt() / lipschitz;
    let h = s * 3f64.sqrt() / 2.0;
    let t1 = Simplex::new(vec![vec![0.0, 0.0], vec![s, 0.0], vec![s / 2.0, h]]).expect("regular");
    let t2 = Simplex::new(vec![vec![s, 0.0], vec![1.5 * s, h], vec![s / 2.0, h]]).expect("regular");
    SimplicialComplex::new(vec![t1, t2]).expect("two triangles")
}

pub fn build_partition_sequence(domain: Domain, params: &PartitionParams) -> Result<PartitionSequence> {
    params.validate()?;
    let chart = rhombus_chart(params.chart_lipschitz);
    let lipschitz = chart.spectral_norm();
    let mut base = base_complex(params.chart_lipschitz);
    let mut pre = 0;
    while lipschitz * base.max_diameter() >= params.epsilon {
        base = standard_subdivide(&base)?;
        pre += 1;
    }
    let k0 = base.len();
    let zeta0 = base.max_diameter();
    let c = shrink_constant(2)?;

    let mut levels = Vec::with_capacity(params.n_max + 1);
    let mut current = base;
    let mut depth = 0;
    for n in 0..=params.n_max {
        let l_n = refinement_depth(params.beta, n);
        while depth < l_n {
            current = standard_subdivide(&current)?;
            depth += 1;
        }
        let shrink_depth = (-params.alpha * n as f64).exp();
        let cores = current
            .simplices
            .par_iter()
            .map(|s| match shrink_simplex(s, shrink_depth) {
                Ok(core) => Ok(Some(core)),
                Err(Error::DegenerateShrink { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(PartitionLevel {
            n,
            l_n,
            k_n: current.len(),
            shrink_depth,
            cells: current.simplices.clone(),
            cores,
        });
    }
    Ok(PartitionSequence {
        domain,
        params: params.clone(),
        chart,
        pre_subdivisions: pre,
        k0,
        zeta0,
        c,
        levels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: usize,
    pub l_n: usize,
    pub k_n: usize,
    /// `k_n ≤ k₀·2^d·e^{βnd}`
    pub cell_count_bound_holds: bool,
    pub max_diameter: f64,
    /// `ε·e^{−βn}`
    pub diameter_bound: f64,
    pub property_i: bool,
    pub nonempty_cores: usize,
    /// Smallest physical distance between distinct cores.
    pub min_core_distance: Option<f64>,
    /// `min_core_distance · e^{αn}`
    pub delta_n: Option<f64>,
    /// Largest `μ(P_{n,i} \ K_{n,i})`.
    pub max_complement_measure: f64,
    /// `1 / (k_n ln k_n)`
    pub measure_bound: f64,
    pub property_c: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub levels: Vec<LevelReport>,
    pub c: f64,
    /// Smallest `δ_n` over levels with at least two cores.
    pub delta: Option<f64>,
    /// Slope of `ln(min core distance)` against `n`.
    pub scaling_exponent: Option<f64>,
    /// First level from which the measure bound holds up to `n_max`.
    pub n0: Option<usize>,
    /// First level from which the measure bound holds, from closed-form
    /// cell geometry extended past `n_max`.
    pub n0_extended: Option<usize>,
    pub property_i_all: bool,
    pub failures: Vec<String>,
}

/// Translation of `b` minimizing the wrapped centroid offset to `a`.
fn torus_shift(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y).round()).collect()
}

/// Smallest distance between distinct physical cores, via buckets at
/// least as wide as any cell.
fn min_core_distance(cores: &[Vec<Vec<f64>>], width: f64, torus: bool) -> Option<(f64, usize, usize)> {
    if cores.len() < 2 {
        return None;
    }
    let buckets_per_axis = ((1.0 / width).floor() as i64).max(1);
    let w = 1.0 / buckets_per_axis as f64;
    let key = |p: &[f64]| -> (i64, i64) {
        let k = |v: f64| {
            let b = (v / w).floor() as i64;
            if torus {
                b.rem_euclid(buckets_per_axis)
            } else {
                b
            }
        };
        (k(p[0]), k(p[1]))
    };
    let centroids: Vec<Vec<f64>> = cores
        .iter()
        .map(|t| vec![(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0])
        .collect();
    let mut table: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, c) in centroids.iter().enumerate() {
        table.entry(key(c)).or_default().push(i);
    }
    let found = (0..cores.len())
        .into_par_iter()
        .map(|i| {
            let (kx, ky) = key(&centroids[i]);
            let mut best = (f64::INFINITY, i, i);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let mut k = (kx + dx, ky + dy);
                    if torus {
                        k = (k.0.rem_euclid(buckets_per_axis), k.1.rem_euclid(buckets_per_axis));
                    }
                    let Some(ids) = table.get(&k) else { continue };
                    for &j in ids {
                        if j <= i {
                            continue;
                        }
                        let other: Vec<Vec<f64>> = if torus {
                            let s = torus_shift(&centroids[i], &centroids[j]);
                            cores[j].iter().map(|v| vec![v[0] + s[0], v[1] + s[1]]).collect()
                        } else {
                            cores[j].clone()
                        };
                        let dd = triangle_distance(&cores[i], &other);
                        if dd < best.0 {
                            best = (dd, i, j);
                        }
                    }
                }
            }
            best
        })
        .reduce(|| (f64::INFINITY, 0, 0), |a, b| if b.0 < a.0 { b } else { a });
    debug_assert!(found.0 < w, "nearest cores must be bucket neighbours");
    Some(found)
}

/// `1 − (1 − (d+1)b)^d` of the cell measure lies outside the core.
fn complement_fraction(c: f64, shrink_depth: f64, diameter: f64) -> f64 {
    let b = c * shrink_depth / diameter;
    if b >= 1.0 / 3.0 {
        1.0
    } else {
        1.0 - (1.0 - 3.0 * b).powi(2)
    }
}

/// Checks properties (i) and (ii) level by level. `density_bound` is the
/// essential supremum of `dμ/dm`.
pub fn verify_partition_properties(seq: &PartitionSequence, density_bound: f64) -> Result<PartitionReport> {
    if !(density_bound > 0.0 && density_bound.is_finite()) {
        return Err(Error::usage("density bound must be positive"));
    }
    let p = &seq.params;
    let det = seq.chart.det().abs();
    let torus = seq.domain == Domain::UnitTorus;
    let d = 2.0;
    let mut levels = Vec::with_capacity(seq.levels.len());
    let mut failures = Vec::new();
    for level in &seq.levels {
        let n = level.n as f64;
        let physical: Vec<Simplex> = level.cells.par_iter().map(|s| s.map(&seq.chart)).collect();
        let diameter_bound = p.epsilon * (-p.beta * n).exp();
        let (worst, max_diameter) = physical
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.diameter))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let property_i = max_diameter < diameter_bound;
        if !property_i {
            failures.push(format!(
                "property (i) fails at level {} cell {worst}: diameter {max_diameter} ≥ {diameter_bound}",
                level.n
            ));
        }
        let cores: Vec<Vec<Vec<f64>>> = level
            .cores
            .iter()
            .flatten()
            .map(|s| s.vertices.iter().map(|v| seq.chart.mul_vec(v)).collect())
            .collect();
        let min_dist = min_core_distance(&cores, max_diameter, torus).map(|t| t.0);
        let k = level.k_n as f64;
        let measure_bound = 1.0 / (k * k.ln());
        let (worst_cell, max_complement) = level
            .cells
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let frac = complement_fraction(seq.c, level.shrink_depth, s.diameter);
                (i, density_bound * det * s.volume() * frac)
            })
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let property_c = max_complement <= measure_bound;
        levels.push(LevelReport {
            n: level.n,
            l_n: level.l_n,
            k_n: level.k_n,
            cell_count_bound_holds: k <= seq.k0 as f64 * 2f64.powf(d) * (p.beta * n * d).exp() * (1.0 + 1e-12),
            max_diameter,
            diameter_bound,
            property_i,
            nonempty_cores: cores.len(),
            min_core_distance: min_dist,
            delta_n: min_dist.map(|m| m * (p.alpha * n).exp()),
            max_complement_measure: max_complement,
            measure_bound,
            property_c,
        });
        if level.n == p.n_max && !property_c {
            failures.push(format!(
                "property (ii) measure bound fails at level {} cell {worst_cell}: {max_complement:e} > {measure_bound:e}",
                level.n
            ));
        }
    }

    let n0 = levels
        .iter()
        .rposition(|l| !l.property_c)
        .map_or(Some(0), |i| levels.get(i + 1).map(|l| l.n));
    let delta = levels.iter().filter_map(|l| l.delta_n).reduce(f64::min);
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter_map(|l| l.min_core_distance.map(|m| (l.n as f64, m.ln())))
        .collect();
    let scaling_exponent = (pts.len() >= 2).then(|| {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        crate::entropy::least_squares(&xs, &ys).0
    });
    Ok(PartitionReport {
        property_i_all: levels.iter().all(|l| l.property_i),
        n0_extended: extended_n0(seq, density_bound, 400),
        levels,
        c: seq.c,
        delta,
        scaling_exponent,
        n0,
        failures,
    })
}

/// First `n ≤ horizon` from which the measure bound holds for every later
/// `n ≤ horizon`, using that all cells at a level are congruent.
fn extended_n0(seq: &PartitionSequence, density_bound: f64, horizon: usize) -> Option<usize> {
    let p = &seq.params;
    let det = seq.chart.det().abs();
    let base_area = 3f64.sqrt() / 4.0 * seq.zeta0 * seq.zeta0;
    let mut last_fail = None;
    for n in 0..=horizon {
        let l = refinement_depth(p.beta, n);
        let diam = seq.zeta0 * 0.5f64.powi(l as i32);
        let area = base_area * 0.25f64.powi(l as i32);
        let k = seq.k0 as f64 * 4f64.powi(l as i32);
        let frac = complement_fraction(seq.c, (-p.alpha * n as f64).exp(), diam);
        if density_bound * det * area * frac > 1.0 / (k * k.ln()) {
            last_fail = Some(n);
        }
    }
    match last_fail {
        None => Some(0),
        Some(n) if n < horizon => Some(n + 1),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshPart {
    Cells,
    Cores,
}

/// One simplex per line, physical vertex tuples.
pub fn write_mesh<W: Write>(seq: &PartitionSequence, level: usize, part: MeshPart, out: &mut W) -> io::Result<()> {
    let lvl = &seq.levels[level];
    let simplices: Vec<&Simplex> = match part {
        MeshPart::Cells => lvl.cells.iter().collect(),
        MeshPart::Cores => lvl.cores.iter().flatten().collect(),
    };
    for s in simplices {
        let tuples: Vec<String> = s
            .vertices
            .iter()
            .map(|v| {
                let q = seq.chart.mul_vec(v);
                let parts: Vec<String> = q.iter().map(|x| format!("{x:.17e}")).collect();
                format!("({})", parts.join(", "))
            })
            .collect();
        writeln!(out, "{}", tuples.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn equilateral(side: f64) -> Simplex {
        Simplex::new(vec![vec![0.1, 0.2], vec![0.1 + side, 0.2], vec![0.1 + side / 2.0, 0.2 + side * 3f64.sqrt() / 2.0]]).unwrap()
    }

    #[test]
    fn subdivision_halves_diameters_and_keeps_area() {
        let right = SimplicialComplex::new(vec![Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()]).unwrap();
        let sub = standard_subdivide(&right).unwrap();
        assert_eq!(sub.len(), 4);
        for s in &sub.simplices {
            assert!((s.diameter - right.simplices[0].diameter / 2.0).abs() < 1e-15);
        }
        assert!((sub.total_volume() - 0.5).abs() < 1e-12);
        assert!(sub.consistent);

        let seg = SimplicialComplex::new(vec![Simplex::new(vec![vec![0.0], vec![1.0]]).unwrap()]).unwrap();
        let halves = standard_subdivide(&seg).unwrap();
        assert_eq!(halves.len(), 2);
        assert!(halves.simplices.iter().all(|s| (s.diameter - 0.5).abs() < 1e-15));

        let mut c = base_complex(1.0);
        for _ in 0..4 {
            c = standard_subdivide(&c).unwrap();
        }
        assert_eq!(c.len(), 2 * 4usize.pow(4));
        assert!(c.consistent);
    }

    #[test]
    fn tetrahedra_are_unsupported() {
        let tet = Simplex::new(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let c = SimplicialComplex::new(vec![tet]).unwrap();
        assert!(matches!(standard_subdivide(&c), Err(Error::UnsupportedDimension(3))));
    }

    #[test]
    fn affinely_dependent_vertices_are_rejected() {
        assert!(Simplex::new(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn shrink_constants() {
        assert!((shrink_constant(2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((shrink_constant(1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shrink_examples() {
        let s = equilateral(0.7);
        let tiny = shrink_simplex(&s, 1e-15).unwrap();
        for (a, b) in tiny.vertices.iter().zip(&s.vertices) {
            assert!(dist(a, b) < 1e-12);
        }
        let c = shrink_constant(2).unwrap();
        for delta in [0.001, 0.01, 0.05] {
            let core = shrink_simplex(&s, delta).unwrap();
            assert!((core.diameter - (s.diameter - 3.0 * c * delta)).abs() < 1e-12);
            assert!(core.is_regular(1e-12));
        }
        assert!(matches!(shrink_simplex(&s, 0.7), Err(Error::DegenerateShrink { .. })));
    }

    #[test]
    fn core_keeps_distance_from_boundary() {
        let s = equilateral(1.0);
        let delta = 0.05;
        let core = shrink_simplex(&s, delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let e = rng.gen_range(0..3);
            let t: f64 = rng.gen();
            let (a, b) = (&s.vertices[e], &s.vertices[(e + 1) % 3]);
            let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
            assert!(core.distance_to_point(&p) >= delta);
        }
    }

    #[test]
    fn complement_area_matches_monte_carlo() {
        let s = equilateral(1.0);
        let core = shrink_simplex(&s, 0.08).unwrap();
        let exact = (s.volume() - core.volume()) / s.volume();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut outside = 0;
        for _ in 0..n {
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = s.point(&[1.0 - u - v, u, v]);
            if !core.contains(&p) {
                outside += 1;
            }
        }
        let mc = outside as f64 / n as f64;
        assert!((mc - exact).abs() < 0.01 * exact, "{mc} vs {exact}");
    }

    #[test]
    fn chart_maps_rhombus_onto_square() {
        let chart = rhombus_chart(1.0);
        assert!((chart.spectral_norm() - 1.0).abs() < 1e-12);
        let base = base_complex(1.0);
        let area: f64 = base.simplices.iter().map(|s| s.map(&chart).volume()).sum();
        assert!((area - 1.0).abs() < 1e-12);
        let corners: Vec<Vec<f64>> = base.simplices.iter().flat_map(|s| s.vertices.iter().map(|v| chart.mul_vec(v))).collect();
        for c in corners {
            assert!(c.iter().all(|x| x.abs() < 1e-12 || (x - 1.0).abs() < 1e-12), "{c:?}");
        }
    }

    #[test]
    fn level_zero_and_cell_counts() {
        let params = PartitionParams::new(0.5, 0.6, 0.3, 6);
        let seq = build_partition_sequence(Domain::UnitSquare, &params).unwrap();
        assert_eq!(seq.k0, 32);
        let lvl0 = &seq.levels[0];
        assert!(lvl0.cells.iter().all(|s| s.map(&seq.chart).diameter < 0.5));
        for l in &seq.levels {
            assert_eq!(l.l_n, refinement_depth(0.3, l.n));
            assert_eq!(l.k_n, seq.k0 * 4usize.pow(l.l_n as u32));
            assert!(l.k_n as f64 <= seq.k0 as f64 * 4.0 * (0.3 * l.n as f64 * 2.0).exp());
        }
        assert!(build_partition_sequence(Domain::UnitSquare, &PartitionParams::new(0.5, 0.3, 0.6, 3)).is_err());
    }

    #[test]
    fn brute_force_core_distance() {
        let params = PartitionParams {
            chart_lipschitz: 0.05,
            ..PartitionParams::new(0.5, 0.6, 0.3, 3)
        };
        let seq = build_partition_sequence(Domain::UnitSquare, &params).unwrap();
        let report = verify_partition_properties(&seq, 1.0).unwrap();
        let lvl = &seq.levels[3];
        let cores: Vec<Vec<Vec<f64>>> = lvl
            .cores
            .iter()
            .flatten()
            .map(|s| s.vertices.iter().map(|v| seq.chart.mul_vec(v)).collect())
            .collect();
        let mut brute = f64::INFINITY;
        for i in 0..cores.len() {
            for j in i + 1..cores.len() {
                brute = brute.min(triangle_distance(&cores[i], &cores[j]));
            }
        }
        assert!((report.levels[3].min_core_distance.unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn torus_cores_wrap() {
        let params = PartitionParams {
            chart_lipschitz: 0.05,
            ..PartitionParams::new(0.5, 0.6, 0.3, 2)
        };
        let seq = build_partition_sequence(Domain::UnitTorus, &params).unwrap();
        let sq = build_partition_sequence(Domain::UnitSquare, &params).unwrap();
        let t = verify_partition_properties(&seq, 1.0).unwrap();
        let s = verify_partition_properties(&sq, 1.0).unwrap();
        assert!(t.levels[2].min_core_distance.unwrap() <= s.levels[2].min_core_distance.unwrap() + 1e-15);
    }

    #[test]
    fn mesh_dump_has_one_line_per_simplex() {
        let seq = build_partition_sequence(Domain::UnitSquare, &PartitionParams::new(0.5, 0.6, 0.3, 1)).unwrap();
        let mut buf = Vec::new();
        write_mesh(&seq, 1, MeshPart::Cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), seq.levels[1].k_n);
        assert!(text.lines().all(|l| l.matches('(').count() == 3));
    }
}
