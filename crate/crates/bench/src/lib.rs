//! Fixed workloads shared by the benchmarks.

use estent_core::entropy::CandidateGrid;
use estent_core::partitions::{unit_regular_simplex, SimplicialComplex};
use estent_core::{Result, SystemDefinition};

/// A chaotic but tame standard map.
pub fn standard_map() -> SystemDefinition {
    SystemDefinition::standard_map(1.0)
}

/// Cat map with a square candidate grid.
pub fn cat_counting(grid_side: usize) -> Result<(SystemDefinition, CandidateGrid)> {
    let sys = SystemDefinition::cat_map();
    let grid = CandidateGrid::square(&sys.space, grid_side)?;
    Ok((sys, grid))
}

/// The regular triangle as a one-cell complex.
pub fn triangle() -> Result<SimplicialComplex> {
    SimplicialComplex::new(vec![unit_regular_simplex(2)?])
}
