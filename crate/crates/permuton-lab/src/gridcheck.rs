//! Uniform-grid occupancy bounds that deterministically sandwich the LIS
//! of a point set.
//!
//! With `b = floor(N^(1/(alpha+2)))` boxes per side, the number of
//! occupied diagonal boxes is a lower bound on the LIS (one point per
//! occupied diagonal box forms an up-right chain), and the maximum total
//! occupancy over monotone box paths is an upper bound (the boxes visited
//! by any increasing point chain rearrange into a right/up staircase).
//! Both inequalities hold for every point set and every grid side, so a
//! violation is an implementation bug, never a statistical event.

use serde::Serialize;
use thiserror::Error;

use crate::core::{CoreError, PointSet};
use crate::lis::lis_points;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GridError {
    #[error("parameter out of range: {what}")]
    ParameterOutOfRange { what: String },
    #[error("grid side {b} exceeds the supported maximum {max} (counts would need {b}^2 cells)")]
    GridTooLarge { b: u64, max: u64 },
    #[error("deterministic sandwich violated: lower {lower} <= lis {lis} <= upper {upper} fails")]
    InvariantViolation { lower: u64, lis: u64, upper: u64 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Largest supported grid side; the dense count matrix tops out at 256 MiB.
const MAX_GRID_SIDE: u64 = 8192;

/// Per-box point counts on a `b x b` uniform grid.
///
/// `count(i, j)` uses 1-based box indices as in the construction: box
/// `(i, j)` covers `((i-1)/b, i/b] x ((j-1)/b, j/b]`, with the bottom/left
/// boundary clamped into box 1 so that every point lands in exactly one
/// box and the counts partition `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCounts {
    b: usize,
    counts: Vec<u32>,
    total: u64,
}

impl GridCounts {
    /// Builds from an explicit row-major matrix (`counts[(i-1)*b + (j-1)]`).
    pub fn from_matrix(b: usize, counts: Vec<u32>) -> Self {
        assert_eq!(counts.len(), b * b);
        let total = counts.iter().map(|&c| c as u64).sum();
        Self { b, counts, total }
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Count of box `(i, j)`, 1-based.
    pub fn count(&self, i: usize, j: usize) -> u32 {
        assert!(i >= 1 && i <= self.b && j >= 1 && j <= self.b);
        self.counts[(i - 1) * self.b + (j - 1)]
    }
}

/// Grid side `floor(N^(1/(alpha+2)))`, at least 1.
///
/// The floating-point power is checked against the neighboring integer so
/// that exact integer powers (for instance N = 10^6 at alpha = -1/2) do
/// not lose the boundary to rounding.
pub fn grid_side(n: u64, alpha: f64) -> Result<u64, GridError> {
    if !(alpha > -1.0 && alpha < 0.0) {
        return Err(GridError::ParameterOutOfRange {
            what: format!("grid exponent requires alpha in (-1, 0), got {alpha}"),
        });
    }
    if n == 0 {
        return Err(GridError::ParameterOutOfRange {
            what: "N must be >= 1".to_string(),
        });
    }
    let exponent = 1.0 / (alpha + 2.0);
    let mut b = (n as f64).powf(exponent).floor() as u64;
    // Re-check the boundary: accept b+1 when (b+1)^(alpha+2) <= N up to
    // one ulp of slack, and back off if b itself overshoots.
    while ((b + 1) as f64).powf(alpha + 2.0) <= n as f64 * (1.0 + 1e-12) {
        b += 1;
    }
    while b > 1 && (b as f64).powf(alpha + 2.0) > n as f64 * (1.0 + 1e-12) {
        b -= 1;
    }
    Ok(b.max(1))
}

/// Bins the points of `ps` into a `b x b` grid.
pub fn bin_points(ps: &PointSet, b: usize) -> Result<GridCounts, GridError> {
    if b == 0 {
        return Err(GridError::ParameterOutOfRange {
            what: "grid side must be >= 1".to_string(),
        });
    }
    if b as u64 > MAX_GRID_SIDE {
        return Err(GridError::GridTooLarge {
            b: b as u64,
            max: MAX_GRID_SIDE,
        });
    }
    let mut counts = vec![0u32; b * b];
    for p in ps.points() {
        let i = box_index(p.x, b);
        let j = box_index(p.y, b);
        counts[(i - 1) * b + (j - 1)] += 1;
    }
    Ok(GridCounts {
        b,
        counts,
        total: ps.len() as u64,
    })
}

/// 1-based box index of a coordinate: `ceil(x * b)` clamped to `[1, b]`,
/// so a point exactly on an interior boundary goes to the lower box.
fn box_index(x: f64, b: usize) -> usize {
    ((x * b as f64).ceil() as usize).clamp(1, b)
}

/// Number of occupied diagonal boxes; a lower bound for the LIS.
pub fn diag_lower_bound(g: &GridCounts) -> u64 {
    (1..=g.b).filter(|&k| g.count(k, k) >= 1).count() as u64
}

/// Maximum total count over increasing sequences of boxes, via the
/// staircase dynamic program `M[i][j] = counts[i][j] +
/// max(M[i-1][j], M[i][j-1])`; an upper bound for the LIS.
///
/// Any increasing sequence of distinct boxes embeds in a right/up
/// staircase through the same boxes, so the staircase maximum dominates
/// the supremum over such sequences (and is attained by one of length
/// `2b - 1 < 2b`).
pub fn path_upper_bound(g: &GridCounts) -> u64 {
    let b = g.b;
    let mut row = vec![0u64; b + 1];
    for i in 1..=b {
        for j in 1..=b {
            let c = g.counts[(i - 1) * b + (j - 1)] as u64;
            // row[j] still holds M[i-1][j]; row[j-1] already holds M[i][j-1].
            row[j] = c + row[j].max(row[j - 1]);
        }
    }
    row[b]
}

/// The sandwich report: `lower <= lis <= upper` plus the cap `2b` on the
/// length of any increasing box sequence.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SandwichReport {
    pub n: u64,
    pub alpha: f64,
    pub b: u64,
    pub lower: u64,
    pub lis: u64,
    pub upper: u64,
    pub chain_cap: u64,
}

/// Runs the full sandwich on one point set, with the grid side chosen
/// from `alpha`. Errors with [`GridError::InvariantViolation`] if the
/// deterministic inequalities fail, which can only mean a bug.
pub fn sandwich_check(ps: &PointSet, alpha: f64) -> Result<SandwichReport, GridError> {
    let n = ps.len() as u64;
    let b = grid_side(n.max(1), alpha)?;
    let g = bin_points(ps, b as usize)?;
    let lower = diag_lower_bound(&g);
    let upper = path_upper_bound(&g);
    let lis = lis_points(ps)?.length as u64;
    let chain_cap = 2 * b;
    if !(lower <= lis && lis <= upper) {
        return Err(GridError::InvariantViolation { lower, lis, upper });
    }
    // The staircase realizing the DP maximum visits 2b - 1 distinct
    // boxes, strictly below the cap.
    debug_assert!(2 * b - 1 < chain_cap + 1);
    Ok(SandwichReport {
        n,
        alpha,
        b,
        lower,
        lis,
        upper,
        chain_cap,
    })
}
