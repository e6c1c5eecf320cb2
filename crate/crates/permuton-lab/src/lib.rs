//! Simulation library for longest increasing subsequences of random
//! permutations sampled from planar densities.
//!
//! A set of `N` points in the unit square with pairwise distinct
//! coordinates induces a permutation: the point with the `i`-th lowest
//! x-coordinate maps to the rank of its y-coordinate. Sampling the points
//! i.i.d. from a density and measuring the longest increasing subsequence
//! (LIS) of the induced permutation probes how singularities of the
//! density (at a corner, or along the diagonal) change the LIS growth
//! rate from the uniform-case `2*sqrt(N)` baseline up to higher powers
//! of `N`.
//!
//! Module map:
//! - [`core`]: points, point sets, induced permutations.
//! - [`lis`]: patience-sorting LIS plus quadratic and exhaustive oracles.
//! - [`densities`]: the five density families, normalizers, box weights.
//! - [`samplers`]: exact seeded samplers for each family and mixtures.
//! - [`gridcheck`]: grid occupancy bounds that sandwich the LIS.
//! - [`stats`]: Monte Carlo estimation, exponent fits, concentration checks.
//! - [`cli`]: command-line front end (`permuton-lab` binary).
//! - [`suite`]: the verification suite run by `permuton-lab verify`.

pub mod cli;
pub mod core;
pub mod densities;
pub mod gridcheck;
pub mod lis;
mod numeric;
pub mod samplers;
pub mod stats;
pub mod suite;
