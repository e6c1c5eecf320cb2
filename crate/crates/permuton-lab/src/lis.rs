//! Longest increasing subsequence of permutations and point sets.
//!
//! [`lis_fast`] is the production path (patience sorting, `O(N log N)`);
//! [`lis_quadratic`] and [`lis_exhaustive`] are deliberately independent
//! slower routes used to cross-validate it.

use thiserror::Error;

use crate::core::{perm_of_points, CoreError, Permutation, PointSet};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LisError {
    #[error("exhaustive LIS is limited to N <= {limit}, got N = {n}")]
    SizeLimitExceeded { n: usize, limit: usize },
}

/// LIS length together with an optional witness.
///
/// The witness is a list of 0-based positions `i_1 < ... < i_k` whose
/// images strictly increase, with `k = length`. The fast path leaves it
/// out; [`lis_fast_with_witness`] materializes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LisResult {
    pub length: usize,
    pub witness: Option<Vec<usize>>,
}

/// Patience-sorting LIS, length only.
///
/// Keeps one array of pile tops and binary-searches the insertion point
/// for each value; no witness bookkeeping, so the extra memory is a
/// single `u32` per pile.
pub fn lis_fast(perm: &Permutation) -> LisResult {
    LisResult {
        length: patience_length(perm.image()),
        witness: None,
    }
}

/// Patience-sorting LIS with the witness reconstructed from predecessor
/// links. Two extra `u32` arrays of length `N`.
pub fn lis_fast_with_witness(perm: &Permutation) -> LisResult {
    let image = perm.image();
    if image.is_empty() {
        return LisResult {
            length: 0,
            witness: Some(Vec::new()),
        };
    }
    let n = image.len();
    // tops[p] = index of the current top of pile p; pred[i] = index on the
    // previous pile when image[i] was placed.
    let mut tops: Vec<u32> = Vec::new();
    let mut pred: Vec<u32> = vec![u32::MAX; n];
    for (i, &v) in image.iter().enumerate() {
        let pile = tops.partition_point(|&t| image[t as usize] < v);
        if pile > 0 {
            pred[i] = tops[pile - 1];
        }
        if pile == tops.len() {
            tops.push(i as u32);
        } else {
            tops[pile] = i as u32;
        }
    }
    let mut witness = vec![0usize; tops.len()];
    let mut cur = *tops.last().unwrap();
    for slot in witness.iter_mut().rev() {
        *slot = cur as usize;
        cur = pred[cur as usize];
    }
    LisResult {
        length: witness.len(),
        witness: Some(witness),
    }
}

pub(crate) fn patience_length(values: &[u32]) -> usize {
    let mut tops: Vec<u32> = Vec::new();
    for &v in values {
        let pile = tops.partition_point(|&t| t < v);
        if pile == tops.len() {
            tops.push(v);
        } else {
            tops[pile] = v;
        }
    }
    tops.len()
}

/// `O(N^2)` dynamic-programming oracle: `dp[i]` is the longest increasing
/// subsequence ending at `i`.
pub fn lis_quadratic(perm: &Permutation) -> usize {
    let image = perm.image();
    let mut dp = vec![0u32; image.len()];
    let mut best = 0;
    for i in 0..image.len() {
        let mut d = 1;
        for j in 0..i {
            if image[j] < image[i] && dp[j] + 1 > d {
                d = dp[j] + 1;
            }
        }
        dp[i] = d;
        best = best.max(d);
    }
    best as usize
}

const EXHAUSTIVE_LIMIT: usize = 20;

/// Exact LIS by checking every subset of positions. `N <= 20`.
pub fn lis_exhaustive(perm: &Permutation) -> Result<usize, LisError> {
    let image = perm.image();
    let n = image.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(LisError::SizeLimitExceeded {
            n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut best = 0usize;
    for mask in 0u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let mut last = 0u32;
        let mut ok = true;
        for (i, &v) in image.iter().enumerate() {
            if mask >> i & 1 == 1 {
                if v <= last {
                    ok = false;
                    break;
                }
                last = v;
            }
        }
        if ok {
            best = size;
        }
    }
    Ok(best)
}

/// LIS of a point set: the largest number of points forming an up-right
/// chain, computed through the induced permutation.
pub fn lis_points(ps: &PointSet) -> Result<LisResult, CoreError> {
    Ok(lis_fast(&perm_of_points(ps)?))
}
