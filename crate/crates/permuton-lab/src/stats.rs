//! Monte Carlo estimation of the mean LIS, growth-exponent fitting, and
//! empirical verification of concentration bounds.
//!
//! Replicates are embarrassingly parallel over RNG streams (stream id =
//! replicate index); per-replicate results are collected in replicate
//! order and aggregated with compensated summation, so outputs do not
//! depend on the worker count.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::densities::{DensityError, DensityFamily};
use crate::lis::{lis_fast, patience_length};
use crate::numeric::KahanSum;
use crate::samplers::{RngStream, Sampler};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("estimate requires replicates >= 2, got {got}")]
    TooFewReplicates { got: u32 },
    #[error("exact mean LIS enumeration is limited to N <= {limit}, got {n}")]
    SizeLimitExceeded { n: u64, limit: u64 },
    #[error("exponent fit needs at least 3 records, got {got}")]
    TooFewRecords { got: usize },
    #[error("exponent fit requires all records from one family; saw `{a}` and `{b}`")]
    MixedFamilies { a: String, b: String },
    #[error("degenerate design: {what}")]
    DegenerateDesign { what: String },
    #[error("parameter out of range: {what}")]
    ParameterOutOfRange { what: String },
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Monte Carlo summary of the LIS at one sample size.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EstimateRecord {
    pub family: DensityFamily,
    pub n: u64,
    pub replicates: u32,
    pub mean_lis: f64,
    pub std_lis: f64,
    pub stderr: f64,
    pub seed: u64,
}

/// LIS values over independent replicate streams, in replicate order.
pub(crate) fn lis_replicates(
    sampler: &Sampler,
    n: u64,
    replicates: u32,
    seed: u64,
) -> Vec<u32> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = RngStream::new(seed, stream);
            let ps = sampler.sample_set(n as usize, &mut rng);
            lis_fast(&crate::core::perm_of_points(&ps).expect("sampled sets have distinct coords"))
                .length as u32
        })
        .collect()
}

/// Estimates the mean LIS at size `n` over `replicates` independent
/// replicate streams derived from `seed`.
pub fn estimate(
    family: &DensityFamily,
    n: u64,
    replicates: u32,
    seed: u64,
) -> Result<EstimateRecord, StatsError> {
    if replicates < 2 {
        return Err(StatsError::TooFewReplicates { got: replicates });
    }
    let sampler = Sampler::new(family)?;
    let values = lis_replicates(&sampler, n, replicates, seed);
    let (mean, std) = mean_and_sample_std(&values);
    Ok(EstimateRecord {
        family: *family,
        n,
        replicates,
        mean_lis: mean,
        std_lis: std,
        stderr: std / (replicates as f64).sqrt(),
        seed,
    })
}

fn mean_and_sample_std(values: &[u32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v as f64);
    }
    let mean = acc.value() / n;
    let mut sq = KahanSum::new();
    for &v in values {
        let d = v as f64 - mean;
        sq.add(d * d);
    }
    let var = if values.len() > 1 {
        sq.value() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Exact mean LIS of a uniformly random permutation of size `n <= 8`,
/// by full enumeration of the `n!` permutations. The mean is the ratio
/// `lis_total / permutations`, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExactEll {
    pub n: u32,
    pub lis_total: u64,
    pub permutations: u64,
}

impl ExactEll {
    pub fn value(&self) -> f64 {
        self.lis_total as f64 / self.permutations as f64
    }
}

const EXACT_ELL_LIMIT: u64 = 8;

pub fn exact_small_ell(n: u64) -> Result<ExactEll, StatsError> {
    if n == 0 || n > EXACT_ELL_LIMIT {
        return Err(StatsError::SizeLimitExceeded {
            n,
            limit: EXACT_ELL_LIMIT,
        });
    }
    let n = n as usize;
    let mut values: Vec<u32> = (1..=n as u32).collect();
    let mut total = 0u64;
    let mut count = 0u64;
    // Heap's algorithm, iterative.
    let mut stack = vec![0usize; n];
    total += patience_length(&values) as u64;
    count += 1;
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                values.swap(0, i);
            } else {
                values.swap(stack[i], i);
            }
            total += patience_length(&values) as u64;
            count += 1;
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    Ok(ExactEll {
        n: n as u32,
        lis_total: total,
        permutations: count,
    })
}

/// Fitted growth exponent of `mean_lis` against `N`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FitResult {
    pub family: DensityFamily,
    /// Slope of `log mean_lis` against `log N`.
    pub exponent: f64,
    /// Coefficient of the `log log N` regressor; 0 when disabled.
    pub log_coeff: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Weighted least squares of `log mean_lis` on `log N` (and optionally
/// `log log N`), weights `1 / stderr^2`. If any record carries a
/// non-positive stderr the fit falls back to equal weights.
pub fn fit_exponent(
    records: &[EstimateRecord],
    with_log_correction: bool,
) -> Result<FitResult, StatsError> {
    if records.len() < 3 {
        return Err(StatsError::TooFewRecords {
            got: records.len(),
        });
    }
    let family = records[0].family;
    for r in records {
        if r.family != family {
            return Err(StatsError::MixedFamilies {
                a: family.to_string(),
                b: r.family.to_string(),
            });
        }
    }
    let mut ns: Vec<u64> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() != records.len() {
        return Err(StatsError::DegenerateDesign {
            what: "duplicate N values".to_string(),
        });
    }
    let equal_weights = records.iter().any(|r| r.stderr.is_nan() || r.stderr <= 0.0);
    let dim = if with_log_correction { 3 } else { 2 };
    if with_log_correction && records.len() < 4 {
        return Err(StatsError::TooFewRecords {
            got: records.len(),
        });
    }

    // Normal equations A^T W A x = A^T W y, columns [log N, log log N?, 1].
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        if r.mean_lis.is_nan() || r.mean_lis <= 0.0 {
            return Err(StatsError::DegenerateDesign {
                what: format!("mean_lis must be positive, got {}", r.mean_lis),
            });
        }
        let ln_n = (r.n as f64).ln();
        if r.n < 2 {
            return Err(StatsError::DegenerateDesign {
                what: "records need N >= 2 so that log log N is defined".to_string(),
            });
        }
        let x = [ln_n, ln_n.ln(), 1.0];
        let y = r.mean_lis.ln();
        let w = if equal_weights {
            1.0
        } else {
            1.0 / (r.stderr * r.stderr)
        };
        let cols: Vec<usize> = if with_log_correction {
            vec![0, 1, 2]
        } else {
            vec![0, 2]
        };
        for (ai, &ci) in cols.iter().enumerate() {
            for (aj, &cj) in cols.iter().enumerate() {
                ata[ai][aj] += w * x[ci] * x[cj];
            }
            aty[ai] += w * x[ci] * y;
        }
        rows.push((x, y, w));
    }
    let sol = solve_symmetric(&mut ata, &mut aty, dim).ok_or_else(|| StatsError::DegenerateDesign {
        what: "collinear design matrix".to_string(),
    })?;
    let (exponent, log_coeff, intercept) = if with_log_correction {
        (sol[0], sol[1], sol[2])
    } else {
        (sol[0], 0.0, sol[1])
    };

    // Weighted R^2 against the weighted mean.
    let wsum: f64 = rows.iter().map(|(_, _, w)| *w).sum();
    let ybar: f64 = rows.iter().map(|(_, y, w)| w * y).sum::<f64>() / wsum;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y, w) in &rows {
        let fitted = exponent * x[0] + log_coeff * x[1] + intercept;
        ss_res += w * (y - fitted) * (y - fitted);
        ss_tot += w * (y - ybar) * (y - ybar);
    }
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(FitResult {
        family,
        exponent,
        log_coeff,
        intercept,
        r_squared,
        n_points: records.len(),
    })
}

/// Gaussian elimination with partial pivoting on the leading
/// `dim x dim` block; None when the pivot collapses.
#[allow(clippy::needless_range_loop)]
fn solve_symmetric(a: &mut [[f64; 3]; 3], b: &mut [f64; 3], dim: usize) -> Option<Vec<f64>> {
    let scale: f64 = (0..dim)
        .map(|i| a[i][i].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            a.swap(pivot_row, col);
            b.swap(pivot_row, col);
        }
        for row in col + 1..dim {
            let f = a[row][col] / a[col][col];
            for k in col..dim {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut acc = b[row];
        for k in row + 1..dim {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Concentration bounds and their empirical verification.
// ---------------------------------------------------------------------------

/// Two-sided bounded-differences bound `2 exp(-2 lambda^2 / N)` for the
/// deviation of the LIS from its mean (re-drawing one point moves the
/// LIS by at most 1).
pub fn mcdiarmid_bound(n: u64, lambda: f64) -> f64 {
    2.0 * (-2.0 * lambda * lambda / n as f64).exp()
}

/// Upper-tail bound `2 exp(-lambda^2 / (4 (M + lambda)))` around a
/// median `M` of the LIS.
pub fn talagrand_upper_bound(median: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 2.0;
    }
    2.0 * (-lambda * lambda / (4.0 * (median + lambda))).exp()
}

/// Lower-tail bound `2 exp(-lambda^2 / (4 M))`.
pub fn talagrand_lower_bound(median: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 || median <= 0.0 {
        return 2.0;
    }
    2.0 * (-lambda * lambda / (4.0 * median)).exp()
}

/// Binomial deviation bound `2 exp(-(t^2/2) / (n p (1-p) + t/3))`.
pub fn bernstein_bound(n: u64, p: f64, t: f64) -> Result<f64, StatsError> {
    if n == 0 || p.is_nan() || p <= 0.0 || p >= 1.0 || t.is_nan() || t <= 0.0 {
        return Err(StatsError::ParameterOutOfRange {
            what: format!("bernstein_bound needs n >= 1, p in (0,1), t > 0; got n={n}, p={p}, t={t}"),
        });
    }
    Ok(2.0 * (-(t * t / 2.0) / (n as f64 * p * (1.0 - p) + t / 3.0)).exp())
}

/// One row of a concentration report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConcentrationRow {
    pub lambda: f64,
    /// Two-sided empirical tail around the pooled mean, with `lambda`
    /// widened by one pooled stderr (the bound centers at the true mean,
    /// which is unavailable; the widening keeps the comparison sound).
    pub empirical_tail: f64,
    pub mcdiarmid: f64,
    pub talagrand_up: f64,
    pub talagrand_down: f64,
    /// One-sided empirical tails around the empirical median.
    pub empirical_upper: f64,
    pub empirical_lower: f64,
}

/// Empirical tails of the LIS against the deviation bounds.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub family: DensityFamily,
    pub n: u64,
    pub replicates: u32,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
    pub rows: Vec<ConcentrationRow>,
    /// Human-readable descriptions of any tail exceeding its bound by
    /// more than three binomial standard errors; empty means clean.
    pub violations: Vec<String>,
}

/// Shared engine behind [`mcdiarmid_check`] and [`talagrand_check`]: one
/// round of replicates feeds every bound.
pub fn concentration_report(
    family: &DensityFamily,
    n: u64,
    replicates: u32,
    lambdas: &[f64],
    seed: u64,
) -> Result<ConcentrationReport, StatsError> {
    if replicates < 2 {
        return Err(StatsError::TooFewReplicates { got: replicates });
    }
    let sampler = Sampler::new(family)?;
    let values = lis_replicates(&sampler, n, replicates, seed);
    let (mean, std) = mean_and_sample_std(&values);
    let stderr = std / (replicates as f64).sqrt();
    let mut sorted = values.clone();
    sorted.sort_unstable();
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2] as f64
    } else {
        (sorted[sorted.len() / 2 - 1] as f64 + sorted[sorted.len() / 2] as f64) / 2.0
    };

    let reps = replicates as f64;
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut violations = Vec::new();
    for &lambda in lambdas {
        let widened = lambda + stderr;
        let two_sided =
            values.iter().filter(|&&v| (v as f64 - mean).abs() > widened).count() as f64 / reps;
        let upper = values.iter().filter(|&&v| v as f64 >= median + lambda).count() as f64 / reps;
        let lower = values.iter().filter(|&&v| v as f64 <= median - lambda).count() as f64 / reps;
        let row = ConcentrationRow {
            lambda,
            empirical_tail: two_sided,
            mcdiarmid: mcdiarmid_bound(n, lambda),
            talagrand_up: talagrand_upper_bound(median, lambda),
            talagrand_down: talagrand_lower_bound(median, lambda),
            empirical_upper: upper,
            empirical_lower: lower,
        };
        // A tail "violates" its bound only beyond 3 binomial standard
        // errors of the empirical frequency.
        let mut flag = |emp: f64, bound: f64, label: &str| {
            let se = (emp * (1.0 - emp) / reps).sqrt();
            if emp > bound + 3.0 * se {
                violations.push(format!(
                    "{family} N={n} lambda={lambda}: {label} tail {emp:.3e} exceeds bound {bound:.3e}"
                ));
            }
        };
        flag(row.empirical_tail, row.mcdiarmid, "two-sided/mcdiarmid");
        // lambda = 0 makes the one-sided "tails" include the median mass
        // itself; the bounds are 2 there, so nothing can flag.
        flag(row.empirical_upper, row.talagrand_up, "upper/talagrand");
        flag(row.empirical_lower, row.talagrand_down, "lower/talagrand");
        rows.push(row);
    }
    Ok(ConcentrationReport {
        family: *family,
        n,
        replicates,
        seed,
        mean,
        stderr,
        median,
        rows,
        violations,
    })
}

/// Empirical two-sided tails against the bounded-differences bound.
pub fn mcdiarmid_check(
    family: &DensityFamily,
    n: u64,
    replicates: u32,
    lambdas: &[f64],
    seed: u64,
) -> Result<ConcentrationReport, StatsError> {
    concentration_report(family, n, replicates, lambdas, seed)
}

/// Empirical one-sided tails around the empirical median against the
/// median-concentration bounds.
pub fn talagrand_check(
    family: &DensityFamily,
    n: u64,
    replicates: u32,
    lambdas: &[f64],
    seed: u64,
) -> Result<ConcentrationReport, StatsError> {
    concentration_report(family, n, replicates, lambdas, seed)
}

/// Default deviation grid for size `n`: multiples of `sqrt(N)` spanning
/// the trivial-to-binding range of the bounds.
pub fn default_lambdas(n: u64) -> Vec<f64> {
    [0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
        .iter()
        .map(|c| (c * (n as f64).sqrt()).round())
        .collect()
}
