//! The verification suite behind `permuton-lab verify`: ten numbered
//! criteria combining small-instance oracles, deterministic inequalities,
//! and finite-N growth-exponent recovery at pre-registered tolerances.
//!
//! Every tolerance is pinned here as a constant; seeds derive from the
//! caller-provided base seed, so the suite is reproducible end to end.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::core::{perm_of_points, Permutation, PointSet};
use crate::densities::{ref_tail_exact, tail_asymptotic, DensityFamily};
use crate::gridcheck::{
    bin_points, grid_side, path_upper_bound, sandwich_check, GridCounts,
};
use crate::lis::{lis_exhaustive, lis_fast, lis_points, lis_quadratic};
use crate::samplers::{grid_goodness_of_fit, sample_mixture, MixtureSpec, RngStream, Sampler};
use crate::stats::{concentration_report, estimate, exact_small_ell, fit_exponent, EstimateRecord};

/// Geometric size grid used by the exponent-recovery criteria.
pub const DEFAULT_N_GRID: [u64; 8] = [
    4096, 8192, 16384, 32768, 65536, 131072, 262144, 524288,
];
pub const DEFAULT_REPLICATES: u32 = 64;

pub const CRITERION_COUNT: u32 = 10;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:02} {:<28} {} ({:.1}s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

pub fn run_all(seed: u64) -> Vec<CriterionOutcome> {
    (1..=CRITERION_COUNT).map(|id| run_criterion(id, seed)).collect()
}

pub fn run_criterion(id: u32, seed: u64) -> CriterionOutcome {
    let start = Instant::now();
    let (name, passed, detail) = match id {
        1 => criterion_oracle_equivalence(seed),
        2 => criterion_uniform_baseline(seed),
        3 => criterion_reference_rates(seed),
        4 => criterion_diagonal_divergence(seed),
        5 => criterion_corner_families(seed),
        6 => criterion_sampler_correctness(seed),
        7 => criterion_deterministic_sandwich(seed),
        8 => criterion_concentration(seed),
        9 => criterion_tail_asymptotics(),
        10 => criterion_coupling_inequalities(seed),
        other => panic!("no criterion {other}"),
    };
    CriterionOutcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_permutation(n: usize, rng: &mut RngStream) -> Permutation {
    let mut image: Vec<u32> = (1..=n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        image.swap(i, j);
    }
    Permutation::from_one_line(image).expect("shuffle keeps the bijection")
}

// Criterion 1: the three LIS routes agree exactly on 1000 random
// permutations per size 1..=12.
fn criterion_oracle_equivalence(seed: u64) -> (&'static str, bool, String) {
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for n in 1..=12usize {
        let mut rng = RngStream::new(seed, 1000 + n as u64);
        for _ in 0..1000 {
            let p = random_permutation(n, &mut rng);
            let fast = lis_fast(&p).length;
            if fast != lis_quadratic(&p) || fast != lis_exhaustive(&p).unwrap() {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    (
        "oracle-equivalence",
        mismatches == 0,
        format!("{checked} permutations, {mismatches} mismatches"),
    )
}

const UNIFORM_RATIO_BAND: (f64, f64) = (1.90, 2.00);

// Criterion 2: uniform baseline; mean LIS at N = 1e5 lands in
// [1.90, 2.00] * sqrt(N), and the exact small-size means are matched.
fn criterion_uniform_baseline(seed: u64) -> (&'static str, bool, String) {
    let fam = DensityFamily::Uniform;
    let rec = estimate(&fam, 100_000, 200, seed).expect("estimate");
    let ratio = rec.mean_lis / (rec.n as f64).sqrt();
    let ratio_ok = (UNIFORM_RATIO_BAND.0..=UNIFORM_RATIO_BAND.1).contains(&ratio);

    let mut detail = format!(
        "mean/sqrt(N) = {ratio:.4} in [{}, {}]: {}",
        UNIFORM_RATIO_BAND.0,
        UNIFORM_RATIO_BAND.1,
        if ratio_ok { "ok" } else { "VIOLATED" }
    );
    let mut small_ok = true;
    for n in [2u64, 3] {
        let exact = exact_small_ell(n).expect("small ell").value();
        let rec = estimate(&fam, n, 4096, seed + n).expect("estimate");
        let ok = (rec.mean_lis - exact).abs() <= 3.0 * rec.stderr;
        small_ok &= ok;
        let _ = write!(
            detail,
            "; ell_{n}: {:.4} vs exact {exact} ({})",
            rec.mean_lis,
            if ok { "ok" } else { "VIOLATED" }
        );
    }
    ("uniform-baseline", ratio_ok && small_ok, detail)
}

/// Runs the default grid for one family and fits the exponent with and
/// without the log-correction regressor; passes if either fitted
/// exponent is within `tol` of `target`.
fn exponent_recovery(
    family: &DensityFamily,
    target: f64,
    tol: f64,
    seed: u64,
) -> (bool, String) {
    let records: Vec<EstimateRecord> = DEFAULT_N_GRID
        .iter()
        .map(|&n| estimate(family, n, DEFAULT_REPLICATES, seed).expect("estimate"))
        .collect();
    // Pooled means over 64 replicates must grow with N.
    let monotone = records.windows(2).all(|w| w[1].mean_lis >= w[0].mean_lis);
    let plain = fit_exponent(&records, false).expect("fit");
    let logc = fit_exponent(&records, true).expect("fit");
    let plain_ok = (plain.exponent - target).abs() <= tol;
    let log_ok = (logc.exponent - target).abs() <= tol;
    let passed = (plain_ok || log_ok) && monotone;
    let detail = format!(
        "{family}: exponent {:.4} (log-corrected {:.4} + {:.2}*loglogN) vs target {target:.4} +/- {tol}; r2 {:.4}{}",
        plain.exponent,
        logc.exponent,
        logc.log_coeff,
        plain.r_squared,
        if monotone { "" } else { "; means NOT monotone" }
    );
    (passed, detail)
}

// Criterion 3: staircase-permuton growth rates.
fn criterion_reference_rates(seed: u64) -> (&'static str, bool, String) {
    let cases = [
        (DensityFamily::ref_permuton(1.5, 0.0).unwrap(), 1.0 / 1.5, 0.06),
        (DensityFamily::ref_permuton(2.0, 0.0).unwrap(), 0.5, 0.05),
        (DensityFamily::ref_permuton(3.0, 0.0).unwrap(), 0.5, 0.05),
    ];
    let mut all = true;
    let mut detail = String::new();
    for (fam, target, tol) in cases {
        let (ok, d) = exponent_recovery(&fam, target, tol, seed);
        all &= ok;
        let _ = write!(detail, "[{}] {d}; ", if ok { "ok" } else { "FAIL" });
    }
    ("reference-permuton-rates", all, detail)
}

// Criterion 4: diagonal-divergence growth rates.
fn criterion_diagonal_divergence(seed: u64) -> (&'static str, bool, String) {
    let cases = [
        (DensityFamily::diagonal_power(-0.5).unwrap(), 1.0 / 1.5, 0.06),
        (DensityFamily::diagonal_power(-0.2).unwrap(), 1.0 / 1.8, 0.06),
    ];
    let mut all = true;
    let mut detail = String::new();
    for (fam, target, tol) in cases {
        let (ok, d) = exponent_recovery(&fam, target, tol, seed);
        all &= ok;
        let _ = write!(detail, "[{}] {d}; ", if ok { "ok" } else { "FAIL" });
    }
    ("diagonal-divergence-rates", all, detail)
}

// Criterion 5: corner families (radial and pinched).
fn criterion_corner_families(seed: u64) -> (&'static str, bool, String) {
    let cases = [
        (DensityFamily::corner_radial(-1.0).unwrap(), 0.5, 0.06),
        (DensityFamily::corner_pinched(1.5, 1.0).unwrap(), 1.0 / 1.5, 0.08),
    ];
    let mut all = true;
    let mut detail = String::new();
    for (fam, target, tol) in cases {
        let (ok, d) = exponent_recovery(&fam, target, tol, seed);
        all &= ok;
        let _ = write!(detail, "[{}] {d}; ", if ok { "ok" } else { "FAIL" });
    }
    ("corner-family-rates", all, detail)
}

const GOF_DRAWS: u64 = 1_000_000;
const GOF_GRID: usize = 20;
const GOF_MIN_P: f64 = 1e-4;

// Criterion 6: sampler correctness: chi-square grid test per family plus
// three pinned occupancy probabilities.
fn criterion_sampler_correctness(seed: u64) -> (&'static str, bool, String) {
    let families = [
        DensityFamily::Uniform,
        DensityFamily::ref_permuton(2.0, 0.0).unwrap(),
        DensityFamily::corner_radial(-1.0).unwrap(),
        DensityFamily::corner_pinched(1.5, 1.0).unwrap(),
        DensityFamily::diagonal_power(-0.5).unwrap(),
    ];
    let mut all = true;
    let mut detail = String::new();
    let reports: Vec<_> = families
        .par_iter()
        .enumerate()
        .map(|(i, fam)| {
            let mut rng = RngStream::new(seed, 600 + i as u64);
            grid_goodness_of_fit(fam, GOF_DRAWS, GOF_GRID, &mut rng).expect("gof")
        })
        .collect();
    for report in &reports {
        let ok = report.p_value > GOF_MIN_P;
        all &= ok;
        let _ = write!(
            detail,
            "[{}] {} chi2 p={:.2e}; ",
            if ok { "ok" } else { "FAIL" },
            report.family,
            report.p_value
        );
    }

    // P(|X - Y| <= 1/4) = 0.6875 for diag-power alpha = -1/2.
    {
        let fam = DensityFamily::diagonal_power(-0.5).unwrap();
        let s = Sampler::new(&fam).unwrap();
        let mut rng = RngStream::new(seed, 610);
        let hits = (0..GOF_DRAWS)
            .filter(|_| {
                let p = s.sample_point(&mut rng);
                (p.x - p.y).abs() <= 0.25
            })
            .count() as f64;
        let freq = hits / GOF_DRAWS as f64;
        let ok = (freq - 0.6875).abs() <= 0.003;
        all &= ok;
        let _ = write!(
            detail,
            "[{}] P(|X-Y|<=1/4) = {freq:.4} vs 0.6875; ",
            if ok { "ok" } else { "FAIL" }
        );
    }

    // First-box occupancy of the staircase at beta = 2.
    {
        let fam = DensityFamily::ref_permuton(2.0, 0.0).unwrap();
        let s = Sampler::new(&fam).unwrap();
        let u1 = s.ref_weights().unwrap().u(1);
        let mut rng = RngStream::new(seed, 611);
        let hits = (0..GOF_DRAWS)
            .filter(|_| {
                let p = s.sample_point(&mut rng);
                p.x < u1 && p.y < u1
            })
            .count() as f64;
        let freq = hits / GOF_DRAWS as f64;
        let ok = (freq - 0.6079271018540266).abs() <= 0.002;
        all &= ok;
        let _ = write!(
            detail,
            "[{}] box-1 occupancy = {freq:.4} vs 0.6079; ",
            if ok { "ok" } else { "FAIL" }
        );
    }

    // Pooled diagonal-box occupancy against b^-(alpha+2).
    {
        let alpha = -0.5;
        let fam = DensityFamily::diagonal_power(alpha).unwrap();
        let s = Sampler::new(&fam).unwrap();
        let n = 100_000u64;
        let b = grid_side(n, alpha).unwrap();
        let ps = s.sample_set(n as usize, &mut RngStream::new(seed, 612));
        let g = bin_points(&ps, b as usize).unwrap();
        let diagonal_points: u64 = (1..=b as usize).map(|k| g.count(k, k) as u64).sum();
        let per_box = (b as f64).powf(-(alpha + 2.0));
        let p = b as f64 * per_box;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let ok = (diagonal_points as f64 - mean).abs() <= 3.0 * sigma;
        all &= ok;
        let _ = write!(
            detail,
            "[{}] diagonal occupancy {diagonal_points} vs {mean:.0} +/- {:.0}",
            if ok { "ok" } else { "FAIL" },
            3.0 * sigma
        );
    }
    ("sampler-correctness", all, detail)
}

/// Exhaustive maximum over increasing sequences of distinct boxes
/// (independent oracle for the staircase dynamic program; b <= 4).
fn enumerate_upper(g: &GridCounts) -> u64 {
    let b = g.b();
    let boxes: Vec<(usize, usize)> = (1..=b)
        .flat_map(|i| (1..=b).map(move |j| (i, j)))
        .collect();
    let mut memo = vec![0u64; boxes.len()];
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(boxes[k]));
    for &k in &order {
        let (i, j) = boxes[k];
        let mut best = 0u64;
        for (k2, &(i2, j2)) in boxes.iter().enumerate() {
            if (i2, j2) != (i, j) && i2 >= i && j2 >= j {
                best = best.max(memo[k2]);
            }
        }
        memo[k] = g.count(i, j) as u64 + best;
    }
    memo.into_iter().max().unwrap_or(0)
}

// Criterion 7: deterministic sandwich over 500 sampled sets, plus the DP
// against enumeration on 200 random small matrices.
fn criterion_deterministic_sandwich(seed: u64) -> (&'static str, bool, String) {
    let families: Vec<DensityFamily> = vec![
        DensityFamily::Uniform,
        DensityFamily::ref_permuton(1.5, 0.0).unwrap(),
        DensityFamily::corner_radial(-1.0).unwrap(),
        DensityFamily::corner_pinched(1.5, 1.0).unwrap(),
        DensityFamily::diagonal_power(-0.5).unwrap(),
    ];
    let sizes = [100u64, 1000, 10_000, 100_000];
    // 5 families x 4 sizes x 25 sets = 500 point sets.
    let jobs: Vec<(usize, u64, u64)> = (0..families.len())
        .flat_map(|f| {
            sizes
                .iter()
                .flat_map(move |&n| (0..25u64).map(move |r| (f, n, r)))
        })
        .collect();
    let results: Vec<Result<f64, String>> = jobs
        .par_iter()
        .map(|&(f, n, r)| {
            let fam = &families[f];
            let sampler = Sampler::new(fam).expect("sampler");
            let alpha = match fam {
                DensityFamily::DiagonalPower { alpha } => *alpha,
                _ => -0.5,
            };
            let mut rng = RngStream::new(seed, 700 + (f as u64) * 1000 + n + r);
            let ps = sampler.sample_set(n as usize, &mut rng);
            match sandwich_check(&ps, alpha) {
                Ok(rep) => Ok(rep.upper as f64 / rep.b as f64),
                Err(e) => Err(format!("{fam} n={n} r={r}: {e}")),
            }
        })
        .collect();
    let violations: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let max_ratio = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(0.0f64, |m, &v| m.max(v));

    let mut rng = RngStream::new(seed, 710);
    let mut dp_mismatches = 0u32;
    for _ in 0..200 {
        let b = rng.gen_range(1..=4usize);
        let counts: Vec<u32> = (0..b * b).map(|_| rng.gen_range(0..9u32)).collect();
        let g = GridCounts::from_matrix(b, counts);
        if path_upper_bound(&g) != enumerate_upper(&g) {
            dp_mismatches += 1;
        }
    }
    let passed = violations.is_empty() && dp_mismatches == 0;
    let detail = format!(
        "500 sets, {} sandwich violations; 200 matrices, {} DP mismatches; max upper/b = {:.2} (recorded)",
        violations.len(),
        dp_mismatches,
        max_ratio
    );
    ("deterministic-sandwich", passed, detail)
}

const CONCENTRATION_REPLICATES: u32 = 10_000;

// Criterion 8: concentration bounds never violated beyond 3 binomial
// standard errors over the default matrix.
fn criterion_concentration(seed: u64) -> (&'static str, bool, String) {
    let families = [
        DensityFamily::Uniform,
        DensityFamily::ref_permuton(1.5, 0.0).unwrap(),
    ];
    let sizes = [1000u64, 10_000];
    let mut all = true;
    let mut detail = String::new();
    for fam in &families {
        for &n in &sizes {
            let lambdas = crate::stats::default_lambdas(n);
            let rep = concentration_report(fam, n, CONCENTRATION_REPLICATES, &lambdas, seed)
                .expect("concentration");
            let ok = rep.violations.is_empty();
            all &= ok;
            let worst = rep
                .rows
                .iter()
                .map(|r| r.empirical_tail / r.mcdiarmid)
                .fold(0.0f64, f64::max);
            let _ = write!(
                detail,
                "[{}] {fam} N={n}: {} violations, max emp/bound {:.2e}; ",
                if ok { "ok" } else { "FAIL" },
                rep.violations.len(),
                worst
            );
        }
    }
    ("concentration-bounds", all, detail)
}

const TAIL_RATIO_BAND: (f64, f64) = (0.995, 1.005);

// Criterion 9: exact series tails over the asymptotic expression at
// n = 1e5 for beta in {1.5, 2, 3}, gamma in {0, 1}.
//
// The gamma = 1 combinations cannot land in the stated band at any
// reachable n: the relative error of the asymptotic decays like
// gamma / ((beta - 1) ln n), so hitting 0.5% would need n beyond e^80.
// They are reported honestly rather than loosened.
fn criterion_tail_asymptotics() -> (&'static str, bool, String) {
    let n = 100_000u64;
    let mut all = true;
    let mut detail = String::new();
    for beta in [1.5, 2.0, 3.0] {
        for gamma in [0.0, 1.0] {
            let exact = ref_tail_exact(beta, gamma, n).expect("tail");
            let asym = tail_asymptotic(beta, gamma, n);
            let ratio = exact / asym;
            let ok = (TAIL_RATIO_BAND.0..=TAIL_RATIO_BAND.1).contains(&ratio);
            all &= ok;
            let _ = write!(
                detail,
                "[{}] beta={beta} gamma={gamma}: ratio {ratio:.4}; ",
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    if !all {
        let _ = write!(
            detail,
            "(gamma=1 ratios converge only like 1 + gamma/((beta-1) ln n); the band is unreachable at any feasible n)"
        );
    }
    ("tail-asymptotics", all, detail)
}

// Criterion 10: the two coupling inequalities hold deterministically on
// 200 mixture trials.
fn criterion_coupling_inequalities(seed: u64) -> (&'static str, bool, String) {
    let spec_a = MixtureSpec::new(
        0.3,
        DensityFamily::ref_permuton(2.0, 0.0).unwrap(),
        DensityFamily::Uniform,
    )
    .unwrap();
    let spec_b = MixtureSpec::new(
        0.5,
        DensityFamily::diagonal_power(-0.5).unwrap(),
        DensityFamily::corner_radial(-1.0).unwrap(),
    )
    .unwrap();
    let mut failures = 0u32;
    for trial in 0..200u64 {
        let spec = if trial % 2 == 0 { &spec_a } else { &spec_b };
        let n = 200 + (trial as usize % 5) * 300;
        let mut rng = RngStream::new(seed, 900 + trial);
        let (ps, flags) = sample_mixture(spec, n, &mut rng).expect("mixture");
        let full = lis_points(&ps).expect("lis").length;
        let split = |want: bool| {
            let pts: Vec<_> = ps
                .points()
                .iter()
                .zip(&flags)
                .filter(|(_, &f)| f == want)
                .map(|(p, _)| *p)
                .collect();
            lis_fast(&perm_of_points(&PointSet::new(pts).expect("subset")).expect("perm")).length
        };
        let g_part = split(true);
        let h_part = split(false);
        if !(g_part <= full && full <= g_part + h_part) {
            failures += 1;
        }
    }
    (
        "coupling-inequalities",
        failures == 0,
        format!("200 trials, {failures} failures"),
    )
}
