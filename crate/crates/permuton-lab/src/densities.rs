//! The five sampling density families on the unit square: parameter
//! validation, normalizing constants, box-weight machinery for the
//! staircase ("reference") permuton, and exact rectangle masses.
//!
//! Families, in the textual grammar used by the CLI:
//!
//! - `uniform`: the Lebesgue measure.
//! - `ref:beta=B,gamma=G`: piecewise-constant density on a chain of
//!   squares climbing the diagonal, box `k` carrying mass proportional to
//!   `k^-B * ln(k+1)^G` (`B > 1`, `G >= 0`).
//! - `corner-radial:alpha=A`: `c_f * d^A` where `d` is the L1 distance
//!   to `(1, 1)` (`A > -2`).
//! - `corner-pinched:beta=B,c=C`: `c_f * d^(B/(1-B)) *
//!   exp(-C * |x - y| * d^(B/(1-B)))` (`1 < B < 2`, `C > 0`).
//! - `diag-power:alpha=A`: `c_f * |x - y|^A` (`-1 < A < 0`).
//!
//! Each family is realized with its exact normalizing constant so that a
//! concrete, simulable probability law stands behind the asymptotic
//! statements being checked. Normalizers and box weights are computed
//! once and immutable afterwards; evaluation is pure.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::core::Point;
use crate::numeric::{adaptive_simpson, expm1_over, KahanSum};

/// Default bound on the box mass left beyond the tabulated range of a
/// [`RefWeights`]; negligible against Monte Carlo noise at any feasible
/// replicate count.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Smallest and largest tabulated box count for [`RefWeights`]. The floor
/// keeps the analytic tail machinery in its asymptotic regime; the cap
/// bounds memory. Mass beyond the table is not discarded: samplers and
/// evaluation handle indices past `k_max` analytically.
const K_FLOOR: u64 = 65_536;
const K_CAP: u64 = 1 << 20;

/// Box sums switch from direct summation to Euler-Maclaurin at this index.
const DIRECT_LIMIT: u64 = 65_536;

/// Box indices beyond this are below `f64` resolution of the geometry.
const DEGENERATE_INDEX_CAP: u64 = 1 << 62;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DensityError {
    #[error("parameter out of range: {what}")]
    ParameterOutOfRange { what: String },
    #[error("density evaluated at a singular point ({x}, {y})")]
    SingularPoint { x: f64, y: f64 },
    #[error("cannot parse density family `{input}`: {message}")]
    Parse { input: String, message: String },
}

fn param_err(what: impl Into<String>) -> DensityError {
    DensityError::ParameterOutOfRange { what: what.into() }
}

/// A tagged, parameterized description of one of the five sampling
/// densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityFamily {
    Uniform,
    RefPermuton { beta: f64, gamma: f64 },
    CornerRadial { alpha: f64 },
    CornerPinched { beta: f64, c: f64 },
    DiagonalPower { alpha: f64 },
}

impl DensityFamily {
    pub fn uniform() -> Self {
        DensityFamily::Uniform
    }

    pub fn ref_permuton(beta: f64, gamma: f64) -> Result<Self, DensityError> {
        let f = DensityFamily::RefPermuton { beta, gamma };
        f.validate()?;
        Ok(f)
    }

    pub fn corner_radial(alpha: f64) -> Result<Self, DensityError> {
        let f = DensityFamily::CornerRadial { alpha };
        f.validate()?;
        Ok(f)
    }

    pub fn corner_pinched(beta: f64, c: f64) -> Result<Self, DensityError> {
        let f = DensityFamily::CornerPinched { beta, c };
        f.validate()?;
        Ok(f)
    }

    pub fn diagonal_power(alpha: f64) -> Result<Self, DensityError> {
        let f = DensityFamily::DiagonalPower { alpha };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        match *self {
            DensityFamily::Uniform => Ok(()),
            DensityFamily::RefPermuton { beta, gamma } => {
                if !(beta.is_finite() && beta > 1.0) {
                    return Err(param_err(format!("ref requires beta > 1, got {beta}")));
                }
                if !(gamma.is_finite() && gamma >= 0.0) {
                    return Err(param_err(format!("ref requires gamma >= 0, got {gamma}")));
                }
                Ok(())
            }
            DensityFamily::CornerRadial { alpha } => {
                if !(alpha.is_finite() && alpha > -2.0) {
                    return Err(param_err(format!(
                        "corner-radial requires alpha > -2, got {alpha}"
                    )));
                }
                Ok(())
            }
            DensityFamily::CornerPinched { beta, c } => {
                if !(beta.is_finite() && beta > 1.0 && beta < 2.0) {
                    return Err(param_err(format!(
                        "corner-pinched requires beta in (1, 2), got {beta}"
                    )));
                }
                if !(c.is_finite() && c > 0.0) {
                    return Err(param_err(format!("corner-pinched requires c > 0, got {c}")));
                }
                Ok(())
            }
            DensityFamily::DiagonalPower { alpha } => {
                if !(alpha.is_finite() && alpha > -1.0 && alpha < 0.0) {
                    return Err(param_err(format!(
                        "diag-power requires alpha in (-1, 0), got {alpha}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            DensityFamily::Uniform => "uniform",
            DensityFamily::RefPermuton { .. } => "ref",
            DensityFamily::CornerRadial { .. } => "corner-radial",
            DensityFamily::CornerPinched { .. } => "corner-pinched",
            DensityFamily::DiagonalPower { .. } => "diag-power",
        }
    }
}

impl fmt::Display for DensityFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DensityFamily::Uniform => write!(f, "uniform"),
            DensityFamily::RefPermuton { beta, gamma } => {
                write!(f, "ref:beta={beta},gamma={gamma}")
            }
            DensityFamily::CornerRadial { alpha } => write!(f, "corner-radial:alpha={alpha}"),
            DensityFamily::CornerPinched { beta, c } => {
                write!(f, "corner-pinched:beta={beta},c={c}")
            }
            DensityFamily::DiagonalPower { alpha } => write!(f, "diag-power:alpha={alpha}"),
        }
    }
}

impl FromStr for DensityFamily {
    type Err = DensityError;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let err = |message: &str| DensityError::Parse {
            input: input.to_string(),
            message: message.to_string(),
        };
        let (tag, rest) = match input.split_once(':') {
            Some((t, r)) => (t.trim(), Some(r)),
            None => (input.trim(), None),
        };
        let mut params: Vec<(String, f64)> = Vec::new();
        if let Some(rest) = rest {
            for piece in rest.split(',') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                let (k, v) = piece
                    .split_once('=')
                    .ok_or_else(|| err(&format!("expected key=value, found `{piece}`")))?;
                let value = v
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| err(&format!("bad value for `{k}`: {e}")))?;
                params.push((k.trim().to_string(), value));
            }
        }
        let mut take = |key: &str| -> Option<f64> {
            let pos = params.iter().position(|(k, _)| k == key)?;
            Some(params.remove(pos).1)
        };
        let family = match tag {
            "uniform" => DensityFamily::Uniform,
            "ref" => {
                let beta = take("beta").ok_or_else(|| err("ref requires beta="))?;
                let gamma = take("gamma").unwrap_or(0.0);
                DensityFamily::RefPermuton { beta, gamma }
            }
            "corner-radial" => {
                let alpha = take("alpha").ok_or_else(|| err("corner-radial requires alpha="))?;
                DensityFamily::CornerRadial { alpha }
            }
            "corner-pinched" => {
                let beta = take("beta").ok_or_else(|| err("corner-pinched requires beta="))?;
                let c = take("c").ok_or_else(|| err("corner-pinched requires c="))?;
                DensityFamily::CornerPinched { beta, c }
            }
            "diag-power" => {
                let alpha = take("alpha").ok_or_else(|| err("diag-power requires alpha="))?;
                DensityFamily::DiagonalPower { alpha }
            }
            other => {
                return Err(err(&format!(
                    "unknown family `{other}` (expected uniform, ref, corner-radial, corner-pinched, diag-power)"
                )))
            }
        };
        if let Some((k, _)) = params.first() {
            return Err(err(&format!("unknown parameter `{k}` for `{tag}`")));
        }
        family.validate()?;
        Ok(family)
    }
}

impl Serialize for DensityFamily {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DensityFamily {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Box-weight series k^-beta * ln(k+1)^gamma: terms, tails, integrals.
// ---------------------------------------------------------------------------

/// One unnormalized box weight, `k^-beta * ln(k+1)^gamma`.
fn series_term(beta: f64, gamma: f64, k: f64) -> f64 {
    if gamma == 0.0 {
        k.powf(-beta)
    } else {
        k.powf(-beta) * (k + 1.0).ln().powf(gamma)
    }
}

/// `int_a^inf x^-beta * ln(x+1)^gamma dx`.
///
/// For `gamma = 0` this is closed form. Otherwise the substitutions
/// `x = a/t`, `t = s^(1/(beta-1))` flatten the power part exactly,
/// leaving a bounded, log-growing integrand on `(0, 1]`.
fn tail_integral(beta: f64, gamma: f64, a: f64) -> f64 {
    let lead = a.powf(1.0 - beta) / (beta - 1.0);
    if gamma == 0.0 {
        return lead;
    }
    let c = 1.0 / (beta - 1.0);
    let ln_a = a.ln();
    let h = move |s: f64| {
        // ln(a * s^-c + 1), overflow-safe through the log of the product.
        let w = ln_a - c * s.ln();
        let l = if w > 40.0 { w } else { (w.exp()).ln_1p() };
        l.powf(gamma)
    };
    // Tolerance scaled to the integrand magnitude; the clipped stub
    // below 1e-18 contributes O(1e-16) relative.
    let scale = h(1e-18).max(1.0);
    lead * adaptive_simpson(&h, 1e-18, 1.0, 1e-13 * scale)
}

/// Exact tail `sum_{k >= n} k^-beta * ln(k+1)^gamma`.
///
/// Direct summation up to a switch index, then Euler-Maclaurin:
/// `sum_{k>=a} f(k) = int_a^inf f + f(a)/2 - f'(a)/12 + O(f'''(a))`,
/// whose error at the switch index is far below 1e-15 relative.
pub fn ref_tail_exact(beta: f64, gamma: f64, n: u64) -> Result<f64, DensityError> {
    if !(beta.is_finite() && beta > 1.0) {
        return Err(param_err(format!("tail requires beta > 1, got {beta}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(param_err(format!("tail requires gamma >= 0, got {gamma}")));
    }
    if n == 0 {
        return Err(param_err("tail index n must be >= 1".to_string()));
    }
    Ok(tail_sum(beta, gamma, n))
}

fn tail_sum(beta: f64, gamma: f64, n: u64) -> f64 {
    if n < DIRECT_LIMIT {
        let mut acc = KahanSum::new();
        for k in n..DIRECT_LIMIT {
            acc.add(series_term(beta, gamma, k as f64));
        }
        return acc.value() + tail_sum_em(beta, gamma, DIRECT_LIMIT as f64);
    }
    tail_sum_em(beta, gamma, n as f64)
}

/// Euler-Maclaurin tail at (integer-valued) `a >= DIRECT_LIMIT`.
fn tail_sum_em(beta: f64, gamma: f64, a: f64) -> f64 {
    let f_a = series_term(beta, gamma, a);
    let l = (a + 1.0).ln();
    let mut fp_a = -beta * a.powf(-beta - 1.0) * if gamma == 0.0 { 1.0 } else { l.powf(gamma) };
    if gamma != 0.0 {
        fp_a += gamma * a.powf(-beta) * l.powf(gamma - 1.0) / (a + 1.0);
    }
    tail_integral(beta, gamma, a) + 0.5 * f_a - fp_a / 12.0
}

/// The asymptotic tail expression `n^(1-beta)/(beta-1) * ln(n)^gamma`.
pub fn tail_asymptotic(beta: f64, gamma: f64, n: u64) -> f64 {
    let nf = n as f64;
    let base = nf.powf(1.0 - beta) / (beta - 1.0);
    if gamma == 0.0 {
        base
    } else {
        base * nf.ln().powf(gamma)
    }
}

/// Largest box index `k >= lo` with `tail_sum(k) > target`, i.e. the box
/// containing the point where the raw tail crosses `target`. Clamped to
/// [`DEGENERATE_INDEX_CAP`], past which box widths are below `f64`
/// resolution.
pub(crate) fn tail_box_index(beta: f64, gamma: f64, lo: u64, target: f64) -> u64 {
    debug_assert!(lo >= DIRECT_LIMIT);
    if tail_sum_em(beta, gamma, lo as f64) <= target {
        return lo;
    }
    let mut hi = lo;
    loop {
        if hi >= DEGENERATE_INDEX_CAP {
            return DEGENERATE_INDEX_CAP;
        }
        let next = (hi * 2).min(DEGENERATE_INDEX_CAP);
        if tail_sum_em(beta, gamma, next as f64) <= target {
            hi = next;
            break;
        }
        hi = next;
        if hi == DEGENERATE_INDEX_CAP {
            return DEGENERATE_INDEX_CAP;
        }
    }
    // Invariant: tail(lo) > target >= tail(hi); find k with
    // tail(k) > target >= tail(k + 1).
    let mut lo = lo;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail_sum_em(beta, gamma, mid as f64) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

// ---------------------------------------------------------------------------
// Reference-permuton weights.
// ---------------------------------------------------------------------------

/// Normalizer, box masses, partial sums, and tails for the staircase
/// permuton with weights `u_k = k^-beta * ln(k+1)^gamma / Z`.
///
/// Boxes `1..=k_max` are tabulated; `tail_mass` records the true mass
/// beyond the table (it is not discarded: samplers and evaluation invert
/// the analytic tail for indices past `k_max`). `k_max` is chosen so that
/// the integral bound on the remainder is below the requested tolerance
/// whenever that is reachable within the table cap.
#[derive(Debug, Clone)]
pub struct RefWeights {
    pub beta: f64,
    pub gamma: f64,
    /// Infinite-series normalizer `Z = sum_k k^-beta ln(k+1)^gamma`.
    pub z: f64,
    u: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
    pub k_max: usize,
    pub tail_mass: f64,
}

impl RefWeights {
    /// Mass of box `k` (1-based); for `k > k_max` computed from the series.
    pub fn u(&self, k: usize) -> f64 {
        assert!(k >= 1);
        if k <= self.k_max {
            self.u[k - 1]
        } else {
            series_term(self.beta, self.gamma, k as f64) / self.z
        }
    }

    /// Partial sum `S_n = sum_{k<=n} u_k`; `S_0 = 0`.
    pub fn s(&self, n: usize) -> f64 {
        if n <= self.k_max {
            self.s[n]
        } else {
            1.0 - self.r_beyond(n)
        }
    }

    /// Tail `R_n = sum_{k>n} u_k`; `R_0 = 1`.
    pub fn r(&self, n: usize) -> f64 {
        if n <= self.k_max {
            self.r[n]
        } else {
            self.r_beyond(n)
        }
    }

    fn r_beyond(&self, n: usize) -> f64 {
        tail_sum(self.beta, self.gamma, n as u64 + 1) / self.z
    }

    pub fn masses(&self) -> &[f64] {
        &self.u
    }

    /// Diagonal interval `[S_{n-1}, S_n]` of box `n` in each coordinate.
    pub fn box_interval(&self, n: usize) -> (f64, f64) {
        assert!(n >= 1);
        if n <= self.k_max {
            (self.s[n - 1], self.s[n])
        } else {
            let hi = 1.0 - self.r_beyond(n);
            let lo = 1.0 - self.r_beyond(n - 1);
            (lo, hi.max(lo))
        }
    }
}

/// One square box of the staircase, with its corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefBox {
    pub index: usize,
    pub lower: Point,
    pub upper: Point,
}

/// Geometry of box `n` of a [`RefWeights`].
pub fn ref_box(weights: &RefWeights, n: usize) -> RefBox {
    let (lo, hi) = weights.box_interval(n);
    RefBox {
        index: n,
        lower: Point::new_unchecked(lo, lo),
        upper: Point::new_unchecked(hi, hi),
    }
}

/// Builds the box weights for the staircase permuton.
///
/// `Z` is computed by direct summation to the Euler-Maclaurin switch plus
/// the analytic tail, which carries the integral term of the remainder;
/// the result is accurate to machine precision. The tabulated range ends
/// at the first index where the integral upper bound on the remaining
/// mass drops below `tail_tol * Z`, clamped to the table limits.
pub fn build_ref_weights(beta: f64, gamma: f64, tail_tol: f64) -> Result<RefWeights, DensityError> {
    DensityFamily::RefPermuton { beta, gamma }.validate()?;
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(param_err(format!(
            "tail_tol must lie in (0, 1), got {tail_tol}"
        )));
    }
    let z = tail_sum(beta, gamma, 1);

    // Smallest K with bound(K)/Z <= tail_tol, where bound(K) is the
    // integral upper bound on the mass beyond box K.
    let target = tail_tol * z;
    let k_bound = if tail_integral(beta, gamma, K_CAP as f64) > target {
        K_CAP
    } else if tail_integral(beta, gamma, K_FLOOR as f64) <= target {
        K_FLOOR
    } else {
        let (mut lo, mut hi) = (K_FLOOR, K_CAP);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if tail_integral(beta, gamma, mid as f64) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let k_max = k_bound.clamp(K_FLOOR, K_CAP) as usize;

    let mut u = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        u.push(series_term(beta, gamma, k as f64) / z);
    }
    let mut s = Vec::with_capacity(k_max + 1);
    let mut acc = KahanSum::new();
    s.push(0.0);
    for &uk in &u {
        acc.add(uk);
        s.push(acc.value());
    }
    let mut r = vec![0.0; k_max + 1];
    r[k_max] = tail_sum(beta, gamma, k_max as u64 + 1) / z;
    for n in (0..k_max).rev() {
        r[n] = r[n + 1] + u[n];
    }
    let tail_mass = r[k_max];

    Ok(RefWeights {
        beta,
        gamma,
        z,
        u,
        s,
        r,
        k_max,
        tail_mass,
    })
}

// ---------------------------------------------------------------------------
// Normalizing constants of the continuous families.
// ---------------------------------------------------------------------------

/// Raw total mass of `(u + v)^alpha` over the unit square, in corner
/// coordinates `u = 1 - x`, `v = 1 - y`. Equals
/// `2 (2^(alpha+1) - 1) / ((alpha+1)(alpha+2))`, continuous through
/// `alpha = -1` where it is `2 ln 2 / (alpha + 2)`.
pub(crate) fn corner_radial_total(alpha: f64) -> f64 {
    2.0 * expm1_over(alpha + 1.0, std::f64::consts::LN_2) / (alpha + 2.0)
}

/// 2-D antiderivative of `(u+v)^alpha`, i.e. `M` with
/// `d^2 M / du dv = (u+v)^alpha`; used for rectangle masses.
fn corner_radial_anti(alpha: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if (alpha + 1.0).abs() < 1e-9 {
        // alpha = -1: antiderivative of t^-1 twice is t ln t - t.
        t * (t.ln() - 1.0)
    } else {
        t.powf(alpha + 2.0) / ((alpha + 1.0) * (alpha + 2.0))
    }
}

/// Pinching exponent `q = beta / (beta - 1)`; the density decays along
/// the diagonal distance like `d^-q`.
pub(crate) fn pinch_exponent(beta: f64) -> f64 {
    beta / (beta - 1.0)
}

/// Exponent `c * m * t^-q` of the pinched slice law at diagonal distance
/// `t` and cross-slice half-width `m`, safe at `t = 0`.
fn pinch_rate_exponent(c: f64, q: f64, t: f64, m: f64) -> f64 {
    if t <= 0.0 {
        return f64::INFINITY;
    }
    if m <= 0.0 {
        return 0.0;
    }
    c * m * t.powf(-q)
}

/// Raw total mass of the pinched density: `W = int_0^2
/// (1 - exp(-c min(t, 2-t) t^-q)) dt / c` times `c`, i.e. the reduced
/// 1-D integral after integrating the exact slice law in closed form.
pub(crate) fn corner_pinched_total(beta: f64, c: f64) -> f64 {
    let q = pinch_exponent(beta);
    let g = |t: f64| -(-pinch_rate_exponent(c, q, t, t.min(2.0 - t))).exp() + 1.0;
    let w = adaptive_simpson(&g, 0.0, 1.0, 1e-13) + adaptive_simpson(&g, 1.0, 2.0, 1e-13);
    w / c
}

/// Normalized marginal density of the diagonal distance `T = (1-x)+(1-y)`
/// under the pinched law; bounded on `(0, 2]`.
pub(crate) fn pinched_t_marginal(beta: f64, c: f64, c_f: f64, t: f64) -> f64 {
    let q = pinch_exponent(beta);
    let m = t.min(2.0 - t).max(0.0);
    c_f / c * (-(-pinch_rate_exponent(c, q, t, m)).exp() + 1.0)
}

// ---------------------------------------------------------------------------
// Prepared density: evaluation and rectangle masses.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum DensityState {
    Uniform,
    Ref(RefWeights),
    CornerRadial { alpha: f64, c_f: f64 },
    CornerPinched { c: f64, q: f64, c_f: f64 },
    DiagonalPower { alpha: f64, c_f: f64 },
}

/// A density family with its normalizer (and, for the staircase family,
/// its box weights) computed once.
#[derive(Debug, Clone)]
pub struct Density {
    family: DensityFamily,
    state: DensityState,
}

impl Density {
    pub fn prepare(family: &DensityFamily) -> Result<Self, DensityError> {
        family.validate()?;
        let state = match *family {
            DensityFamily::Uniform => DensityState::Uniform,
            DensityFamily::RefPermuton { beta, gamma } => {
                DensityState::Ref(build_ref_weights(beta, gamma, DEFAULT_TAIL_TOL)?)
            }
            DensityFamily::CornerRadial { alpha } => DensityState::CornerRadial {
                alpha,
                c_f: 1.0 / corner_radial_total(alpha),
            },
            DensityFamily::CornerPinched { beta, c } => DensityState::CornerPinched {
                c,
                q: pinch_exponent(beta),
                c_f: 1.0 / corner_pinched_total(beta, c),
            },
            DensityFamily::DiagonalPower { alpha } => DensityState::DiagonalPower {
                alpha,
                c_f: (alpha + 1.0) * (alpha + 2.0) / 2.0,
            },
        };
        Ok(Self {
            family: *family,
            state,
        })
    }

    pub fn family(&self) -> &DensityFamily {
        &self.family
    }

    /// The staircase box weights, when this is the staircase family.
    pub fn ref_weights(&self) -> Option<&RefWeights> {
        match &self.state {
            DensityState::Ref(w) => Some(w),
            _ => None,
        }
    }

    /// Normalizing constant multiplying the family's raw formula
    /// (1 for the uniform and staircase families).
    pub fn normalizer(&self) -> f64 {
        match &self.state {
            DensityState::Uniform | DensityState::Ref(_) => 1.0,
            DensityState::CornerRadial { c_f, .. } => *c_f,
            DensityState::CornerPinched { c_f, .. } => *c_f,
            DensityState::DiagonalPower { c_f, .. } => *c_f,
        }
    }

    /// Pointwise density value.
    ///
    /// Errors with [`DensityError::SingularPoint`] exactly on the singular
    /// set: `(1, 1)` for the corner families, the diagonal for
    /// `diag-power`, and the corner accumulation point of the staircase.
    /// The singular set has measure zero, so callers treat the error as
    /// "re-draw or skip".
    pub fn eval(&self, p: Point) -> Result<f64, DensityError> {
        let singular = || DensityError::SingularPoint { x: p.x, y: p.y };
        match &self.state {
            DensityState::Uniform => Ok(1.0),
            DensityState::Ref(w) => {
                let kx = ref_box_of(w, p.x).ok_or_else(singular)?;
                let ky = ref_box_of(w, p.y).ok_or_else(singular)?;
                if kx != ky {
                    return Ok(0.0);
                }
                let u = w.u(kx as usize);
                if u <= 0.0 || !u.is_finite() {
                    return Err(singular());
                }
                Ok(1.0 / u)
            }
            DensityState::CornerRadial { alpha, c_f } => {
                let d = (1.0 - p.x) + (1.0 - p.y);
                if d == 0.0 && *alpha < 0.0 {
                    return Err(singular());
                }
                Ok(c_f * d.powf(*alpha))
            }
            DensityState::CornerPinched { c, q, c_f, .. } => {
                let d = (1.0 - p.x) + (1.0 - p.y);
                if d == 0.0 {
                    return Err(singular());
                }
                let dq = d.powf(-q);
                Ok(c_f * dq * (-c * (p.x - p.y).abs() * dq).exp())
            }
            DensityState::DiagonalPower { alpha, c_f } => {
                let z = (p.x - p.y).abs();
                if z == 0.0 {
                    return Err(singular());
                }
                Ok(c_f * z.powf(*alpha))
            }
        }
    }

    /// Exact mass of the axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    ///
    /// Closed forms for every family except the pinched one, which uses
    /// the exact slice law in the diagonal coordinates with 1-D adaptive
    /// quadrature across the diagonal distance.
    pub fn mass_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        debug_assert!(x0 <= x1 && y0 <= y1);
        match &self.state {
            DensityState::Uniform => (x1 - x0) * (y1 - y0),
            DensityState::Ref(w) => ref_mass_rect(w, x0, x1, y0, y1),
            DensityState::CornerRadial { alpha, c_f } => {
                // Corner coordinates u = 1-x, v = 1-y.
                let (u0, u1) = (1.0 - x1, 1.0 - x0);
                let (v0, v1) = (1.0 - y1, 1.0 - y0);
                let m = |t: f64| corner_radial_anti(*alpha, t);
                c_f * (m(u1 + v1) - m(u0 + v1) - m(u1 + v0) + m(u0 + v0))
            }
            DensityState::CornerPinched { c, q, c_f, .. } => {
                pinched_mass_rect(*c, *q, *c_f, x0, x1, y0, y1)
            }
            DensityState::DiagonalPower { alpha, c_f } => {
                let k = |t: f64| -t.abs().powf(alpha + 2.0) / ((alpha + 1.0) * (alpha + 2.0));
                c_f * (k(x1 - y1) - k(x0 - y1) - k(x1 - y0) + k(x0 - y0))
            }
        }
    }
}

/// Convenience: prepare-and-evaluate. Building the staircase weights is
/// not cheap; hold a [`Density`] when evaluating in a loop.
pub fn eval_density(family: &DensityFamily, p: Point) -> Result<f64, DensityError> {
    Density::prepare(family)?.eval(p)
}

/// Box index holding coordinate `x`, or `None` when `x` sits at the
/// corner accumulation point (or past `f64` resolution of the geometry).
/// Boxes are half-open `[S_{k-1}, S_k)` so every coordinate lands in
/// exactly one.
fn ref_box_of(w: &RefWeights, x: f64) -> Option<u64> {
    if x >= 1.0 {
        return None;
    }
    if x < w.s[w.k_max] {
        // partition_point gives the count of S values <= x; S_0 = 0 <= x.
        let k = w.s.partition_point(|&v| v <= x) as u64;
        return Some(k);
    }
    let target = (1.0 - x) * w.z;
    let k = tail_box_index(w.beta, w.gamma, w.k_max as u64 + 1, target);
    if k >= DEGENERATE_INDEX_CAP {
        None
    } else {
        Some(k)
    }
}

fn interval_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn ref_mass_rect(w: &RefWeights, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let mut mass = 0.0;

    // Tabulated boxes overlapping the rectangle: a box must meet the
    // x-range and the y-range separately (a rectangle near the diagonal
    // can clip a box corner even when the two ranges are disjoint), so
    // intersect the per-axis index ranges. Only the extreme indices of
    // that intersection can be partially covered.
    let range_of = |a: f64, b: f64| -> (usize, usize) {
        // Boxes k with S_k > a and S_{k-1} < b.
        let first = w.s.partition_point(|&v| v <= a).max(1);
        let last = w.s.partition_point(|&v| v < b);
        (first, last)
    };
    let (kx0, kx1) = range_of(x0, x1);
    let (ky0, ky1) = range_of(y0, y1);
    let k_from = kx0.max(ky0);
    let k_to = kx1.min(ky1).min(w.k_max);
    if k_from <= k_to && k_from <= w.k_max {
        // Interior boxes of the intersected range lie strictly inside
        // both per-axis ranges, hence inside the rectangle.
        for k in [k_from, k_to] {
            let (b0, b1) = (w.s[k - 1], w.s[k]);
            let u = b1 - b0;
            if u > 0.0 {
                let ox = interval_overlap(b0, b1, x0, x1);
                let oy = interval_overlap(b0, b1, y0, y1);
                mass += ox * oy / u;
            }
        }
        if k_to > k_from + 1 {
            mass += w.s[k_to - 1] - w.s[k_from];
        }
        if k_from == k_to {
            // Single box counted twice above.
            let (b0, b1) = (w.s[k_from - 1], w.s[k_from]);
            let u = b1 - b0;
            if u > 0.0 {
                let ox = interval_overlap(b0, b1, x0, x1);
                let oy = interval_overlap(b0, b1, y0, y1);
                mass -= ox * oy / u;
            }
        }
    }

    // Analytic tail: boxes past the table living in [S_kmax, 1]^2. Their
    // widths are below 1e-8, so treating them as fully on the diagonal
    // interval [lo, hi] (corner clips ignored) is exact to that scale.
    let lo = x0.max(y0);
    let hi = x1.min(y1);
    let tail_lo = w.s[w.k_max];
    if hi > tail_lo && hi > lo {
        let seg_lo = lo.max(tail_lo);
        if hi >= 1.0 && seg_lo <= tail_lo {
            mass += w.tail_mass;
        } else {
            // Fully contained run of tail boxes between the cuts, plus
            // the two straddling boxes handled explicitly.
            let k_a = ref_box_of(w, seg_lo).unwrap_or(DEGENERATE_INDEX_CAP);
            let k_b = if hi >= 1.0 {
                DEGENERATE_INDEX_CAP
            } else {
                ref_box_of(w, hi).unwrap_or(DEGENERATE_INDEX_CAP)
            };
            for k in [k_a, k_b] {
                if k >= DEGENERATE_INDEX_CAP || (k_a == k_b && k == k_b) {
                    continue;
                }
                let (b0, b1) = w.box_interval(k as usize);
                let u = b1 - b0;
                if u > 0.0 {
                    let ox = interval_overlap(b0, b1, x0, x1);
                    let oy = interval_overlap(b0, b1, y0, y1);
                    mass += ox * oy / u;
                }
            }
            if k_a == k_b && k_a < DEGENERATE_INDEX_CAP {
                let (b0, b1) = w.box_interval(k_a as usize);
                let u = b1 - b0;
                if u > 0.0 {
                    let ox = interval_overlap(b0, b1, x0, x1);
                    let oy = interval_overlap(b0, b1, y0, y1);
                    mass += ox * oy / u;
                }
            } else if k_b > k_a + 1 {
                let inner = tail_sum(w.beta, w.gamma, k_a + 1) / w.z
                    - if k_b >= DEGENERATE_INDEX_CAP {
                        0.0
                    } else {
                        tail_sum(w.beta, w.gamma, k_b) / w.z
                    };
                mass += inner.max(0.0);
            }
        }
    }
    mass
}

/// Rectangle mass of the pinched density via the diagonal coordinates
/// `t = (1-x) + (1-y)`, `s = x - y` (Jacobian 1/2): the `s`-slice
/// integral of `exp(-lambda |s|)` is closed form, leaving one adaptive
/// integral over `t`, split at the kink locations of the slice bounds.
fn pinched_mass_rect(c: f64, q: f64, c_f: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let t_lo = 2.0 - x1 - y1;
    let t_hi = 2.0 - x0 - y0;
    if t_hi <= t_lo {
        return 0.0;
    }
    // Antiderivative of exp(-lambda |s|) vanishing at s = 0.
    let phi = |s: f64, lambda: f64| -> f64 {
        if s >= 0.0 {
            (1.0 - (-lambda * s).exp()) / lambda
        } else {
            -(1.0 - (lambda * s).exp()) / lambda
        }
    };
    let integrand = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let s_lo = (2.0 * x0 - 2.0 + t).max(2.0 - t - 2.0 * y1);
        let s_hi = (2.0 * x1 - 2.0 + t).min(2.0 - t - 2.0 * y0);
        if s_hi <= s_lo {
            return 0.0;
        }
        let tq = t.powf(-q);
        let lambda = c * tq;
        0.5 * c_f * tq * (phi(s_hi, lambda) - phi(s_lo, lambda))
    };
    // Kinks where the active slice bounds switch or cross zero.
    let mut cuts = vec![
        t_lo,
        t_hi,
        2.0 - x0 - y1,
        2.0 - x1 - y0,
        2.0 - 2.0 * x0,
        2.0 - 2.0 * x1,
        2.0 - 2.0 * y0,
        2.0 - 2.0 * y1,
    ];
    cuts.retain(|t| *t > t_lo && *t < t_hi);
    cuts.push(t_lo);
    cuts.push(t_hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut mass = 0.0;
    for w in cuts.windows(2) {
        mass += adaptive_simpson(&integrand, w[0], w[1], 1e-12);
    }
    mass
}

// ---------------------------------------------------------------------------
// Diagonal grid-box mass.
// ---------------------------------------------------------------------------

/// Normalized mass of the diagonal grid box `[(k-1)/b, k/b]^2` under
/// `diag-power:alpha=A`; equal to `b^-(alpha+2)` for every `k` by
/// translation invariance along the diagonal.
pub fn box_mass_diag_power(alpha: f64, b: u64, k: u64) -> Result<f64, DensityError> {
    DensityFamily::DiagonalPower { alpha }.validate()?;
    if b == 0 || k == 0 || k > b {
        return Err(param_err(format!(
            "diagonal box requires 1 <= k <= b, got k={k}, b={b}"
        )));
    }
    Ok((b as f64).powf(-(alpha + 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn family_grammar_round_trip() {
        for text in [
            "uniform",
            "ref:beta=1.5,gamma=0",
            "ref:beta=2,gamma=1",
            "corner-radial:alpha=-1",
            "corner-pinched:beta=1.5,c=1",
            "diag-power:alpha=-0.5",
        ] {
            let family: DensityFamily = text.parse().unwrap();
            let shown = family.to_string();
            let back: DensityFamily = shown.parse().unwrap();
            assert_eq!(family, back, "{text} -> {shown}");
        }
    }

    #[test]
    fn family_grammar_rejects_bad_input() {
        assert!("ref".parse::<DensityFamily>().is_err());
        assert!("ref:beta=0.5".parse::<DensityFamily>().is_err());
        assert!("ref:beta=1.5,gamma=-1".parse::<DensityFamily>().is_err());
        assert!("corner-radial:alpha=-2".parse::<DensityFamily>().is_err());
        assert!("corner-pinched:beta=2,c=1".parse::<DensityFamily>().is_err());
        assert!("corner-pinched:beta=1.5,c=0".parse::<DensityFamily>().is_err());
        assert!("diag-power:alpha=0".parse::<DensityFamily>().is_err());
        assert!("diag-power:alpha=-1".parse::<DensityFamily>().is_err());
        assert!("diag-power:alpha=-0.5,beta=1".parse::<DensityFamily>().is_err());
        assert!("nope:alpha=1".parse::<DensityFamily>().is_err());
    }

    #[test]
    fn ref_weights_zeta_two() {
        // Z for beta=2, gamma=0 is zeta(2); summation + analytic tail
        // reproduces it to machine precision.
        let w = build_ref_weights(2.0, 0.0, 1e-12).unwrap();
        assert_relative_eq!(w.z, std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-12);
        assert_relative_eq!(w.u(1), 0.6079271018540266, epsilon = 1e-12);
    }

    #[test]
    fn ref_weights_zeta_three_meets_tolerance() {
        let w = build_ref_weights(3.0, 0.0, 1e-12).unwrap();
        assert_relative_eq!(w.z, 1.2020569031595943, epsilon = 1e-12);
        // Feasible within the table cap, so the bound actually holds.
        assert!(w.tail_mass < 1e-12, "tail_mass = {}", w.tail_mass);
    }

    #[test]
    fn ref_weights_sum_to_one() {
        for (beta, gamma) in [(1.5, 0.0), (2.0, 0.0), (2.0, 1.0), (3.0, 0.5)] {
            let w = build_ref_weights(beta, gamma, 1e-9).unwrap();
            assert_relative_eq!(w.r(0), 1.0, epsilon = 1e-12);
            for n in [0usize, 1, 7, w.k_max / 2, w.k_max] {
                assert_relative_eq!(w.s(n) + w.r(n), 1.0, epsilon = 1e-12);
            }
            // Strictly positive masses, decreasing for gamma = 0.
            assert!(w.masses().iter().all(|&u| u > 0.0));
            if gamma == 0.0 {
                assert!(w.masses().windows(2).all(|p| p[1] < p[0]));
            }
        }
    }

    #[test]
    fn ref_tail_matches_asymptotic_band() {
        // beta=1.5, gamma=0 at n=1e4: tail over n^(1-beta)/(beta-1) within 1%.
        let t = ref_tail_exact(1.5, 0.0, 10_001).unwrap();
        let a = tail_asymptotic(1.5, 0.0, 10_000);
        let ratio = t / a;
        assert!((0.99..=1.01).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn tail_em_consistent_with_direct_summation() {
        // Seam check: direct sum across the switch equals the analytic tail.
        for (beta, gamma) in [(1.5, 0.0), (2.0, 1.0), (3.0, 0.7)] {
            let n = DIRECT_LIMIT - 317;
            let direct: f64 = (n..DIRECT_LIMIT + 50_000)
                .map(|k| series_term(beta, gamma, k as f64))
                .sum::<f64>()
                + tail_sum(beta, gamma, DIRECT_LIMIT + 50_000);
            let em = tail_sum(beta, gamma, n);
            assert_relative_eq!(direct, em, epsilon = 1e-11);
        }
    }

    #[test]
    fn tail_asymptotic_examples() {
        assert_relative_eq!(tail_asymptotic(2.0, 0.0, 1000), 0.001, epsilon = 1e-15);
        assert_relative_eq!(tail_asymptotic(1.5, 0.0, 1_000_000), 0.002, epsilon = 1e-15);
        assert_relative_eq!(
            tail_asymptotic(1.5, 1.0, 10_000),
            0.18420680743952367,
            epsilon = 1e-12
        );
    }

    #[test]
    fn eval_uniform_and_ref() {
        let d = Density::prepare(&DensityFamily::Uniform).unwrap();
        assert_eq!(d.eval(Point::new(0.3, 0.9).unwrap()).unwrap(), 1.0);

        let fam = DensityFamily::ref_permuton(2.0, 0.0).unwrap();
        let d = Density::prepare(&fam).unwrap();
        let w = d.ref_weights().unwrap();
        let u1 = w.u(1);
        // Interior of box 1.
        let v = d.eval(Point::new(0.1, 0.2).unwrap()).unwrap();
        assert_relative_eq!(v, 1.0 / u1, epsilon = 1e-12);
        // Off-diagonal region outside every box.
        let v = d.eval(Point::new(0.1, 0.9).unwrap()).unwrap();
        assert_eq!(v, 0.0);
        // Corner accumulation point is singular.
        assert!(d.eval(Point::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn eval_diag_power_example() {
        let fam = DensityFamily::diagonal_power(-0.5).unwrap();
        let d = Density::prepare(&fam).unwrap();
        assert_relative_eq!(d.normalizer(), 0.375, epsilon = 1e-15);
        let v = d.eval(Point::new(0.5, 0.25).unwrap()).unwrap();
        assert_relative_eq!(v, 0.75, epsilon = 1e-12);
        assert!(matches!(
            d.eval(Point::new(0.4, 0.4).unwrap()),
            Err(DensityError::SingularPoint { .. })
        ));
    }

    #[test]
    fn eval_corner_families_singularities() {
        let d = Density::prepare(&DensityFamily::corner_radial(-1.0).unwrap()).unwrap();
        assert!(d.eval(Point::new(1.0, 1.0).unwrap()).is_err());
        assert!(d.eval(Point::new(0.5, 0.5).unwrap()).unwrap() > 0.0);
        let d = Density::prepare(&DensityFamily::corner_pinched(1.5, 1.0).unwrap()).unwrap();
        assert!(d.eval(Point::new(1.0, 1.0).unwrap()).is_err());
        assert!(d.eval(Point::new(0.99, 0.99).unwrap()).unwrap() > 0.0);
    }

    #[test]
    fn corner_radial_normalizer_closed_form() {
        assert_relative_eq!(
            corner_radial_total(-1.0),
            2.0 * std::f64::consts::LN_2,
            epsilon = 1e-14
        );
        assert_relative_eq!(corner_radial_total(0.0), 1.0, epsilon = 1e-14);
        // alpha=-0.5: 2(2^0.5 - 1)/(0.5 * 1.5)
        assert_relative_eq!(
            corner_radial_total(-0.5),
            2.0 * (2f64.sqrt() - 1.0) / 0.75,
            epsilon = 1e-14
        );
    }

    #[test]
    fn box_mass_diag_power_examples() {
        assert_relative_eq!(
            box_mass_diag_power(-0.5, 2, 1).unwrap(),
            2f64.powf(-1.5),
            epsilon = 1e-15
        );
        assert_relative_eq!(box_mass_diag_power(-0.5, 1, 1).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            box_mass_diag_power(-0.9, 10, 3).unwrap(),
            10f64.powf(-1.1),
            epsilon = 1e-15
        );
        // Independent of k.
        for k in 1..=7 {
            assert_eq!(
                box_mass_diag_power(-0.3, 7, k).unwrap(),
                box_mass_diag_power(-0.3, 7, 1).unwrap()
            );
        }
        assert!(box_mass_diag_power(-0.5, 3, 4).is_err());
        assert!(box_mass_diag_power(-1.5, 3, 1).is_err());
    }

    #[test]
    fn diag_power_box_mass_matches_mass_rect() {
        let d = Density::prepare(&DensityFamily::diagonal_power(-0.5).unwrap()).unwrap();
        for (b, k) in [(2u64, 1u64), (5, 3), (10, 10)] {
            let lo = (k - 1) as f64 / b as f64;
            let hi = k as f64 / b as f64;
            assert_relative_eq!(
                d.mass_rect(lo, hi, lo, hi),
                box_mass_diag_power(-0.5, b, k).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn total_mass_is_one_for_every_family() {
        let families = [
            DensityFamily::Uniform,
            DensityFamily::ref_permuton(2.0, 0.0).unwrap(),
            DensityFamily::ref_permuton(1.5, 0.0).unwrap(),
            DensityFamily::ref_permuton(2.5, 1.0).unwrap(),
            DensityFamily::corner_radial(-1.0).unwrap(),
            DensityFamily::corner_radial(-1.7).unwrap(),
            DensityFamily::corner_pinched(1.5, 1.0).unwrap(),
            DensityFamily::diagonal_power(-0.5).unwrap(),
            DensityFamily::diagonal_power(-0.9).unwrap(),
        ];
        for f in families {
            let d = Density::prepare(&f).unwrap();
            let total = d.mass_rect(0.0, 1.0, 0.0, 1.0);
            assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn ref_mass_rect_splits_add_up() {
        let d = Density::prepare(&DensityFamily::ref_permuton(1.5, 0.0).unwrap()).unwrap();
        // Partition of the square along both axes must sum to the total.
        let cuts = [0.0, 0.31, 0.62, 0.9999, 1.0];
        let mut total = 0.0;
        for i in 0..cuts.len() - 1 {
            for j in 0..cuts.len() - 1 {
                total += d.mass_rect(cuts[i], cuts[i + 1], cuts[j], cuts[j + 1]);
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pinched_mass_rect_additivity() {
        let d = Density::prepare(&DensityFamily::corner_pinched(1.5, 1.0).unwrap()).unwrap();
        let whole = d.mass_rect(0.2, 0.9, 0.4, 1.0);
        let split = d.mass_rect(0.2, 0.55, 0.4, 1.0) + d.mass_rect(0.55, 0.9, 0.4, 1.0);
        assert_relative_eq!(whole, split, epsilon = 1e-10);
    }

    #[test]
    fn ref_box_geometry() {
        let w = build_ref_weights(2.0, 0.0, 1e-9).unwrap();
        let b1 = ref_box(&w, 1);
        assert_eq!(b1.lower.x, 0.0);
        assert_relative_eq!(b1.upper.x, w.u(1), epsilon = 1e-15);
        let b2 = ref_box(&w, 2);
        assert_relative_eq!(b2.lower.x, w.s(1), epsilon = 1e-15);
        assert!(b2.upper.x > b2.lower.x);
        // Beyond the table the geometry is still monotone.
        let bt = ref_box(&w, w.k_max + 5);
        assert!(bt.lower.x < bt.upper.x);
        assert!(bt.lower.x > 0.999);
    }

    #[test]
    fn build_rejects_bad_parameters() {
        assert!(build_ref_weights(1.0, 0.0, 1e-9).is_err());
        assert!(build_ref_weights(2.0, -0.1, 1e-9).is_err());
        assert!(build_ref_weights(2.0, 0.0, 0.0).is_err());
        assert!(build_ref_weights(2.0, 0.0, 1.5).is_err());
    }
}
