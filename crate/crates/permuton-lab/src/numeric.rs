//! Internal numeric helpers shared across modules.

/// Kahan compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
///
/// The integrand must be finite on the closed interval. Recursion stops
/// when the local Richardson error estimate drops below the local error
/// budget or the depth cap is hit; the cap keeps mildly singular
/// endpoint behavior from recursing forever while still resolving it to
/// roughly the requested tolerance.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if depth == 0 || !err.is_finite() || err.abs() <= 15.0 * tol {
        return left + right + err / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `(exp(eps * x) - 1) / eps`, continuous through `eps = 0` where it is `x`.
pub(crate) fn expm1_over(eps: f64, x: f64) -> f64 {
    if eps.abs() < 1e-12 {
        x
    } else {
        (eps * x).exp_m1() / eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12);
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn simpson_integrable_endpoint_singularity() {
        // int_0^1 x^{-1/2} dx = 2; the integrand is clipped at the endpoint.
        let v = adaptive_simpson(&|x: f64| x.max(1e-300).powf(-0.5), 1e-18, 1.0, 1e-10);
        assert_relative_eq!(v, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn kahan_beats_naive_on_small_terms() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..10_000_000 {
            k.add(1e-16);
        }
        assert_relative_eq!(k.value(), 1.0 + 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn expm1_over_matches_limit() {
        assert_relative_eq!(expm1_over(0.0, 3.5), 3.5);
        assert_relative_eq!(expm1_over(1e-9, 3.5), 3.5, epsilon = 1e-8);
        assert_relative_eq!(expm1_over(0.5, 2.0), (1.0f64.exp() - 1.0) / 0.5, epsilon = 1e-14);
    }
}
