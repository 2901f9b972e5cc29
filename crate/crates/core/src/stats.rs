//! Gaussian and binomial statistics used by the certification formulas.

use crate::error::{domain, Error, Result};
use core::f64::consts::{PI, SQRT_2};

/// Probability clamp applied whenever the inverse CDF sees a Monte-Carlo estimate.
pub const PROB_EPS: f64 = 1e-4;

/// Parameters of the two-stage certification protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    /// Failure probability of the lower confidence bound.
    pub alpha: f64,
    /// Samples used to select the top class.
    pub n0: usize,
    /// Samples used to estimate the top-class probability.
    pub n: usize,
}

impl ConfidenceParams {
    pub fn new(alpha: f64, n0: usize, n: usize) -> Result<Self> {
        let p = Self { alpha, n0, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(alloc::format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.n0 == 0 || self.n == 0 {
            return Err(Error::Config("n0 and n must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self { alpha: 0.001, n0: 100, n: 10_000 }
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Standard normal CDF, evaluated through `erfc` so both tails keep relative accuracy.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

// Acklam's rational approximation; relative error about 1.15e-9 before refinement.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

fn acklam(p: f64) -> f64 {
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Inverse of the standard normal CDF.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(alloc::format!("quantile needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail so the residual is computed without cancellation.
    let (q, sign) = if p > 0.5 { (1.0 - p, -1.0) } else { (p, 1.0) };
    let mut x = acklam(q);
    let dens = std_normal_pdf(x);
    if dens > 0.0 {
        x -= (std_normal_cdf(x) - q) / dens;
    }
    Ok(sign * x)
}

/// `min(max(p, eps), 1 - eps)`.
pub fn clamp_probability(p: f64, eps: f64) -> f64 {
    p.max(eps).min(1.0 - eps)
}

/// True when `clamp_probability` leaves `p` unchanged (the clamp has unit derivative there).
pub fn is_unclamped(p: f64, eps: f64) -> bool {
    p > eps && p < 1.0 - eps
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = libm::exp(a * libm::log(x) + b * libm::log1p(-x) - ln_beta(a, b));
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

/// One-sided Clopper–Pearson lower bound at level `1 - alpha`.
///
/// This is the `alpha` quantile of `Beta(successes, trials - successes + 1)`.
pub fn clopper_pearson_lower(successes: u64, trials: u64, alpha: f64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(domain(alloc::format!(
            "need 0 <= successes <= trials and trials > 0, got {successes}/{trials}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(alloc::format!("alpha must be in (0,1), got {alpha}")));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    let a = successes as f64;
    let b = (trials - successes) as f64 + 1.0;
    if successes == trials {
        return Ok(libm::pow(alpha, 1.0 / a));
    }
    // I_x(a,b) is increasing in x; bisect to machine precision.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if regularized_inc_beta(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Composite Simpson on [-12, x] of the Gaussian density.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let a = -12.0;
        let n = 200_000;
        let h = (x - a) / n as f64;
        let mut s = std_normal_pdf(a) + std_normal_pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * std_normal_pdf(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    // Binomial upper tail P[X >= k] for X ~ Bin(n, p), summed directly.
    fn binom_upper_tail(k: u64, n: u64, p: f64) -> f64 {
        let mut total = 0.0;
        for j in k..=n {
            let ln_choose = libm::lgamma(n as f64 + 1.0)
                - libm::lgamma(j as f64 + 1.0)
                - libm::lgamma((n - j) as f64 + 1.0);
            total += libm::exp(ln_choose + j as f64 * libm::log(p) + (n - j) as f64 * libm::log1p(-p));
        }
        total
    }

    #[test]
    fn cdf_symmetry_and_center() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        for x in [0.5, 1.0, 2.0] {
            assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cdf_matches_quadrature() {
        let oracle = cdf_by_quadrature(1.959964);
        assert!((oracle - 0.975).abs() < 1e-6);
        assert!((std_normal_cdf(1.959964) - oracle).abs() < 1e-10);
    }

    #[test]
    fn quantile_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        let q = std_normal_quantile(0.99).unwrap();
        assert!((q - bisect_quantile(0.99)).abs() < 1e-12);
        assert!((q - 2.326348).abs() < 1e-5);
        for p in [1e-6, 0.01, 0.2, 0.4] {
            let a = std_normal_quantile(p).unwrap();
            let b = std_normal_quantile(1.0 - p).unwrap();
            assert!((a + b).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn quantile_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(std_normal_quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantile_inverts_cdf_on_grid() {
        let mut p = 1e-6;
        while p < 1.0 - 1e-6 {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() < 1e-9, "p={p}");
            p += 0.001;
        }
    }

    #[test]
    fn pdf_values() {
        assert!((std_normal_pdf(0.0) - 0.398_942_3).abs() < 1e-6);
        assert_eq!(std_normal_pdf(1.3), std_normal_pdf(-1.3));
        let h = 1e-5;
        let mut x = -5.0;
        while x <= 5.0 {
            let fd = (std_normal_cdf(x + h) - std_normal_cdf(x - h)) / (2.0 * h);
            assert!((fd - std_normal_pdf(x)).abs() < 1e-6, "x={x}");
            x += 0.25;
        }
    }

    #[test]
    fn clopper_pearson_edges() {
        assert_eq!(clopper_pearson_lower(0, 100, 0.001).unwrap(), 0.0);
        let all = clopper_pearson_lower(100, 100, 0.001).unwrap();
        assert!((all - 0.93325).abs() < 1e-4);
        assert!(clopper_pearson_lower(5, 4, 0.1).is_err());
        assert!(clopper_pearson_lower(0, 0, 0.1).is_err());
        assert!(clopper_pearson_lower(3, 4, 1.0).is_err());
    }

    #[test]
    fn clopper_pearson_matches_binomial_tail() {
        // At the bound p_lo the probability of seeing >= k successes is exactly alpha.
        for &(k, n, alpha) in &[(1u64, 10u64, 0.05), (37, 50, 0.001), (73, 100, 0.01), (990, 1000, 0.001)] {
            let lo = clopper_pearson_lower(k, n, alpha).unwrap();
            let tail = binom_upper_tail(k, n, lo);
            assert!((tail - alpha).abs() < 1e-9 * (1.0 + alpha) + 1e-12, "k={k} n={n}: tail {tail}");
        }
    }

    #[test]
    fn clopper_pearson_monotone_and_below_mle() {
        for &alpha in &[0.001, 0.05, 0.3] {
            let mut prev = -1.0;
            for k in 0..=100u64 {
                let b = clopper_pearson_lower(k, 100, alpha).unwrap();
                assert!(b >= prev);
                assert!(b <= k as f64 / 100.0 + 1e-15);
                prev = b;
            }
        }
    }

    #[test]
    fn clamp() {
        assert_eq!(clamp_probability(1.0, 1e-4), 0.9999);
        assert_eq!(clamp_probability(0.5, 1e-4), 0.5);
        assert_eq!(clamp_probability(0.0, 1e-4), 1e-4);
    }

    #[test]
    fn confidence_params_validation() {
        assert!(ConfidenceParams::new(0.001, 100, 1000).is_ok());
        assert!(ConfidenceParams::new(0.0, 100, 1000).is_err());
        assert!(ConfidenceParams::new(0.1, 0, 1000).is_err());
    }
}
