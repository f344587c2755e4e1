//! Special functions and closed-form Gaussian moments.
//!
//! Everything the certified bounds rest on reduces to truncated-Gaussian
//! monomial moments, evaluated here with the three-term recursion
//!
//! ```text
//! m_k = (k-1) σ² m_{k-2} + μ m_{k-1} - σ (b^{k-1} φ(β) - a^{k-1} φ(α)) / (Φ(β) - Φ(α))
//! ```
//!
//! with `m_{-1} = 0`, `m_0 = 1` and `α = (a-μ)/σ`, `β = (b-μ)/σ`. The ratios
//! `φ(·)/(Φ(β)-Φ(α))` are computed from tail probabilities (`erfc`), and from
//! the scaled complementary error function once both standardized endpoints
//! sit beyond [`TAIL_SWITCH`] on the same side of the mean.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::envelope::UnnormGaussian;
use crate::error::{Error, Result};

/// `1/√(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standardized endpoint magnitude beyond which the scaled (`erfcx`) path is used.
pub const TAIL_SWITCH: f64 = 8.0;

/// Location/scale of a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "Gaussian needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }
}

/// A (possibly unbounded) interval of the real line with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn real_line() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Φ(x)`, evaluated as `erfc(-x/√2)/2` so the lower tail keeps relative accuracy.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)`.
pub fn std_normal_sf(x: f64) -> f64 {
    std_normal_cdf(-x)
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        if x < -26.7 {
            return f64::INFINITY;
        }
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 5.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    if x > 1e8 {
        return 1.0 / (x * PI.sqrt());
    }
    // Continued fraction erfcx(x) = (1/√π) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
    // evaluated bottom-up; 60 levels reach full precision for x >= 5.
    let mut tail = x;
    for n in (1..=60).rev() {
        tail = x + (n as f64 * 0.5) / tail;
    }
    1.0 / (PI.sqrt() * tail)
}

/// Standard normal quantile: rational initializer refined by one Newton step.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1).
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x0 = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let pdf = std_normal_pdf(x0);
    if pdf > 0.0 {
        x0 - (std_normal_cdf(x0) - p) / pdf
    } else {
        x0
    }
}

/// Raw moment `E[X^k]` of `N(μ, σ²)`.
pub fn gaussian_moment(k: u32, params: GaussianParams) -> f64 {
    let (mu, s2) = (params.mu, params.sigma * params.sigma);
    let mut total = 0.0;
    let mut binom = 1.0; // C(k, 2j)
    let mut dfact = 1.0; // (2j-1)!!
    for j in 0..=(k / 2) {
        if j > 0 {
            let (kf, jf) = (k as f64, j as f64);
            binom *= (kf - 2.0 * jf + 2.0) * (kf - 2.0 * jf + 1.0) / ((2.0 * jf - 1.0) * (2.0 * jf));
            dfact *= 2.0 * jf - 1.0;
        }
        total += binom * mu.powi((k - 2 * j) as i32) * s2.powi(j as i32) * dfact;
    }
    total
}

/// Mass of the standardized interval `[alpha, beta]` together with the boundary
/// ratios `φ(alpha)/mass` and `φ(beta)/mass`. `ln_mass` stays finite where
/// `mass` underflows.
#[derive(Debug, Clone, Copy)]
pub struct Truncation {
    pub mass: f64,
    pub ln_mass: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
}

/// Gaussian mass of `[alpha, beta]` and boundary ratios, stable in both tails.
pub fn truncation(alpha: f64, beta: f64) -> Truncation {
    if beta <= 0.0 {
        // Mirror into the right tail.
        let t = truncation(-beta, -alpha);
        return Truncation { ratio_lo: t.ratio_hi, ratio_hi: t.ratio_lo, ..t };
    }
    if alpha >= 0.0 {
        if alpha > TAIL_SWITCH {
            let sa = erfcx(alpha * FRAC_1_SQRT_2);
            let decay = if beta.is_finite() { (-(beta - alpha) * (beta + alpha) * 0.5).exp() } else { 0.0 };
            let sb = if beta.is_finite() { erfcx(beta * FRAC_1_SQRT_2) * decay } else { 0.0 };
            let s = sa - sb;
            let ratio_lo = (2.0 / PI).sqrt() / s;
            let ln_mass = (0.5 * s).ln() - 0.5 * alpha * alpha;
            return Truncation { mass: ln_mass.exp(), ln_mass, ratio_lo, ratio_hi: ratio_lo * decay };
        }
        let mass = std_normal_sf(alpha) - std_normal_sf(beta);
        return with_ratios(mass, alpha, beta);
    }
    let mass = std_normal_cdf(beta) - std_normal_cdf(alpha);
    with_ratios(mass, alpha, beta)
}

fn with_ratios(mass: f64, alpha: f64, beta: f64) -> Truncation {
    let pdf = |z: f64| if z.is_finite() { std_normal_pdf(z) } else { 0.0 };
    Truncation { mass, ln_mass: mass.ln(), ratio_lo: pdf(alpha) / mass, ratio_hi: pdf(beta) / mass }
}

/// Conditional moment `E[X^k | X ∈ iv]` for `X ~ N(μ, σ²)`; `k = -1` yields 0.
pub fn truncated_moment(k: i32, params: GaussianParams, iv: Interval) -> Result<f64> {
    let (_, m) = truncated_moment_with_mass(k, params, iv)?;
    Ok(m)
}

fn truncated_moment_with_mass(k: i32, params: GaussianParams, iv: Interval) -> Result<(f64, f64)> {
    if k < -1 {
        return Err(Error::Domain(format!("moment order must be >= -1, got {k}")));
    }
    let GaussianParams { mu, sigma } = params;
    let alpha = (iv.lo - mu) / sigma;
    let beta = (iv.hi - mu) / sigma;
    let tr = truncation(alpha, beta);
    if !(tr.ln_mass > f64::NEG_INFINITY && tr.ratio_lo.is_finite() && tr.ratio_hi.is_finite()) {
        return Err(Error::DegenerateMass { lo: iv.lo, hi: iv.hi });
    }
    if k == -1 {
        return Ok((tr.ln_mass, 0.0));
    }
    let s2 = sigma * sigma;
    // Boundary terms with an infinite endpoint vanish.
    let lo_term = if iv.lo.is_finite() { tr.ratio_lo } else { 0.0 };
    let hi_term = if iv.hi.is_finite() { tr.ratio_hi } else { 0.0 };
    let (mut m_prev2, mut m_prev) = (0.0_f64, 1.0_f64);
    let (mut a_pow, mut b_pow) = (1.0_f64, 1.0_f64);
    for j in 1..=k {
        let boundary = b_pow * hi_term - a_pow * lo_term;
        let m = (j - 1) as f64 * s2 * m_prev2 + mu * m_prev - sigma * boundary;
        m_prev2 = m_prev;
        m_prev = m;
        if iv.lo.is_finite() {
            a_pow *= iv.lo;
        }
        if iv.hi.is_finite() {
            b_pow *= iv.hi;
        }
    }
    Ok((tr.ln_mass, m_prev))
}

/// `∫_iv x^k · C g(x; μ, σ) dx`; a piece without representable mass contributes 0.
/// `C` and the mass are combined in log space, so a huge `C` over a far tail
/// still yields a finite product.
pub fn partial_moment(k: u32, g: &UnnormGaussian, iv: Interval) -> f64 {
    match truncated_moment_with_mass(k as i32, g.params(), iv) {
        Ok((ln_mass, m)) => (g.ln_scale() + ln_mass).exp() * m,
        Err(_) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn pdf_values() {
        assert_eq!(std_normal_pdf(0.0), 0.3989422804014327);
        assert_eq!(std_normal_pdf(1.7), std_normal_pdf(-1.7));
        let far = std_normal_pdf(40.0);
        assert!(far.is_finite() && far < 1e-300);
    }

    #[test]
    fn cdf_limits_and_symmetry() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
        for &x in &[0.3, 1.0, 2.5, 5.0] {
            assert!((std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() < 1e-15);
        }
    }

    /// Asymptotic Mills-ratio series `Φ(-x) ≈ φ(x)/x Σ (-1)^n (2n-1)!!/x^{2n}`.
    fn mills_lower_tail(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 0..30 {
            sum += term;
            term *= -((2 * n + 1) as f64) / (x * x);
        }
        std_normal_pdf(x) / x * sum
    }

    #[test]
    fn cdf_deep_lower_tail_relative_accuracy() {
        let oracle = mills_lower_tail(10.0);
        assert!(rel(oracle, 7.6198530241605e-24) < 1e-10);
        assert!(rel(std_normal_cdf(-10.0), oracle) < 1e-10);
        assert!(rel(std_normal_cdf(-20.0), mills_lower_tail(20.0)) < 1e-10);
    }

    #[test]
    fn erfcx_matches_direct_and_asymptotic() {
        for &x in &[0.0_f64, 0.5, 2.0, 4.9, 5.1, 8.0, 20.0] {
            if x < 20.0 {
                let direct = (x * x).exp() * libm::erfc(x);
                assert!(rel(erfcx(x), direct) < 1e-13, "x={x}");
            }
        }
        // erfcx(x) ~ 1/(x√π) (1 - 1/(2x²) + 3/(4x⁴))
        let x = 1e3;
        let asym = 1.0 / (x * PI.sqrt()) * (1.0 - 0.5 / (x * x) + 0.75 / x.powi(4));
        assert!(rel(erfcx(x), asym) < 1e-14);
        assert!(rel(erfcx(-1.0), 2.0 * 1f64.exp() - erfcx(1.0)) < 1e-15);
    }

    #[test]
    fn inv_cdf_examples() {
        assert_eq!(std_normal_inv_cdf(0.5).unwrap(), 0.0);
        for &p in &[1e-12, 5e-7, 0.01, 0.3] {
            let lo = std_normal_inv_cdf(p).unwrap();
            let hi = std_normal_inv_cdf(1.0 - p).unwrap();
            // 1 - p is rounded; compare against the quantile of the represented complement.
            let mirrored = std_normal_inv_cdf(1.0 - (1.0 - p)).unwrap();
            assert_eq!(hi, -mirrored);
            assert!((lo + hi).abs() < 1e-9 * lo.abs().max(1.0) + (1.0 - (1.0 - p) - p).abs() / std_normal_pdf(lo));
            assert!(rel(std_normal_cdf(lo), p) < 1e-9);
        }
        assert!(std_normal_inv_cdf(0.0).is_err());
        assert!(std_normal_inv_cdf(1.0).is_err());
        assert!(std_normal_inv_cdf(f64::NAN).is_err());
    }

    #[test]
    fn inv_cdf_matches_bisection_oracle() {
        let p = 5e-7;
        let (mut lo, mut hi) = (-10.0_f64, 0.0_f64);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - (-4.891638)).abs() < 1e-6);
        assert!((std_normal_inv_cdf(p).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn gaussian_moment_examples() {
        let p = GaussianParams::new(0.7, 1.3).unwrap();
        assert_eq!(gaussian_moment(0, p), 1.0);
        assert!(rel(gaussian_moment(1, p), 0.7) < 1e-15);
        let c = GaussianParams::new(0.0, 1.5).unwrap();
        assert!(rel(gaussian_moment(2, c), 2.25) < 1e-15);
        assert!(rel(gaussian_moment(4, c), 3.0 * 1.5f64.powi(4)) < 1e-15);
        assert_eq!(gaussian_moment(3, c), 0.0);
        // E[(1+2Z)^3] = 1 + 3·4·1 = 13
        assert!(rel(gaussian_moment(3, GaussianParams::new(1.0, 2.0).unwrap()), 13.0) < 1e-15);
    }

    #[test]
    fn truncated_moment_examples() {
        let std = GaussianParams::standard();
        let iv = Interval::new(-1.7, 2.9).unwrap();
        assert_eq!(truncated_moment(0, GaussianParams::new(3.0, 0.2).unwrap(), iv).unwrap(), 1.0);
        assert_eq!(truncated_moment(-1, std, iv).unwrap(), 0.0);
        let sym = Interval::new(-2.0, 2.0).unwrap();
        assert!(truncated_moment(1, std, sym).unwrap().abs() < 1e-16);
        let half = Interval::new(0.0, f64::INFINITY).unwrap();
        assert!(rel(truncated_moment(2, std, half).unwrap(), 1.0) < 1e-14);
        // ∫_0^1 x² φ = Φ(1) - 1/2 - φ(1); divided by Φ(1) - 1/2.
        let unit = Interval::new(0.0, 1.0).unwrap();
        let num = std_normal_cdf(1.0) - 0.5 - std_normal_pdf(1.0);
        let den = std_normal_cdf(1.0) - 0.5;
        let m2 = truncated_moment(2, std, unit).unwrap();
        assert!(rel(m2, num / den) < 1e-13);
        assert!((m2 - 0.291_125_094_8).abs() < 1e-9);
    }

    #[test]
    fn full_line_matches_closed_form() {
        let p = GaussianParams::new(-1.3, 0.8).unwrap();
        for k in 0..=8 {
            let t = truncated_moment(k, p, Interval::real_line()).unwrap();
            let g = gaussian_moment(k as u32, p);
            assert!((t - g).abs() <= 1e-12 * g.abs().max(1e-300), "k={k}: {t} vs {g}");
        }
    }

    #[test]
    fn degenerate_mass_is_reported() {
        let p = GaussianParams::standard();
        let empty = Interval { lo: 3.0, hi: 3.0 };
        assert!(matches!(truncated_moment(1, p, empty), Err(Error::DegenerateMass { .. })));
        // Mass underflows but the conditional mean is still about a + 1/a.
        let far = Interval::new(60.0, 61.0).unwrap();
        let m = truncated_moment(1, p, far).unwrap();
        assert!((m - 60.016_6).abs() < 1e-3, "{m}");
        let g = UnnormGaussian::new(1.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(partial_moment(2, &g, far), 0.0);
    }

    #[test]
    fn huge_scale_over_far_tail() {
        // ln C g peaks at 1250 at x = 0, so C g(50) = 1.
        let g = UnnormGaussian::from_ln_peak(1250.0, 0.0, 1.0, 0.0).unwrap();
        let iv = Interval::new(50.0, 51.0).unwrap();
        let f = |x: f64| (1250.0 - 0.5 * x * x).exp();
        for k in 0..5u32 {
            let quad = crate::oracle::integrate(|x| x.powi(k as i32) * f(x), iv, 1e-13, 1e-300).unwrap().value;
            let v = partial_moment(k, &g, iv);
            assert!(rel(v, quad) < 1e-11, "k={k}: {v} vs {quad}");
        }
    }

    #[test]
    fn tail_path_matches_direct_path_near_switch() {
        // Just inside and just outside the scaled regime must agree.
        let p = GaussianParams::standard();
        let a = Interval::new(8.0 - 1e-9, 9.0).unwrap();
        let b = Interval::new(8.0 + 1e-9, 9.0).unwrap();
        for k in 0..5 {
            let ma = truncated_moment(k, p, a).unwrap();
            let mb = truncated_moment(k, p, b).unwrap();
            assert!(rel(ma, mb) < 1e-8, "k={k}: {ma} vs {mb}");
        }
        // Mirror symmetry of the scaled path.
        let left = Interval::new(-12.0, -10.0).unwrap();
        let right = Interval::new(10.0, 12.0).unwrap();
        for k in 0..5 {
            let ml = truncated_moment(k, p, left).unwrap();
            let mr = truncated_moment(k, p, right).unwrap();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!(rel(ml, sign * mr) < 1e-13);
        }
    }

    #[test]
    fn partial_moment_examples() {
        let unit = UnnormGaussian::new(1.0, 0.0, 1.0, 0.0).unwrap();
        assert!(rel(partial_moment(0, &unit, Interval::real_line()), 1.0) < 1e-15);
        let scaled = UnnormGaussian::new((2.0 * PI).sqrt(), 0.0, 1.0, 0.0).unwrap();
        assert!(rel(partial_moment(0, &scaled, Interval::real_line()), (2.0 * PI).sqrt()) < 1e-15);
        let v = partial_moment(2, &unit, Interval::new(0.0, 1.0).unwrap());
        let closed = std_normal_cdf(1.0) - 0.5 - std_normal_pdf(1.0);
        assert!(rel(v, closed) < 1e-13);
        assert!((v - 0.099_374_021_55).abs() < 1e-10);
    }
}
