//! Reference adaptive quadrature (15-point Gauss–Kronrod with embedded 7-point
//! Gauss error estimate). Used for testing and comparison only.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::density::CurvatureBoundedDensity;
use crate::error::{Error, Result};
use crate::gaussmath::Interval;

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_TOL: f64 = 1e-14;
pub const MAX_SPLITS: usize = 10_000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights on the odd Kronrod nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub est_error: f64,
    pub n_evals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Segment {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error).then(o.a.total_cmp(&self.a))
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut fv = [(0.0, 0.0); 7];
    for (j, slot) in fv.iter_mut().enumerate() {
        let dx = half * XGK[j];
        let (f1, f2) = (f(center - dx), f(center + dx));
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
        *slot = (f1, f2);
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        res_asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, error }
}

/// `x = t/(1-t²)`, mapping `(-1, 1)` onto `ℝ`.
fn to_t(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        -1.0
    } else if x == 0.0 {
        0.0
    } else {
        2.0 * x / (1.0 + (1.0 + 4.0 * x * x).sqrt())
    }
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, points: &[f64], rel_tol: f64, abs_tol: f64) -> Result<QuadResult> {
    let mut heap: BinaryHeap<Segment> = points.windows(2).map(|w| gk15(f, w[0], w[1])).collect();
    let mut n_evals = 15 * heap.len();
    let mut splits = 0usize;
    let mut frozen: Vec<Segment> = Vec::new();
    loop {
        let value: f64 = heap.iter().chain(&frozen).map(|s| s.value).sum();
        let error: f64 = heap.iter().chain(&frozen).map(|s| s.error).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(QuadResult { value, est_error: error, n_evals });
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::NoConvergence { splits, est_error: error });
        };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            frozen.push(worst);
            continue;
        }
        if splits >= MAX_SPLITS {
            return Err(Error::NoConvergence { splits, est_error: error });
        }
        splits += 1;
        heap.push(gk15(f, worst.a, mid));
        heap.push(gk15(f, mid, worst.b));
        n_evals += 30;
    }
}

/// `∫_iv f` to `max(abs_tol, rel_tol·|value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, iv: Interval, rel_tol: f64, abs_tol: f64) -> Result<QuadResult> {
    integrate_with_points(f, &[iv.lo, iv.hi], rel_tol, abs_tol)
}

/// Like [`integrate`] over `[points[0], points[last]]`, with the interior
/// points used as initial panel boundaries.
pub fn integrate_with_points<F: Fn(f64) -> f64>(f: F, points: &[f64], rel_tol: f64, abs_tol: f64) -> Result<QuadResult> {
    if points.len() < 2 || points.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("quadrature needs an increasing list of at least two points".into()));
    }
    if !(rel_tol > 0.0 && abs_tol > 0.0) {
        return Err(Error::Domain(format!("tolerances must be > 0 (rel {rel_tol}, abs {abs_tol})")));
    }
    let finite = points[0].is_finite() && points[points.len() - 1].is_finite();
    if finite {
        return adaptive(&f, points, rel_tol, abs_tol);
    }
    let g = |t: f64| {
        let q = 1.0 - t * t;
        let x = t / q;
        let v = f(x);
        if v == 0.0 {
            0.0
        } else {
            v * (1.0 + t * t) / (q * q)
        }
    };
    let ts: Vec<f64> = points.iter().map(|&x| to_t(x)).collect();
    adaptive(&g, &ts, rel_tol, abs_tol)
}

/// `∫_ℝ x^k π(x) dx` to relative accuracy 1e-13 (absolute 1e-13 of `∫|x^k π|`), with initial panels splitting `core` into 64 pieces
/// and two infinite tails.
pub fn moment_reference(d: &CurvatureBoundedDensity, k: u32, core: Interval) -> Result<QuadResult> {
    if !core.is_finite() || !(core.width() > 0.0) {
        return Err(Error::Domain(format!("reference core [{}, {}] must be finite and non-empty", core.lo, core.hi)));
    }
    let mut pts = vec![f64::NEG_INFINITY];
    pts.extend((0..=64).map(|i| core.lo + core.width() * i as f64 / 64.0));
    pts.push(f64::INFINITY);
    let f = |x: f64| x.powi(k as i32) * d.eval_pi(x);
    // Sign-changing integrands can cancel to ~0, so the absolute floor follows ∫|f|.
    let magnitude = integrate_with_points(|x| f(x).abs(), &pts, 1e-8, 1e-300)?.value;
    integrate_with_points(f, &pts, 1e-13, (1e-13 * magnitude).max(1e-300))
}
