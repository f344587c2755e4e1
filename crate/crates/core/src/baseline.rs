//! Piecewise polynomial envelope bounds (derivative orders 0 and 1) used as
//! the comparison baseline.
//!
//! On a panel `[a, b]` where `f^(d)` is concave, the degree-`d+1` Taylor
//! expansion at `a` overestimates `∫ f` and the variant whose last term uses
//! the chord slope of `f^(d)` underestimates it; convex panels swap the two.

use std::sync::Arc;

use crate::density::CurvatureBoundedDensity;
use crate::error::{Error, Result};
use crate::gaussmath::Interval;

const SCAN_POINTS: usize = 2048;

/// An integrand with derivatives up to `max_order`.
#[derive(Clone)]
pub struct DifferentiableIntegrand {
    max_order: usize,
    eval: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for DifferentiableIntegrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferentiableIntegrand").field("max_order", &self.max_order).finish()
    }
}

fn falling(k: u32, j: usize) -> f64 {
    (0..j).map(|i| (k as f64) - i as f64).product()
}

const BINOM: [[f64; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];

impl DifferentiableIntegrand {
    /// `eval(order, x)` must return `f^(order)(x)` for `order <= max_order`.
    pub fn new<F>(max_order: usize, eval: F) -> Self
    where
        F: Fn(usize, f64) -> f64 + Send + Sync + 'static,
    {
        Self { max_order, eval: Arc::new(eval) }
    }

    /// `f(x) = x^k π(x)` with derivatives up to order 3.
    pub fn from_density(d: &CurvatureBoundedDensity, k: u32) -> Result<Self> {
        d.derivs(0.0)?;
        let d = d.clone();
        Ok(Self::new(3, move |order, x| {
            let [phi, p1, p2, p3] = d.derivs(x).unwrap_or([f64::NAN; 4]);
            let pi = (-phi).exp();
            let pid = [pi, -p1 * pi, (p1 * p1 - p2) * pi, (-p1 * p1 * p1 + 3.0 * p1 * p2 - p3) * pi];
            (0..=order)
                .map(|j| {
                    let mono = if j as u32 > k { 0.0 } else { falling(k, j) * x.powi(k as i32 - j as i32) };
                    BINOM[order][j] * mono * pid[order - j]
                })
                .sum()
        }))
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn eval(&self, order: usize, x: f64) -> f64 {
        (self.eval)(order, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    Concave,
    Convex,
}

/// Bounds from the compound rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EvansResult {
    pub lower: f64,
    pub upper: f64,
    pub n_pieces: usize,
    pub segments: Vec<(Interval, Curvature)>,
}

impl EvansResult {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

fn check_order(f: &DifferentiableIntegrand, d: usize) -> Result<()> {
    if d > 1 {
        return Err(Error::Domain(format!("derivative order d must be 0 or 1, got {d}")));
    }
    if f.max_order() < d + 2 {
        return Err(Error::Domain(format!("integrand provides derivatives up to {} but d = {d} needs {}", f.max_order(), d + 2)));
    }
    Ok(())
}

/// Splits `iv` into maximal pieces where `f^(d+2)` keeps one sign.
pub fn segment_by_curvature(f: &DifferentiableIntegrand, iv: Interval, d: usize) -> Result<Vec<(Interval, Curvature)>> {
    check_order(f, d)?;
    if !iv.is_finite() {
        return Err(Error::Domain("curvature segmentation needs a finite interval".into()));
    }
    let order = d + 2;
    let sign = |x: f64| {
        let v = f.eval(order, x);
        if v > 0.0 {
            1i8
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    let h = iv.width() / (SCAN_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..SCAN_POINTS).map(|i| if i == SCAN_POINTS - 1 { iv.hi } else { iv.lo + i as f64 * h }).collect();
    let signs: Vec<i8> = xs.iter().map(|&x| sign(x)).collect();
    let first = signs.iter().copied().find(|&s| s != 0).unwrap_or(-1);

    let mut cuts = Vec::new();
    let mut labels = vec![first];
    let (mut cur, mut last_x) = (first, iv.lo);
    for (i, &s) in signs.iter().enumerate() {
        if s == 0 {
            continue;
        }
        if s != cur {
            // Root lies between the last node with the old sign and this one.
            let (mut lo, mut hi) = (last_x, xs[i]);
            while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if sign(mid) == cur {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
            labels.push(s);
            cur = s;
        }
        last_x = xs[i];
    }
    let mut edges = vec![iv.lo];
    edges.extend(cuts);
    edges.push(iv.hi);
    Ok(edges
        .windows(2)
        .zip(labels)
        .filter(|(w, _)| w[1] > w[0])
        .map(|(w, s)| (Interval { lo: w[0], hi: w[1] }, if s < 0 { Curvature::Concave } else { Curvature::Convex }))
        .collect())
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `(lower, upper)` on `∫_a^b f` for a panel where `f^(d)` has the given curvature.
pub fn evans_panel_bounds(f: &DifferentiableIntegrand, a: f64, b: f64, d: usize, curvature: Curvature) -> Result<(f64, f64)> {
    check_order(f, d)?;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("panel needs finite a < b, got [{a}, {b}]")));
    }
    let h = b - a;
    let taylor: f64 = (0..=d).map(|k| f.eval(k, a) * h.powi(k as i32 + 1) / factorial(k + 1)).sum();
    let tail = h.powi(d as i32 + 2) / factorial(d + 2);
    let chord = taylor + (f.eval(d, b) - f.eval(d, a)) / h * tail;
    let tangent = taylor + f.eval(d + 1, a) * tail;
    Ok(match curvature {
        Curvature::Concave => (chord, tangent),
        Curvature::Convex => (tangent, chord),
    })
}

/// Sums panel bounds over `n_points − 1` equal panels, split further at curvature changes.
pub fn evans_compound(f: &DifferentiableIntegrand, iv: Interval, n_points: usize, d: usize) -> Result<EvansResult> {
    if n_points < 2 {
        return Err(Error::Domain(format!("compound rule needs at least 2 points, got {n_points}")));
    }
    let segments = segment_by_curvature(f, iv, d)?;
    let h = iv.width() / (n_points - 1) as f64;
    let mut edges: Vec<f64> = (0..n_points).map(|i| if i == n_points - 1 { iv.hi } else { iv.lo + i as f64 * h }).collect();
    edges.extend(segments.iter().skip(1).map(|(s, _)| s.lo));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let (mut lower, mut upper) = (0.0, 0.0);
    let mut n_pieces = 0;
    for w in edges.windows(2) {
        if !(w[1] > w[0]) {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let label = segments.iter().find(|(s, _)| s.lo <= mid && mid <= s.hi).map(|&(_, c)| c).unwrap_or(Curvature::Concave);
        let (l, u) = evans_panel_bounds(f, w[0], w[1], d, label)?;
        lower += l;
        upper += u;
        n_pieces += 1;
    }
    Ok(EvansResult { lower, upper, n_pieces, segments })
}
