//! Gaussian tangent bounds and their piecewise envelopes.
//!
//! At a tangency point `t` a density with curvature maps `β`/`ν` is bounded
//! below and above by unnormalized Gaussians touching `π` at `t`. The max of a
//! family of minorants and the min of a family of majorants are
//! [`PiecewiseGaussian`]s, built by divide and conquer over the family.

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::density::CurvatureBoundedDensity;
use crate::error::{Error, Result};
use crate::gaussmath::GaussianParams;

/// Below this family size the two halves of a merge are built sequentially.
const PARALLEL_THRESHOLD: usize = 64;

/// Breakpoints closer than `BREAKPOINT_FUSE * (1 + |v|)` are fused.
const BREAKPOINT_FUSE: f64 = 1e-12;

const TANGENCY_TOL: f64 = 1e-12;

/// `x ↦ C·g(x; μ, σ)` with `g` the normal density, built at tangency point `t`.
///
/// Stored in log form: `ln(C g(x)) = ln_peak - (x-μ)²/(2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnnormGaussian {
    ln_peak: f64,
    mu: f64,
    sigma: f64,
    t: f64,
}

impl UnnormGaussian {
    pub fn new(scale: f64, mu: f64, sigma: f64, t: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("Gaussian scale must be > 0, got {scale}")));
        }
        Self::from_ln_peak(scale.ln() - 0.5 * (2.0 * PI * sigma * sigma).ln(), mu, sigma, t)
    }

    /// From the log of the value at the mean.
    pub fn from_ln_peak(ln_peak: f64, mu: f64, sigma: f64, t: f64) -> Result<Self> {
        GaussianParams::new(mu, sigma)?;
        if !ln_peak.is_finite() || !t.is_finite() {
            return Err(Error::Domain(format!("non-finite Gaussian bound (ln_peak={ln_peak}, t={t})")));
        }
        Ok(Self { ln_peak, mu, sigma, t })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Tangency point.
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn params(&self) -> GaussianParams {
        GaussianParams { mu: self.mu, sigma: self.sigma }
    }

    pub fn ln_scale(&self) -> f64 {
        self.ln_peak + 0.5 * (2.0 * PI * self.sigma * self.sigma).ln()
    }

    /// `C`, the total mass.
    pub fn scale(&self) -> f64 {
        self.ln_scale().exp()
    }

    pub fn ln_peak(&self) -> f64 {
        self.ln_peak
    }

    pub fn ln_eval(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        self.ln_peak - 0.5 * z * z
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.ln_eval(x).exp()
    }

    fn canonical_cmp(&self, o: &Self) -> Ordering {
        self.t
            .total_cmp(&o.t)
            .then(self.ln_peak.total_cmp(&o.ln_peak))
            .then(self.mu.total_cmp(&o.mu))
            .then(self.sigma.total_cmp(&o.sigma))
    }
}

fn tangent_bound(d: &CurvatureBoundedDensity, t: f64, curvature: f64, name: &'static str) -> Result<UnnormGaussian> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("tangency point must be finite, got {t}")));
    }
    if !(curvature > 0.0 && curvature.is_finite()) {
        return Err(Error::NonPositiveCurvature { name, t, value: curvature });
    }
    let phi = d.phi(t);
    let dphi = d.dphi(t);
    let sigma = curvature.sqrt().recip();
    let mu = t - dphi / curvature;
    let shift = 0.5 * dphi * dphi / curvature;
    let g = UnnormGaussian::from_ln_peak(-phi + shift, mu, sigma, t)?;
    let miss = g.ln_eval(t) + phi;
    if miss.abs() > TANGENCY_TOL * (1.0 + shift + phi.abs()) {
        return Err(Error::Domain(format!("{name} bound at t={t} misses pi(t) (log error {miss:e})")));
    }
    Ok(g)
}

/// Gaussian minorant of `π` touching it at `t`, from `β(t)`.
pub fn tangent_minorant(d: &CurvatureBoundedDensity, t: f64) -> Result<UnnormGaussian> {
    tangent_bound(d, t, d.beta(t), "beta")
}

/// Gaussian majorant of `π` touching it at `t`, from `ν(t)`.
pub fn tangent_majorant(d: &CurvatureBoundedDensity, t: f64) -> Result<UnnormGaussian> {
    tangent_bound(d, t, d.nu(t)?, "nu")
}

/// Points where `ga` and `gb` are equal, ascending.
pub fn intersections(ga: &UnnormGaussian, gb: &UnnormGaussian) -> Result<Vec<f64>> {
    // ln ga - ln gb = a2 x² + a1 x + a0
    let pa = 0.5 / (ga.sigma * ga.sigma);
    let pb = 0.5 / (gb.sigma * gb.sigma);
    let a2 = pb - pa;
    let a1 = 2.0 * (pa * ga.mu - pb * gb.mu);
    let a0 = (ga.ln_peak - gb.ln_peak) - pa * ga.mu * ga.mu + pb * gb.mu * gb.mu;
    if a2.abs() < 1e-14 * a1.abs().max(1.0) {
        if a1 == 0.0 {
            return if a0 == 0.0 { Err(Error::IdenticalFunctions) } else { Ok(Vec::new()) };
        }
        let x = -a0 / a1;
        return Ok(if x.is_finite() { vec![x] } else { Vec::new() });
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    let scale = a1 * a1 + (4.0 * a2 * a0).abs();
    if disc.abs() <= 1e-12 * scale {
        return Ok(vec![-a1 / (2.0 * a2)]);
    }
    if disc < 0.0 {
        return Ok(Vec::new());
    }
    let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
    let q = if q == 0.0 { -0.5 * disc.sqrt() } else { q };
    let mut roots: Vec<f64> = [q / a2, a0 / q].into_iter().filter(|r| r.is_finite()).collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    Ok(roots)
}

/// Which extremum of the family the envelope tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeSide {
    /// Max of minorants.
    UpperOfMinorants,
    /// Min of majorants.
    LowerOfMajorants,
}

impl EnvelopeSide {
    /// True when `a` should be preferred to `b` at a point where their log
    /// values are `la` and `lb`.
    fn prefers(self, la: f64, lb: f64, a: &UnnormGaussian, b: &UnnormGaussian) -> bool {
        let ord = match self {
            EnvelopeSide::UpperOfMinorants => la.total_cmp(&lb),
            EnvelopeSide::LowerOfMajorants => lb.total_cmp(&la),
        };
        match ord {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a.canonical_cmp(b) != Ordering::Greater,
        }
    }
}

/// A piecewise Gaussian: `pieces[i]` is active on `(breakpoints[i-1], breakpoints[i])`,
/// with `breakpoints[-1] = -∞` and `breakpoints[N] = +∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseGaussian {
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<UnnormGaussian>,
    pub side: EnvelopeSide,
}

impl PiecewiseGaussian {
    fn single(g: UnnormGaussian, side: EnvelopeSide) -> Self {
        Self { breakpoints: Vec::new(), pieces: vec![g], side }
    }

    /// Index of the piece active at `x`.
    pub fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&v| v < x)
    }

    pub fn active(&self, x: f64) -> &UnnormGaussian {
        &self.pieces[self.piece_index(x)]
    }

    pub fn ln_eval(&self, x: f64) -> f64 {
        self.active(x).ln_eval(x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.active(x).eval(x)
    }

    /// Lower and upper end of piece `i`.
    pub fn piece_bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { f64::NEG_INFINITY } else { self.breakpoints[i - 1] };
        let hi = self.breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

/// Value of the envelope at `x`.
pub fn eval_piecewise(pw: &PiecewiseGaussian, x: f64) -> f64 {
    pw.eval(x)
}

/// Max over a family of minorants.
pub fn upper_envelope(fs: &[UnnormGaussian]) -> Result<PiecewiseGaussian> {
    envelope(fs, EnvelopeSide::UpperOfMinorants)
}

/// Min over a family of majorants.
pub fn lower_envelope(fs: &[UnnormGaussian]) -> Result<PiecewiseGaussian> {
    envelope(fs, EnvelopeSide::LowerOfMajorants)
}

pub fn envelope(fs: &[UnnormGaussian], side: EnvelopeSide) -> Result<PiecewiseGaussian> {
    if fs.is_empty() {
        return Err(Error::Domain("envelope of an empty family".into()));
    }
    let mut sorted = fs.to_vec();
    sorted.sort_by(UnnormGaussian::canonical_cmp);
    sorted.dedup();
    Ok(build(&sorted, side))
}

fn build(fs: &[UnnormGaussian], side: EnvelopeSide) -> PiecewiseGaussian {
    if fs.len() == 1 {
        return PiecewiseGaussian::single(fs[0], side);
    }
    let (l, r) = fs.split_at(fs.len() / 2);
    let (a, b) = if fs.len() >= PARALLEL_THRESHOLD {
        rayon::join(|| build(l, side), || build(r, side))
    } else {
        (build(l, side), build(r, side))
    };
    merge(&a, &b, side)
}

/// An interior point of `(lo, hi)`.
pub(crate) fn probe(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + lo.abs().max(1.0),
        (false, true) => hi - hi.abs().max(1.0),
        (false, false) => 0.0,
    }
}

fn too_close(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && (a - b).abs() <= BREAKPOINT_FUSE * (1.0 + a.abs().max(b.abs()))
}

fn merge(a: &PiecewiseGaussian, b: &PiecewiseGaussian, side: EnvelopeSide) -> PiecewiseGaussian {
    let mut cuts: Vec<f64> = a.breakpoints.iter().chain(&b.breakpoints).copied().collect();
    cuts.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(cuts.len());
    for v in cuts {
        if merged.last().is_none_or(|&p| !too_close(p, v)) {
            merged.push(v);
        }
    }

    let mut breakpoints: Vec<f64> = Vec::new();
    let mut pieces: Vec<UnnormGaussian> = Vec::new();
    let mut push = |lo: f64, g: UnnormGaussian| {
        if let Some(last) = pieces.last() {
            if *last == g {
                return;
            }
            breakpoints.push(lo);
        }
        pieces.push(g);
    };

    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..=merged.len() {
        let lo = if i == 0 { f64::NEG_INFINITY } else { merged[i - 1] };
        let hi = merged.get(i).copied().unwrap_or(f64::INFINITY);
        let mid = probe(lo, hi);
        while ia < a.breakpoints.len() && a.breakpoints[ia] < mid {
            ia += 1;
        }
        while ib < b.breakpoints.len() && b.breakpoints[ib] < mid {
            ib += 1;
        }
        let fa = a.pieces[ia];
        let fb = b.pieces[ib];

        let mut sub = vec![lo];
        if fa != fb {
            if let Ok(xs) = intersections(&fa, &fb) {
                for x in xs {
                    if x > lo && x < hi && !too_close(x, lo) && !too_close(x, hi) {
                        sub.push(x);
                    }
                }
            }
        }
        sub.push(hi);
        for w in sub.windows(2) {
            let p = probe(w[0], w[1]);
            let g = if side.prefers(fa.ln_eval(p), fb.ln_eval(p), &fa, &fb) { fa } else { fb };
            push(w[0], g);
        }
    }
    PiecewiseGaussian { breakpoints, pieces, side }
}
