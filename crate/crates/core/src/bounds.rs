//! Certified moment bounds from envelope pairs and the adaptive tangency loop.
//!
//! For `f(x) = x^k` the integral `∫ f π` is bracketed by integrating `f⁺`
//! against the lower envelope and `f⁻` against the upper one (and vice versa).
//! [`refine`] grows the tangency set one point at a time, always adding a
//! dyadic candidate inside the sub-interval with the largest gap.

use std::io::{self, Write};

use crate::density::CurvatureBoundedDensity;
use crate::envelope::{lower_envelope, probe, tangent_majorant, tangent_minorant, upper_envelope, PiecewiseGaussian, UnnormGaussian};
use crate::error::{Error, Result};
use crate::gaussmath::{partial_moment, std_normal_inv_cdf, Interval};
use crate::table::{fmt_f64, fmt_opt, write_csv};

pub const HISTORY_HEADER: &str = "n,lower,upper,gap,new_point";

/// `f(x) = x^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentSpec {
    pub k: u32,
}

impl MomentSpec {
    pub fn new(k: u32) -> Self {
        Self { k }
    }
}

/// Kahan–Babuška–Neumaier accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        // An infinite term leaves a NaN compensation behind.
        if self.sum.is_finite() {
            self.sum + self.comp
        } else {
            self.sum
        }
    }
}

/// `C̲` (max of minorants) and `C̄` (min of majorants) for one tangency set.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub lower: PiecewiseGaussian,
    pub upper: PiecewiseGaussian,
}

impl EnvelopePair {
    pub fn build(d: &CurvatureBoundedDensity, points: &[f64]) -> Result<Self> {
        let minorants = points.iter().map(|&t| tangent_minorant(d, t)).collect::<Result<Vec<_>>>()?;
        let majorants = points.iter().map(|&t| tangent_majorant(d, t)).collect::<Result<Vec<_>>>()?;
        Self::from_families(&minorants, &majorants)
    }

    pub fn from_families(minorants: &[UnnormGaussian], majorants: &[UnnormGaussian]) -> Result<Self> {
        Ok(Self { lower: upper_envelope(minorants)?, upper: lower_envelope(majorants)? })
    }

    /// `C̄(x) - C̲(x)`.
    pub fn gap(&self, x: f64) -> f64 {
        self.upper.eval(x) - self.lower.eval(x)
    }
}

/// Contribution of one piece with constant active functions on `[lo, hi]`.
fn piece_contribution(k: u32, lo_fn: &UnnormGaussian, hi_fn: &UnnormGaussian, iv: Interval) -> (f64, f64) {
    let a = partial_moment(k, lo_fn, iv);
    let b = partial_moment(k, hi_fn, iv);
    // x^k is negative on the piece only for odd k left of 0.
    if k % 2 == 1 && iv.hi <= 0.0 {
        (b, a)
    } else {
        (a, b)
    }
}

fn cut_points(upper: &PiecewiseGaussian, lower: &PiecewiseGaussian, spec: MomentSpec, s: Interval) -> Vec<f64> {
    let mut cuts: Vec<f64> = upper
        .breakpoints
        .iter()
        .chain(&lower.breakpoints)
        .copied()
        .filter(|&v| v > s.lo && v < s.hi)
        .collect();
    if spec.k % 2 == 1 && s.lo < 0.0 && s.hi > 0.0 {
        cuts.push(0.0);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts
}

/// `(∫_S f⁺C̲ − ∫_S f⁻C̄, ∫_S f⁺C̄ − ∫_S f⁻C̲)`.
pub fn signed_piece_integral(
    upper: &PiecewiseGaussian,
    lower: &PiecewiseGaussian,
    spec: MomentSpec,
    s: Interval,
) -> (f64, f64) {
    let cuts = cut_points(upper, lower, spec, s);
    let (mut lo_sum, mut hi_sum) = (Neumaier::default(), Neumaier::default());
    let mut left = s.lo;
    for &right in cuts.iter().chain(std::iter::once(&s.hi)) {
        let p = probe(left, right);
        let (a, b) = piece_contribution(spec.k, lower.active(p), upper.active(p), Interval { lo: left, hi: right });
        lo_sum.add(a);
        hi_sum.add(b);
        left = right;
    }
    (lo_sum.value(), hi_sum.value())
}

/// Bounds restricted to one sub-interval `S_i` of the tangency partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalBound {
    pub interval: Interval,
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
}

/// Totals over `ℝ` with the per-interval breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalBounds {
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    pub per_interval: Vec<IntervalBound>,
}

/// Integrates both envelopes over `(−∞,t_1], [t_1,t_2], …, [t_M,∞)` in one sweep.
pub fn total_bounds(upper: &PiecewiseGaussian, lower: &PiecewiseGaussian, spec: MomentSpec, points: &[f64]) -> Result<TotalBounds> {
    if points.is_empty() {
        return Err(Error::Domain("tangency set is empty".into()));
    }
    let mut edges = Vec::with_capacity(points.len() + 2);
    edges.push(f64::NEG_INFINITY);
    edges.extend_from_slice(points);
    edges.push(f64::INFINITY);

    let mut all_cuts = cut_points(upper, lower, spec, Interval::real_line());
    all_cuts.extend_from_slice(points);
    all_cuts.sort_by(f64::total_cmp);
    all_cuts.dedup();

    let mut per_interval = Vec::with_capacity(points.len() + 1);
    let (mut tot_lo, mut tot_hi) = (Neumaier::default(), Neumaier::default());
    let mut c = 0usize;
    let (mut iu, mut il) = (0usize, 0usize);
    for w in edges.windows(2) {
        let s = Interval { lo: w[0], hi: w[1] };
        let (mut lo_sum, mut hi_sum) = (Neumaier::default(), Neumaier::default());
        let mut left = s.lo;
        loop {
            while c < all_cuts.len() && all_cuts[c] <= left {
                c += 1;
            }
            let right = if c < all_cuts.len() && all_cuts[c] < s.hi { all_cuts[c] } else { s.hi };
            let p = probe(left, right);
            while iu < upper.breakpoints.len() && upper.breakpoints[iu] < p {
                iu += 1;
            }
            while il < lower.breakpoints.len() && lower.breakpoints[il] < p {
                il += 1;
            }
            let (a, b) = piece_contribution(spec.k, &lower.pieces[il], &upper.pieces[iu], Interval { lo: left, hi: right });
            lo_sum.add(a);
            hi_sum.add(b);
            if right >= s.hi {
                break;
            }
            left = right;
        }
        let (lower_i, upper_i) = (lo_sum.value(), hi_sum.value());
        tot_lo.add(lower_i);
        tot_hi.add(upper_i);
        per_interval.push(IntervalBound { interval: s, lower: lower_i, upper: upper_i, gap: upper_i - lower_i });
    }
    let (lower, upper) = (tot_lo.value(), tot_hi.value());
    Ok(TotalBounds { lower, upper, gap: upper - lower, per_interval })
}

/// `[a, b]` holding all but an `eps` fraction of the mass of the majorant at `t1`.
pub fn compact_interval(d: &CurvatureBoundedDensity, t1: f64, eps: f64) -> Result<Interval> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0,1), got {eps}")));
    }
    let g = tangent_majorant(d, t1)?;
    let z = std_normal_inv_cdf(0.5 * eps)?;
    Interval::new(g.mu() + g.sigma() * z, g.mu() - g.sigma() * z)
}

/// Minimizer of `φ`, by bisection on `φ'` inside the bracket
/// `start ± |φ'(start)|/inf ν` that strong convexity guarantees.
pub fn locate_mode(d: &CurvatureBoundedDensity, start: f64) -> Result<f64> {
    let nu = d.nu_infimum()?;
    if !(nu > 0.0) {
        return Err(Error::NonPositiveCurvature { name: "nu", t: start, value: nu });
    }
    let g = d.dphi(start);
    if g == 0.0 {
        return Ok(start);
    }
    let reach = g.abs() / nu;
    let (mut lo, mut hi) = if g > 0.0 { (start - reach, start) } else { (start, start + reach) };
    while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d.dphi(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dyadic grid over `[⌊a⌋, ⌈b⌉]` with about `ell` points, containing every integer.
pub fn dyadic_pool(iv: Interval, ell: u64) -> Result<Vec<f64>> {
    if !iv.is_finite() || ell == 0 {
        return Err(Error::Domain(format!("dyadic pool needs a finite interval and ell >= 1 (got [{}, {}], {ell})", iv.lo, iv.hi)));
    }
    let start = iv.lo.floor();
    let n_int = (iv.hi.ceil() - start) as u64;
    let n_int = n_int.max(1);
    let d1 = (ell / n_int).max(1);
    let d2 = 63 - d1.leading_zeros();
    let per_unit = 1u64 << d2;
    let step = (-(d2 as f64)).exp2();
    Ok((0..=n_int * per_unit).map(|j| start + j as f64 * step).collect())
}

/// Current tangency set, remaining candidates and the compact they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct TangencyState {
    pub points: Vec<f64>,
    pub pool: Vec<f64>,
    pub compact: Interval,
}

impl TangencyState {
    /// Index range into `pool` of candidates strictly inside sub-interval `i`.
    fn candidates(&self, i: usize) -> (usize, usize) {
        let lo = if i == 0 { f64::NEG_INFINITY } else { self.points[i - 1] };
        let hi = self.points.get(i).copied().unwrap_or(f64::INFINITY);
        (self.pool.partition_point(|&u| u <= lo), self.pool.partition_point(|&u| u < hi))
    }
}

/// Moves the pool element nearest to the target of the largest-gap interval
/// into the tangency set. `None` when no interval has candidates left.
/// `spacing_fallback` replaces the mean spacing while fewer than two points exist.
pub fn select_candidate(state: &mut TangencyState, gaps: &[f64], spacing_fallback: f64) -> Option<f64> {
    let m = state.points.len();
    debug_assert_eq!(gaps.len(), m + 1);
    let mut order: Vec<usize> = (0..gaps.len()).collect();
    order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
    let (i, (from, to)) = order.into_iter().map(|i| (i, state.candidates(i))).find(|&(_, (f, t))| t > f)?;

    let spacing = if m >= 2 { (state.points[m - 1] - state.points[0]) / (m - 1) as f64 } else { spacing_fallback };
    let target = if i == 0 {
        state.points[0] - spacing
    } else if i == m {
        state.points[m - 1] + spacing
    } else {
        0.5 * (state.points[i - 1] + state.points[i])
    };

    let slice = &state.pool[from..to];
    let j = slice.partition_point(|&u| u < target);
    let pick = if j == 0 {
        0
    } else if j == slice.len() || target - slice[j - 1] <= slice[j] - target {
        j - 1
    } else {
        j
    };
    let t_hat = state.pool.remove(from + pick);
    let at = state.points.partition_point(|&t| t < t_hat);
    state.points.insert(at, t_hat);
    Some(t_hat)
}

/// Where the majorant defining the candidate compact is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompactAnchor {
    /// At the minimizer of `φ`, where the majorant mass is smallest.
    #[default]
    Mode,
    /// At the initial tangency point `t1`.
    T1,
}

/// Settings of the adaptive loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub tau: f64,
    pub t1: f64,
    pub eps: f64,
    pub ell: u64,
    /// Compare the gap to `tau` directly instead of relative to the bounds.
    pub absolute: bool,
    /// Stop once the tangency set reaches this size.
    pub max_points: Option<usize>,
    pub anchor: CompactAnchor,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { tau: 1e-4, t1: 1.0, eps: 1e-6, ell: 10_000, absolute: false, max_points: None, anchor: CompactAnchor::Mode }
    }
}

impl RefineOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !self.t1.is_finite() {
            return Err(Error::Config(format!("t1 must be finite, got {}", self.t1)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0,1), got {}", self.eps)));
        }
        if self.ell == 0 {
            return Err(Error::Config("ell must be >= 1".into()));
        }
        if self.max_points == Some(0) {
            return Err(Error::Config("max_points must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopStatus {
    Converged,
    PoolExhausted,
    BudgetReached,
}

impl StopStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StopStatus::Converged => "converged",
            StopStatus::PoolExhausted => "pool_exhausted",
            StopStatus::BudgetReached => "budget_reached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    /// Point added to form this iteration's tangency set.
    pub new_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    pub per_interval: Vec<IntervalBound>,
    pub history: Vec<HistoryRow>,
    pub n_stop: usize,
    pub status: StopStatus,
    pub tangency: Vec<f64>,
    pub compact: Interval,
}

impl BoundsReport {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn write_history<W: Write>(&self, w: W) -> io::Result<()> {
        let rows: Vec<Vec<String>> = self
            .history
            .iter()
            .map(|h| vec![h.n.to_string(), fmt_f64(h.lower), fmt_f64(h.upper), fmt_f64(h.gap), fmt_opt(h.new_point)])
            .collect();
        write_csv(w, HISTORY_HEADER, &rows)
    }
}

/// The adaptive loop, exposed step by step.
#[derive(Debug, Clone)]
pub struct Refinement {
    density: CurvatureBoundedDensity,
    spec: MomentSpec,
    opts: RefineOptions,
    state: TangencyState,
    spacing_fallback: f64,
    envelopes: EnvelopePair,
    totals: TotalBounds,
    history: Vec<HistoryRow>,
    status: Option<StopStatus>,
}

impl Refinement {
    pub fn new(d: &CurvatureBoundedDensity, spec: MomentSpec, opts: RefineOptions) -> Result<Self> {
        opts.validate()?;
        let first = tangent_majorant(d, opts.t1)?;
        let anchor = match opts.anchor {
            CompactAnchor::Mode => locate_mode(d, opts.t1)?,
            CompactAnchor::T1 => opts.t1,
        };
        let compact = compact_interval(d, anchor, opts.eps)?;
        let mut pool = dyadic_pool(compact, opts.ell)?;
        let t1 = opts.t1.round().clamp(compact.lo.floor(), compact.hi.ceil());
        if let Ok(i) = pool.binary_search_by(|u| u.total_cmp(&t1)) {
            pool.remove(i);
        }
        let state = TangencyState { points: vec![t1], pool, compact };
        let envelopes = EnvelopePair::build(d, &state.points)?;
        let totals = total_bounds(&envelopes.upper, &envelopes.lower, spec, &state.points)?;
        let history = vec![HistoryRow { n: 1, lower: totals.lower, upper: totals.upper, gap: totals.gap, new_point: Some(t1) }];
        Ok(Self {
            density: d.clone(),
            spec,
            opts,
            state,
            spacing_fallback: first.sigma(),
            envelopes,
            totals,
            history,
            status: None,
        })
    }

    fn converged(&self) -> bool {
        let t = &self.totals;
        let scale = if self.opts.absolute { 1.0 } else { t.lower.abs().max(t.upper.abs()).max(1e-300) };
        t.gap.is_finite() && t.gap <= self.opts.tau * scale
    }

    /// Adds one tangency point. Returns `false` once a stopping rule fires.
    pub fn advance(&mut self) -> Result<bool> {
        if self.status.is_some() {
            return Ok(false);
        }
        if self.converged() {
            self.status = Some(StopStatus::Converged);
            return Ok(false);
        }
        if self.opts.max_points.is_some_and(|m| self.state.points.len() >= m) {
            self.status = Some(StopStatus::BudgetReached);
            return Ok(false);
        }
        let gaps: Vec<f64> = self.totals.per_interval.iter().map(|b| b.gap).collect();
        let Some(t_hat) = select_candidate(&mut self.state, &gaps, self.spacing_fallback) else {
            self.status = Some(StopStatus::PoolExhausted);
            return Ok(false);
        };
        self.envelopes = EnvelopePair::build(&self.density, &self.state.points)?;
        self.totals = total_bounds(&self.envelopes.upper, &self.envelopes.lower, self.spec, &self.state.points)?;
        self.history.push(HistoryRow {
            n: self.state.points.len(),
            lower: self.totals.lower,
            upper: self.totals.upper,
            gap: self.totals.gap,
            new_point: Some(t_hat),
        });
        Ok(true)
    }

    pub fn run(mut self) -> Result<BoundsReport> {
        while self.advance()? {}
        Ok(self.report())
    }

    pub fn envelopes(&self) -> &EnvelopePair {
        &self.envelopes
    }

    pub fn totals(&self) -> &TotalBounds {
        &self.totals
    }

    pub fn state(&self) -> &TangencyState {
        &self.state
    }

    pub fn status(&self) -> Option<StopStatus> {
        self.status
    }

    pub fn report(&self) -> BoundsReport {
        BoundsReport {
            lower: self.totals.lower,
            upper: self.totals.upper,
            gap: self.totals.gap,
            per_interval: self.totals.per_interval.clone(),
            history: self.history.clone(),
            n_stop: self.state.points.len(),
            status: self.status.unwrap_or(StopStatus::BudgetReached),
            tangency: self.state.points.clone(),
            compact: self.state.compact,
        }
    }
}

/// Runs the adaptive loop to completion.
pub fn refine(d: &CurvatureBoundedDensity, spec: MomentSpec, opts: RefineOptions) -> Result<BoundsReport> {
    Refinement::new(d, spec, opts)?.run()
}

/// `C̄(x;T) − C̲(x;T)`.
pub fn envelope_gap(d: &CurvatureBoundedDensity, points: &[f64], x: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("tangency set is empty".into()));
    }
    Ok(EnvelopePair::build(d, points)?.gap(x))
}
