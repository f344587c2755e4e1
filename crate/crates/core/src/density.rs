//! Unnormalized target densities `π(x) = exp(-φ(x))` with curvature maps.
//!
//! A [`CurvatureBoundedDensity`] exposes `φ`, `φ'`, and the two quadratic
//! curvature maps used to build tangent bounds:
//!
//! * `β(t)`: for all `x`, `φ(x) ≤ φ(t) + φ'(t)(x-t) + β(t)/2 (x-t)²`
//!   (gives Gaussian minorants of `π`);
//! * `ν(t)`: for all `x`, `φ(x) ≥ φ(t) + φ'(t)(x-t) + ν(t)/2 (x-t)²`
//!   (gives Gaussian majorants of `π`).
//!
//! Densities are immutable and cheap to clone (shared behind an `Arc`).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;

/// RNG stream reserved for dataset generation.
pub const DATASET_STREAM: u64 = 0;

/// Below this magnitude `ψ(t) = (σ(t) - 1/2)/t` is evaluated by its Taylor series.
const PSI_SERIES_CUTOFF: f64 = 1e-4;

/// Logistic sigmoid `1/(1+e^{-x})`, overflow-safe.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`, overflow-safe.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ψ(t) = (σ(t) - 1/2)/t`, with `ψ(0) = 1/4`.
pub fn psi(t: f64) -> f64 {
    if t.abs() < PSI_SERIES_CUTOFF {
        0.25 - t * t / 48.0
    } else {
        // σ(t) - 1/2 = tanh(t/2)/2
        0.5 * (0.5 * t).tanh() / t
    }
}

/// Behaviour a target potential must provide.
pub trait Potential: Send + Sync {
    fn name(&self) -> String;

    fn phi(&self, x: f64) -> f64;

    fn dphi(&self, x: f64) -> f64;

    /// Majorizing curvature of `φ` at `t`.
    fn beta(&self, t: f64) -> f64;

    /// Minorizing curvature of `φ` at `t`, if the potential is strongly convex.
    fn nu(&self, t: f64) -> Option<f64>;

    /// `inf_t ν(t)`, if known.
    fn nu_infimum(&self) -> Option<f64>;

    /// Global lower bound on the quadratic curvature a component contributes
    /// when summed with strongly convex parts: 0 for convex potentials.
    fn curvature_floor(&self) -> f64 {
        0.0
    }

    /// `[φ, φ', φ'', φ''']` at `x`, if available.
    fn derivs(&self, x: f64) -> Option<[f64; 4]>;
}

/// A target density with the curvature maps needed for tangent bounds.
#[derive(Clone)]
pub struct CurvatureBoundedDensity {
    inner: Arc<dyn Potential>,
}

impl fmt::Debug for CurvatureBoundedDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CurvatureBoundedDensity").field("name", &self.inner.name()).finish()
    }
}

impl CurvatureBoundedDensity {
    pub fn from_potential<P: Potential + 'static>(p: P) -> Self {
        Self { inner: Arc::new(p) }
    }

    /// Builds a density from a potential written over [`Jet`]s; `φ'` and the
    /// higher derivatives come from forward-mode propagation.
    pub fn from_jet_fn<F, B>(
        name: impl Into<String>,
        phi: F,
        beta: B,
        nu: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        nu_infimum: Option<f64>,
    ) -> Self
    where
        F: Fn(Jet) -> Jet + Send + Sync + 'static,
        B: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::from_potential(JetPotential {
            name: name.into(),
            phi: Arc::new(phi),
            beta: Arc::new(beta),
            nu,
            nu_infimum,
        })
    }

    pub fn name(&self) -> String {
        self.inner.name()
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.inner.phi(x)
    }

    pub fn dphi(&self, x: f64) -> f64 {
        self.inner.dphi(x)
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.inner.beta(t)
    }

    pub fn nu(&self, t: f64) -> Result<f64> {
        self.inner.nu(t).ok_or_else(|| Error::NuUnavailable(self.name()))
    }

    pub fn has_nu(&self) -> bool {
        self.inner.nu_infimum().is_some() || self.inner.nu(0.0).is_some()
    }

    pub fn nu_infimum(&self) -> Result<f64> {
        self.inner.nu_infimum().ok_or_else(|| Error::NuUnavailable(self.name()))
    }

    pub fn curvature_floor(&self) -> f64 {
        self.inner.curvature_floor()
    }

    pub fn derivs(&self, x: f64) -> Result<[f64; 4]> {
        self.inner
            .derivs(x)
            .ok_or_else(|| Error::Domain(format!("density `{}` exposes no higher derivatives", self.name())))
    }

    /// `π(x) = exp(-φ(x))`.
    pub fn eval_pi(&self, x: f64) -> f64 {
        (-self.phi(x)).exp()
    }

    pub(crate) fn potential(&self) -> &dyn Potential {
        self.inner.as_ref()
    }
}

/// `π(x) = exp(-φ(x))`.
pub fn eval_pi(d: &CurvatureBoundedDensity, x: f64) -> f64 {
    d.eval_pi(x)
}

/// Rows of the catalog of potentials with known majorizing curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table1Kind {
    Quadratic,
    Hyperbolic,
    Huber,
    Logistic,
    Cauchy,
}

impl std::str::FromStr for Table1Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" => Ok(Self::Quadratic),
            "hyperbolic" => Ok(Self::Hyperbolic),
            "huber" => Ok(Self::Huber),
            "logistic" => Ok(Self::Logistic),
            "cauchy" => Ok(Self::Cauchy),
            other => Err(Error::Config(format!("unknown potential kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Table1 {
    kind: Table1Kind,
    delta: f64,
}

impl Potential for Table1 {
    fn name(&self) -> String {
        match self.kind {
            Table1Kind::Quadratic | Table1Kind::Logistic => format!("{:?}", self.kind).to_lowercase(),
            _ => format!("{}(delta={})", format!("{:?}", self.kind).to_lowercase(), self.delta),
        }
    }

    fn phi(&self, x: f64) -> f64 {
        let d = self.delta;
        match self.kind {
            Table1Kind::Quadratic => 0.5 * x * x,
            Table1Kind::Hyperbolic => (1.0 + (x / d) * (x / d)).sqrt(),
            Table1Kind::Huber => {
                if x.abs() < d {
                    x * x
                } else {
                    2.0 * d * x.abs() - d * d
                }
            }
            Table1Kind::Logistic => softplus(x),
            Table1Kind::Cauchy => ((x / d) * (x / d)).ln_1p(),
        }
    }

    fn dphi(&self, x: f64) -> f64 {
        let d = self.delta;
        match self.kind {
            Table1Kind::Quadratic => x,
            Table1Kind::Hyperbolic => x / (d * d) / (1.0 + (x / d) * (x / d)).sqrt(),
            Table1Kind::Huber => {
                if x.abs() < d {
                    2.0 * x
                } else {
                    2.0 * d * x.signum()
                }
            }
            Table1Kind::Logistic => sigmoid(x),
            Table1Kind::Cauchy => 2.0 * x / (x * x + d * d),
        }
    }

    fn beta(&self, t: f64) -> f64 {
        let d = self.delta;
        match self.kind {
            Table1Kind::Quadratic => 1.0,
            // φ'(t)/t, the half-quadratic curvature of an even potential.
            Table1Kind::Hyperbolic => 1.0 / (d * d) / (1.0 + (t / d) * (t / d)).sqrt(),
            Table1Kind::Huber => {
                if t.abs() < d {
                    2.0
                } else {
                    2.0 * d / t.abs()
                }
            }
            Table1Kind::Logistic => psi(t),
            Table1Kind::Cauchy => 2.0 / (t * t + d * d),
        }
    }

    fn nu(&self, _t: f64) -> Option<f64> {
        match self.kind {
            Table1Kind::Quadratic => Some(1.0),
            _ => None,
        }
    }

    fn nu_infimum(&self) -> Option<f64> {
        self.nu(0.0)
    }

    fn curvature_floor(&self) -> f64 {
        match self.kind {
            // min φ'' of log(1 + x²/δ²), reached at x² = 3δ².
            Table1Kind::Cauchy => -0.25 / (self.delta * self.delta),
            _ => 0.0,
        }
    }

    fn derivs(&self, x: f64) -> Option<[f64; 4]> {
        let d = self.delta;
        let (d2, d3) = match self.kind {
            Table1Kind::Quadratic => (1.0, 0.0),
            Table1Kind::Hyperbolic => {
                let r = 1.0 + (x / d) * (x / d);
                (1.0 / (d * d) / r.powf(1.5), -3.0 * x / d.powi(4) / r.powf(2.5))
            }
            Table1Kind::Huber => {
                if x.abs() < d {
                    (2.0, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Table1Kind::Logistic => {
                let s = sigmoid(x);
                (s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s))
            }
            Table1Kind::Cauchy => {
                let q = x * x + d * d;
                (2.0 * (d * d - x * x) / (q * q), 4.0 * x * (x * x - 3.0 * d * d) / (q * q * q))
            }
        };
        Some([self.phi(x), self.dphi(x), d2, d3])
    }
}

/// One row of the potential catalog. Only the quadratic row is strongly
/// convex; the others expose `β` only until summed with a strongly convex term.
pub fn make_table1(kind: Table1Kind, delta: f64) -> Result<CurvatureBoundedDensity> {
    if kind != Table1Kind::Quadratic && !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
    }
    Ok(CurvatureBoundedDensity::from_potential(Table1 { kind, delta }))
}

struct SumPotential {
    parts: Vec<CurvatureBoundedDensity>,
}

impl Potential for SumPotential {
    fn name(&self) -> String {
        self.parts.iter().map(|p| p.name()).collect::<Vec<_>>().join(" + ")
    }

    fn phi(&self, x: f64) -> f64 {
        self.parts.iter().map(|p| p.phi(x)).sum()
    }

    fn dphi(&self, x: f64) -> f64 {
        self.parts.iter().map(|p| p.dphi(x)).sum()
    }

    fn beta(&self, t: f64) -> f64 {
        self.parts.iter().map(|p| p.beta(t)).sum()
    }

    fn nu(&self, t: f64) -> Option<f64> {
        let mut any = false;
        let mut total = 0.0;
        for p in &self.parts {
            match p.potential().nu(t) {
                Some(v) => {
                    any = true;
                    total += v;
                }
                None => total += p.curvature_floor(),
            }
        }
        any.then_some(total)
    }

    fn nu_infimum(&self) -> Option<f64> {
        let mut any = false;
        let mut total = 0.0;
        for p in &self.parts {
            match p.potential().nu_infimum() {
                Some(v) => {
                    any = true;
                    total += v;
                }
                None => total += p.curvature_floor(),
            }
        }
        any.then_some(total)
    }

    fn curvature_floor(&self) -> f64 {
        self.parts.iter().map(|p| p.curvature_floor()).sum()
    }

    fn derivs(&self, x: f64) -> Option<[f64; 4]> {
        let mut acc = [0.0; 4];
        for p in &self.parts {
            let d = p.potential().derivs(x)?;
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        Some(acc)
    }
}

/// Sum of potentials (product of densities). `β` adds up; `ν` is the sum of
/// the available `ν_j` plus the curvature floor of the components without one.
pub fn sum_densities(components: &[CurvatureBoundedDensity]) -> Result<CurvatureBoundedDensity> {
    match components {
        [] => Err(Error::Domain("cannot sum an empty list of densities".into())),
        [single] => Ok(single.clone()),
        _ => {
            if !components.iter().any(|c| c.potential().nu_infimum().is_some()) {
                return Err(Error::NuUnavailable(
                    components.iter().map(|c| c.name()).collect::<Vec<_>>().join(" + "),
                ));
            }
            Ok(CurvatureBoundedDensity::from_potential(SumPotential { parts: components.to_vec() }))
        }
    }
}

/// Data and prior of the one-dimensional Bayesian logistic-regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionConfig {
    pub labels: Vec<i8>,
    pub features: Vec<f64>,
    pub prior_std: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl LogisticRegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() || self.labels.len() != self.features.len() {
            return Err(Error::Config(format!(
                "logistic regression needs J >= 1 labels and as many features (got {} labels, {} features)",
                self.labels.len(),
                self.features.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::Config(format!("labels must be -1 or +1, found {bad}")));
        }
        if let Some(bad) = self.features.iter().find(|w| !w.is_finite()) {
            return Err(Error::Config(format!("features must be finite, found {bad}")));
        }
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return Err(Error::Config(format!("prior_std must be > 0, got {}", self.prior_std)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale A must be > 0, got {}", self.scale)));
        }
        Ok(())
    }

    /// Seeded synthetic dataset: Rademacher labels, features uniform on `w_range`.
    pub fn random(seed: u64, j: usize, w_range: (f64, f64), prior_std: f64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DATASET_STREAM);
        let mut labels = Vec::with_capacity(j);
        let mut features = Vec::with_capacity(j);
        for _ in 0..j {
            labels.push(if rng.gen::<bool>() { 1 } else { -1 });
            features.push(rng.gen_range(w_range.0..=w_range.1));
        }
        Self { labels, features, prior_std, scale }
    }
}

struct LogReg {
    /// `y_j w_j`
    coefs: Vec<f64>,
    inv_s2: f64,
    ln_scale: f64,
}

impl Potential for LogReg {
    fn name(&self) -> String {
        format!("logreg(J={}, s={})", self.coefs.len(), 1.0 / self.inv_s2.sqrt())
    }

    fn phi(&self, x: f64) -> f64 {
        0.5 * x * x * self.inv_s2 + self.coefs.iter().map(|&c| softplus(c * x)).sum::<f64>() - self.ln_scale
    }

    fn dphi(&self, x: f64) -> f64 {
        x * self.inv_s2 + self.coefs.iter().map(|&c| c * sigmoid(c * x)).sum::<f64>()
    }

    fn beta(&self, t: f64) -> f64 {
        self.coefs.iter().map(|&c| c * c * psi(c * t)).sum::<f64>() + self.inv_s2
    }

    fn nu(&self, _t: f64) -> Option<f64> {
        Some(self.inv_s2)
    }

    fn nu_infimum(&self) -> Option<f64> {
        Some(self.inv_s2)
    }

    fn derivs(&self, x: f64) -> Option<[f64; 4]> {
        let (mut d2, mut d3) = (self.inv_s2, 0.0);
        for &c in &self.coefs {
            let s = sigmoid(c * x);
            let v = s * (1.0 - s);
            d2 += c * c * v;
            d3 += c * c * c * v * (1.0 - 2.0 * s);
        }
        Some([self.phi(x), self.dphi(x), d2, d3])
    }
}

/// `φ(x) = x²/(2s²) + Σ_j log(1 + exp(y_j w_j x)) - log A`, with
/// `β(t) = Σ_j (y_j w_j)² ψ(y_j w_j t) + 1/s²` and `ν ≡ 1/s²`.
pub fn make_logreg_target(cfg: &LogisticRegressionConfig) -> Result<CurvatureBoundedDensity> {
    cfg.validate()?;
    let coefs = cfg.labels.iter().zip(&cfg.features).map(|(&y, &w)| y as f64 * w).collect();
    Ok(CurvatureBoundedDensity::from_potential(LogReg {
        coefs,
        inv_s2: 1.0 / (cfg.prior_std * cfg.prior_std),
        ln_scale: cfg.scale.ln(),
    }))
}

/// Gaussian importance-sampling proposal `q = N(mean, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub mean: f64,
    /// Variance.
    pub theta: f64,
}

impl ProposalConfig {
    pub fn new(mean: f64, theta: f64) -> Result<Self> {
        if !mean.is_finite() || !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Config(format!("proposal needs finite mean and theta > 0, got mean={mean}, theta={theta}")));
        }
        Ok(Self { mean, theta })
    }

    pub fn std(&self) -> f64 {
        self.theta.sqrt()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = x - self.mean;
        -0.5 * z * z / self.theta - 0.5 * (2.0 * PI * self.theta).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

struct SquaredRatio {
    p: CurvatureBoundedDensity,
    q: ProposalConfig,
    nu_inf: f64,
}

impl Potential for SquaredRatio {
    fn name(&self) -> String {
        format!("({})^2/N({}, {})", self.p.name(), self.q.mean, self.q.theta)
    }

    fn phi(&self, x: f64) -> f64 {
        2.0 * self.p.phi(x) + self.q.ln_pdf(x)
    }

    fn dphi(&self, x: f64) -> f64 {
        2.0 * self.p.dphi(x) - (x - self.q.mean) / self.q.theta
    }

    fn beta(&self, t: f64) -> f64 {
        2.0 * self.p.beta(t) - 1.0 / self.q.theta
    }

    fn nu(&self, t: f64) -> Option<f64> {
        Some(2.0 * self.p.potential().nu(t)? - 1.0 / self.q.theta)
    }

    fn nu_infimum(&self) -> Option<f64> {
        Some(self.nu_inf)
    }

    fn derivs(&self, x: f64) -> Option<[f64; 4]> {
        let d = self.p.potential().derivs(x)?;
        Some([self.phi(x), self.dphi(x), 2.0 * d[2] - 1.0 / self.q.theta, 2.0 * d[3]])
    }
}

/// The density `p²/q` whose moments enter the importance-sampling variance.
///
/// Requires the strong-convexity surplus `2 inf ν_p > 1/θ`; otherwise the
/// integrals of `p²/q` need not be finite and [`Error::IllPosedRatio`] is returned.
pub fn make_squared_ratio_target(
    p: &CurvatureBoundedDensity,
    proposal: ProposalConfig,
) -> Result<CurvatureBoundedDensity> {
    let nu_inf = p.nu_infimum()?;
    let inv_theta = 1.0 / proposal.theta;
    let surplus = 2.0 * nu_inf - inv_theta;
    if !(surplus > 1e-12 * inv_theta) {
        return Err(Error::IllPosedRatio { nu_inf, theta: proposal.theta });
    }
    Ok(CurvatureBoundedDensity::from_potential(SquaredRatio { p: p.clone(), q: proposal, nu_inf: surplus }))
}

type JetFn = Arc<dyn Fn(Jet) -> Jet + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

struct JetPotential {
    name: String,
    phi: JetFn,
    beta: ScalarFn,
    nu: Option<ScalarFn>,
    nu_infimum: Option<f64>,
}

impl Potential for JetPotential {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn phi(&self, x: f64) -> f64 {
        (self.phi)(Jet::constant(x)).value()
    }

    fn dphi(&self, x: f64) -> f64 {
        (self.phi)(Jet::variable(x)).derivative(1)
    }

    fn beta(&self, t: f64) -> f64 {
        (self.beta)(t)
    }

    fn nu(&self, t: f64) -> Option<f64> {
        self.nu.as_ref().map(|f| f(t))
    }

    fn nu_infimum(&self) -> Option<f64> {
        self.nu_infimum
    }

    fn derivs(&self, x: f64) -> Option<[f64; 4]> {
        Some((self.phi)(Jet::variable(x)).0)
    }
}
