//! Importance sampling with a Gaussian proposal: certified variance bounds for
//! the unbiased estimator, and seeded Monte Carlo estimates to compare with.
//!
//! For a target `p`, proposal `q` and `m(x) = x^deg`, with
//! `I = ∫ m p`, `Z = ∫ p` and `J = ∫ m² p²/q`, the unbiased estimator with `N`
//! samples has variance `J/(N Z²) − (I/Z)²/N`.

use std::io::{self, Write};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::{refine, BoundsReport, MomentSpec, RefineOptions};
use crate::density::{make_squared_ratio_target, CurvatureBoundedDensity, ProposalConfig};
use crate::error::{Error, Result};
use crate::gaussmath::std_normal_inv_cdf;
use crate::table::{fmt_f64, fmt_opt, write_csv};

/// RNG stream for Monte Carlo runs.
pub const MC_STREAM: u64 = 1;

pub const SWEEP_HEADER: &str = "theta,V_lower,V_upper,V_empirical,I_lower,I_upper,Z_lower,Z_upper,J_lower,J_upper,n_I,n_Z,n_J";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ISConfig {
    pub proposal: ProposalConfig,
    pub n_samples: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// Degree of `m(x) = x^deg`.
    pub m_degree: u32,
}

impl ISConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_runs == 0 {
            return Err(Error::Config(format!(
                "n_samples and n_runs must be >= 1 (got {}, {})",
                self.n_samples, self.n_runs
            )));
        }
        ProposalConfig::new(self.proposal.mean, self.proposal.theta)?;
        Ok(())
    }
}

/// Reports for `I`, `Z` and `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTriple {
    pub i: BoundsReport,
    pub z: BoundsReport,
    pub j: BoundsReport,
}

impl BoundTriple {
    pub fn intervals(&self) -> [(f64, f64); 3] {
        [(self.i.lower, self.i.upper), (self.z.lower, self.z.upper), (self.j.lower, self.j.upper)]
    }
}

/// Bounds on `I = ∫ x^deg p`, `Z = ∫ p` and `J = ∫ x^{2 deg} p²/q`, computed concurrently.
pub fn run_bound_triple(
    p: &CurvatureBoundedDensity,
    proposal: ProposalConfig,
    m_degree: u32,
    opts: RefineOptions,
) -> Result<BoundTriple> {
    let ratio = make_squared_ratio_target(p, proposal)?;
    let (i, (z, j)) = rayon::join(
        || refine(p, MomentSpec::new(m_degree), opts),
        || rayon::join(|| refine(p, MomentSpec::new(0), opts), || refine(&ratio, MomentSpec::new(2 * m_degree), opts)),
    );
    Ok(BoundTriple { i: i?, z: z?, j: j? })
}

/// How the subtracted term of the variance is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceForm {
    /// `(I/Z)²/N`.
    #[default]
    Normalized,
    /// `I²/N` with the unnormalized `I`.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBounds {
    pub v_lower: f64,
    pub v_upper: f64,
    pub i: (f64, f64),
    pub z: (f64, f64),
    pub j: (f64, f64),
}

impl VarianceBounds {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.v_lower + self.v_upper)
    }
}

type Iv = (f64, f64);

fn iv_min_max(c: [f64; 4]) -> Iv {
    (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `a / b` for `b` strictly positive.
fn iv_div_pos(a: Iv, b: Iv) -> Iv {
    iv_min_max([a.0 / b.0, a.0 / b.1, a.1 / b.0, a.1 / b.1])
}

fn iv_square(a: Iv) -> Iv {
    let (l2, h2) = (a.0 * a.0, a.1 * a.1);
    if a.0 <= 0.0 && a.1 >= 0.0 {
        (0.0, l2.max(h2))
    } else {
        (l2.min(h2), l2.max(h2))
    }
}

/// Interval enclosure of `J/(N Z²) − (I/Z)²/N` (or `− I²/N` in raw form).
pub fn variance_bounds(i: Iv, z: Iv, j: Iv, n: usize, form: VarianceForm) -> Result<VarianceBounds> {
    if !(z.0 > 0.0) {
        return Err(Error::InvalidBounds(format!("lower bound on Z must be > 0, got {}", z.0)));
    }
    for (name, b) in [("I", i), ("Z", z), ("J", j)] {
        if !(b.0 <= b.1) || !b.0.is_finite() || !b.1.is_finite() {
            return Err(Error::InvalidBounds(format!("{name} bounds [{}, {}] are not an interval", b.0, b.1)));
        }
    }
    if n == 0 {
        return Err(Error::InvalidBounds("N must be >= 1".into()));
    }
    let nf = n as f64;
    let t1 = iv_div_pos(j, iv_square(z));
    let t2 = match form {
        VarianceForm::Normalized => iv_square(iv_div_pos(i, z)),
        VarianceForm::Raw => iv_square(i),
    };
    Ok(VarianceBounds { v_lower: (t1.0 - t2.1) / nf, v_upper: (t1.1 - t2.0) / nf, i, z, j })
}

fn draw(rng: &mut ChaCha8Rng, q: &ProposalConfig) -> f64 {
    let u: f64 = rng.sample(Open01);
    // u in (0,1), so the quantile exists.
    q.mean + q.std() * std_normal_inv_cdf(u).unwrap_or(0.0)
}

fn mc_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MC_STREAM);
    rng
}

fn run_with_seed(p: &CurvatureBoundedDensity, cfg: &ISConfig, z_ref: f64, seed: u64) -> Result<(f64, f64)> {
    let mut rng = mc_rng(seed);
    let q = cfg.proposal;
    let (mut sum_wm, mut sum_w) = (0.0, 0.0);
    for _ in 0..cfg.n_samples {
        let x = draw(&mut rng, &q);
        let w = (-p.phi(x) - q.ln_pdf(x)).exp();
        sum_wm += w * x.powi(cfg.m_degree as i32);
        sum_w += w;
    }
    if !(sum_w > 0.0) {
        return Err(Error::AllWeightsZero);
    }
    Ok((sum_wm / (cfg.n_samples as f64 * z_ref), sum_wm / sum_w))
}

/// One importance-sampling run seeded by `cfg.seed`: `(unbiased, self-normalized)`.
pub fn is_sample_run(p: &CurvatureBoundedDensity, cfg: &ISConfig, z_ref: f64) -> Result<(f64, f64)> {
    if !(z_ref > 0.0) {
        return Err(Error::Domain(format!("reference normalizing constant must be > 0, got {z_ref}")));
    }
    cfg.validate()?;
    run_with_seed(p, cfg, z_ref, cfg.seed)
}

/// Monte Carlo summary over `n_runs` runs (run `r` is seeded with `seed + r`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalStats {
    /// Sample variance of the unbiased estimates.
    pub v_e: f64,
    pub mse: f64,
    pub estimates: Vec<f64>,
}

/// Sample variance and MSE against `ref_moment` of a set of estimates.
pub fn variance_and_mse(estimates: &[f64], ref_moment: f64) -> (f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    let mse = estimates.iter().map(|e| (ref_moment - e) * (ref_moment - e)).sum::<f64>() / n;
    (var, mse)
}

pub fn empirical_variance_mse(
    p: &CurvatureBoundedDensity,
    cfg: &ISConfig,
    ref_moment: f64,
    z_ref: f64,
) -> Result<EmpiricalStats> {
    cfg.validate()?;
    if cfg.n_runs < 2 {
        return Err(Error::Config("empirical variance needs n_runs >= 2".into()));
    }
    if !(z_ref > 0.0) {
        return Err(Error::Domain(format!("reference normalizing constant must be > 0, got {z_ref}")));
    }
    let estimates = (0..cfg.n_runs as u64)
        .into_par_iter()
        .map(|r| run_with_seed(p, cfg, z_ref, cfg.seed.wrapping_add(r)).map(|(u, _)| u))
        .collect::<Result<Vec<f64>>>()?;
    let (v_e, mse) = variance_and_mse(&estimates, ref_moment);
    Ok(EmpiricalStats { v_e, mse, estimates })
}

/// Bootstrap standard error of the sample variance of `estimates`.
pub fn bootstrap_variance_se(estimates: &[f64], n_boot: usize, seed: u64) -> f64 {
    let n = estimates.len();
    let reps: Vec<f64> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = mc_rng(seed.wrapping_add(b));
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let e = estimates[rng.gen_range(0..n)];
                s += e;
                s2 += e * e;
            }
            let mean = s / n as f64;
            (s2 - n as f64 * mean * mean) / (n as f64 - 1.0)
        })
        .collect();
    let m = reps.iter().sum::<f64>() / n_boot as f64;
    (reps.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (n_boot as f64 - 1.0)).sqrt()
}

/// One row of a proposal-variance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub bounds: VarianceBounds,
    pub v_empirical: Option<f64>,
    pub n_i: usize,
    pub n_z: usize,
    pub n_j: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub refine: RefineOptions,
    pub form: VarianceForm,
    /// Run Monte Carlo for each row.
    pub mc: bool,
    /// Normalizing constant for the unbiased estimator; defaults to the `Z` midpoint.
    pub z_ref: Option<f64>,
}

/// Variance bounds for each `θ` in input order; `I` and `Z` are computed once.
/// A failing row is reported in place and does not stop the sweep.
pub fn theta_sweep(
    p: &CurvatureBoundedDensity,
    thetas: &[f64],
    cfg: &ISConfig,
    opts: &SweepOptions,
) -> Result<Vec<Result<SweepRow>>> {
    cfg.validate()?;
    let (i, z) = rayon::join(
        || refine(p, MomentSpec::new(cfg.m_degree), opts.refine),
        || refine(p, MomentSpec::new(0), opts.refine),
    );
    let (i, z) = (i?, z?);
    let z_ref = opts.z_ref.unwrap_or_else(|| z.midpoint());
    Ok(thetas
        .par_iter()
        .map(|&theta| {
            let proposal = ProposalConfig::new(cfg.proposal.mean, theta)?;
            let ratio = make_squared_ratio_target(p, proposal)?;
            let j = refine(&ratio, MomentSpec::new(2 * cfg.m_degree), opts.refine)?;
            let bounds = variance_bounds((i.lower, i.upper), (z.lower, z.upper), (j.lower, j.upper), cfg.n_samples, opts.form)?;
            let v_empirical = if opts.mc {
                let row_cfg = ISConfig { proposal, ..*cfg };
                Some(empirical_variance_mse(p, &row_cfg, i.midpoint() / z_ref, z_ref)?.v_e)
            } else {
                None
            };
            Ok(SweepRow { theta, bounds, v_empirical, n_i: i.n_stop, n_z: z.n_stop, n_j: j.n_stop })
        })
        .collect())
}

pub fn sweep_csv_row(r: &SweepRow) -> Vec<String> {
    let b = &r.bounds;
    vec![
        fmt_f64(r.theta),
        fmt_f64(b.v_lower),
        fmt_f64(b.v_upper),
        fmt_opt(r.v_empirical),
        fmt_f64(b.i.0),
        fmt_f64(b.i.1),
        fmt_f64(b.z.0),
        fmt_f64(b.z.1),
        fmt_f64(b.j.0),
        fmt_f64(b.j.1),
        r.n_i.to_string(),
        r.n_z.to_string(),
        r.n_j.to_string(),
    ]
}

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> io::Result<()> {
    write_csv(w, SWEEP_HEADER, &rows.iter().map(sweep_csv_row).collect::<Vec<_>>())
}
