//! Command-line front end.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Exit codes: 0 ok, 1 configuration or runtime error, 2 ill-posed
//! target, 3 candidate pool exhausted before convergence.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::baseline::{evans_compound, DifferentiableIntegrand};
use crate::bounds::{refine, CompactAnchor, MomentSpec, RefineOptions, StopStatus};
use crate::density::{
    make_logreg_target, make_squared_ratio_target, make_table1, sum_densities, CurvatureBoundedDensity,
    LogisticRegressionConfig, ProposalConfig, Table1Kind,
};
use crate::error::{Error, Result};
use crate::isvar::{
    bootstrap_variance_se, empirical_variance_mse, run_bound_triple, theta_sweep, variance_bounds, write_sweep, ISConfig,
    SweepOptions, VarianceForm,
};
use crate::oracle::moment_reference;
use crate::table::{fmt_f64, write_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ILL_POSED: i32 = 2;
pub const EXIT_POOL_EXHAUSTED: i32 = 3;

pub const BOUND_HEADER: &str = "lower,upper,gap,n_stop,status";
pub const COMPARE_HEADER: &str = "method,budget,lower,upper,abs_err,rel_err,gap,oracle,bound_err,rel_bound_err";
pub const MC_HEADER: &str = "theta,n_samples,n_runs,V_lower,V_upper,V_empirical,V_empirical_se,mse";

pub const COMPARE_BUDGETS: [usize; 3] = [3, 50, 100];
pub const DEFAULT_THETAS: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
const BOOTSTRAP_REPS: usize = 200;

#[derive(Debug, Parser)]
#[command(name = "moment-bounds", version, about = "Certified bounds on moments of unnormalized densities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bound one moment integral and print lower, upper, gap, n_stop and status.
    Bound {
        /// `p` bounds ∫ x^k p; `ratio` bounds ∫ x^k p²/q for the proposal given by --mean/--theta.
        #[arg(long, value_enum, default_value_t = Integral::P)]
        integral: Integral,
    },
    /// Importance-sampling variance bounds over a sweep of proposal variances.
    Isvar,
    /// Compare against the polynomial-envelope baseline at fixed point budgets.
    Compare,
    /// Monte Carlo variance of the importance-sampling estimator at one proposal.
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Integral {
    P,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    Mode,
    T1,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub ell: Option<u64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub t1: Option<f64>,
    /// Base seed for the synthetic dataset and Monte Carlo runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write the per-iteration history CSV (bound only).
    #[arg(long, global = true)]
    pub history: Option<PathBuf>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `random`, or potentials joined by `+`, each `kind` or `kind:delta`
    /// (e.g. `quadratic`, `quadratic+huber:2`).
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// Moment degree (for isvar and mc, the degree of m(x) = x^k).
    #[arg(long, global = true)]
    pub k: Option<u32>,
    /// Stop on the absolute gap instead of the relative one.
    #[arg(long, global = true)]
    pub absolute: bool,
    #[arg(long, global = true)]
    pub max_points: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub anchor: Option<AnchorArg>,
    /// Proposal mean.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mean: Option<f64>,
    /// Proposal variance.
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Comma-separated proposal variances for isvar.
    #[arg(long, global = true, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    #[arg(long, global = true)]
    pub n_runs: Option<usize>,
    /// Add the empirical variance column to isvar.
    #[arg(long, global = true)]
    pub mc: bool,
    /// Subtract I² instead of (I/Z)² in the variance bound.
    #[arg(long, global = true)]
    pub raw_variance: bool,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub k: Option<u32>,
    pub target: Option<TargetSpec>,
    pub refine: RefineSection,
    pub proposal: ProposalSection,
    pub is: IsSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub tau: Option<f64>,
    pub eps: Option<f64>,
    pub ell: Option<u64>,
    pub t1: Option<f64>,
    pub absolute: Option<bool>,
    pub max_points: Option<usize>,
    pub anchor: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalSection {
    pub mean: Option<f64>,
    pub theta: Option<f64>,
    pub thetas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsSection {
    pub n_samples: Option<usize>,
    pub n_runs: Option<usize>,
    pub mc: Option<bool>,
    pub raw_variance: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    /// Seeded synthetic logistic-regression dataset.
    Random {
        seed: Option<u64>,
        #[serde(default = "default_j")]
        j: usize,
        #[serde(default = "default_w_range")]
        w_range: [f64; 2],
        #[serde(default = "default_prior_std")]
        prior_std: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Logistic regression on explicit data.
    Logreg(LogisticRegressionConfig),
    /// Sum of catalog potentials.
    Composite { components: Vec<ComponentSpec> },
}

fn default_j() -> usize {
    10
}
fn default_w_range() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_prior_std() -> f64 {
    1.2
}
fn default_scale() -> f64 {
    1.0
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Random { seed: None, j: default_j(), w_range: default_w_range(), prior_std: default_prior_std(), scale: default_scale() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub kind: Table1Kind,
    #[serde(default = "default_scale")]
    pub delta: f64,
}

impl TargetSpec {
    /// Parses the `--target` flag syntax.
    pub fn parse_flag(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("random") || s.eq_ignore_ascii_case("default") {
            return Ok(Self::default());
        }
        let components = s
            .split('+')
            .map(|part| {
                let (kind, delta) = match part.split_once(':') {
                    Some((k, d)) => (k, d.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad delta in `{part}`: {e}")))?),
                    None => (part, 1.0),
                };
                Ok(ComponentSpec { kind: kind.trim().parse()?, delta })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Composite { components })
    }

    pub fn build(&self, base_seed: u64) -> Result<CurvatureBoundedDensity> {
        match self {
            TargetSpec::Random { seed, j, w_range, prior_std, scale } => {
                if *j == 0 || !(w_range[0] <= w_range[1]) {
                    return Err(Error::Config(format!("random target needs j >= 1 and w_range lo <= hi (got {j}, {w_range:?})")));
                }
                let cfg = LogisticRegressionConfig::random(seed.unwrap_or(base_seed), *j, (w_range[0], w_range[1]), *prior_std, *scale);
                make_logreg_target(&cfg)
            }
            TargetSpec::Logreg(cfg) => make_logreg_target(cfg),
            TargetSpec::Composite { components } => {
                if components.is_empty() {
                    return Err(Error::Config("composite target needs at least one component".into()));
                }
                let parts = components.iter().map(|c| make_table1(c.kind, c.delta)).collect::<Result<Vec<_>>>()?;
                if parts.len() == 1 {
                    Ok(parts.into_iter().next().expect("one component"))
                } else {
                    sum_densities(&parts)
                }
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Fully resolved settings shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Settings {
    pub target: CurvatureBoundedDensity,
    pub k: Option<u32>,
    pub seed: u64,
    pub refine: RefineOptions,
    pub mean: f64,
    pub theta: Option<f64>,
    pub thetas: Option<Vec<f64>>,
    pub n_samples: usize,
    pub n_runs: usize,
    pub mc: bool,
    pub form: VarianceForm,
}

fn parse_anchor(s: &str) -> Result<CompactAnchor> {
    match s.to_ascii_lowercase().as_str() {
        "mode" => Ok(CompactAnchor::Mode),
        "t1" => Ok(CompactAnchor::T1),
        other => Err(Error::Config(format!("anchor must be `mode` or `t1`, got `{other}`"))),
    }
}

impl Settings {
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let cfg = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seed = flags.seed.or(cfg.seed).unwrap_or(0);
        let spec = match &flags.target {
            Some(s) => TargetSpec::parse_flag(s)?,
            None => cfg.target.clone().unwrap_or_default(),
        };
        let d = RefineOptions::default();
        let r = &cfg.refine;
        let anchor = match (flags.anchor, &r.anchor) {
            (Some(AnchorArg::Mode), _) => CompactAnchor::Mode,
            (Some(AnchorArg::T1), _) => CompactAnchor::T1,
            (None, Some(s)) => parse_anchor(s)?,
            (None, None) => d.anchor,
        };
        let refine = RefineOptions {
            tau: flags.tau.or(r.tau).unwrap_or(d.tau),
            t1: flags.t1.or(r.t1).unwrap_or(d.t1),
            eps: flags.eps.or(r.eps).unwrap_or(d.eps),
            ell: flags.ell.or(r.ell).unwrap_or(d.ell),
            absolute: flags.absolute || r.absolute.unwrap_or(d.absolute),
            max_points: flags.max_points.or(r.max_points),
            anchor,
        };
        refine.validate()?;
        let settings = Settings {
            target: spec.build(seed)?,
            k: flags.k.or(cfg.k),
            seed,
            refine,
            mean: flags.mean.or(cfg.proposal.mean).unwrap_or(2.0),
            theta: flags.theta.or(cfg.proposal.theta),
            thetas: flags.thetas.clone().or(cfg.proposal.thetas.clone()),
            n_samples: flags.n_samples.or(cfg.is.n_samples).unwrap_or(20),
            n_runs: flags.n_runs.or(cfg.is.n_runs).unwrap_or(1000),
            mc: flags.mc || cfg.is.mc.unwrap_or(false),
            form: if flags.raw_variance || cfg.is.raw_variance.unwrap_or(false) { VarianceForm::Raw } else { VarianceForm::Normalized },
        };
        if !settings.mean.is_finite() {
            return Err(Error::Config(format!("proposal mean must be finite, got {}", settings.mean)));
        }
        if let Some(ts) = &settings.thetas {
            if ts.is_empty() {
                return Err(Error::Config("theta list is empty".into()));
            }
        }
        Ok(settings)
    }

    fn theta(&self) -> f64 {
        self.theta.unwrap_or(1.5)
    }

    fn is_config(&self, m_degree: u32) -> Result<ISConfig> {
        let c = ISConfig {
            proposal: ProposalConfig::new(self.mean, self.theta())?,
            n_samples: self.n_samples,
            n_runs: self.n_runs,
            seed: self.seed,
            m_degree,
        };
        c.validate()?;
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::IllPosedRatio { .. } | Error::NuUnavailable(_) | Error::NonPositiveCurvature { .. } => EXIT_ILL_POSED,
        _ => EXIT_CONFIG,
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Config(format!("cannot create {}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(e: io::Error) -> Error {
    Error::Config(format!("write failed: {e}"))
}

pub fn cmd_bound(s: &Settings, integral: Integral, out: Option<&Path>, history: Option<&Path>) -> Result<i32> {
    let k = s.k.unwrap_or(0);
    let density = match integral {
        Integral::P => s.target.clone(),
        Integral::Ratio => make_squared_ratio_target(&s.target, ProposalConfig::new(s.mean, s.theta())?)?,
    };
    let rep = refine(&density, MomentSpec::new(k), s.refine)?;
    let mut w = open_out(out)?;
    let row = vec![fmt_f64(rep.lower), fmt_f64(rep.upper), fmt_f64(rep.gap), rep.n_stop.to_string(), rep.status.as_str().to_string()];
    write_csv(&mut w, BOUND_HEADER, &[row]).and_then(|_| w.flush()).map_err(io_err)?;
    if let Some(h) = history {
        let mut hw = open_out(Some(h))?;
        rep.write_history(&mut hw).and_then(|_| hw.flush()).map_err(io_err)?;
    }
    Ok(if rep.status == StopStatus::PoolExhausted { EXIT_POOL_EXHAUSTED } else { EXIT_OK })
}

pub fn cmd_isvar(s: &Settings, out: Option<&Path>) -> Result<i32> {
    let cfg = s.is_config(s.k.unwrap_or(2))?;
    let thetas = s.thetas.clone().unwrap_or_else(|| match s.theta {
        Some(t) => vec![t],
        None => DEFAULT_THETAS.to_vec(),
    });
    let opts = SweepOptions { refine: s.refine, form: s.form, mc: s.mc, z_ref: None };
    let rows = theta_sweep(&s.target, &thetas, &cfg, &opts)?;
    let mut ok = Vec::new();
    let mut first_err = None;
    for (theta, r) in thetas.iter().zip(rows) {
        match r {
            Ok(row) => ok.push(row),
            Err(e) => {
                eprintln!("theta = {theta}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::Config("no rows".into())));
    }
    let mut w = open_out(out)?;
    write_sweep(&mut w, &ok).and_then(|_| w.flush()).map_err(io_err)?;
    Ok(EXIT_OK)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: &'static str,
    pub budget: usize,
    pub lower: f64,
    pub upper: f64,
    pub oracle: f64,
}

impl CompareRow {
    pub fn abs_err(&self) -> f64 {
        (0.5 * (self.lower + self.upper) - self.oracle).abs()
    }

    pub fn rel_err(&self) -> f64 {
        self.abs_err() / self.oracle.abs()
    }

    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }

    /// Largest distance from the oracle value to either bound.
    pub fn bound_err(&self) -> f64 {
        (self.oracle - self.lower).max(self.upper - self.oracle)
    }

    pub fn rel_bound_err(&self) -> f64 {
        self.bound_err() / self.oracle.abs()
    }

    pub fn csv(&self) -> Vec<String> {
        vec![
            self.method.to_string(),
            self.budget.to_string(),
            fmt_f64(self.lower),
            fmt_f64(self.upper),
            fmt_f64(self.abs_err()),
            fmt_f64(self.rel_err()),
            fmt_f64(self.gap()),
            fmt_f64(self.oracle),
            fmt_f64(self.bound_err()),
            fmt_f64(self.rel_bound_err()),
        ]
    }
}

/// Our method with `budget` tangency points against the baseline with
/// `budget` compound points (orders 0 and 1) over the same compact.
pub fn run_compare(d: &CurvatureBoundedDensity, k: u32, budgets: &[usize], opts: RefineOptions) -> Result<Vec<CompareRow>> {
    let f = DifferentiableIntegrand::from_density(d, k)?;
    let per_budget = budgets
        .iter()
        .map(|&b| {
            if b < 2 {
                return Err(Error::Config(format!("comparison budgets must be >= 2, got {b}")));
            }
            let ours = refine(d, MomentSpec::new(k), RefineOptions { tau: f64::MIN_POSITIVE, absolute: false, max_points: Some(b), ..opts })?;
            let e0 = evans_compound(&f, ours.compact, b, 0)?;
            let e1 = evans_compound(&f, ours.compact, b, 1)?;
            Ok((b, ours, e0, e1))
        })
        .collect::<Result<Vec<_>>>()?;
    let compact = per_budget.first().map(|r| r.1.compact).ok_or_else(|| Error::Config("no budgets given".into()))?;
    let oracle = moment_reference(d, k, compact)?.value;
    let mut rows = Vec::new();
    for (budget, ours, e0, e1) in per_budget {
        rows.push(CompareRow { method: "gaussian", budget, lower: ours.lower, upper: ours.upper, oracle });
        rows.push(CompareRow { method: "evans_d0", budget, lower: e0.lower, upper: e0.upper, oracle });
        rows.push(CompareRow { method: "evans_d1", budget, lower: e1.lower, upper: e1.upper, oracle });
    }
    Ok(rows)
}

pub fn cmd_compare(s: &Settings, out: Option<&Path>) -> Result<i32> {
    let rows = run_compare(&s.target, s.k.unwrap_or(0), &COMPARE_BUDGETS, s.refine)?;
    let mut w = open_out(out)?;
    write_csv(&mut w, COMPARE_HEADER, &rows.iter().map(CompareRow::csv).collect::<Vec<_>>()).and_then(|_| w.flush()).map_err(io_err)?;
    Ok(EXIT_OK)
}

pub fn cmd_mc(s: &Settings, out: Option<&Path>) -> Result<i32> {
    let cfg = s.is_config(s.k.unwrap_or(2))?;
    if cfg.n_runs < 2 {
        return Err(Error::Config("mc needs n_runs >= 2".into()));
    }
    let t = run_bound_triple(&s.target, cfg.proposal, cfg.m_degree, s.refine)?;
    let [i, z, j] = t.intervals();
    let v = variance_bounds(i, z, j, cfg.n_samples, s.form)?;
    let z_ref = t.z.midpoint();
    let stats = empirical_variance_mse(&s.target, &cfg, t.i.midpoint() / z_ref, z_ref)?;
    let se = bootstrap_variance_se(&stats.estimates, BOOTSTRAP_REPS, s.seed);
    let row = vec![
        fmt_f64(cfg.proposal.theta),
        cfg.n_samples.to_string(),
        cfg.n_runs.to_string(),
        fmt_f64(v.v_lower),
        fmt_f64(v.v_upper),
        fmt_f64(stats.v_e),
        fmt_f64(se),
        fmt_f64(stats.mse),
    ];
    let mut w = open_out(out)?;
    write_csv(&mut w, MC_HEADER, &[row]).and_then(|_| w.flush()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let f = &cli.flags;
    if let Some(n) = f.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // Fails only if a global pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let s = Settings::resolve(f)?;
    let out = f.out.as_deref();
    match cli.command {
        Command::Bound { integral } => cmd_bound(&s, integral, out, f.history.as_deref()),
        Command::Isvar => cmd_isvar(&s, out),
        Command::Compare => cmd_compare(&s, out),
        Command::Mc => cmd_mc(&s, out),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
