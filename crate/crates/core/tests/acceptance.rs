//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use moment_bounds::baseline::{evans_compound, DifferentiableIntegrand};
use moment_bounds::bounds::{dyadic_pool, refine, MomentSpec, RefineOptions, Refinement, StopStatus};
use moment_bounds::cli::{run_compare, CompareRow};
use moment_bounds::density::{
    make_logreg_target, make_squared_ratio_target, make_table1, CurvatureBoundedDensity, LogisticRegressionConfig,
    ProposalConfig, Table1Kind,
};
use moment_bounds::envelope::UnnormGaussian;
use moment_bounds::gaussmath::{partial_moment, truncated_moment, GaussianParams, Interval};
use moment_bounds::isvar::{
    bootstrap_variance_se, empirical_variance_mse, run_bound_triple, variance_bounds, ISConfig, VarianceForm,
};
use moment_bounds::oracle::{integrate, moment_reference};
use moment_bounds::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SQRT_2PI: f64 = 2.506_628_274_631_000_2;
const N_INSTANCES: u64 = 50;
const THETA: f64 = 1.5;
const PROPOSAL_MEAN: f64 = 2.0;

type Outcome = std::result::Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

#[derive(Debug, Clone)]
struct Instance {
    seed: u64,
    j: usize,
    s: f64,
    target: CurvatureBoundedDensity,
}

fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..N_INSTANCES)
        .map(|seed| {
            let j = rng.gen_range(1..=10);
            let s = rng.gen_range(0.8..=2.0);
            let cfg = LogisticRegressionConfig::random(seed, j, (-2.0, 2.0), s, 1.0);
            Instance { seed, j, s, target: make_logreg_target(&cfg).unwrap() }
        })
        .collect()
}

fn default_instance() -> CurvatureBoundedDensity {
    make_logreg_target(&LogisticRegressionConfig::random(0, 10, (-2.0, 2.0), 1.2, 1.0)).unwrap()
}

fn paper_opts() -> RefineOptions {
    RefineOptions { tau: 1e-4, ell: 10_000, eps: 1e-6, t1: 1.0, ..Default::default() }
}

fn criterion_1() -> Outcome {
    let q = make_table1(Table1Kind::Quadratic, 1.0).unwrap();
    let start = Instant::now();
    let r = refine(&q, MomentSpec::new(0), RefineOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check((r.lower - SQRT_2PI).abs() <= 1e-12 && (r.upper - SQRT_2PI).abs() <= 1e-12, format!("bounds [{}, {}]", r.lower, r.upper))?;
    check(r.n_stop == 1, format!("n_stop = {}", r.n_stop))?;
    check(elapsed < Duration::from_millis(10), format!("took {elapsed:?}"))?;
    Ok(format!("lower = upper = {} after {} point in {elapsed:?}", r.lower, r.n_stop))
}

fn criterion_2() -> Outcome {
    let a = dyadic_pool(Interval::new(-5.8655, 5.8744).unwrap(), 10_000).map_err(|e| e.to_string())?;
    let b = dyadic_pool(Interval::new(-5.9681, 4.0988).unwrap(), 10_000).map_err(|e| e.to_string())?;
    check(a.len() == 6145, format!("first pool has {} elements", a.len()))?;
    check(a[1] - a[0] == 2f64.powi(-9), format!("first step {}", a[1] - a[0]))?;
    check(b.len() == 5633, format!("second pool has {} elements", b.len()))?;
    Ok(format!("{} and {} elements, step 2^-9", a.len(), b.len()))
}

/// Envelope sandwich and tangency on a grid at every iteration.
fn sandwich_run(inst: &Instance, k: u32) -> std::result::Result<usize, String> {
    let mut r = Refinement::new(&inst.target, MomentSpec::new(k), paper_opts()).map_err(|e| e.to_string())?;
    let iv = r.state().compact;
    let (lo, hi) = (iv.lo - 1.0, iv.hi + 1.0);
    let grid: Vec<f64> = (0..10_000).map(|i| lo + (hi - lo) * i as f64 / 9_999.0).collect();
    let pis: Vec<f64> = grid.iter().map(|&x| inst.target.eval_pi(x)).collect();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let env = r.envelopes();
        for (&x, &p) in grid.iter().zip(&pis) {
            let (cl, cu) = (env.lower.eval(x), env.upper.eval(x));
            let slack = 1e-12 * p + f64::MIN_POSITIVE;
            if cl - p > slack || p - cu > slack {
                return Err(format!("seed {} k={k} n={}: x={x} C_lo={cl} pi={p} C_hi={cu}", inst.seed, r.state().points.len()));
            }
        }
        for &t in &r.state().points {
            let p = inst.target.eval_pi(t);
            let (cl, cu) = (env.lower.eval(t), env.upper.eval(t));
            if (cl - p).abs() > 1e-9 * p || (cu - p).abs() > 1e-9 * p {
                return Err(format!("seed {} k={k}: not tangent at t={t}: {cl} {p} {cu}", inst.seed));
            }
        }
        if !r.advance().map_err(|e| e.to_string())? {
            return Ok(iterations);
        }
    }
}

fn criterion_3(insts: &[Instance]) -> Outcome {
    let iters = insts
        .par_iter()
        .map(|inst| Ok(sandwich_run(inst, 0)? + sandwich_run(inst, 2)?))
        .collect::<std::result::Result<Vec<usize>, String>>()?;
    let (j_min, j_max) = (insts.iter().map(|i| i.j).min().unwrap(), insts.iter().map(|i| i.j).max().unwrap());
    let s_min = insts.iter().map(|i| i.s).fold(f64::INFINITY, f64::min);
    let s_max = insts.iter().map(|i| i.s).fold(0.0, f64::max);
    Ok(format!(
        "{} instances (J in [{j_min}, {j_max}], s in [{s_min:.2}, {s_max:.2}]), {} checked iterations",
        insts.len(),
        iters.iter().sum::<usize>()
    ))
}

fn criterion_4(insts: &[Instance]) -> Outcome {
    let stops = insts
        .par_iter()
        .flat_map(|inst| [(inst, 0u32), (inst, 2u32)])
        .map(|(inst, k)| {
            let r = refine(&inst.target, MomentSpec::new(k), paper_opts()).map_err(|e| e.to_string())?;
            for w in r.history.windows(2) {
                check(w[1].gap <= w[0].gap + 1e-14, format!("seed {} k={k}: gap rose {} -> {} at n={}", inst.seed, w[0].gap, w[1].gap, w[1].n))?;
            }
            check(r.status == StopStatus::Converged, format!("seed {} k={k}: status {}", inst.seed, r.status.as_str()))?;
            check(r.n_stop <= 500, format!("seed {} k={k}: n_stop {}", inst.seed, r.n_stop))?;
            Ok(r.n_stop)
        })
        .collect::<std::result::Result<Vec<usize>, String>>()?;
    let (min, max) = (stops.iter().min().unwrap(), stops.iter().max().unwrap());
    Ok(format!("{} runs converged, n_stop in [{min}, {max}]", stops.len()))
}

fn bracket_run(name: &str, seed: u64, d: &CurvatureBoundedDensity, k: u32) -> std::result::Result<f64, String> {
    let opts = paper_opts();
    let mut r = Refinement::new(d, MomentSpec::new(k), opts).map_err(|e| e.to_string())?;
    let oracle = moment_reference(d, k, r.state().compact).map_err(|e| format!("seed {seed} {name}: oracle {e}"))?.value;
    loop {
        let t = r.totals();
        check(
            t.lower - 1e-10 <= oracle && oracle <= t.upper + 1e-10,
            format!("seed {seed} {name}: oracle {oracle} outside [{}, {}] at n={}", t.lower, t.upper, r.state().points.len()),
        )?;
        if !r.advance().map_err(|e| e.to_string())? {
            break;
        }
    }
    let rep = r.report();
    let rel = (rep.midpoint() - oracle).abs() / oracle.abs();
    check(rel <= opts.tau, format!("seed {seed} {name}: midpoint rel error {rel:e} ({})", rep.status.as_str()))?;
    Ok(rel)
}

fn criterion_5(insts: &[Instance]) -> Outcome {
    let proposal = ProposalConfig::new(PROPOSAL_MEAN, THETA).unwrap();
    let results = insts
        .par_iter()
        .map(|inst| {
            let mut worst = bracket_run("Z", inst.seed, &inst.target, 0)?.max(bracket_run("I", inst.seed, &inst.target, 2)?);
            let ill_posed = THETA <= inst.s * inst.s / 2.0;
            match make_squared_ratio_target(&inst.target, proposal) {
                Ok(ratio) => {
                    check(!ill_posed, format!("seed {}: s={} should be ill-posed", inst.seed, inst.s))?;
                    worst = worst.max(bracket_run("J", inst.seed, &ratio, 4)?);
                    Ok((worst, 1usize))
                }
                Err(Error::IllPosedRatio { .. }) if ill_posed => Ok((worst, 0)),
                Err(e) => Err(format!("seed {} (s={}): {e}", inst.seed, inst.s)),
            }
        })
        .collect::<std::result::Result<Vec<(f64, usize)>, String>>()?;
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let with_j = results.iter().map(|r| r.1).sum::<usize>();
    Ok(format!(
        "Z, I on {} instances and J on {with_j} (rest ill-posed at theta={THETA}); worst final rel error {worst:.2e}",
        results.len()
    ))
}

/// `E[X^k]` for `X ~ N(μ, σ²)` by binomial expansion over central moments.
fn normal_raw_moment(k: u32, mu: f64, sigma: f64) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k - j + 1) as f64 / j as f64;
        }
        if j % 2 == 0 {
            let double_fact: f64 = (1..j).step_by(2).map(|i| i as f64).product();
            total += binom * mu.powi((k - j) as i32) * sigma.powi(j as i32) * double_fact;
        }
    }
    total
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let k = rng.gen_range(0..=6u32);
        let (mu, sigma, scale) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.2..3.0), rng.gen_range(0.1..10.0));
        let a = mu + sigma * rng.gen_range(-4.0..3.0);
        let b = a + sigma * rng.gen_range(0.05..4.0);
        let g = UnnormGaussian::new(scale, mu, sigma, mu).unwrap();
        let iv = Interval::new(a, b).unwrap();
        let closed = partial_moment(k, &g, iv);
        // Sign-changing integrands can cancel, so tolerances follow ∫|x^k g|.
        let mag = integrate(|x| (x.powi(k as i32) * g.eval(x)).abs(), iv, 1e-10, 1e-300).map_err(|e| e.to_string())?.value;
        let quad = integrate(|x| x.powi(k as i32) * g.eval(x), iv, 1e-13, 1e-12 * mag).map_err(|e| e.to_string())?.value;
        let err = (closed - quad).abs() / mag;
        worst = worst.max(err);
        check(err <= 1e-8, format!("case {case}: k={k} mu={mu} sigma={sigma} [{a}, {b}]: {closed} vs {quad}"))?;
    }
    let mut worst_full: f64 = 0.0;
    for k in 0..=8u32 {
        for &(mu, sigma) in &[(0.0, 1.0), (1.3, 0.7), (-2.1, 1.9), (0.4, 3.0)] {
            let m = truncated_moment(k as i32, GaussianParams::new(mu, sigma).unwrap(), Interval::real_line()).map_err(|e| e.to_string())?;
            let exact = normal_raw_moment(k, mu, sigma);
            let scale = normal_raw_moment(k, mu.abs(), sigma).abs().max(f64::MIN_POSITIVE);
            let err = (m - exact).abs() / scale;
            worst_full = worst_full.max(err);
            check(err <= 1e-12, format!("full line k={k} mu={mu} sigma={sigma}: {m} vs {exact}"))?;
        }
    }
    Ok(format!("partial moments worst rel {worst:.1e} over 200 cases; full-line k<=8 worst rel {worst_full:.1e}"))
}

fn criterion_7() -> Outcome {
    let p = default_instance();
    let start = Instant::now();
    let proposal = ProposalConfig::new(PROPOSAL_MEAN, THETA).unwrap();
    let n = 20;
    let t = run_bound_triple(&p, proposal, 2, paper_opts()).map_err(|e| e.to_string())?;
    let [i, z, j] = t.intervals();
    let v = variance_bounds(i, z, j, n, VarianceForm::Normalized).map_err(|e| e.to_string())?;
    let ratio = make_squared_ratio_target(&p, proposal).unwrap();
    let zq = moment_reference(&p, 0, t.z.compact).unwrap().value;
    let iq = moment_reference(&p, 2, t.i.compact).unwrap().value;
    let jq = moment_reference(&ratio, 4, t.j.compact).unwrap().value;
    let vq = jq / (n as f64 * zq * zq) - (iq / zq) * (iq / zq) / n as f64;
    check(v.v_lower <= vq && vq <= v.v_upper, format!("quadrature V {vq} outside [{}, {}]", v.v_lower, v.v_upper))?;
    let rel_gap = (v.v_upper - v.v_lower) / vq.abs();
    check(rel_gap <= 2e-3, format!("relative V gap {rel_gap:e}"))?;

    let cfg = ISConfig { proposal, n_samples: n, n_runs: 100_000, seed: 7, m_degree: 2 };
    let z_ref = t.z.midpoint();
    let stats = empirical_variance_mse(&p, &cfg, t.i.midpoint() / z_ref, z_ref).map_err(|e| e.to_string())?;
    let se = bootstrap_variance_se(&stats.estimates, 200, 11);
    check(
        v.v_lower - 3.0 * se <= stats.v_e && stats.v_e <= v.v_upper + 3.0 * se,
        format!("V_e {} outside [{}, {}] +/- 3*{se}", stats.v_e, v.v_lower, v.v_upper),
    )?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "V in [{:.6e}, {:.6e}], quadrature {vq:.6e}, rel gap {rel_gap:.1e}, V_e {:.6e} (se {se:.1e}), {elapsed:.1?}",
        v.v_lower, v.v_upper, stats.v_e
    ))
}

fn criterion_8() -> Outcome {
    let v = variance_bounds((2.641e-3, 2.641e-3), (2.647e-3, 2.647e-3), (1.260e-5, 1.260e-5), 20, VarianceForm::Normalized)
        .map_err(|e| e.to_string())?;
    let rel = (v.v_lower - 4.016e-2).abs() / 4.016e-2;
    check(v.v_lower == v.v_upper && rel <= 1e-3, format!("V = [{}, {}]", v.v_lower, v.v_upper))?;
    Ok(format!("V = {:.6e} (rel diff {rel:.1e})", v.v_lower))
}

fn criterion_9() -> Outcome {
    let p = default_instance();
    let mut notes = Vec::new();
    for (name, k) in [("Z", 0u32), ("I", 2)] {
        let rows = run_compare(&p, k, &[3, 50], RefineOptions::default()).map_err(|e| e.to_string())?;
        for budget in [3, 50] {
            let find = |m: &str| rows.iter().find(|r| r.method == m && r.budget == budget).cloned().unwrap();
            let (ours, ev): (CompareRow, CompareRow) = (find("gaussian"), find("evans_d0"));
            check(
                ours.rel_bound_err() < ev.rel_bound_err(),
                format!("{name} at {budget}: ours {:e} vs evans_d0 {:e}", ours.rel_bound_err(), ev.rel_bound_err()),
            )?;
            if budget == 50 {
                notes.push(format!(
                    "{name}@50 bound err {:.1e} vs {:.1e} (midpoint {:.1e} vs {:.1e})",
                    ours.rel_bound_err(),
                    ev.rel_bound_err(),
                    ours.rel_err(),
                    ev.rel_err()
                ));
            }
        }
    }
    let iv = Interval::new(-1.3, 2.2).unwrap();
    for d in [0usize, 1] {
        let coefs: Vec<f64> = (0..=d + 1).map(|i| 0.7 - 0.45 * i as f64).collect();
        let c = coefs.clone();
        let f = DifferentiableIntegrand::new(3, move |o, x| {
            c.iter()
                .enumerate()
                .skip(o)
                .map(|(i, a)| a * (0..o).map(|j| (i - j) as f64).product::<f64>() * x.powi((i - o) as i32))
                .sum()
        });
        let r = evans_compound(&f, iv, 9, d).map_err(|e| e.to_string())?;
        let exact: f64 = coefs.iter().enumerate().map(|(i, a)| a * (iv.hi.powi(i as i32 + 1) - iv.lo.powi(i as i32 + 1)) / (i + 1) as f64).sum();
        check(
            (r.lower - exact).abs() <= 1e-12 * exact.abs() && (r.upper - exact).abs() <= 1e-12 * exact.abs(),
            format!("d={d}: [{}, {}] vs {exact}", r.lower, r.upper),
        )?;
    }
    Ok(format!("{}; polynomial exactness holds for d=0,1", notes.join("; ")))
}

fn run_bin(args: &[&str], out: &std::path::Path) -> std::result::Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_moment-bounds"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    check(status.success(), format!("{args:?} exited with {status}"))?;
    std::fs::read(out).map_err(|e| e.to_string())
}

fn criterion_10() -> Outcome {
    let dir = std::env::temp_dir().join(format!("moment-bounds-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let cases: [(&str, Vec<&str>); 2] = [
        ("compare", vec!["compare", "--seed", "3"]),
        ("isvar", vec!["isvar", "--seed", "3", "--mc", "--n-runs", "2000"]),
    ];
    let mut sizes = Vec::new();
    for (name, args) in cases {
        let a = run_bin(&args, &dir.join(format!("{name}-a.csv")))?;
        let mut args_b = args.clone();
        args_b.extend(["--jobs", "2"]);
        let b = run_bin(&args_b, &dir.join(format!("{name}-b.csv")))?;
        check(a == b, format!("{name} outputs differ"))?;
        check(a.len() > 100, format!("{name} output suspiciously short"))?;
        sizes.push(format!("{name} {} bytes", a.len()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("byte-identical reruns: {}", sizes.join(", ")))
}

fn main() {
    let start = Instant::now();
    let insts = instances();
    let criteria: Vec<Criterion> = vec![
        ("exact collapse on the quadratic target", Box::new(criterion_1)),
        ("dyadic pool counts", Box::new(criterion_2)),
        ("sandwich and tangency at every iteration", Box::new(|| criterion_3(&insts))),
        ("gap monotonicity and convergence", Box::new(|| criterion_4(&insts))),
        ("oracle bracketing of Z, I and J", Box::new(|| criterion_5(&insts))),
        ("truncated-moment kernel", Box::new(criterion_6)),
        ("variance-bound enclosure", Box::new(criterion_7)),
        ("variance-formula consistency", Box::new(criterion_8)),
        ("baseline ranking and polynomial exactness", Box::new(criterion_9)),
        ("determinism of compare and isvar", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS ({secs:.2}s) {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL ({secs:.2}s) {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
