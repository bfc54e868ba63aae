//! Acceptance suite: eleven criteria, one line each, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use shellgibbs::dynamics::{integrate, ou_step, Scheme, SchemeConfig};
use shellgibbs::gibbs::{b_moment_bound, b_moment_wick, expected_sobolev_sq, sample_gibbs, GibbsParams};
use shellgibbs::nonlinearity::{bilinear_b, energy_pairing, ModelParams};
use shellgibbs::rng::{self, Purpose};
use shellgibbs::spectral::{
    apply_a_power, semigroup_apply, semigroup_bound_constant, sobolev_norm, sobolev_norm_sq, GridParams, ShellState,
};
use shellgibbs::stats::{ks_one_sample, mean_and_se, normal_cdf};
use shellgibbs::verify::{
    bm_ensemble_study, energy_experiment, epsilon_limit_study, generator_identity_suite, initial_state,
    invariance_experiment, ExperimentSpec, GeneratorSuite, InvarianceReport,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn grid(m: usize) -> GridParams {
    GridParams::new(1.0, 2.0, m).unwrap()
}

fn invariance_summary(r: &InvarianceReport) -> String {
    let min_p = r.checkpoints.iter().map(|c| c.report.min_p_value).fold(1.0, f64::min);
    format!(
        "N={} min gof p={:.2e} (level {:.1e}), observables {:.0}% within 3 SE, lag-one {}, blow-ups {}",
        r.ensemble_size,
        min_p,
        r.checkpoints[0].report.per_test_level,
        100.0 * r.observable_fraction_within,
        if r.lag_pass { "stable" } else { "unstable" },
        r.blowups
    )
}

fn generator_identities() -> Outcome {
    let r = generator_identity_suite(&GeneratorSuite::default()).unwrap();
    let nonzero: usize = r.identities.iter().map(|t| t.nonzero).sum();
    outcome(
        r.pass,
        format!("M=16, degree<=4 on shells<=13: {} monomials, {} pairs, {nonzero} nonzero rational residuals", r.basis_size, r.skew_pairs),
    )
}

fn gibbs_moments() -> Outcome {
    let params = GibbsParams::new(1.0, grid(32)).unwrap();
    let samples: Vec<ShellState> = (0..100_000u64)
        .into_par_iter()
        .map(|i| sample_gibbs(&params, &mut rng::stream(1, Purpose::Sampling, i, 0)))
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [-1.0, -0.5] {
        let v: Vec<f64> = samples.iter().map(|s| sobolev_norm_sq(s, alpha)).collect();
        let (mean, se) = mean_and_se(&v);
        let exact = expected_sobolev_sq(&params, alpha, true).value().unwrap();
        let z = (mean - exact) / se;
        pass &= z.abs() <= 3.0;
        parts.push(format!("alpha={alpha}: z={z:.2}"));
    }
    let series = expected_sobolev_sq(&GibbsParams::new(2.0, grid(32)).unwrap(), -0.5, false).value().unwrap();
    pass &= (series - 1.0).abs() <= 1e-12;
    outcome(pass, format!("{}, infinite series {series}", parts.join(", ")))
}

fn b_moment() -> Outcome {
    let params = GibbsParams::new(1.0, grid(32)).unwrap();
    let model = ModelParams::default();
    let v: Vec<f64> = (0..1_000_000u64)
        .into_par_iter()
        .map(|i| {
            let x = sample_gibbs(&params, &mut rng::stream(2, Purpose::MonteCarlo, i, 0));
            let b = bilinear_b(&x, &x, &model).unwrap().mode(5);
            b[0] * b[0] + b[1] * b[1]
        })
        .collect();
    let (mean, se) = mean_and_se(&v);
    let wick = b_moment_wick(5, &params, &model).unwrap();
    let z = (mean - wick) / se;
    let bound_ok = (3..=30).all(|n| b_moment_wick(n, &params, &model).unwrap() <= b_moment_bound(n, &params, &model));
    outcome(
        z.abs() <= 3.0 && bound_ok,
        format!("n=5 Wick {wick} vs MC {mean:.4} (z={z:.2}, 1e6 samples), bound holds for n=3..30: {bound_ok}"),
    )
}

fn energy() -> Outcome {
    let params = GibbsParams::new(1.0, grid(32)).unwrap();
    let model = ModelParams::default();
    let worst = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(3, Purpose::Auxiliary, i, 0);
            let u = if i % 2 == 0 {
                sample_gibbs(&params, &mut r)
            } else {
                let modes = (0..32).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
                ShellState::new(grid(32), modes).unwrap()
            };
            let scale = sobolev_norm(&u, 1.0) * sobolev_norm(&u, 0.0).powi(2);
            energy_pairing(&u, &u, &model).unwrap().abs() / scale
        })
        .reduce(|| 0.0, f64::max);
    let spec = ExperimentSpec { t_end: 10.0, ..Default::default() };
    let r = energy_experiment(&spec, 1000, 1e-9).unwrap();
    outcome(
        worst <= 1e-10 && r.pass,
        format!(
            "max relative pairing {worst:.1e} over 1e4 states; midpoint drift {:.1e} over {} steps (RK4 control {:.1e})",
            r.midpoint.max_relative_drift, r.steps, r.rk4.max_relative_drift
        ),
    )
}

fn ou() -> Outcome {
    let g = grid(32);
    let (nu, dt) = (1.0, 0.01);
    let cfg = SchemeConfig::new(Scheme::OuExact, dt, nu);
    let z = initial_state(&GibbsParams::new(nu, g).unwrap(), 4, 0);
    let draws: Vec<ShellState> = (0..100_000u64)
        .into_par_iter()
        .map(|i| ou_step(&z, &cfg, &mut rng::stream(4, Purpose::Noise, i, 0)).unwrap())
        .collect();
    let level = 0.01 / 64.0;
    let mut min_p: f64 = 1.0;
    for n in 1..=32i64 {
        let k = g.k(n);
        let decay = (-nu * k * k * dt).exp();
        let sd = (-(-2.0 * nu * k * k * dt).exp_m1() / nu).sqrt();
        for j in 0..2 {
            let mean = decay * z.mode(n)[j];
            let xs: Vec<f64> = draws.iter().map(|s| s.mode(n)[j]).collect();
            min_p = min_p.min(ks_one_sample(&xs, |x| normal_cdf((x - mean) / sd)).p_value);
        }
    }
    let spec = ExperimentSpec { flow: Scheme::OuExact, checkpoints: 10, ..Default::default() };
    let r = invariance_experiment(&spec).unwrap();
    outcome(
        min_p >= level && r.pass,
        format!("one-step KS min p {min_p:.2e} (level {level:.1e}, 1e5 draws); ensemble at 10 times: {}", invariance_summary(&r)),
    )
}

fn invariance(flow: Scheme) -> Outcome {
    let r = invariance_experiment(&ExperimentSpec { flow, ..Default::default() }).unwrap();
    let mut detail = invariance_summary(&r);
    for f in r.failures.iter().take(3) {
        detail.push_str(&format!("; {f}"));
    }
    outcome(r.pass, detail)
}

fn epsilon_family() -> Outcome {
    let spec = ExperimentSpec { ensemble_size: 2000, t_end: 0.1, ..Default::default() };
    let r = epsilon_limit_study(&spec).unwrap();
    let params = spec.gibbs().unwrap();
    let model = ModelParams::default();
    let bitwise = (0..20u64).all(|i| {
        let x0 = initial_state(&params, 9, i);
        let visc = SchemeConfig::new(Scheme::ExpEulerViscous, 1e-3, 1.0);
        let mut eps = SchemeConfig::new(Scheme::EpsFamily, 1e-3, 1.0);
        eps.epsilon = 1.0;
        let a = integrate(&x0, &visc, &model, 0.1, 9, i, 1).unwrap();
        let b = integrate(&x0, &eps, &model, 0.1, 9, i, 1).unwrap();
        a.states == b.states
    });
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("eps={}: {} holder {:.3}", row.epsilon, if row.invariance.pass { "pass" } else { "FAIL" }, row.holder_mean))
        .collect();
    let min_pair_p = r.pairs.iter().map(|p| p.min_ks_p).fold(1.0, f64::min);
    outcome(
        r.pass && bitwise,
        format!(
            "N=2000, T=0.1: {}; holder ratio {:.3}; cross-eps KS min p {min_pair_p:.2e}; eps=1 bitwise viscous: {bitwise}",
            rows.join(", "),
            r.holder_ratio
        ),
    )
}

fn bm_convergence() -> Outcome {
    let params = GibbsParams::new(1.0, grid(32)).unwrap();
    let levels = [4, 8, 12, 16, 20, 24, 28, 31];
    let r = bm_ensemble_study(&params, &ModelParams::default(), &levels, 0.5, 1000, 5).unwrap();
    outcome(
        r.pass,
        format!(
            "1e3 states x {} levels: {} violations, max lhs/rhs {:.3}, {} nonzero on low-mode support, geometric decay {}",
            levels.len(),
            r.violations,
            r.max_ratio,
            r.support_nonzero,
            r.geometric_decay
        ),
    )
}

fn smoothing() -> Outcome {
    let g = grid(32);
    let (violations, worst) = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(6, Purpose::Auxiliary, i, 0);
            let scale = 10f64.powf(r.random_range(-3.0..3.0));
            let modes = (0..32).map(|_| [scale * r.random_range(-1.0..1.0), scale * r.random_range(-1.0..1.0)]).collect();
            let u = ShellState::new(g, modes).unwrap();
            let t = 10.0 * (1.0 - r.random::<f64>());
            let p = 2.0 * (1.0 - r.random::<f64>());
            let nu: f64 = 1.0;
            let lhs = sobolev_norm(&apply_a_power(&semigroup_apply(&u, t, nu).unwrap(), p).unwrap(), 0.0);
            let rhs = semigroup_bound_constant(p, nu) * t.powf(-p) * sobolev_norm(&u, 0.0);
            ((lhs > rhs) as usize, lhs / rhs)
        })
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
    outcome(violations == 0, format!("1e4 draws of (u, t, p): {violations} violations, max lhs/rhs {worst:.4}"))
}

/// Runs the binary; a verification verdict (exit 0 or 1) counts as completed.
fn run_cli(out: &Path, threads: &str, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_shellgibbs"))
        .args(args)
        .args(["--format", "csv", "--threads", threads, "--out"])
        .arg(out)
        .env_remove("SHELLGIBBS_DEFAULT_THREADS")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map(|s| matches!(s.code(), Some(0 | 1)))
        .unwrap_or(false)
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    for d in fs::read_dir(root).unwrap() {
        let d = d.unwrap().path();
        for f in fs::read_dir(&d).unwrap() {
            let f = f.unwrap().path();
            if f.extension().is_some_and(|e| e == "csv") {
                let name = format!("{}/{}", d.file_name().unwrap().to_string_lossy(), f.file_name().unwrap().to_string_lossy());
                v.push((name, fs::read(&f).unwrap()));
            }
        }
    }
    v.sort();
    v
}

fn determinism() -> Outcome {
    let runs: Vec<Vec<&str>> = vec![
        vec!["sample-gibbs", "--set", "samples=2000"],
        vec!["run", "--flow", "ou", "--set", "t_end=0.1"],
        vec!["run", "--flow", "viscous", "--set", "t_end=0.1"],
        vec!["run", "--flow", "inviscid", "--set", "t_end=0.1"],
        vec!["run", "--flow", "eps", "--set", "epsilon=0.1", "--set", "t_end=0.01"],
        vec!["verify", "invariance", "--set", "ensemble_size=1000", "--set", "t_end=0.05"],
        vec!["verify", "eps-limit", "--set", "ensemble_size=200", "--set", "t_end=0.01", "--set", "modes=12"],
        vec!["verify", "generators", "--set", "modes=8", "--set", "max_shell=5", "--set", "max_degree=3"],
        vec!["verify", "bm-convergence", "--set", "samples=200", "--set", "m_list=8,16,24"],
        vec!["verify", "m-refinement", "--set", "ensemble_size=50", "--set", "t_end=0.02"],
        vec!["verify", "energy", "--set", "t_end=0.5"],
    ];
    let mut snapshots = Vec::new();
    for threads in ["1", "4", "1"] {
        let dir = tempfile::tempdir().unwrap();
        for args in &runs {
            if !run_cli(dir.path(), threads, args) {
                return outcome(false, format!("command {args:?} failed with {threads} workers"));
            }
        }
        snapshots.push(csv_files(dir.path()));
    }
    let files = snapshots[0].len();
    let same = snapshots.windows(2).all(|w| w[0] == w[1]);
    outcome(same && files >= runs.len(), format!("{files} data files from {} commands identical across 1, 4, 1 workers: {same}", runs.len()))
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("generator identities, exact", Duration::from_secs(60), generator_identities),
        ("Gibbs moment closed forms", Duration::from_secs(60), gibbs_moments),
        ("B moment: Wick vs Monte Carlo and bound", Duration::from_secs(120), b_moment),
        ("energy orthogonality and conservation", Duration::from_secs(120), energy),
        ("OU exactness and invariance", Duration::from_secs(120), ou),
        ("viscous invariance", Duration::from_secs(600), || invariance(Scheme::ExpEulerViscous)),
        ("inviscid invariance", Duration::from_secs(600), || invariance(Scheme::ImplicitMidpointInviscid)),
        ("eps-family", Duration::from_secs(900), epsilon_family),
        ("B^M convergence", Duration::from_secs(60), bm_convergence),
        ("semigroup smoothing", Duration::from_secs(30), smoothing),
        ("determinism across workers", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {} [{:.1} s of {} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
