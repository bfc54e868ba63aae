use serde_json::json;

use shellgibbs::dynamics::integrate;
use shellgibbs::gibbs::{expected_sobolev_sq, marginal_gof_test_at, sample_gibbs_ensemble};
use shellgibbs::spectral::sobolev_norm_sq;
use shellgibbs::stats::mean_and_se;
use shellgibbs::verify::{
    bm_ensemble_study, energy_conservation_report, energy_experiment, epsilon_limit_study,
    generator_identity_suite, initial_state, invariance_experiment, m_refinement_study,
};

use crate::config::RunConfig;
use crate::output::{mode_header, number, table, RunDir};
use crate::{CliError, Experiment};

fn verdict(pass: bool) -> String {
    if pass { "PASS" } else { "FAIL" }.to_string()
}

fn finish(dir: &RunDir, title: &str, mut rows: Vec<(String, String)>, pass: bool) -> Result<String, CliError> {
    rows.push(("verdict".into(), verdict(pass)));
    rows.push(("run directory".into(), dir.path().display().to_string()));
    let body = table(title, &rows);
    dir.text("summary.txt", &body)?;
    if pass {
        Ok(body)
    } else {
        Err(CliError::Failed(body))
    }
}

pub fn sample_gibbs(cfg: &RunConfig) -> Result<String, CliError> {
    let params = cfg.gibbs()?;
    let count: usize = cfg.get("samples")?;
    let seed = cfg.seed()?;
    let alphas: Vec<f64> = cfg.list("alpha_list")?;
    let family_level: f64 = cfg.get("family_level")?;
    if count < 100 {
        return Err(CliError::Config(format!("samples must be at least 100, got {count}")));
    }
    let dir = RunDir::create(cfg, "sample-gibbs")?;
    let samples = sample_gibbs_ensemble(&params, count, seed);
    let mut header = vec!["sample".to_string()];
    header.extend(mode_header(params.grid().modes()));
    dir.csv(
        "samples.csv",
        &header,
        samples.iter().enumerate().map(|(i, s)| {
            let mut row = vec![i as f64];
            row.extend(s.to_flat());
            row
        }),
    )?;
    let gof = marginal_gof_test_at(&samples, &params, family_level, seed)?;
    let moments: Vec<_> = alphas
        .iter()
        .map(|&alpha| {
            let v: Vec<f64> = samples.iter().map(|s| sobolev_norm_sq(s, alpha)).collect();
            let (mean, se) = mean_and_se(&v);
            let expected = expected_sobolev_sq(&params, alpha, true).value();
            json!({ "alpha": alpha, "mean": mean, "std_error": se, "expected": expected })
        })
        .collect();
    dir.json("summary.json", &json!({ "samples": count, "gof": gof, "sobolev_moments": moments }))?;
    let rows = vec![
        ("samples".into(), count.to_string()),
        ("gof min p".into(), number(gof.min_p_value)),
        ("gof".into(), verdict(gof.pass)),
    ];
    let mut body = table("sample-gibbs", &rows);
    body.push_str(&format!("  run directory  {}\n", dir.path().display()));
    dir.text("summary.txt", &body)?;
    Ok(body)
}

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.experiment()?;
    let record_every: u64 = cfg.get("record_every")?;
    let scheme = spec.scheme_config(spec.flow, spec.epsilon);
    let gibbs = spec.gibbs()?;
    let dir = RunDir::create(cfg, &format!("run-{}", spec.flow.name()))?;
    let x0 = initial_state(&gibbs, spec.seed, 0);
    let rec = integrate(&x0, &scheme, &spec.model, spec.t_end, spec.seed, 0, record_every)?;
    let mut header = vec!["t".to_string()];
    header.extend(mode_header(spec.grid.modes()));
    header.push("energy".into());
    dir.csv(
        "trajectory.csv",
        &header,
        rec.times.iter().zip(&rec.states).zip(&rec.energy).map(|((t, s), e)| {
            let mut row = vec![*t];
            row.extend(s.to_flat());
            row.push(*e);
            row
        }),
    )?;
    let drift = energy_conservation_report(&rec);
    let failure = rec.failure.as_ref().map(|e| e.to_string());
    dir.json(
        "diagnostics.json",
        &json!({
            "flow": spec.flow,
            "steps_taken": rec.steps_taken,
            "energy_drift": drift,
            "record": rec,
            "failure": failure,
        }),
    )?;
    let rows = vec![
        ("flow".into(), spec.flow.name().to_string()),
        ("steps".into(), rec.steps_taken.to_string()),
        ("max relative energy drift".into(), number(drift.max_relative_drift)),
    ];
    let mut body = table("run", &rows);
    body.push_str(&format!("  run directory  {}\n", dir.path().display()));
    dir.text("summary.txt", &body)?;
    match failure {
        Some(f) => Err(CliError::Blowup(format!("{f}; partial trajectory kept in {}", dir.path().display()))),
        None => Ok(body),
    }
}

pub fn verify(cfg: &RunConfig, experiment: Experiment) -> Result<String, CliError> {
    match experiment {
        Experiment::Invariance => invariance(cfg),
        Experiment::Generators => generators(cfg),
        Experiment::BmConvergence => bm(cfg),
        Experiment::EpsLimit => eps(cfg),
        Experiment::MRefinement => refinement(cfg),
        Experiment::Energy => energy(cfg),
    }
}

fn invariance(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.experiment()?;
    let dir = RunDir::create(cfg, &format!("invariance-{}", spec.flow.name()))?;
    let r = invariance_experiment(&spec)?;
    dir.json("report.json", &r)?;
    let m = spec.grid.modes();
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).flat_map(|n| [format!("var_{n}_re"), format!("var_{n}_im")]));
    dir.csv(
        "variances.csv",
        &header,
        r.checkpoints.iter().map(|c| {
            let mut row = vec![c.time];
            row.extend(c.report.per_mode_variance.iter().flatten());
            row
        }),
    )?;
    let header: Vec<String> = ["observable", "expected", "mean", "std_error", "z"].map(String::from).to_vec();
    dir.csv(
        "observables.csv",
        &header,
        r.observables
            .iter()
            .enumerate()
            .map(|(i, o)| vec![i as f64, o.expected, o.mean, o.std_error, o.z]),
    )?;
    let mut rows = vec![
        ("flow".into(), spec.flow.name().to_string()),
        ("trajectories".into(), spec.ensemble_size.to_string()),
        ("blow-ups".into(), r.blowups.to_string()),
    ];
    for c in &r.checkpoints {
        rows.push((format!("gof t = {}", c.time), format!("{} (min p {})", verdict(c.report.pass), number(c.report.min_p_value))));
    }
    rows.push(("observables within 3 SE".into(), format!("{:.1}%", 100.0 * r.observable_fraction_within)));
    rows.push(("lag-one stationarity".into(), verdict(r.lag_pass)));
    for f in &r.failures {
        rows.push(("failure".into(), f.clone()));
    }
    finish(&dir, "verify invariance", rows, r.pass)
}

fn generators(cfg: &RunConfig) -> Result<String, CliError> {
    let suite = cfg.generator_suite()?;
    let dir = RunDir::create(cfg, "generators")?;
    let r = generator_identity_suite(&suite)?;
    dir.json("report.json", &r)?;
    let header: Vec<String> = ["identity", "checked", "nonzero", "max_abs_residual"].map(String::from).to_vec();
    dir.csv(
        "identities.csv",
        &header,
        r.identities
            .iter()
            .enumerate()
            .map(|(i, t)| vec![i as f64, t.checked as f64, t.nonzero as f64, t.max_abs_residual]),
    )?;
    let mut rows = vec![("basis monomials".into(), r.basis_size.to_string()), ("pairs".into(), r.skew_pairs.to_string())];
    for t in &r.identities {
        let status = if t.nonzero == 0 {
            format!("exact zero on {} inputs", t.checked)
        } else {
            format!("FAILED on {} of {} inputs, e.g. {}", t.nonzero, t.checked, t.examples.join("; "))
        };
        rows.push((t.identity.clone(), status));
    }
    finish(&dir, "verify generators", rows, r.pass)
}

fn bm(cfg: &RunConfig) -> Result<String, CliError> {
    let params = cfg.gibbs()?;
    let model = cfg.model()?;
    let m = params.grid().modes();
    let levels: Vec<usize> = cfg.list::<usize>("m_list")?.into_iter().filter(|&l| l >= 3 && l < m).collect();
    if levels.is_empty() {
        return Err(CliError::Config(format!("m_list has no level in 3..{m}")));
    }
    let dir = RunDir::create(cfg, "bm-convergence")?;
    let r = bm_ensemble_study(&params, &model, &levels, cfg.get("alpha")?, cfg.get("samples")?, cfg.seed()?)?;
    dir.json("report.json", &r)?;
    let header: Vec<String> = ["m", "lhs", "rhs"].map(String::from).to_vec();
    dir.csv(
        "geometric.csv",
        &header,
        r.geometric_rows.iter().map(|row| vec![row.m as f64, row.lhs, row.rhs]),
    )?;
    let rows = vec![
        ("samples".into(), r.samples.to_string()),
        ("levels".into(), format!("{:?}", r.m_list)),
        ("bound violations".into(), r.violations.to_string()),
        ("max lhs / rhs".into(), number(r.max_ratio)),
        ("nonzero on low-mode support".into(), r.support_nonzero.to_string()),
        ("geometric decay".into(), verdict(r.geometric_decay)),
    ];
    finish(&dir, "verify bm-convergence", rows, r.pass)
}

fn eps(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.experiment()?;
    let dir = RunDir::create(cfg, "eps-limit")?;
    let r = epsilon_limit_study(&spec)?;
    dir.json("report.json", &r)?;
    let header: Vec<String> = ["epsilon", "dt", "steps", "holder_mean", "holder_std_error", "invariance_pass"]
        .map(String::from)
        .to_vec();
    dir.csv(
        "epsilon.csv",
        &header,
        r.rows.iter().map(|row| {
            vec![
                row.epsilon,
                row.dt,
                row.steps as f64,
                row.holder_mean,
                row.holder_std_error,
                row.invariance.pass as u8 as f64,
            ]
        }),
    )?;
    let mut rows = Vec::new();
    for row in &r.rows {
        rows.push((
            format!("eps = {}", row.epsilon),
            format!("invariance {}, holder {}", verdict(row.invariance.pass), number(row.holder_mean)),
        ));
    }
    for p in &r.pairs {
        rows.push((format!("ks {} vs {}", p.eps_a, p.eps_b), format!("{} (min p {})", verdict(p.pass), number(p.min_ks_p))));
    }
    rows.push(("holder ratio".into(), number(r.holder_ratio)));
    finish(&dir, "verify eps-limit", rows, r.pass)
}

fn refinement(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.experiment()?;
    let dir = RunDir::create(cfg, "m-refinement")?;
    let r = m_refinement_study(&spec, cfg.get("alpha")?)?;
    dir.json("report.json", &r)?;
    let header: Vec<String> = ["m_coarse", "m_fine", "mean_difference", "std_error", "max_difference"]
        .map(String::from)
        .to_vec();
    dir.csv(
        "refinement.csv",
        &header,
        r.rows
            .iter()
            .map(|row| vec![row.m_coarse as f64, row.m_fine as f64, row.mean_difference, row.std_error, row.max_difference]),
    )?;
    let mut rows: Vec<(String, String)> = r
        .rows
        .iter()
        .map(|row| (format!("{} -> {}", row.m_coarse, row.m_fine), number(row.mean_difference)))
        .collect();
    rows.push(("non-increasing".into(), verdict(r.monotone)));
    finish(&dir, "verify m-refinement", rows, r.pass)
}

fn energy(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.experiment()?;
    let dir = RunDir::create(cfg, "energy")?;
    let r = energy_experiment(&spec, cfg.get("rk4_steps")?, cfg.get("energy_tolerance")?)?;
    dir.json("report.json", &r)?;
    let header: Vec<String> = ["steps", "dt", "max_relative_drift", "terminal_relative_drift"].map(String::from).to_vec();
    dir.csv(
        "drift.csv",
        &header,
        [
            vec![r.steps as f64, r.dt, r.midpoint.max_relative_drift, r.midpoint.terminal_relative_drift],
            vec![r.rk4_steps as f64, r.dt, r.rk4.max_relative_drift, r.rk4.terminal_relative_drift],
        ],
    )?;
    let rows = vec![
        ("midpoint steps".into(), r.steps.to_string()),
        ("midpoint max drift".into(), number(r.midpoint.max_relative_drift)),
        ("rk4 max drift".into(), number(r.rk4.max_relative_drift)),
        ("tolerance".into(), number(r.tolerance)),
    ];
    finish(&dir, "verify energy", rows, r.pass)
}
