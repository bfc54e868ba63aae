//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default, so
//! an empty file is a valid configuration. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use shellgibbs::dynamics::{MidpointSolver, Scheme};
use shellgibbs::gibbs::GibbsParams;
use shellgibbs::nonlinearity::{ModelParams, Variant};
use shellgibbs::spectral::GridParams;
use shellgibbs::verify::{ExperimentSpec, GeneratorSuite};

use crate::CliError;

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("flow", "viscous", "ou | viscous | inviscid | eps"),
    ("variant", "sabra", "sabra | goy"),
    ("a", "1", "forward coefficient"),
    ("b", "-0.5", "middle coefficient"),
    ("b_back", "", "backward coefficient when it differs from b (falsification only)"),
    ("k0", "1", "base wavenumber"),
    ("lambda", "2", "shell ratio"),
    ("modes", "32", "number of shells M"),
    ("nu", "1", "viscosity / inverse temperature"),
    ("epsilon", "1", "epsilon of the eps flow"),
    ("dt", "0.001", "time step"),
    ("t_end", "1", "final time"),
    ("ensemble_size", "10000", "trajectories per ensemble"),
    ("samples", "10000", "Gibbs samples for sample-gibbs and bm-convergence"),
    ("checkpoints", "2", "test times per ensemble"),
    ("family_level", "0.01", "family-wise significance level"),
    ("midpoint_solver", "split", "split | fixed-point"),
    ("galerkin", "", "Galerkin level m (empty: M)"),
    ("solver_tol", "1e-12", "fixed-point tolerance"),
    ("blowup_norm_cap", "1e6", "blow-up threshold on the H^-1/2 norm"),
    ("record_every", "1", "steps between recorded states in run"),
    ("record_dt", "0.001", "recorded grid spacing for path statistics"),
    ("epsilon_list", "1,0.1,0.01", "eps values of eps-limit"),
    ("alpha_list", "-0.5,-1", "Sobolev indices reported by sample-gibbs"),
    ("m_list", "8,12,16,20,24,28,32", "Galerkin levels of m-refinement and bm-convergence"),
    ("alpha", "0.5", "norm index of m-refinement and bm-convergence"),
    ("holder_beta", "0.4", "Holder exponent"),
    ("holder_alpha", "0.5", "path norm is H^{-2-holder_alpha}"),
    ("max_shell", "13", "generators: basis shells"),
    ("max_degree", "4", "generators: basis degree"),
    ("skew_degree", "2", "generators: all pairs up to this degree"),
    ("skew_samples", "20000", "generators: extra seeded pairs"),
    ("rk4_steps", "1000", "energy: RK4 control steps"),
    ("energy_tolerance", "1e-9", "energy: allowed relative drift"),
    ("seed", "0", "master seed"),
    ("threads", "auto", "worker count (auto: SHELLGIBBS_DEFAULT_THREADS or all cores)"),
    ("format", "both", "csv | json | both"),
    ("out", "runs", "output root directory"),
];

/// Keys that never influence results and stay out of the run hash.
const PRESENTATION_KEYS: &[&str] = &["threads", "out"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

/// Resolved key-value map with typed accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = Self::defaults();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            cfg.merge_text(&text)?;
        }
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key '{key}'"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("documented key")
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Canonical `key=value` lines of every result-relevant key.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !PRESENTATION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Config(format!("{key}: cannot parse '{raw}': {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Config(format!("{key}: cannot parse '{s}': {e}")))
            })
            .collect()
    }

    pub fn format(&self) -> Result<Format, CliError> {
        match self.raw("format") {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            other => Err(CliError::Config(format!("format: expected csv, json or both, got '{other}'"))),
        }
    }

    /// Worker count; `None` lets rayon decide.
    pub fn threads(&self) -> Result<Option<usize>, CliError> {
        let raw = self.raw("threads");
        let raw = if raw == "auto" {
            match std::env::var("SHELLGIBBS_DEFAULT_THREADS") {
                Ok(v) if !v.trim().is_empty() => v.trim().to_string(),
                _ => return Ok(None),
            }
        } else {
            raw.to_string()
        };
        match raw.parse::<usize>() {
            Ok(0) | Err(_) => Err(CliError::Config(format!("threads: expected a positive integer or auto, got '{raw}'"))),
            Ok(n) => Ok(Some(n)),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn grid(&self) -> Result<GridParams, CliError> {
        Ok(GridParams::new(self.get("k0")?, self.get("lambda")?, self.get("modes")?)?)
    }

    pub fn gibbs(&self) -> Result<GibbsParams, CliError> {
        Ok(GibbsParams::new(self.get("nu")?, self.grid()?)?)
    }

    pub fn model(&self) -> Result<ModelParams, CliError> {
        let variant: Variant = self.get("variant")?;
        let mut m = ModelParams::new(variant, self.get("a")?, self.get("b")?)?;
        m.b_back = self.optional("b_back")?;
        Ok(m)
    }

    pub fn flow(&self) -> Result<Scheme, CliError> {
        self.get("flow")
    }

    pub fn experiment(&self) -> Result<ExperimentSpec, CliError> {
        let solver: MidpointSolver = self.get("midpoint_solver")?;
        let spec = ExperimentSpec {
            flow: self.flow()?,
            ensemble_size: self.get("ensemble_size")?,
            t_end: self.get("t_end")?,
            dt: self.get("dt")?,
            grid: self.grid()?,
            model: self.model()?,
            nu: self.get("nu")?,
            epsilon: self.get("epsilon")?,
            epsilon_list: self.list("epsilon_list")?,
            alpha_list: self.list("alpha_list")?,
            m_list: self.list("m_list")?,
            seed: self.seed()?,
            checkpoints: self.get("checkpoints")?,
            family_level: self.get("family_level")?,
            midpoint_solver: solver,
            galerkin: self.optional("galerkin")?,
            solver_tol: self.get("solver_tol")?,
            blowup_norm_cap: self.get("blowup_norm_cap")?,
            record_dt: self.get("record_dt")?,
            holder_beta: self.get("holder_beta")?,
            holder_alpha: self.get("holder_alpha")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn generator_suite(&self) -> Result<GeneratorSuite, CliError> {
        Ok(GeneratorSuite {
            grid: self.grid()?,
            nu: self.get("nu")?,
            model: self.model()?,
            max_shell: self.get("max_shell")?,
            max_degree: self.get("max_degree")?,
            skew_degree: self.get("skew_degree")?,
            skew_samples: self.get("skew_samples")?,
            seed: self.seed()?,
        })
    }
}
