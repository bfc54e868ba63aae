//! Time integration of the shell flows.
//!
//! * Ornstein-Uhlenbeck: exact Gaussian transition per coordinate.
//! * Viscous and vanishing-viscosity families: exponential Euler with the
//!   exact stochastic convolution, `u' = e^{-nu eps dt A}(u - dt B^m(u,u)) + eta`.
//! * Inviscid: implicit midpoint. The default solver splits `B^m(x,x)` into
//!   two-shell exchanges, each a linear skew flow solved in closed form, and
//!   composes them symmetrically. The plain fixed-point solver of the
//!   monolithic midpoint equation is also available.
//!
//! All noise is drawn from addressed streams (see [`crate::rng`]), one block
//! per step, `2M` normals in coordinate order regardless of scheme.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::nonlinearity::{accumulate_b, bilinear_bound_constant, ModelParams, Term};
use crate::rng::{self, Purpose};
use crate::spectral::{semigroup_bound_constant, sobolev_norm, GridParams, ShellState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    OuExact,
    ExpEulerViscous,
    ImplicitMidpointInviscid,
    EpsFamily,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::OuExact => "ou",
            Scheme::ExpEulerViscous => "viscous",
            Scheme::ImplicitMidpointInviscid => "inviscid",
            Scheme::EpsFamily => "eps",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Scheme::ImplicitMidpointInviscid)
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ou" | "ou-exact" => Ok(Scheme::OuExact),
            "viscous" | "exp-euler-viscous" => Ok(Scheme::ExpEulerViscous),
            "inviscid" | "implicit-midpoint-inviscid" => Ok(Scheme::ImplicitMidpointInviscid),
            "eps" | "epsilon" | "eps-family" => Ok(Scheme::EpsFamily),
            other => Err(format!("unknown flow '{other}' (expected ou, viscous, inviscid or eps)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MidpointSolver {
    /// Symmetric composition of exactly solved two-shell exchanges.
    Split,
    /// Fixed-point iteration on the full midpoint equation.
    FixedPoint,
}

impl std::str::FromStr for MidpointSolver {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "split" => Ok(MidpointSolver::Split),
            "fixed-point" | "fixed_point" | "fixedpoint" => Ok(MidpointSolver::FixedPoint),
            other => Err(format!("unknown midpoint solver '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub solver_tol: f64,
    pub solver_max_iters: u32,
    pub max_halvings: u32,
    pub midpoint_solver: MidpointSolver,
    pub blowup_norm_cap: f64,
    /// Blow-up is monitored in `H^{-norm_alpha}`.
    pub norm_alpha: f64,
    /// Galerkin level `m` of the nonlinearity; `None` means the grid size.
    pub galerkin: Option<usize>,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, dt: f64, nu: f64) -> Self {
        Self {
            scheme,
            dt,
            nu,
            epsilon: 1.0,
            solver_tol: 1e-12,
            solver_max_iters: 50,
            max_halvings: 12,
            midpoint_solver: MidpointSolver::Split,
            blowup_norm_cap: 1e6,
            norm_alpha: 0.5,
            galerkin: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return domain(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return domain(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return domain(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.solver_tol > 0.0) {
            return domain("solver_tol must be positive");
        }
        if self.solver_max_iters == 0 {
            return domain("solver_max_iters must be at least 1");
        }
        if !(self.blowup_norm_cap > 0.0) {
            return domain("blowup_norm_cap must be positive");
        }
        Ok(())
    }

    fn effective_epsilon(&self) -> f64 {
        match self.scheme {
            Scheme::EpsFamily => self.epsilon,
            _ => 1.0,
        }
    }
}

/// Precomputed per-shell coefficients for repeated stepping on one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: GridParams,
    cfg: SchemeConfig,
    model: ModelParams,
    level: usize,
    kt: Vec<f64>,
    decay: Vec<f64>,
    noise_sd: Vec<f64>,
    norm_weights: Vec<f64>,
    exact_pairs: bool,
    scratch: Vec<[f64; 2]>,
    scratch2: Vec<[f64; 2]>,
}

impl Stepper {
    pub fn new(grid: GridParams, cfg: SchemeConfig, model: ModelParams) -> Result<Self> {
        cfg.validate()?;
        let m = grid.modes();
        let level = cfg.galerkin.unwrap_or(m);
        if level < 3 || level > m {
            return domain(format!("Galerkin level must lie in 3..={m}, got {level}"));
        }
        let eps = cfg.effective_epsilon();
        let kt: Vec<f64> = (0..=m as i64 + 2).map(|n| grid.k(n)).collect();
        let mut decay = Vec::with_capacity(m);
        let mut noise_sd = Vec::with_capacity(m);
        for n in 1..=m {
            let rate = cfg.nu * eps * kt[n] * kt[n] * cfg.dt;
            decay.push((-rate).exp());
            noise_sd.push((-(-2.0 * rate).exp_m1() / cfg.nu).sqrt());
        }
        let norm_weights = (1..=m).map(|n| kt[n].powf(-2.0 * cfg.norm_alpha)).collect();
        Ok(Self {
            grid,
            cfg,
            model,
            level,
            kt,
            decay,
            noise_sd,
            norm_weights,
            exact_pairs: model.b_back.is_none_or(|c| c == model.b),
            scratch: vec![[0.0; 2]; m],
            scratch2: vec![[0.0; 2]; m],
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridParams {
        &self.grid
    }

    /// Per-shell decay `e^{-nu eps k_n^2 dt}`.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// Per-shell noise standard deviation.
    pub fn noise_sd(&self) -> &[f64] {
        &self.noise_sd
    }

    fn norm(&self, u: &[[f64; 2]]) -> f64 {
        u.iter()
            .zip(&self.norm_weights)
            .map(|(x, w)| w * (x[0] * x[0] + x[1] * x[1]))
            .sum::<f64>()
            .sqrt()
    }

    /// `B^m(u, u)` into `out`.
    fn drift(&self, u: &[[f64; 2]], out: &mut [[f64; 2]]) {
        let kt = &self.kt;
        accumulate_b(|n| kt[n as usize], &self.model, u, u, self.level, &mut out[..self.level]);
        for slot in &mut out[self.level..] {
            *slot = [0.0; 2];
        }
    }

    /// Advances `u` by one step of length `dt` starting at time `t`.
    /// Returns the number of solver iterations (0 for explicit schemes).
    pub fn step<R: Rng>(&mut self, u: &mut [[f64; 2]], rng: &mut R, t: f64) -> Result<u32> {
        let iters = match self.cfg.scheme {
            Scheme::OuExact => {
                for (n, x) in u.iter_mut().enumerate() {
                    for c in x.iter_mut() {
                        *c = self.decay[n] * *c + self.noise_sd[n] * rng::standard_normal(rng);
                    }
                }
                0
            }
            Scheme::ExpEulerViscous | Scheme::EpsFamily => {
                let dt = self.cfg.dt;
                if !self.model.is_trivial() {
                    let mut b = std::mem::take(&mut self.scratch);
                    self.drift(u, &mut b);
                    for (x, bx) in u.iter_mut().zip(&b) {
                        x[0] -= dt * bx[0];
                        x[1] -= dt * bx[1];
                    }
                    self.scratch = b;
                }
                for (n, x) in u.iter_mut().enumerate() {
                    for c in x.iter_mut() {
                        *c = self.decay[n] * *c + self.noise_sd[n] * rng::standard_normal(rng);
                    }
                }
                0
            }
            Scheme::ImplicitMidpointInviscid => match self.cfg.midpoint_solver {
                MidpointSolver::Split => {
                    self.split_midpoint(u, self.cfg.dt);
                    0
                }
                MidpointSolver::FixedPoint => self.fixed_point_halving(u, self.cfg.dt, t, 0)?,
            },
        };
        let norm = self.norm(u);
        if !(norm.is_finite() && norm <= self.cfg.blowup_norm_cap) {
            return Err(Error::Blowup {
                time: t + self.cfg.dt,
                norm,
            });
        }
        Ok(iters)
    }

    fn pair_block(&self, term: &Term, k: f64, f: [f64; 2]) -> [[f64; 2]; 2] {
        let c = -term.sign * self.model.coefficient(term.coeff) * k;
        let mut blk = [[0.0; 2]; 2];
        for (comp, parts) in term.parts.iter().enumerate() {
            for pr in parts {
                blk[comp][pr.jv] += c * pr.sign * f[pr.ju];
            }
        }
        blk
    }

    /// Exact midpoint step of the exchange `y_p' = X y_q`, `y_q' = Y y_p`.
    fn pair_step(&self, u: &mut [[f64; 2]], p: usize, q: usize, x: [[f64; 2]; 2], y: [[f64; 2]; 2], h: f64) {
        let (yp, yq) = (u[p - 1], u[q - 1]);
        let mv = |m: &[[f64; 2]; 2], v: [f64; 2]| [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
        if self.exact_pairs {
            let fro: f64 = x.iter().chain(&y).flatten().map(|v| v * v).sum();
            let theta_sq = fro / 4.0 * h * h / 4.0;
            let (lp, lq) = (mv(&x, yq), mv(&y, yp));
            let a = (1.0 - theta_sq) / (1.0 + theta_sq);
            let s = h / (1.0 + theta_sq);
            u[p - 1] = [a * yp[0] + s * lp[0], a * yp[1] + s * lp[1]];
            u[q - 1] = [a * yq[0] + s * lq[0], a * yq[1] + s * lq[1]];
        } else {
            let hh = h / 2.0;
            let xq = mv(&x, yq);
            let rp = [yp[0] + hh * xq[0], yp[1] + hh * xq[1]];
            let yyp = mv(&y, yp);
            let rq = [yq[0] + hh * yyp[0], yq[1] + hh * yyp[1]];
            let yrp = mv(&y, rp);
            let rhs = [rq[0] + hh * yrp[0], rq[1] + hh * yrp[1]];
            let mut a = [[0.0; 2]; 2];
            for (i, row) in a.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    let yx = y[i][0] * x[0][j] + y[i][1] * x[1][j];
                    *v = if i == j { 1.0 } else { 0.0 } - hh * hh * yx;
                }
            }
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let nq = [
                (a[1][1] * rhs[0] - a[0][1] * rhs[1]) / det,
                (a[0][0] * rhs[1] - a[1][0] * rhs[0]) / det,
            ];
            let xn = mv(&x, nq);
            u[p - 1] = [rp[0] + hh * xn[0], rp[1] + hh * xn[1]];
            u[q - 1] = nq;
        }
    }

    /// Exchange between shells `n` and `n+2` through frozen shell `n+1`.
    fn a_pair(&self, u: &mut [[f64; 2]], n: usize, h: f64) {
        let terms = self.model.terms();
        let k = self.kt[n + 1];
        let f = u[n];
        let x = self.pair_block(&terms[0], k, f);
        let y = self.pair_block(&terms[2], k, f);
        self.pair_step(u, n, n + 2, x, y, h);
    }

    /// Exchange between shells `n+1` and `n+2` through frozen shell `n`.
    fn b_pair(&self, u: &mut [[f64; 2]], n: usize, h: f64) {
        let terms = self.model.terms();
        let k = self.kt[n + 1];
        let f = u[n - 1];
        let x = self.pair_block(&terms[1], k, f);
        let y = self.pair_block(&terms[3], k, f);
        self.pair_step(u, n + 1, n + 2, x, y, h);
    }

    fn split_midpoint(&self, u: &mut [[f64; 2]], h: f64) {
        let top = self.level - 2;
        let half = h / 2.0;
        for n in 1..=top {
            self.a_pair(u, n, half);
            self.b_pair(u, n, half);
        }
        for n in (1..=top).rev() {
            self.b_pair(u, n, half);
            self.a_pair(u, n, half);
        }
    }

    fn fixed_point(&mut self, u: &mut [[f64; 2]], h: f64) -> std::result::Result<u32, String> {
        let scale = u.iter().map(|x| x[0] * x[0] + x[1] * x[1]).sum::<f64>().sqrt();
        let mut next: Vec<[f64; 2]> = u.to_vec();
        let mut mid = std::mem::take(&mut self.scratch2);
        let mut b = std::mem::take(&mut self.scratch);
        let mut result = Err(format!("no convergence in {} iterations", self.cfg.solver_max_iters));
        for it in 1..=self.cfg.solver_max_iters {
            for ((m, x), y) in mid.iter_mut().zip(u.iter()).zip(&next) {
                *m = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
            }
            self.drift(&mid, &mut b);
            let mut change = 0.0;
            for ((y, x), bx) in next.iter_mut().zip(u.iter()).zip(&b) {
                let new = [x[0] - h * bx[0], x[1] - h * bx[1]];
                change += (new[0] - y[0]).powi(2) + (new[1] - y[1]).powi(2);
                *y = new;
            }
            if !change.is_finite() {
                result = Err("iteration diverged".into());
                break;
            }
            if change.sqrt() <= self.cfg.solver_tol * scale.max(f64::MIN_POSITIVE) {
                result = Ok(it);
                break;
            }
        }
        self.scratch = b;
        self.scratch2 = mid;
        if result.is_ok() {
            u.copy_from_slice(&next);
        }
        result
    }

    fn fixed_point_halving(&mut self, u: &mut [[f64; 2]], h: f64, t: f64, depth: u32) -> Result<u32> {
        match self.fixed_point(u, h) {
            Ok(it) => Ok(it),
            Err(reason) => {
                if depth >= self.cfg.max_halvings {
                    return Err(Error::StepFailure {
                        time: t,
                        reason: format!("{reason} after {depth} step halvings"),
                    });
                }
                let a = self.fixed_point_halving(u, h / 2.0, t, depth + 1)?;
                let b = self.fixed_point_halving(u, h / 2.0, t + h / 2.0, depth + 1)?;
                Ok(a + b)
            }
        }
    }
}

fn expect_scheme(cfg: &SchemeConfig, expected: &[Scheme]) -> Result<()> {
    if !expected.contains(&cfg.scheme) {
        return Err(Error::SchemeMismatch {
            expected: expected[0].name(),
            actual: cfg.scheme.name(),
        });
    }
    Ok(())
}

fn single_step<R: Rng>(u: &ShellState, cfg: &SchemeConfig, model: ModelParams, rng: &mut R) -> Result<ShellState> {
    let mut s = Stepper::new(*u.grid(), *cfg, model)?;
    let mut modes = u.modes().to_vec();
    s.step(&mut modes, rng, 0.0)?;
    Ok(ShellState::from_parts_unchecked(*u.grid(), modes))
}

/// Exact Ornstein-Uhlenbeck transition over one step.
pub fn ou_step<R: Rng>(z: &ShellState, cfg: &SchemeConfig, rng: &mut R) -> Result<ShellState> {
    expect_scheme(cfg, &[Scheme::OuExact])?;
    single_step(z, cfg, ModelParams::sabra(0.0, 0.0), rng)
}

/// One exponential-Euler step of the stochastic viscous flow.
pub fn viscous_step<R: Rng>(u: &ShellState, cfg: &SchemeConfig, model: &ModelParams, rng: &mut R) -> Result<ShellState> {
    expect_scheme(cfg, &[Scheme::ExpEulerViscous])?;
    single_step(u, cfg, *model, rng)
}

/// One step of the vanishing-viscosity family at `cfg.epsilon`.
pub fn epsilon_step<R: Rng>(u: &ShellState, cfg: &SchemeConfig, model: &ModelParams, rng: &mut R) -> Result<ShellState> {
    expect_scheme(cfg, &[Scheme::EpsFamily])?;
    single_step(u, cfg, *model, rng)
}

/// One implicit-midpoint step of the inviscid flow.
pub fn inviscid_step(u: &ShellState, cfg: &SchemeConfig, model: &ModelParams) -> Result<ShellState> {
    expect_scheme(cfg, &[Scheme::ImplicitMidpointInviscid])?;
    single_step(u, cfg, *model, &mut rng::stream(0, Purpose::Auxiliary, 0, 0))
}

/// Classical RK4 step of `du/dt = -B^m(u,u)`; a non-conservative reference.
pub fn rk4_inviscid_step(u: &ShellState, dt: f64, model: &ModelParams, m: usize) -> Result<ShellState> {
    let grid = *u.grid();
    if m < 3 || m > grid.modes() {
        return domain(format!("Galerkin level must lie in 3..={}, got {m}", grid.modes()));
    }
    let f = |x: &[[f64; 2]]| {
        let mut out = vec![[0.0; 2]; x.len()];
        accumulate_b(|n| grid.k(n), model, x, x, m, &mut out[..m]);
        out.iter().map(|b| [-b[0], -b[1]]).collect::<Vec<_>>()
    };
    let axpy = |x: &[[f64; 2]], a: f64, y: &[[f64; 2]]| -> Vec<[f64; 2]> {
        x.iter().zip(y).map(|(p, q)| [p[0] + a * q[0], p[1] + a * q[1]]).collect()
    };
    let x0 = u.modes();
    let k1 = f(x0);
    let k2 = f(&axpy(x0, dt / 2.0, &k1));
    let k3 = f(&axpy(x0, dt / 2.0, &k2));
    let k4 = f(&axpy(x0, dt, &k3));
    let modes = (0..x0.len())
        .map(|i| {
            let mut v = x0[i];
            for c in 0..2 {
                v[c] += dt / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
            }
            v
        })
        .collect();
    Ok(ShellState::from_parts_unchecked(grid, modes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<ShellState>,
    pub energy: Vec<f64>,
    /// `H^{-norm_alpha}` norm at each recorded time.
    pub neg_norm: Vec<f64>,
    /// Solver iterations accumulated since the previous record.
    pub iterations: Vec<u32>,
    pub steps_taken: u64,
    #[serde(skip)]
    pub failure: Option<Error>,
}

impl TrajectoryRecord {
    pub fn last_state(&self) -> &ShellState {
        self.states.last().expect("record holds the initial state")
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Number of uniform steps covering `[0, t_end]`.
pub fn step_count(t_end: f64, dt: f64) -> u64 {
    (t_end / dt).round().max(0.0) as u64
}

/// Integrates from `u0` over `[0, t_end]`, recording every `record_every`
/// steps and at the end. Noise for step `s` comes from stream
/// `(seed, Noise, trajectory, s)`. Failures end the record early.
pub fn integrate(
    u0: &ShellState,
    cfg: &SchemeConfig,
    model: &ModelParams,
    t_end: f64,
    seed: u64,
    trajectory: u64,
    record_every: u64,
) -> Result<TrajectoryRecord> {
    if !(t_end >= 0.0) {
        return domain(format!("t_end must be nonnegative, got {t_end}"));
    }
    if record_every == 0 {
        return domain("record_every must be at least 1");
    }
    let grid = *u0.grid();
    let mut stepper = Stepper::new(grid, *cfg, *model)?;
    let steps = step_count(t_end, cfg.dt);
    let mut rec = TrajectoryRecord {
        times: vec![0.0],
        states: vec![u0.clone()],
        energy: vec![u0.energy()],
        neg_norm: vec![sobolev_norm(u0, -cfg.norm_alpha)],
        iterations: vec![0],
        steps_taken: 0,
        failure: None,
    };
    let mut u = u0.modes().to_vec();
    let mut iters = 0u32;
    for s in 0..steps {
        let t = s as f64 * cfg.dt;
        let mut r = rng::stream(seed, Purpose::Noise, trajectory, s);
        match stepper.step(&mut u, &mut r, t) {
            Ok(i) => iters += i,
            Err(e) => {
                rec.failure = Some(e);
                return Ok(rec);
            }
        }
        rec.steps_taken = s + 1;
        if (s + 1) % record_every == 0 || s + 1 == steps {
            let state = ShellState::from_parts_unchecked(grid, u.clone());
            rec.times.push((s + 1) as f64 * cfg.dt);
            rec.energy.push(state.energy());
            rec.neg_norm.push(stepper.norm(&u));
            rec.states.push(state);
            rec.iterations.push(iters);
            iters = 0;
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Horizon {
    pub c0: f64,
    pub radius: f64,
    /// `f64::INFINITY` for zero data.
    pub tau: f64,
}

/// Radius and time of the local existence argument:
/// `C0 = c_B(-alpha,-alpha) c_{(1+alpha)/2,nu} 2/(1-alpha)`,
/// `R = 3(|x| + |z0|)`, `tau = [8 C0 (|x| + |z0|)]^{2/(alpha-1)}` with norms
/// in `H^{-alpha}`.
pub fn local_horizon_estimate(
    u0: &ShellState,
    z_norm: f64,
    cfg: &SchemeConfig,
    model: &ModelParams,
    alpha: f64,
) -> Result<Horizon> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if !(z_norm >= 0.0) {
        return domain("noise norm must be nonnegative");
    }
    let cb = bilinear_bound_constant(-alpha, -alpha, model, u0.grid());
    let c0 = cb * semigroup_bound_constant((1.0 + alpha) / 2.0, cfg.nu) * 2.0 / (1.0 - alpha);
    let s = sobolev_norm(u0, -alpha) + z_norm;
    let tau = if s == 0.0 || c0 == 0.0 {
        f64::INFINITY
    } else {
        (8.0 * c0 * s).powf(2.0 / (alpha - 1.0))
    };
    Ok(Horizon {
        c0,
        radius: 3.0 * s,
        tau,
    })
}
