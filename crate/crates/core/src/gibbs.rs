//! The Gaussian Gibbs measure `mu^nu`: every real coordinate is an
//! independent `Normal(0, 1/nu)`. Exact sampling, closed-form moments and
//! marginal goodness-of-fit testing of ensembles.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::nonlinearity::{bilinear_b, diagonal_terms, ModelParams};
use crate::rng::{self, Purpose};
use crate::spectral::{Coord, GridParams, ShellState};
use crate::stats::{
    chi_squared_two_sided_p, compensated_sum, ks_one_sample, mean_and_se, normal_cdf,
    normal_two_sided_p,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GibbsParams {
    nu: f64,
    grid: GridParams,
}

impl GibbsParams {
    pub fn new(nu: f64, grid: GridParams) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return domain(format!("nu must be positive, got {nu}"));
        }
        Ok(Self { nu, grid })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn grid(&self) -> &GridParams {
        &self.grid
    }
}

/// One exact draw from `mu^{nu,M}`; consumes `2M` normals in coordinate order.
pub fn sample_gibbs(params: &GibbsParams, rng: &mut impl Rng) -> ShellState {
    let sd = params.nu.recip().sqrt();
    let modes = (0..params.grid.modes())
        .map(|_| [sd * rng::standard_normal(rng), sd * rng::standard_normal(rng)])
        .collect();
    ShellState::from_parts_unchecked(params.grid, modes)
}

/// `N` samples, each from its own addressed stream.
pub fn sample_gibbs_ensemble(params: &GibbsParams, count: usize, seed: u64) -> Vec<ShellState> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_gibbs(params, &mut rng::stream(seed, Purpose::Sampling, i, 0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SobolevMoment {
    Finite(f64),
    Divergent,
}

impl SobolevMoment {
    pub fn value(&self) -> Option<f64> {
        match self {
            SobolevMoment::Finite(v) => Some(*v),
            SobolevMoment::Divergent => None,
        }
    }
}

/// `E ||x||^2_{H^alpha}`: the `M`-term sum, or the infinite series when
/// `truncated` is false.
pub fn expected_sobolev_sq(params: &GibbsParams, alpha: f64, truncated: bool) -> SobolevMoment {
    let g = &params.grid;
    let scale = 2.0 / params.nu;
    if truncated {
        let s = compensated_sum((1..=g.modes()).map(|n| g.k(n as i64).powf(2.0 * alpha)));
        return SobolevMoment::Finite(scale * s);
    }
    if alpha >= 0.0 {
        return SobolevMoment::Divergent;
    }
    let r = g.lambda().powf(2.0 * alpha);
    SobolevMoment::Finite(scale * g.k0().powf(2.0 * alpha) * r / (1.0 - r))
}

/// Exact `E |B_n(x, x)|^2` by Wick calculus over the monomials of both
/// components. Inputs are supported on `1..=M`; shells `1..=M+1` are valid.
pub fn b_moment_wick(n: usize, params: &GibbsParams, model: &ModelParams) -> Result<f64> {
    let m = params.grid.modes();
    if n < 1 || n > m + 1 {
        return domain(format!("shell {n} outside 1..={}", m + 1));
    }
    let inv = params.nu.recip();
    let mut total = 0.0;
    for j in 1..=2u8 {
        let mut mono: BTreeMap<(Coord, Coord), f64> = BTreeMap::new();
        for t in diagonal_terms(model, n, j, m) {
            let key = if t.left <= t.right {
                (t.left, t.right)
            } else {
                (t.right, t.left)
            };
            let c = t.sign * model.coefficient(t.coeff) * params.grid.k(t.k_index);
            *mono.entry(key).or_insert(0.0) += c;
        }
        // E Q^2 = (E Q)^2 + Var Q for Q = sum c_ij x_i x_j
        let mut mean = 0.0;
        let mut var = 0.0;
        for ((l, r), c) in mono {
            if l == r {
                mean += c * inv;
                var += 2.0 * c * c * inv * inv;
            } else {
                var += c * c * inv * inv;
            }
        }
        total += mean * mean + var;
    }
    Ok(total)
}

/// Interior-shell moment `E |B_n(x,x)|^2`, `3 <= n <= M-2`.
pub fn b_moment_exact(n: usize, params: &GibbsParams, model: &ModelParams) -> Result<f64> {
    let m = params.grid.modes();
    if n < 3 || n + 2 > m {
        return domain(format!("interior shells are 3..={}, got {n}", m - 2));
    }
    b_moment_wick(n, params, model)
}

/// Upper bound `(16/nu^2) k0^2 {a^2 lambda^4 + b^2 lambda^2 + (a+b)^2} lambda^{2(n-1)}`.
pub fn b_moment_bound(n: usize, params: &GibbsParams, model: &ModelParams) -> f64 {
    let g = &params.grid;
    let (a, b, l) = (model.a, model.b, g.lambda());
    16.0 / (params.nu * params.nu)
        * g.k0()
        * g.k0()
        * (a * a * l.powi(4) + b * b * l * l + (a + b) * (a + b))
        * l.powf(2.0 * (n as f64 - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// `E ||B(x,x)||^p_{H^{-1-alpha}}` over all output shells `1..=M+1`.
/// Exact for `p = 2`; Monte Carlo with `samples` draws otherwise.
pub fn b_norm_moment(
    params: &GibbsParams,
    model: &ModelParams,
    alpha: f64,
    p: u32,
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if !(alpha > 0.0) {
        return domain(format!("alpha must be positive, got {alpha}"));
    }
    if p == 0 || p % 2 != 0 {
        return domain(format!("p must be a positive even integer, got {p}"));
    }
    let g = params.grid;
    if p == 2 {
        let mut terms = Vec::with_capacity(g.modes() + 1);
        for n in 1..=g.modes() + 1 {
            terms.push(g.k(n as i64).powf(-2.0 - 2.0 * alpha) * b_moment_wick(n, params, model)?);
        }
        return Ok(MomentEstimate {
            value: compensated_sum(terms),
            std_error: 0.0,
            samples: 0,
        });
    }
    if samples < 2 {
        return domain("Monte Carlo moment needs at least two samples");
    }
    use rayon::prelude::*;
    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let x = sample_gibbs(params, &mut rng::stream(seed, Purpose::MonteCarlo, i, 0));
            let b = bilinear_b(&x, &x, model).expect("same grid");
            crate::spectral::sobolev_norm(&b, -1.0 - alpha).powi(p as i32)
        })
        .collect();
    let (value, std_error) = mean_and_se(&values);
    Ok(MomentEstimate {
        value,
        std_error,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestVerdict {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub left: Coord,
    pub right: Coord,
    pub value: f64,
    pub z: f64,
}

/// Per-mode and aggregate statistics of an ensemble with hypothesis-test
/// verdicts under a Bonferroni rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub sample_count: usize,
    pub per_mode_mean: Vec<[f64; 2]>,
    pub per_mode_variance: Vec<[f64; 2]>,
    pub cross_covariances: Vec<CovarianceEstimate>,
    pub test_verdicts: Vec<TestVerdict>,
    pub family_level: f64,
    pub per_test_level: f64,
    pub min_p_value: f64,
    pub pass: bool,
    pub seed: u64,
}

impl EnsembleReport {
    pub fn failures(&self) -> impl Iterator<Item = &TestVerdict> {
        self.test_verdicts.iter().filter(|t| !t.pass)
    }
}

/// Marginal goodness of fit at the default 1% family level.
pub fn marginal_gof_test(samples: &[ShellState], params: &GibbsParams) -> Result<EnsembleReport> {
    marginal_gof_test_at(samples, params, 0.01, 0)
}

/// Tests `samples` against `mu^nu`:
/// per-coordinate KS against `Normal(0, 1/nu)`, per-mode radial chi-square
/// (`nu |x_n|^2 ~ chi2(2)` summed over samples) and covariance z-tests for the
/// within-shell pair and all nearest-neighbour cross pairs. All tests share a
/// Bonferroni budget of `family_level`.
pub fn marginal_gof_test_at(
    samples: &[ShellState],
    params: &GibbsParams,
    family_level: f64,
    seed: u64,
) -> Result<EnsembleReport> {
    if samples.len() < 100 {
        return domain(format!("at least 100 samples required, got {}", samples.len()));
    }
    let grid = params.grid;
    if samples.iter().any(|s| *s.grid() != grid) {
        return domain("samples live on a different grid");
    }
    let m = grid.modes();
    let count = samples.len();
    let nf = count as f64;
    let sd = params.nu.recip().sqrt();

    let column = |c: Coord| -> Vec<f64> {
        samples.iter().map(|s| s.modes()[c.n - 1][c.j as usize - 1]).collect()
    };

    let mut per_mode_mean = Vec::with_capacity(m);
    let mut per_mode_variance = Vec::with_capacity(m);
    let mut raw: Vec<(String, f64, f64)> = Vec::new();
    for n in 1..=m {
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        for j in 1..=2u8 {
            let col = column(Coord { n, j });
            let mu = compensated_sum(col.iter().copied()) / nf;
            mean[j as usize - 1] = mu;
            var[j as usize - 1] = compensated_sum(col.iter().map(|x| (x - mu) * (x - mu))) / (nf - 1.0);
            let ks = ks_one_sample(&col, |x| normal_cdf(x / sd));
            raw.push((format!("ks {}", Coord { n, j }), ks.statistic, ks.p_value));
        }
        per_mode_mean.push(mean);
        per_mode_variance.push(var);
        let s = params.nu
            * compensated_sum(samples.iter().map(|x| {
                let v = x.modes()[n - 1];
                v[0] * v[0] + v[1] * v[1]
            }));
        raw.push((format!("chi2 shell {n}"), s, chi_squared_two_sided_p(s, 2.0 * nf)));
    }

    let mut pairs = Vec::new();
    for n in 1..=m {
        pairs.push((Coord { n, j: 1 }, Coord { n, j: 2 }));
        if n < m {
            for j in 1..=2u8 {
                for jj in 1..=2u8 {
                    pairs.push((Coord { n, j }, Coord { n: n + 1, j: jj }));
                }
            }
        }
    }
    let mut cross_covariances = Vec::with_capacity(pairs.len());
    for (l, r) in pairs {
        let (x, y) = (column(l), column(r));
        let prod: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (value, se) = mean_and_se(&prod);
        let z = if se > 0.0 { value / se } else { 0.0 };
        raw.push((format!("cov {l} {r}"), z, normal_two_sided_p(z)));
        cross_covariances.push(CovarianceEstimate {
            left: l,
            right: r,
            value,
            z,
        });
    }

    let per_test_level = family_level / raw.len() as f64;
    let test_verdicts: Vec<TestVerdict> = raw
        .into_iter()
        .map(|(name, statistic, p_value)| TestVerdict {
            name,
            statistic,
            p_value,
            pass: p_value >= per_test_level,
        })
        .collect();
    let min_p_value = test_verdicts.iter().map(|t| t.p_value).fold(1.0, f64::min);
    Ok(EnsembleReport {
        sample_count: count,
        per_mode_mean,
        per_mode_variance,
        cross_covariances,
        pass: test_verdicts.iter().all(|t| t.pass),
        test_verdicts,
        family_level,
        per_test_level,
        min_p_value,
        seed,
    })
}
