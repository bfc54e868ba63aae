//! Bilinear shell interactions `B(u, v)` for the SABRA and GOY models in real
//! coordinates, their Galerkin truncations and the associated constants.
//!
//! Both variants share the same index structure. For output shell `n` there
//! are four interaction terms
//!
//! | term | coefficient | wavenumber | `u` shell | `v` shell |
//! |------|-------------|------------|-----------|-----------|
//! | 1    | `a`         | `k_{n+1}`  | `n+1`     | `n+2`     |
//! | 2    | `b`         | `k_n`      | `n-1`     | `n+1`     |
//! | 3    | `a`         | `k_{n-1}`  | `n-1`     | `n-2`     |
//! | 4    | `b`         | `k_{n-1}`  | `n-2`     | `n-1`     |
//!
//! and they differ only in which real products enter the real and imaginary
//! parts. The GOY products come from expanding `b_n` with conjugated factors.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::spectral::{project, Coord, GridParams, ShellState};
use crate::stats::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sabra,
    Goy,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sabra" => Ok(Variant::Sabra),
            "goy" => Ok(Variant::Goy),
            other => Err(format!("unknown model variant '{other}'")),
        }
    }
}

/// Model variant and interaction coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: Variant,
    pub a: f64,
    pub b: f64,
    /// Coefficient of the `k_{n-1} u_{n-2} v_{n-1}` term. `None` means `b`;
    /// any other value breaks energy conservation and exists only to
    /// falsify the verification suites.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_back: Option<f64>,
}

impl ModelParams {
    pub fn new(variant: Variant, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return domain("interaction coefficients must be finite");
        }
        Ok(Self {
            variant,
            a,
            b,
            b_back: None,
        })
    }

    pub fn sabra(a: f64, b: f64) -> Self {
        Self {
            variant: Variant::Sabra,
            a,
            b,
            b_back: None,
        }
    }

    pub fn goy(a: f64, b: f64) -> Self {
        Self {
            variant: Variant::Goy,
            a,
            b,
            b_back: None,
        }
    }

    /// `a = b = 0`: the nonlinearity vanishes identically.
    pub fn is_trivial(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.b_back.is_none_or(|c| c == 0.0)
    }

    pub fn coefficient(&self, kind: CoeffKind) -> f64 {
        match kind {
            CoeffKind::A => self.a,
            CoeffKind::B => self.b,
            CoeffKind::BBack => self.b_back.unwrap_or(self.b),
        }
    }

    pub fn terms(&self) -> &'static [Term; 4] {
        match self.variant {
            Variant::Sabra => &SABRA_TERMS,
            Variant::Goy => &GOY_TERMS,
        }
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::sabra(1.0, -0.5)
    }
}

/// Which model coefficient multiplies a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoeffKind {
    A,
    B,
    BBack,
}

/// One real product `sign * u_{., ju} * v_{., jv}` (components are 0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Product {
    pub sign: f64,
    pub ju: usize,
    pub jv: usize,
}

const fn p(sign: f64, ju: usize, jv: usize) -> Product {
    Product { sign, ju, jv }
}

/// Interaction term contributing
/// `sign * c * k_{n+k_shift} * sum(products)` to output shell `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coeff: CoeffKind,
    pub sign: f64,
    pub k_shift: i64,
    pub u_shift: i64,
    pub v_shift: i64,
    /// Products entering `B_{n,1}` and `B_{n,2}`.
    pub parts: [[Product; 2]; 2],
}

// SABRA products, transcribed from the real-coordinate component formulas.
const SABRA_FWD: [[Product; 2]; 2] = [
    [p(-1.0, 1, 0), p(1.0, 0, 1)],
    [p(-1.0, 0, 0), p(-1.0, 1, 1)],
];
const SABRA_BWD: [[Product; 2]; 2] = [
    [p(1.0, 1, 0), p(1.0, 0, 1)],
    [p(-1.0, 0, 0), p(1.0, 1, 1)],
];
// GOY: i * conj(u) * conj(v) = (u1 v2 + u2 v1) + i (u1 v1 - u2 v2).
const GOY_PARTS: [[Product; 2]; 2] = [
    [p(1.0, 0, 1), p(1.0, 1, 0)],
    [p(1.0, 0, 0), p(-1.0, 1, 1)],
];

static SABRA_TERMS: [Term; 4] = [
    Term { coeff: CoeffKind::A, sign: 1.0, k_shift: 1, u_shift: 1, v_shift: 2, parts: SABRA_FWD },
    Term { coeff: CoeffKind::B, sign: 1.0, k_shift: 0, u_shift: -1, v_shift: 1, parts: SABRA_FWD },
    Term { coeff: CoeffKind::A, sign: 1.0, k_shift: -1, u_shift: -1, v_shift: -2, parts: SABRA_BWD },
    Term { coeff: CoeffKind::BBack, sign: 1.0, k_shift: -1, u_shift: -2, v_shift: -1, parts: SABRA_BWD },
];

static GOY_TERMS: [Term; 4] = [
    Term { coeff: CoeffKind::A, sign: 1.0, k_shift: 1, u_shift: 1, v_shift: 2, parts: GOY_PARTS },
    Term { coeff: CoeffKind::B, sign: 1.0, k_shift: 0, u_shift: -1, v_shift: 1, parts: GOY_PARTS },
    Term { coeff: CoeffKind::A, sign: -1.0, k_shift: -1, u_shift: -1, v_shift: -2, parts: GOY_PARTS },
    Term { coeff: CoeffKind::BBack, sign: -1.0, k_shift: -1, u_shift: -2, v_shift: -1, parts: GOY_PARTS },
];

/// Accumulates `B(Pi_m u, Pi_m v)` into `out` (shells `1..=out.len()`).
/// Input shells above `m` (or above the slice length) are treated as zero.
pub(crate) fn accumulate_b(
    k: impl Fn(i64) -> f64,
    params: &ModelParams,
    u: &[[f64; 2]],
    v: &[[f64; 2]],
    m: usize,
    out: &mut [[f64; 2]],
) {
    let m_u = m.min(u.len()) as i64;
    let m_v = m.min(v.len()) as i64;
    for slot in out.iter_mut() {
        *slot = [0.0; 2];
    }
    for term in params.terms() {
        let c = term.sign * params.coefficient(term.coeff);
        if c == 0.0 {
            continue;
        }
        for (idx, slot) in out.iter_mut().enumerate() {
            let n = idx as i64 + 1;
            let nu = n + term.u_shift;
            let nv = n + term.v_shift;
            if nu < 1 || nu > m_u || nv < 1 || nv > m_v {
                continue;
            }
            let x = &u[nu as usize - 1];
            let y = &v[nv as usize - 1];
            let w = c * k(n + term.k_shift);
            for (comp, parts) in term.parts.iter().enumerate() {
                let s: f64 = parts.iter().map(|pr| pr.sign * x[pr.ju] * y[pr.jv]).sum();
                slot[comp] += w * s;
            }
        }
    }
}

fn check_same_grid(u: &ShellState, v: &ShellState) -> Result<()> {
    if u.grid() != v.grid() {
        return domain("bilinear form arguments live on different grids");
    }
    Ok(())
}

/// Exact image `B(u, v)` of two truncated states; the result carries `M + 1`
/// shells because the backward terms populate shell `M + 1`.
pub fn bilinear_b(u: &ShellState, v: &ShellState, params: &ModelParams) -> Result<ShellState> {
    check_same_grid(u, v)?;
    let out_grid = u.grid().extended(1);
    let mut out = vec![[0.0; 2]; out_grid.modes()];
    let g = *u.grid();
    accumulate_b(|n| g.k(n), params, u.modes(), v.modes(), usize::MAX, &mut out);
    Ok(ShellState::from_parts_unchecked(out_grid, out))
}

/// Galerkin operator `B^m(u, v) = Pi_m B(Pi_m u, Pi_m v)` on the input grid.
pub fn truncated_b(
    u: &ShellState,
    v: &ShellState,
    m: usize,
    params: &ModelParams,
) -> Result<ShellState> {
    check_same_grid(u, v)?;
    let big_m = u.grid().modes();
    if m < 3 || m > big_m {
        return domain(format!("Galerkin level must lie in 3..={big_m}, got {m}"));
    }
    let mut out = vec![[0.0; 2]; big_m];
    let g = *u.grid();
    accumulate_b(|n| g.k(n), params, u.modes(), v.modes(), m, &mut out[..m]);
    Ok(ShellState::from_parts_unchecked(*u.grid(), out))
}

/// `sum_n B_n(u, v) . v_n`, compensated. Vanishes for `u = v` and, for both
/// shipped variants, for every `(u, v)`.
pub fn energy_pairing(u: &ShellState, v: &ShellState, params: &ModelParams) -> Result<f64> {
    let b = bilinear_b(u, v, params)?;
    Ok(compensated_sum(
        b.modes()
            .iter()
            .zip(v.modes())
            .flat_map(|(bn, vn)| [bn[0] * vn[0], bn[1] * vn[1]]),
    ))
}

/// Conservative constant `c` with
/// `||B(u,v)||_{H^{-alpha3}} <= c ||u||_{H^{alpha1}} ||v||_{H^{alpha2}}`,
/// `alpha3 = 1 - alpha1 - alpha2`.
///
/// Each term and output component contributes `|coefficient| * lambda^e`
/// with `e = k_shift - u_shift * alpha1 - v_shift * alpha2`; the two
/// products of a component are combined by Cauchy-Schwarz in `R^2`.
pub fn bilinear_bound_constant(
    alpha1: f64,
    alpha2: f64,
    params: &ModelParams,
    grid: &GridParams,
) -> f64 {
    params
        .terms()
        .iter()
        .map(|t| {
            let e = t.k_shift as f64 - t.u_shift as f64 * alpha1 - t.v_shift as f64 * alpha2;
            2.0 * params.coefficient(t.coeff).abs() * grid.lambda().powf(e)
        })
        .sum()
}

/// One quadratic monomial of `B_{n,j}(x, x)`:
/// `sign * coeff * k_{k_index} * left * right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalTerm {
    pub coeff: CoeffKind,
    pub sign: f64,
    pub k_index: i64,
    pub left: Coord,
    pub right: Coord,
}

/// Monomials of `B_{n,j}(Pi_m x, Pi_m x)` (unmerged, one per real product).
pub fn diagonal_terms(params: &ModelParams, n: usize, j: u8, m: usize) -> Vec<DiagonalTerm> {
    let mut out = Vec::new();
    let comp = j as usize - 1;
    for term in params.terms() {
        let nu = n as i64 + term.u_shift;
        let nv = n as i64 + term.v_shift;
        if nu < 1 || nv < 1 || nu as usize > m || nv as usize > m {
            continue;
        }
        for pr in &term.parts[comp] {
            out.push(DiagonalTerm {
                coeff: term.coeff,
                sign: term.sign * pr.sign,
                k_index: n as i64 + term.k_shift,
                left: Coord { n: nu as usize, j: pr.ju as u8 + 1 },
                right: Coord { n: nv as usize, j: pr.jv as u8 + 1 },
            });
        }
    }
    out
}

/// Per-component verdict of [`divergence_free_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub components: Vec<(Coord, bool)>,
}

impl DivergenceReport {
    pub fn all_pass(&self) -> bool {
        self.components.iter().all(|(_, ok)| *ok)
    }
}

/// Confirms from the term tables that `B_{n,j}(x, x)` never references
/// `x_{n,j}` itself, for every `n <= M`.
pub fn divergence_free_check(params: &ModelParams, grid: &GridParams) -> DivergenceReport {
    let m = grid.modes();
    let mut components = Vec::with_capacity(2 * m);
    for n in 1..=m {
        for j in 1..=2u8 {
            let c = Coord { n, j };
            let ok = diagonal_terms(params, n, j, m + 2)
                .iter()
                .all(|t| t.left != c && t.right != c);
            components.push((c, ok));
        }
    }
    DivergenceReport { components }
}

/// `||B^m(x,x) - B(x,x)||_{H^{-1-2 alpha}}` and the bound
/// `c ||(Pi_{m-2} - I) x||^2_{H^{-alpha}}` for a state on the full grid.
pub fn truncation_defect(
    x: &ShellState,
    m: usize,
    alpha: f64,
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let full = bilinear_b(x, x, params)?;
    let trunc = truncated_b(x, x, m, params)?;
    let grid = *full.grid();
    let mut diff = full.modes().to_vec();
    for (d, t) in diff.iter_mut().zip(trunc.modes()) {
        d[0] -= t[0];
        d[1] -= t[1];
    }
    let lhs = crate::spectral::weighted_norm_sq(&grid, &diff, -1.0 - 2.0 * alpha).sqrt();
    let tail = x.sub(&project(x, m - 2)?)?;
    let tail_norm = crate::spectral::sobolev_norm(&tail, -alpha);
    let c = bilinear_bound_constant(-alpha, -alpha, params, x.grid());
    Ok((lhs, c * tail_norm * tail_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(m: usize) -> GridParams {
        GridParams::new(1.0, 2.0, m).unwrap()
    }

    fn random_state(g: GridParams, rng: &mut impl Rng) -> ShellState {
        let flat: Vec<f64> = (0..2 * g.modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ShellState::from_flat(g, &flat).unwrap()
    }

    /// Independent evaluation of the complex `b_n(u, v)`.
    fn complex_b(u: &ShellState, v: &ShellState, params: &ModelParams) -> Vec<Complex64> {
        let g = u.grid();
        let c = |s: &ShellState, n: i64| {
            let m = s.mode(n);
            Complex64::new(m[0], m[1])
        };
        let (a, b) = (params.a, params.b);
        let i = Complex64::i();
        (1..=g.modes() as i64 + 1)
            .map(|n| {
                let k = |s: i64| g.k(n + s);
                match params.variant {
                    Variant::Goy => {
                        i * (a * k(1) * c(u, n + 1).conj() * c(v, n + 2).conj()
                            + b * k(0) * c(u, n - 1).conj() * c(v, n + 1).conj()
                            - a * k(-1) * c(u, n - 1).conj() * c(v, n - 2).conj()
                            - b * k(-1) * c(u, n - 2).conj() * c(v, n - 1).conj())
                    }
                    Variant::Sabra => {
                        -i * (a * k(1) * c(u, n + 1).conj() * c(v, n + 2)
                            + b * k(0) * c(u, n - 1).conj() * c(v, n + 1)
                            + a * k(-1) * c(u, n - 1) * c(v, n - 2)
                            + b * k(-1) * c(u, n - 2) * c(v, n - 1))
                    }
                }
            })
            .collect()
    }

    #[test]
    fn sabra_component_example() {
        let g = grid(6);
        let mut u = ShellState::zeros(g);
        let mut v = ShellState::zeros(g);
        u.set_mode(2, [1.0, 2.0]).unwrap();
        v.set_mode(3, [3.0, 4.0]).unwrap();
        let out = bilinear_b(&u, &v, &ModelParams::sabra(1.0, 0.0)).unwrap();
        assert_eq!(out.mode(1), [-8.0, -44.0]);
        assert_eq!(out.grid().modes(), 7);
    }

    #[test]
    fn zero_arguments_give_zero() {
        let g = grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_state(g, &mut rng);
        let z = ShellState::zeros(g);
        for params in [ModelParams::default(), ModelParams::goy(1.0, -0.5)] {
            assert!(bilinear_b(&u, &z, &params).unwrap().modes().iter().flatten().all(|x| *x == 0.0));
            assert!(bilinear_b(&z, &u, &params).unwrap().modes().iter().flatten().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn real_form_matches_complex_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = grid(16);
        for params in [ModelParams::sabra(1.0, -0.5), ModelParams::goy(0.7, 1.3)] {
            for _ in 0..50 {
                let u = random_state(g, &mut rng);
                let v = random_state(g, &mut rng);
                let real = bilinear_b(&u, &v, &params).unwrap();
                let cplx = complex_b(&u, &v, &params);
                for (n, z) in cplx.iter().enumerate() {
                    let m = real.mode(n as i64 + 1);
                    let scale = z.norm().max(1.0) * g.k(n as i64 + 2);
                    assert!((m[0] - z.re).abs() <= 1e-12 * scale);
                    assert!((m[1] - z.im).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn bilinearity_by_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(12);
        for params in [ModelParams::default(), ModelParams::goy(1.0, -0.5)] {
            for _ in 0..100 {
                let (u, u2, v) = (random_state(g, &mut rng), random_state(g, &mut rng), random_state(g, &mut rng));
                let s: f64 = rng.random_range(-3.0..3.0);
                let lhs = bilinear_b(&u.add(&u2.scale(s)).unwrap(), &v, &params).unwrap();
                let rhs = bilinear_b(&u, &v, &params)
                    .unwrap()
                    .add(&bilinear_b(&u2, &v, &params).unwrap().scale(s))
                    .unwrap();
                let lhs2 = bilinear_b(&v, &u.add(&u2.scale(s)).unwrap(), &params).unwrap();
                let rhs2 = bilinear_b(&v, &u, &params)
                    .unwrap()
                    .add(&bilinear_b(&v, &u2, &params).unwrap().scale(s))
                    .unwrap();
                for (l, r) in lhs.to_flat().iter().zip(rhs.to_flat()).chain(lhs2.to_flat().iter().zip(rhs2.to_flat())) {
                    assert!((l - r).abs() <= 1e-12 * r.abs().max(1e-3 * g.k(14)));
                }
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let u = ShellState::zeros(grid(5));
        let v = ShellState::zeros(grid(6));
        assert!(bilinear_b(&u, &v, &ModelParams::default()).is_err());
        assert!(energy_pairing(&u, &v, &ModelParams::default()).is_err());
    }

    #[test]
    fn truncated_agrees_with_full_on_interior_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = grid(10);
        let params = ModelParams::default();
        let u = project(&random_state(g, &mut rng), 8).unwrap();
        let v = project(&random_state(g, &mut rng), 8).unwrap();
        let t = truncated_b(&u, &v, 10, &params).unwrap();
        let f = bilinear_b(&u, &v, &params).unwrap();
        for n in 1..=10 {
            assert_eq!(t.mode(n), f.mode(n));
        }
        assert!(truncated_b(&u, &v, 2, &params).is_err());
        assert!(truncated_b(&u, &v, 11, &params).is_err());
    }

    #[test]
    fn truncated_locality_at_top_shells() {
        let g = grid(12);
        let mut u = ShellState::zeros(g);
        u.set_mode(11, [0.3, -1.2]).unwrap();
        u.set_mode(12, [2.0, 0.5]).unwrap();
        for params in [ModelParams::default(), ModelParams::goy(1.0, -0.5)] {
            let t = truncated_b(&u, &u, 12, &params).unwrap();
            for n in 1..=9 {
                assert_eq!(t.mode(n), [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn truncation_difference_table() {
        // B^M(x,x) - B(x,x) vanishes on shells n <= M-2 for x on a longer grid.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(20);
        let m = 14;
        let params = ModelParams::default();
        let x = random_state(g, &mut rng);
        let t = truncated_b(&x, &x, m, &params).unwrap();
        let f = bilinear_b(&x, &x, &params).unwrap();
        for n in 1..=(m as i64 - 2) {
            assert_eq!(t.mode(n), f.mode(n), "shell {n}");
        }
        // Shell M-1: -a k_M (x_{M,1} x_{M+1,2} - x_{M,2} x_{M+1,1}).
        let k = g.k(m as i64);
        let (xm, xm1) = (x.mode(m as i64), x.mode(m as i64 + 1));
        let expected1 = -k * (xm[0] * xm1[1] - xm[1] * xm1[0]);
        let expected2 = -k * (-xm[0] * xm1[0] - xm[1] * xm1[1]);
        let d = [t.mode(m as i64 - 1)[0] - f.mode(m as i64 - 1)[0], t.mode(m as i64 - 1)[1] - f.mode(m as i64 - 1)[1]];
        assert_relative_eq!(d[0], expected1, max_relative = 1e-12);
        assert_relative_eq!(d[1], expected2, max_relative = 1e-12);
    }

    #[test]
    fn energy_pairing_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = grid(32);
        for params in [ModelParams::default(), ModelParams::goy(1.0, -0.5)] {
            assert_eq!(energy_pairing(&ShellState::zeros(g), &ShellState::zeros(g), &params).unwrap(), 0.0);
            for _ in 0..200 {
                let u = random_state(g, &mut rng);
                let v = random_state(g, &mut rng);
                let scale = crate::spectral::sobolev_norm(&u, 1.0) * crate::spectral::sobolev_norm(&u, 0.0).powi(2);
                assert!(energy_pairing(&u, &u, &params).unwrap().abs() <= 1e-10 * scale);
                let mixed = crate::spectral::sobolev_norm(&u, 1.0)
                    * crate::spectral::sobolev_norm(&v, 0.0).powi(2);
                assert!(energy_pairing(&u, &v, &params).unwrap().abs() <= 1e-10 * mixed);
            }
        }
    }

    #[test]
    fn corrupted_backward_coefficient_breaks_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(10);
        let mut params = ModelParams::default();
        params.b_back = Some(-0.4);
        let u = random_state(g, &mut rng);
        assert!(energy_pairing(&u, &u, &params).unwrap().abs() > 1e-6);
    }

    #[test]
    fn bound_constant_examples() {
        let g = grid(16);
        let alpha: f64 = 0.3;
        let params = ModelParams::sabra(1.0, 0.0);
        let c = bilinear_bound_constant(-alpha, -alpha, &params, &g);
        // Terms 1 and 3 carry a: exponents 1 + 3 alpha and -1 - 3 alpha, both components.
        let first = 2f64.powf(1.0 + 3.0 * alpha);
        assert_relative_eq!(c, 2.0 * (first + 2f64.powf(-1.0 - 3.0 * alpha)), max_relative = 1e-15);
        assert_eq!(bilinear_bound_constant(0.2, 0.1, &ModelParams::sabra(0.0, 0.0), &g), 0.0);
    }

    #[test]
    fn bound_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for params in [ModelParams::default(), ModelParams::goy(1.0, -0.5)] {
            for &(a1, a2) in &[(-0.5, -0.5), (0.0, 1.0), (1.0, 0.0), (-1.0, 0.7), (0.4, 0.4)] {
                let a3 = 1.0 - a1 - a2;
                for m in 3..=16 {
                    let g = grid(m);
                    let c = bilinear_bound_constant(a1, a2, &params, &g);
                    for _ in 0..40 {
                        let u = random_state(g, &mut rng);
                        let v = random_state(g, &mut rng);
                        let t = truncated_b(&u, &v, m, &params).unwrap();
                        let f = bilinear_b(&u, &v, &params).unwrap();
                        let bound = c * crate::spectral::sobolev_norm(&u, a1) * crate::spectral::sobolev_norm(&v, a2);
                        assert!(crate::spectral::sobolev_norm(&f, -a3) <= bound * (1.0 + 1e-12));
                        assert!(crate::spectral::sobolev_norm(&t, -a3) <= bound * (1.0 + 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_free_structurally_and_numerically() {
        let g = grid(9);
        for params in [ModelParams::default(), ModelParams::goy(1.0, -0.5)] {
            let report = divergence_free_check(&params, &g);
            assert_eq!(report.components.len(), 18);
            assert!(report.all_pass());
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let x = random_state(g, &mut rng);
            let h = 1e-5;
            for i in 0..18 {
                let mut plus = x.to_flat();
                let mut minus = x.to_flat();
                plus[i] += h;
                minus[i] -= h;
                let bp = bilinear_b(&ShellState::from_flat(g, &plus).unwrap(), &ShellState::from_flat(g, &plus).unwrap(), &params).unwrap();
                let bm = bilinear_b(&ShellState::from_flat(g, &minus).unwrap(), &ShellState::from_flat(g, &minus).unwrap(), &params).unwrap();
                let d = (bp.to_flat()[i] - bm.to_flat()[i]) / (2.0 * h);
                assert!(d.abs() < 1e-8, "component {i}: {d}");
            }
        }
    }

    #[test]
    fn locality_by_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = grid(14);
        let params = ModelParams::default();
        let u = random_state(g, &mut rng);
        let v = random_state(g, &mut rng);
        let base = bilinear_b(&u, &v, &params).unwrap();
        for target in 1..=14usize {
            let mut w = u.clone();
            w.set_mode(target, [5.0, -5.0]).unwrap();
            let mut z = v.clone();
            z.set_mode(target, [5.0, -5.0]).unwrap();
            let bu = bilinear_b(&w, &v, &params).unwrap();
            let bv = bilinear_b(&u, &z, &params).unwrap();
            for n in 1..=15i64 {
                if (n - target as i64).abs() > 2 {
                    assert_eq!(bu.mode(n), base.mode(n));
                    assert_eq!(bv.mode(n), base.mode(n));
                }
            }
        }
    }

    #[test]
    fn truncation_defect_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(24);
        let params = ModelParams::default();
        for _ in 0..100 {
            let x = random_state(g, &mut rng);
            for m in [6, 10, 16, 22] {
                let (lhs, rhs) = truncation_defect(&x, m, 0.5, &params).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-12));
            }
        }
    }
}
