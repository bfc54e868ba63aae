use crate::error::{Error, Result};
use crate::gibbs::GibbsParams;
use crate::nonlinearity::{diagonal_terms, ModelParams};
use crate::spectral::{Coord, GridParams};

use super::poly::{CylPoly, Monomial, Scalar};

fn wick_moment<S: Scalar>(degree: u32, inv_nu: &S) -> S {
    if degree % 2 == 1 {
        return S::zero();
    }
    let mut v = S::one();
    let mut k = 1;
    while k < degree {
        v = v * S::from_u64(k as u64) * inv_nu.clone();
        k += 2;
    }
    v
}

/// `E_{mu^nu}[phi]`: coordinates are independent with
/// `E x^{2k} = (2k-1)!! nu^{-k}` and vanishing odd moments.
pub fn gaussian_expectation<S: Scalar>(phi: &CylPoly<S>, params: &GibbsParams) -> Result<S> {
    let inv_nu = S::one() / S::from_f64(params.nu())?;
    Ok(S::sum(phi.terms().filter_map(|(m, c)| {
        if m.factors().iter().any(|(_, d)| d % 2 == 1) {
            return None;
        }
        Some(m.factors().iter().fold(c.clone(), |acc, (_, d)| acc * wick_moment(*d, &inv_nu)))
    })))
}

fn k_sq<S: Scalar>(grid: &GridParams, n: usize) -> Result<S> {
    let k = S::from_f64(grid.k(n as i64))?;
    Ok(k.clone() * k)
}

/// `Q phi = sum_{n,j} k_n^2 [d^2 phi / dx_{n,j}^2 - nu x_{n,j} d phi / dx_{n,j}]`.
pub fn apply_q<S: Scalar>(phi: &CylPoly<S>, params: &GibbsParams) -> Result<CylPoly<S>> {
    let nu = S::from_f64(params.nu())?;
    let mut out = CylPoly::zero(*phi.grid()).with_budget(phi.budget());
    for (m, coeff) in phi.terms() {
        for &(c, d) in m.factors() {
            let w = k_sq::<S>(phi.grid(), c.n)? * coeff.clone();
            let dd = S::from_u64(d as u64);
            if d >= 2 {
                let (_, lowered) = m.lower(c, 2).expect("degree at least two");
                out.add_term(lowered, w.clone() * dd.clone() * S::from_u64(d as u64 - 1));
            }
            out.add_term(m.clone(), -(w * dd * nu.clone()));
        }
    }
    out.check_budget()?;
    Ok(out)
}

/// Quadratic polynomial `B_{n,j}(Pi_m x, Pi_m x)`.
pub fn b_component_poly<S: Scalar>(
    model: &ModelParams,
    grid: &GridParams,
    c: Coord,
    m: usize,
) -> Result<CylPoly<S>> {
    let mut out = CylPoly::zero(*grid);
    for t in diagonal_terms(model, c.n, c.j, m) {
        let coeff = S::from_f64(model.coefficient(t.coeff))? * S::from_f64(grid.k(t.k_index))? * S::from_f64(t.sign)?;
        out.add_term(Monomial::new([(t.left, 1), (t.right, 1)]), coeff);
    }
    Ok(out)
}

fn liouville_level(phi_max: usize, grid: &GridParams, truncation: Option<usize>) -> Result<usize> {
    let big_m = grid.modes();
    match truncation {
        None => {
            if phi_max + 2 > big_m {
                return Err(Error::BoundaryClosure(format!(
                    "B_n(x,x) for shell {phi_max} needs shell {} but the grid stops at {big_m}; \
                     restrict the polynomial to shells <= {} or pass a truncation level",
                    phi_max + 2,
                    big_m - 2
                )));
            }
            Ok(big_m)
        }
        Some(m) => {
            if m < 3 || m > big_m {
                return Err(Error::Domain(format!("truncation level must lie in 3..={big_m}, got {m}")));
            }
            if phi_max > m {
                return Err(Error::BoundaryClosure(format!(
                    "polynomial reaches shell {phi_max} beyond the truncation level {m}"
                )));
            }
            Ok(m)
        }
    }
}

/// `L phi = -sum_{n,j} B_{n,j}(x,x) d phi / dx_{n,j}`, with `B^m` when a
/// truncation level is given.
pub fn apply_l<S: Scalar>(
    phi: &CylPoly<S>,
    model: &ModelParams,
    truncation: Option<usize>,
) -> Result<CylPoly<S>> {
    let grid = *phi.grid();
    let level = liouville_level(phi.max_shell(), &grid, truncation)?;
    let mut out = CylPoly::zero(grid).with_budget(phi.budget());
    for c in phi.support() {
        let d = phi.differentiate(c);
        let b = b_component_poly::<S>(model, &grid, c, level)?;
        for (mb, cb) in b.terms() {
            for (md, cd) in d.terms() {
                out.add_term(mb.mul(md), -(cb.clone() * cd.clone()));
            }
        }
        out.check_budget()?;
    }
    Ok(out)
}

/// `K phi = Q phi + L phi` (or `Q + L^m`).
pub fn apply_k<S: Scalar>(
    phi: &CylPoly<S>,
    model: &ModelParams,
    params: &GibbsParams,
    truncation: Option<usize>,
) -> Result<CylPoly<S>> {
    apply_q(phi, params)?.add(&apply_l(phi, model, truncation)?)
}

/// `E[(L phi) psi] + E[phi (L psi)]`; zero when `L` is skew-symmetric.
pub fn skew_symmetry_check<S: Scalar>(
    phi: &CylPoly<S>,
    psi: &CylPoly<S>,
    model: &ModelParams,
    params: &GibbsParams,
    truncation: Option<usize>,
) -> Result<S> {
    let lphi = apply_l(phi, model, truncation)?;
    let lpsi = apply_l(psi, model, truncation)?;
    skew_residual_from(phi, psi, &lphi, &lpsi, params)
}

/// Skew residual from precomputed images `L phi`, `L psi`.
pub fn skew_residual_from<S: Scalar>(
    phi: &CylPoly<S>,
    psi: &CylPoly<S>,
    lphi: &CylPoly<S>,
    lpsi: &CylPoly<S>,
    params: &GibbsParams,
) -> Result<S> {
    Ok(gaussian_expectation(&lphi.mul(psi)?, params)? + gaussian_expectation(&phi.mul(lpsi)?, params)?)
}

/// `E[(Q phi) psi] - E[phi (Q psi)]`; zero when `Q` is symmetric.
pub fn q_symmetry_residual<S: Scalar>(
    phi: &CylPoly<S>,
    psi: &CylPoly<S>,
    params: &GibbsParams,
) -> Result<S> {
    let a = gaussian_expectation(&apply_q(phi, params)?.mul(psi)?, params)?;
    let b = gaussian_expectation(&phi.mul(&apply_q(psi, params)?)?, params)?;
    Ok(a - b)
}
