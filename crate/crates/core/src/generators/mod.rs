//! Cylindrical polynomials and the generators acting on them: the
//! Ornstein-Uhlenbeck operator `Q`, the Liouville operator `L` and the
//! Kolmogorov operator `K = Q + L`, together with exact Gaussian integration.
//!
//! With [`num_rational::BigRational`] coefficients every identity is checked
//! in exact arithmetic; `f64` coefficients give a fast floating mode.

mod ops;
mod poly;

pub use ops::{
    apply_k, apply_l, apply_q, b_component_poly, gaussian_expectation, q_symmetry_residual,
    skew_residual_from, skew_symmetry_check,
};
pub use poly::{coords_up_to, monomial_basis, rational, CylPoly, Monomial, Scalar, DEFAULT_TERM_BUDGET};
