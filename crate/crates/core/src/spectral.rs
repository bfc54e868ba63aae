//! Wavenumber geometry, truncated Sobolev norms and the diagonal operator `A`.
//!
//! Every quantity here is an `M`-term partial sum: a state stores the shells
//! `1..=M` and all shells outside that range are identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Truncation level and geometric wavenumber ladder `k_n = k0 * lambda^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    k0: f64,
    lambda: f64,
    modes: usize,
}

impl GridParams {
    pub fn new(k0: f64, lambda: f64, modes: usize) -> Result<Self> {
        if !(k0.is_finite() && k0 > 0.0) {
            return domain(format!("k0 must be positive and finite, got {k0}"));
        }
        if !(lambda.is_finite() && lambda > 1.0) {
            return domain(format!("lambda must exceed 1, got {lambda}"));
        }
        if modes < 3 {
            return domain(format!("truncation level must be at least 3, got {modes}"));
        }
        Ok(Self { k0, lambda, modes })
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of stored shells `M`.
    pub fn modes(&self) -> usize {
        self.modes
    }

    /// The same ladder with `extra` additional shells.
    pub fn extended(&self, extra: usize) -> Self {
        Self {
            modes: self.modes + extra,
            ..*self
        }
    }

    /// The same ladder truncated (or extended) to `modes` shells.
    pub fn with_modes(&self, modes: usize) -> Result<Self> {
        Self::new(self.k0, self.lambda, modes)
    }

    /// `k_n` for any integer shell index, including indices outside `1..=M`.
    #[inline]
    pub fn k(&self, n: i64) -> f64 {
        self.k0 * self.lambda.powf(n as f64)
    }

    /// `k_n = k0 * lambda^n` for `n >= 1`.
    pub fn wavenumber(&self, n: usize) -> Result<f64> {
        if n < 1 {
            return domain("shell index must be at least 1");
        }
        Ok(self.k(n as i64))
    }
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            k0: 1.0,
            lambda: 2.0,
            modes: 32,
        }
    }
}

/// Real coordinate `x_{n,j}`: shell `n >= 1`, component `j` (1 = real part, 2 = imaginary part).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub n: usize,
    pub j: u8,
}

impl Coord {
    pub fn new(n: usize, j: u8) -> Result<Self> {
        if n < 1 || !(j == 1 || j == 2) {
            return domain(format!("invalid coordinate ({n}, {j})"));
        }
        Ok(Self { n, j })
    }

    /// Position in the flat row `(u_{1,1}, u_{1,2}, u_{2,1}, ...)`.
    pub fn flat_index(&self) -> usize {
        2 * (self.n - 1) + (self.j as usize - 1)
    }
}

impl std::fmt::Display for Coord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x[{},{}]", self.n, self.j)
    }
}

/// Free-function form of [`GridParams::wavenumber`].
pub fn wavenumber(grid: &GridParams, n: usize) -> Result<f64> {
    grid.wavenumber(n)
}

/// `M` complex shell amplitudes stored as `(Re u_n, Im u_n)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellState {
    grid: GridParams,
    modes: Vec<[f64; 2]>,
}

impl ShellState {
    pub fn new(grid: GridParams, modes: Vec<[f64; 2]>) -> Result<Self> {
        if modes.len() != grid.modes() {
            return domain(format!(
                "state has {} shells but the grid has {}",
                modes.len(),
                grid.modes()
            ));
        }
        if modes.iter().flatten().any(|x| !x.is_finite()) {
            return domain("state contains non-finite entries");
        }
        Ok(Self { grid, modes })
    }

    pub(crate) fn from_parts_unchecked(grid: GridParams, modes: Vec<[f64; 2]>) -> Self {
        debug_assert_eq!(modes.len(), grid.modes());
        Self { grid, modes }
    }

    pub fn zeros(grid: GridParams) -> Self {
        Self {
            grid,
            modes: vec![[0.0; 2]; grid.modes()],
        }
    }

    /// Builds a state from the flat row `(u_{1,1}, u_{1,2}, u_{2,1}, ...)`.
    pub fn from_flat(grid: GridParams, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * grid.modes() {
            return domain(format!(
                "flat row has {} entries, expected {}",
                flat.len(),
                2 * grid.modes()
            ));
        }
        let modes = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Self::new(grid, modes)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.modes.iter().flatten().copied().collect()
    }

    pub fn grid(&self) -> &GridParams {
        &self.grid
    }

    pub fn modes(&self) -> &[[f64; 2]] {
        &self.modes
    }

    pub fn into_modes(self) -> Vec<[f64; 2]> {
        self.modes
    }

    /// Shell `n` (1-based); zero outside `1..=M` per the boundary convention.
    #[inline]
    pub fn mode(&self, n: i64) -> [f64; 2] {
        if n >= 1 && (n as usize) <= self.modes.len() {
            self.modes[n as usize - 1]
        } else {
            [0.0; 2]
        }
    }

    pub fn set_mode(&mut self, n: usize, value: [f64; 2]) -> Result<()> {
        if n < 1 || n > self.modes.len() {
            return domain(format!("shell {n} outside 1..={}", self.modes.len()));
        }
        if !(value[0].is_finite() && value[1].is_finite()) {
            return domain("non-finite shell amplitude");
        }
        self.modes[n - 1] = value;
        Ok(())
    }

    /// Energy `E = 1/2 sum |u_n|^2`.
    pub fn energy(&self) -> f64 {
        0.5 * self.modes.iter().map(|m| m[0] * m[0] + m[1] * m[1]).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().flatten().all(|x| x.is_finite())
    }

    /// Componentwise `self + other`.
    pub fn add(&self, other: &ShellState) -> Result<ShellState> {
        self.zip_with(other, |x, y| x + y)
    }

    /// Componentwise `self - other`.
    pub fn sub(&self, other: &ShellState) -> Result<ShellState> {
        self.zip_with(other, |x, y| x - y)
    }

    pub fn scale(&self, factor: f64) -> ShellState {
        let modes = self
            .modes
            .iter()
            .map(|m| [m[0] * factor, m[1] * factor])
            .collect();
        ShellState::from_parts_unchecked(self.grid, modes)
    }

    fn zip_with(&self, other: &ShellState, f: impl Fn(f64, f64) -> f64) -> Result<ShellState> {
        if self.grid != other.grid {
            return domain("states live on different grids");
        }
        let modes = self
            .modes
            .iter()
            .zip(&other.modes)
            .map(|(a, b)| [f(a[0], b[0]), f(a[1], b[1])])
            .collect();
        Ok(ShellState::from_parts_unchecked(self.grid, modes))
    }
}

/// `||u||_{H^alpha} = sqrt(sum_n k_n^{2 alpha} |u_n|^2)`.
pub fn sobolev_norm(u: &ShellState, alpha: f64) -> f64 {
    sobolev_norm_sq(u, alpha).sqrt()
}

pub fn sobolev_norm_sq(u: &ShellState, alpha: f64) -> f64 {
    weighted_norm_sq(u.grid(), u.modes(), alpha)
}

pub(crate) fn weighted_norm_sq(grid: &GridParams, modes: &[[f64; 2]], alpha: f64) -> f64 {
    modes
        .iter()
        .enumerate()
        .map(|(i, m)| grid.k(i as i64 + 1).powf(2.0 * alpha) * (m[0] * m[0] + m[1] * m[1]))
        .sum()
}

/// Constant `max_n k_n^{alpha2 - alpha1}` of the finite-`M` embedding
/// `||u||_{H^alpha2} <= C ||u||_{H^alpha1}`.
pub fn embedding_constant(grid: &GridParams, alpha1: f64, alpha2: f64) -> f64 {
    (1..=grid.modes())
        .map(|n| grid.k(n as i64).powf(alpha2 - alpha1))
        .fold(0.0, f64::max)
}

/// Diagonal action `(A^p u)_n = k_n^{2p} u_n`.
pub fn apply_a_power(u: &ShellState, p: f64) -> Result<ShellState> {
    if p == 0.0 {
        return Ok(u.clone());
    }
    let grid = *u.grid();
    let modes: Vec<[f64; 2]> = u
        .modes()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let w = grid.k(i as i64 + 1).powf(2.0 * p);
            [w * m[0], w * m[1]]
        })
        .collect();
    if modes.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Range(format!(
            "A^{p} overflows on a grid with {} shells",
            grid.modes()
        )));
    }
    Ok(ShellState::from_parts_unchecked(grid, modes))
}

/// Which value [`trace_a_power`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Closed form of the full series `k0^{2p} lambda^{2p} / (1 - lambda^{2p})`.
    Series,
    /// Partial sum over the stored shells `n <= M`.
    Partial,
}

/// `Tr(A^p) = sum_n k_n^{2p}`, finite only for `p < 0`.
pub fn trace_a_power(grid: &GridParams, p: f64, mode: TraceMode) -> Result<f64> {
    if !(p < 0.0) {
        return domain(format!("Tr(A^p) diverges for p = {p} >= 0"));
    }
    Ok(match mode {
        TraceMode::Series => {
            let r = grid.lambda().powf(2.0 * p);
            grid.k0().powf(2.0 * p) * r / (1.0 - r)
        }
        TraceMode::Partial => (1..=grid.modes())
            .map(|n| grid.k(n as i64).powf(2.0 * p))
            .sum(),
    })
}

/// Heat semigroup `(e^{-nu t A} u)_n = e^{-nu k_n^2 t} u_n`.
pub fn semigroup_apply(u: &ShellState, t: f64, nu: f64) -> Result<ShellState> {
    if !(t >= 0.0) {
        return domain(format!("semigroup time must be nonnegative, got {t}"));
    }
    if !(nu > 0.0) {
        return domain(format!("viscosity must be positive, got {nu}"));
    }
    if t == 0.0 {
        return Ok(u.clone());
    }
    let grid = *u.grid();
    let modes = u
        .modes()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let k = grid.k(i as i64 + 1);
            let d = (-nu * k * k * t).exp();
            [d * m[0], d * m[1]]
        })
        .collect();
    Ok(ShellState::from_parts_unchecked(grid, modes))
}

/// Smoothing constant `c_{p,nu} = (p / (e nu))^p` of
/// `||A^p e^{-nu t A} x|| <= c_{p,nu} t^{-p} ||x||`.
pub fn semigroup_bound_constant(p: f64, nu: f64) -> f64 {
    (p / (std::f64::consts::E * nu)).powf(p)
}

/// Galerkin projection: keeps shells `1..=m`, zeroes the rest.
pub fn project(u: &ShellState, m: usize) -> Result<ShellState> {
    if m < 1 {
        return domain("projection level must be at least 1");
    }
    let mut out = u.clone();
    for mode in out.modes.iter_mut().skip(m) {
        *mode = [0.0; 2];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(k0: f64, lambda: f64, m: usize) -> GridParams {
        GridParams::new(k0, lambda, m).unwrap()
    }

    #[test]
    fn wavenumber_examples() {
        let g = grid(1.0, 2.0, 8);
        assert_eq!(g.wavenumber(3).unwrap(), 8.0);
        assert_eq!(g.wavenumber(1).unwrap(), 2.0);
        assert_eq!(grid(0.5, 1.5, 8).wavenumber(4).unwrap(), 2.53125);
        assert!(matches!(g.wavenumber(0), Err(Error::Domain(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(GridParams::new(0.0, 2.0, 8).is_err());
        assert!(GridParams::new(1.0, 1.0, 8).is_err());
        assert!(GridParams::new(1.0, 2.0, 2).is_err());
        assert!(GridParams::new(f64::NAN, 2.0, 8).is_err());
    }

    #[test]
    fn wavenumbers_strictly_increase() {
        let g = grid(0.3, 1.1, 64);
        for n in 1..64 {
            assert!(g.wavenumber(n + 1).unwrap() > g.wavenumber(n).unwrap());
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = grid(1.0, 2.0, 6);
        let mut u = ShellState::zeros(g);
        assert_eq!(sobolev_norm(&u, 1.3), 0.0);
        u.set_mode(1, [1.0, 0.0]).unwrap();
        for alpha in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert_relative_eq!(sobolev_norm(&u, alpha), 2f64.powf(alpha), max_relative = 1e-15);
        }
        u.set_mode(2, [0.0, 1.0]).unwrap();
        assert_relative_eq!(sobolev_norm(&u, -1.0), 5f64.sqrt() / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn a_power_examples() {
        let g = grid(1.0, 2.0, 4);
        let mut u = ShellState::zeros(g);
        u.set_mode(1, [1.0, 1.0]).unwrap();
        u.set_mode(3, [0.5, -2.0]).unwrap();
        assert_eq!(apply_a_power(&u, 0.0).unwrap(), u);
        let v = apply_a_power(&u, 1.0).unwrap();
        assert_eq!(v.mode(1), [4.0, 4.0]);
        let half = apply_a_power(&apply_a_power(&u, 0.5).unwrap(), 0.5).unwrap();
        for n in 1..=4 {
            for j in 0..2 {
                assert_relative_eq!(half.mode(n)[j], v.mode(n)[j], max_relative = 4.0 * f64::EPSILON);
            }
        }
    }

    #[test]
    fn a_power_overflow_is_a_range_error() {
        let g = grid(1.0, 2.0, 64);
        let mut u = ShellState::zeros(g);
        u.set_mode(64, [1.0, 0.0]).unwrap();
        assert!(matches!(apply_a_power(&u, 10.0), Err(Error::Range(_))));
    }

    #[test]
    fn trace_examples() {
        let g = grid(1.0, 2.0, 32);
        assert_relative_eq!(trace_a_power(&g, -1.0, TraceMode::Series).unwrap(), 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(
            trace_a_power(&grid(2.0, 2.0, 32), -1.0, TraceMode::Series).unwrap(),
            1.0 / 12.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(trace_a_power(&g, -0.5, TraceMode::Series).unwrap(), 1.0, max_relative = 1e-15);
        assert!(trace_a_power(&g, 0.0, TraceMode::Series).is_err());
        assert!(trace_a_power(&g, 0.5, TraceMode::Partial).is_err());
    }

    #[test]
    fn partial_trace_increases_to_series() {
        let mut prev = 0.0;
        for m in 3..40 {
            let g = grid(1.0, 2.0, m);
            let partial = trace_a_power(&g, -0.5, TraceMode::Partial).unwrap();
            assert!(partial > prev);
            assert!(partial < trace_a_power(&g, -0.5, TraceMode::Series).unwrap());
            prev = partial;
        }
    }

    #[test]
    fn semigroup_examples() {
        let g = grid(1.0, 2.0, 5);
        let mut u = ShellState::zeros(g);
        u.set_mode(1, [1.0, 0.0]).unwrap();
        assert_eq!(semigroup_apply(&u, 0.0, 1.0).unwrap(), u);
        let v = semigroup_apply(&u, 1.0, 1.0).unwrap();
        assert_relative_eq!(v.mode(1)[0], (-4.0f64).exp(), max_relative = 1e-15);
        assert_eq!(v.mode(1)[1], 0.0);
        assert!(semigroup_apply(&u, -1.0, 1.0).is_err());
    }

    #[test]
    fn project_examples() {
        let g = grid(1.0, 2.0, 8);
        let flat: Vec<f64> = (0..16).map(|i| i as f64 + 1.0).collect();
        let mut u = ShellState::from_flat(g, &flat).unwrap();
        assert_eq!(project(&u, 8).unwrap(), u);
        u.set_mode(6, [1.0, 2.0]).unwrap();
        let p = project(&u, 5).unwrap();
        assert_eq!(p.mode(6), [0.0, 0.0]);
        assert_eq!(p.mode(5), u.mode(5));
        assert_eq!(project(&p, 5).unwrap(), p);
        assert!(project(&u, 0).is_err());
    }

    #[test]
    fn flat_row_ordering() {
        let g = grid(1.0, 2.0, 3);
        let u = ShellState::from_flat(g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(u.mode(2), [3.0, 4.0]);
        assert_eq!(u.mode(0), [0.0, 0.0]);
        assert_eq!(u.mode(4), [0.0, 0.0]);
        assert_eq!(u.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(ShellState::from_flat(g, &[1.0, f64::NAN, 3.0, 4.0, 5.0, 6.0]).is_err());
    }

    fn state_strategy(m: usize) -> impl Strategy<Value = ShellState> {
        proptest::collection::vec(-10.0f64..10.0, 2 * m)
            .prop_map(move |v| ShellState::from_flat(grid(1.0, 2.0, m), &v).unwrap())
    }

    proptest! {
        #[test]
        fn embedding_holds(u in state_strategy(12), a1 in -3.0f64..3.0, gap in 0.01f64..3.0) {
            let a2 = a1 - gap;
            let c = embedding_constant(u.grid(), a1, a2);
            prop_assert!(sobolev_norm(&u, a2) <= c * sobolev_norm(&u, a1) * (1.0 + 1e-12));
        }

        #[test]
        fn a_power_shifts_sobolev_index(u in state_strategy(12), p in -2.0f64..2.0, alpha in -2.0f64..2.0) {
            let lhs = sobolev_norm(&apply_a_power(&u, p).unwrap(), alpha);
            let rhs = sobolev_norm(&u, alpha + 2.0 * p);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn semigroup_contracts(u in state_strategy(10), t in 0.0f64..5.0, nu in 0.01f64..10.0) {
            let v = semigroup_apply(&u, t, nu).unwrap();
            prop_assert!(sobolev_norm(&v, 0.0) <= sobolev_norm(&u, 0.0));
        }

        #[test]
        fn projection_is_idempotent(u in state_strategy(9), m in 1usize..12) {
            let p = project(&u, m).unwrap();
            prop_assert_eq!(project(&p, m).unwrap(), p);
        }
    }
}
