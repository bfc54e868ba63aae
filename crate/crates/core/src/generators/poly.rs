use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::ops::Neg;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::spectral::{Coord, GridParams, ShellState};
use crate::stats::compensated_sum;

/// Default cap on the number of stored monomials in one polynomial.
pub const DEFAULT_TERM_BUDGET: usize = 2_000_000;

/// Coefficient field of a [`CylPoly`].
pub trait Scalar: Num + Clone + Debug + Display + Neg<Output = Self> + Send + Sync + 'static {
    /// True when arithmetic is exact.
    const EXACT: bool;

    /// Exact conversion of a finite float.
    fn from_f64(x: f64) -> Result<Self>;

    fn to_f64(&self) -> f64;

    fn from_u64(x: u64) -> Self;

    fn sum<I: IntoIterator<Item = Self>>(values: I) -> Self {
        values.into_iter().fold(Self::zero(), |acc, v| acc + v)
    }

    fn to_json(&self) -> Value;

    fn from_json(v: &Value) -> Result<Self>;
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_f64(x: f64) -> Result<Self> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Domain(format!("non-finite coefficient {x}")))
        }
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_u64(x: u64) -> Self {
        x as f64
    }

    fn sum<I: IntoIterator<Item = Self>>(values: I) -> Self {
        compensated_sum(values)
    }

    fn to_json(&self) -> Value {
        json!(self)
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::Number(n) => n.as_f64().ok_or_else(|| Error::Parse(format!("bad float {n}"))),
            Value::String(s) => BigRational::from_str(s)
                .map_err(|e| Error::Parse(format!("bad coefficient '{s}': {e}")))
                .map(|r| ToPrimitive::to_f64(&r).unwrap_or(f64::NAN)),
            other => Err(Error::Parse(format!("coefficient must be a number, got {other}"))),
        }
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_f64(x: f64) -> Result<Self> {
        BigRational::from_float(x).ok_or_else(|| Error::Domain(format!("non-finite coefficient {x}")))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn from_u64(x: u64) -> Self {
        BigRational::from_integer(BigInt::from(x))
    }

    fn to_json(&self) -> Value {
        Value::String(self.to_string())
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::String(s) => {
                BigRational::from_str(s.trim()).map_err(|e| Error::Parse(format!("bad rational '{s}': {e}")))
            }
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(BigRational::from_integer(BigInt::from(i)))
                } else {
                    let x = n.as_f64().ok_or_else(|| Error::Parse(format!("bad number {n}")))?;
                    <Self as Scalar>::from_f64(x).map_err(|e| Error::Parse(e.to_string()))
                }
            }
            other => Err(Error::Parse(format!("coefficient must be a string or number, got {other}"))),
        }
    }
}

/// Product of powers of coordinates, sorted by coordinate, no zero exponents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(Vec<(Coord, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn new(factors: impl IntoIterator<Item = (Coord, u32)>) -> Self {
        let mut map: BTreeMap<Coord, u32> = BTreeMap::new();
        for (c, d) in factors {
            *map.entry(c).or_insert(0) += d;
        }
        Monomial(map.into_iter().filter(|(_, d)| *d > 0).collect())
    }

    pub fn factors(&self) -> &[(Coord, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, d)| d).sum()
    }

    pub fn degree_in(&self, c: Coord) -> u32 {
        self.0
            .binary_search_by(|(k, _)| k.cmp(&c))
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn max_shell(&self) -> usize {
        self.0.iter().map(|(c, _)| c.n).max().unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    /// Exponent of `c` and the monomial with that exponent lowered by `by`.
    pub(crate) fn lower(&self, c: Coord, by: u32) -> Option<(u32, Monomial)> {
        let i = self.0.binary_search_by(|(k, _)| k.cmp(&c)).ok()?;
        let d = self.0[i].1;
        if d < by {
            return None;
        }
        let mut v = self.0.clone();
        if d == by {
            v.remove(i);
        } else {
            v[i].1 -= by;
        }
        Some((d, Monomial(v)))
    }

    pub fn evaluate(&self, x: &ShellState) -> f64 {
        self.0
            .iter()
            .map(|(c, d)| x.mode(c.n as i64)[c.j as usize - 1].powi(*d as i32))
            .product()
    }
}

impl std::fmt::Display for Monomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(c, d)| if *d == 1 { c.to_string() } else { format!("{c}^{d}") })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// Cylindrical polynomial in the coordinates `x_{n,j}` of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CylPoly<S: Scalar> {
    grid: GridParams,
    terms: BTreeMap<Monomial, S>,
    budget: usize,
}

impl<S: Scalar> CylPoly<S> {
    pub fn zero(grid: GridParams) -> Self {
        Self {
            grid,
            terms: BTreeMap::new(),
            budget: DEFAULT_TERM_BUDGET,
        }
    }

    pub fn constant(grid: GridParams, c: S) -> Self {
        let mut p = Self::zero(grid);
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn var(grid: GridParams, c: Coord) -> Result<Self> {
        Self::monomial(grid, Monomial::new([(c, 1)]), S::one())
    }

    pub fn monomial(grid: GridParams, m: Monomial, coeff: S) -> Result<Self> {
        if let Some((c, _)) = m.factors().iter().find(|(c, _)| c.n < 1 || c.n > grid.modes() || !(c.j == 1 || c.j == 2)) {
            return Err(Error::Domain(format!("{c} is not a coordinate of a grid with {} shells", grid.modes())));
        }
        let mut p = Self::zero(grid);
        p.add_term(m, coeff);
        Ok(p)
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn grid(&self) -> &GridParams {
        &self.grid
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &S)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, m: &Monomial) -> S {
        self.terms.get(m).cloned().unwrap_or_else(S::zero)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest shell index appearing in any monomial (0 for constants).
    pub fn max_shell(&self) -> usize {
        self.terms.keys().map(Monomial::max_shell).max().unwrap_or(0)
    }

    pub(crate) fn add_term(&mut self, m: Monomial, c: S) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = e.get().clone() + c;
                if v.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
        }
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Domain("polynomials live on different grids".into()));
        }
        Ok(())
    }

    pub(crate) fn check_budget(&self) -> Result<()> {
        if self.terms.len() > self.budget {
            return Err(Error::Resource(format!(
                "polynomial has {} terms, budget is {}",
                self.terms.len(),
                self.budget
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_grid(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out.check_budget()?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(&-S::one()))
    }

    pub fn scale(&self, s: &S) -> Self {
        let mut out = Self::zero(self.grid).with_budget(self.budget);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c.clone() * s.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_grid(other)?;
        if self.terms.len().saturating_mul(other.terms.len()) > self.budget.saturating_mul(64) {
            return Err(Error::Resource(format!(
                "product of {} and {} terms exceeds the budget",
                self.terms.len(),
                other.terms.len()
            )));
        }
        let mut out = Self::zero(self.grid).with_budget(self.budget.min(other.budget));
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
            out.check_budget()?;
        }
        Ok(out)
    }

    /// Formal partial derivative in `c`.
    pub fn differentiate(&self, c: Coord) -> Self {
        let mut out = Self::zero(self.grid).with_budget(self.budget);
        for (m, coeff) in &self.terms {
            if let Some((d, lowered)) = m.lower(c, 1) {
                out.add_term(lowered, coeff.clone() * S::from_u64(d as u64));
            }
        }
        out
    }

    /// Coordinates with nonzero exponent somewhere in the polynomial.
    pub fn support(&self) -> Vec<Coord> {
        let mut s: Vec<Coord> = self.terms.keys().flat_map(|m| m.factors().iter().map(|(c, _)| *c)).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn evaluate(&self, x: &ShellState) -> f64 {
        compensated_sum(self.terms.iter().map(|(m, c)| c.to_f64() * m.evaluate(x)))
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.terms
                .iter()
                .map(|(m, c)| {
                    let mono: Vec<Value> = m.factors().iter().map(|(k, d)| json!([k.n, k.j, d])).collect();
                    json!({ "monomial": mono, "coeff": c.to_json() })
                })
                .collect(),
        )
    }

    pub fn from_json(grid: GridParams, value: &Value) -> Result<Self> {
        let items = value.as_array().ok_or_else(|| Error::Parse("polynomial must be a JSON array".into()))?;
        let mut out = Self::zero(grid);
        for item in items {
            let mono = item
                .get("monomial")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Parse("term lacks a 'monomial' array".into()))?;
            let mut factors = Vec::with_capacity(mono.len());
            for f in mono {
                let triple = f.as_array().filter(|a| a.len() == 3).ok_or_else(|| Error::Parse(format!("bad factor {f}")))?;
                let num = |i: usize| triple[i].as_u64().ok_or_else(|| Error::Parse(format!("bad factor {f}")));
                let c = Coord::new(num(0)? as usize, num(1)? as u8).map_err(|e| Error::Parse(e.to_string()))?;
                if c.n > grid.modes() {
                    return Err(Error::Parse(format!("{c} lies outside the grid")));
                }
                factors.push((c, num(2)? as u32));
            }
            let coeff = S::from_json(item.get("coeff").ok_or_else(|| Error::Parse("term lacks 'coeff'".into()))?)?;
            out.add_term(Monomial::new(factors), coeff);
        }
        Ok(out)
    }
}

impl<S: Scalar> std::fmt::Display for CylPoly<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|(m, c)| format!("({c})*{m}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// All monomials of total degree `<= max_degree` in `coords`, in a fixed order.
pub fn monomial_basis(coords: &[Coord], max_degree: u32) -> Vec<Monomial> {
    fn rec(coords: &[Coord], left: u32, cur: &mut Vec<(Coord, u32)>, out: &mut Vec<Monomial>) {
        let Some((&first, rest)) = coords.split_first() else {
            out.push(Monomial::new(cur.iter().copied()));
            return;
        };
        for d in 0..=left {
            if d > 0 {
                cur.push((first, d));
            }
            rec(rest, left - d, cur, out);
            if d > 0 {
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(coords, max_degree, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Coordinates of shells `1..=max_shell`.
pub fn coords_up_to(max_shell: usize) -> Vec<Coord> {
    (1..=max_shell).flat_map(|n| [Coord { n, j: 1 }, Coord { n, j: 2 }]).collect()
}

/// Convenience: rational number `p/q`.
pub fn rational(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> GridParams {
        GridParams::new(1.0, 2.0, 8).unwrap()
    }

    fn c(n: usize, j: u8) -> Coord {
        Coord { n, j }
    }

    #[test]
    fn derivative_of_square() {
        let x = CylPoly::<BigRational>::var(g(), c(1, 1)).unwrap();
        let sq = x.mul(&x).unwrap();
        let d = sq.differentiate(c(1, 1));
        assert_eq!(d, x.scale(&rational(2, 1)));
        assert!(sq.differentiate(c(1, 2)).is_empty());
    }

    #[test]
    fn binomial_expansion_has_three_terms() {
        let x = CylPoly::<BigRational>::var(g(), c(1, 1)).unwrap();
        let y = CylPoly::<BigRational>::var(g(), c(2, 2)).unwrap();
        let s = x.add(&y).unwrap();
        let sq = s.mul(&s).unwrap();
        assert_eq!(sq.len(), 3);
        assert_eq!(sq.coefficient(&Monomial::new([(c(1, 1), 1), (c(2, 2), 1)])), rational(2, 1));
        assert!(s.sub(&s).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_grid_coordinates() {
        assert!(CylPoly::<f64>::var(g(), c(9, 1)).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let coords = coords_up_to(4);
        let mut p = CylPoly::<f64>::zero(g()).with_budget(20);
        for k in &coords {
            p = p.add(&CylPoly::var(g(), *k).unwrap()).unwrap();
        }
        p.add_term(Monomial::one(), 1.0);
        assert!(matches!(p.mul(&p), Err(Error::Resource(_))));
    }

    #[test]
    fn basis_count_matches_binomial() {
        // C(d + k, k) monomials of degree <= k in d variables
        assert_eq!(monomial_basis(&coords_up_to(13), 4).len(), 27_405);
        assert_eq!(monomial_basis(&coords_up_to(2), 2).len(), 15);
    }

    #[test]
    fn json_round_trip() {
        let x = CylPoly::<BigRational>::var(g(), c(3, 2)).unwrap();
        let p = x.mul(&x).unwrap().scale(&rational(-7, 3)).add(&CylPoly::constant(g(), rational(1, 2))).unwrap();
        let v = p.to_json();
        assert_eq!(CylPoly::<BigRational>::from_json(g(), &v).unwrap(), p);
        let f = CylPoly::<f64>::from_json(g(), &v).unwrap();
        assert_eq!(f.coefficient(&Monomial::one()), 0.5);
        let text = serde_json::to_string(&CylPoly::<f64>::from_json(g(), &v).unwrap().to_json()).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(CylPoly::<f64>::from_json(g(), &back).unwrap(), f);
        assert!(CylPoly::<f64>::from_json(g(), &json!([{"monomial": [[9, 1, 1]], "coeff": 1.0}])).is_err());
        assert!(CylPoly::<f64>::from_json(g(), &json!({"a": 1})).is_err());
    }

    #[test]
    fn evaluation() {
        let mut s = ShellState::zeros(g());
        s.set_mode(2, [3.0, -1.0]).unwrap();
        let p = CylPoly::<f64>::monomial(g(), Monomial::new([(c(2, 1), 2), (c(2, 2), 1)]), 2.0).unwrap();
        assert_eq!(p.evaluate(&s), -18.0);
    }
}
