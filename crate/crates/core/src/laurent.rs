//! Laurent polynomials in `z^-1` and matrices of them.
//!
//! A [`LaurentPoly`] stores a dense run of real coefficients together with the
//! exponent (of `z^-1`) of the first stored coefficient, so that
//! `p(z) = sum_k coeffs[k] * z^-(min_deg + k)`. A negative `min_deg` therefore
//! denotes advance terms. Only exact zeros are trimmed; tiny numerical residues
//! are kept so that defect measurements stay honest.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LaurentPoly {
    coeffs: Vec<f64>,
    min_deg: i64,
}

impl LaurentPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c], 0)
    }

    /// `c * z^-deg`.
    pub fn monomial(c: f64, deg: i64) -> Self {
        Self::new(vec![c], deg)
    }

    /// Builds a polynomial from coefficients of `z^-min_deg, z^-(min_deg+1), ...`.
    pub fn new(coeffs: Vec<f64>, min_deg: i64) -> Self {
        let mut p = Self { coeffs, min_deg };
        p.trim();
        p
    }

    fn trim(&mut self) {
        let Some(last) = self.coeffs.iter().rposition(|&c| c != 0.0) else {
            self.coeffs.clear();
            self.min_deg = 0;
            return;
        };
        self.coeffs.truncate(last + 1);
        let first = self.coeffs.iter().position(|&c| c != 0.0).unwrap_or(0);
        if first > 0 {
            self.coeffs.drain(..first);
            self.min_deg += first as i64;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Exponent of `z^-1` carried by `coeffs()[0]`. Zero for the zero polynomial.
    pub fn min_deg(&self) -> i64 {
        self.min_deg
    }

    /// Exponent of `z^-1` carried by the last stored coefficient.
    pub fn max_deg(&self) -> i64 {
        self.min_deg + self.coeffs.len() as i64 - 1
    }

    /// Number of stored coefficients.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficient of `z^-deg`.
    pub fn coeff(&self, deg: i64) -> f64 {
        let k = deg - self.min_deg;
        if k < 0 || k as usize >= self.coeffs.len() {
            0.0
        } else {
            self.coeffs[k as usize]
        }
    }

    /// `(deg, coeff)` pairs of the stored coefficients, including interior zeros.
    pub fn terms(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(k, &c)| (self.min_deg + k as i64, c))
    }

    /// `p(z^-1)`; coefficients are real so no conjugation is needed.
    pub fn reversed(&self) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut coeffs = self.coeffs.clone();
        coeffs.reverse();
        Self {
            coeffs,
            min_deg: -self.max_deg(),
        }
    }

    /// Multiplies by `z^-d` (a delay for positive `d`).
    pub fn delayed(&self, d: i64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        Self {
            coeffs: self.coeffs.clone(),
            min_deg: self.min_deg + d,
        }
    }

    /// Substitutes `z -> z^factor`.
    pub fn upsampled(&self, factor: usize) -> Self {
        assert!(factor >= 1, "upsampling factor must be positive");
        if self.is_zero() || factor == 1 {
            return self.clone();
        }
        let mut coeffs = vec![0.0; (self.coeffs.len() - 1) * factor + 1];
        for (k, &c) in self.coeffs.iter().enumerate() {
            coeffs[k * factor] = c;
        }
        Self {
            coeffs,
            min_deg: self.min_deg * factor as i64,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect(), self.min_deg)
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        if self.is_zero() {
            return other.scaled(sign);
        }
        if other.is_zero() {
            return self.clone();
        }
        let lo = self.min_deg.min(other.min_deg);
        let hi = self.max_deg().max(other.max_deg());
        let mut coeffs = vec![0.0; (hi - lo + 1) as usize];
        for (d, c) in self.terms() {
            coeffs[(d - lo) as usize] += c;
        }
        for (d, c) in other.terms() {
            coeffs[(d - lo) as usize] += sign * c;
        }
        Self::new(coeffs, lo)
    }

    fn product(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (a, &x) in self.coeffs.iter().enumerate() {
            for (b, &y) in other.coeffs.iter().enumerate() {
                coeffs[a + b] += x * y;
            }
        }
        Self::new(coeffs, self.min_deg + other.min_deg)
    }
}

impl fmt::Display for LaurentPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (d, c) in self.terms().filter(|&(_, c)| c != 0.0) {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match d {
                0 => write!(f, "{c}")?,
                _ => write!(f, "{c}z^{}", -d)?,
            }
        }
        Ok(())
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl $tr<&LaurentPoly> for &LaurentPoly {
            type Output = LaurentPoly;
            fn $method(self, rhs: &LaurentPoly) -> LaurentPoly {
                $body(self, rhs)
            }
        }
        impl $tr<LaurentPoly> for LaurentPoly {
            type Output = LaurentPoly;
            fn $method(self, rhs: LaurentPoly) -> LaurentPoly {
                $body(&self, &rhs)
            }
        }
    };
}

forward_binop!(Add, add, |a: &LaurentPoly, b: &LaurentPoly| a.combine(b, 1.0));
forward_binop!(Sub, sub, |a: &LaurentPoly, b: &LaurentPoly| a.combine(b, -1.0));
forward_binop!(Mul, mul, |a: &LaurentPoly, b: &LaurentPoly| a.product(b));

impl Neg for &LaurentPoly {
    type Output = LaurentPoly;
    fn neg(self) -> LaurentPoly {
        self.scaled(-1.0)
    }
}

/// Binary operation selector for [`poly_arith`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolyOp {
    Add,
    Mul,
}

pub fn poly_arith(a: &LaurentPoly, b: &LaurentPoly, op: PolyOp) -> LaurentPoly {
    match op {
        PolyOp::Add => a + b,
        PolyOp::Mul => a * b,
    }
}

/// Row-major matrix of Laurent polynomials.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<LaurentPoly>,
}

impl PolyMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![LaurentPoly::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, LaurentPoly::one());
        }
        m
    }

    pub fn from_entries(rows: usize, cols: usize, entries: Vec<LaurentPoly>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Degree-zero matrix from a row-major slice of constants.
    pub fn from_constant(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self {
            rows,
            cols,
            entries: values.iter().map(|&c| LaurentPoly::constant(c)).collect(),
        }
    }

    /// `sum_d coeffs[d] z^-(min_deg + d)` for constant row-major coefficient matrices.
    pub fn from_coefficients(rows: usize, cols: usize, min_deg: i64, coeffs: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let seq: Vec<f64> = coeffs.iter().map(|cm| cm[r * cols + c]).collect();
                m.set(r, c, LaurentPoly::new(seq, min_deg));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[LaurentPoly] {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> &LaurentPoly {
        &self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, p: LaurentPoly) {
        self.entries[r * self.cols + c] = p;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c).clone());
            }
        }
        t
    }

    /// Paraconjugate: transpose and substitute `z -> z^-1` (coefficients are real).
    pub fn paraconjugate(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c).reversed());
            }
        }
        t
    }

    pub fn mat_mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = LaurentPoly::zero();
                for k in 0..self.cols {
                    let a = self.get(r, k);
                    let b = other.get(k, c);
                    if !a.is_zero() && !b.is_zero() {
                        acc = &acc + &(a * b);
                    }
                }
                out.set(r, c, acc);
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|p| p.scaled(s)).collect(),
        }
    }

    pub fn delayed(&self, d: i64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|p| p.delayed(d)).collect(),
        }
    }

    /// Columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        let mut out = Self::zeros(self.rows, end - start);
        for r in 0..self.rows {
            for c in start..end {
                out.set(r, c - start, self.get(r, c).clone());
            }
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let mut out = Self::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, self.get(r, c).clone());
            }
            for c in 0..other.cols {
                out.set(r, self.cols + c, other.get(r, c).clone());
            }
        }
        Ok(out)
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vcat(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot stack {} columns on {} columns",
                self.cols, other.cols
            )));
        }
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        Self::from_entries(self.rows + other.rows, self.cols, entries)
    }

    /// Smallest and largest `z^-1` exponent over all nonzero entries, if any.
    pub fn degree_range(&self) -> Option<(i64, i64)> {
        self.entries
            .iter()
            .filter(|p| !p.is_zero())
            .fold(None, |acc, p| match acc {
                None => Some((p.min_deg(), p.max_deg())),
                Some((lo, hi)) => Some((lo.min(p.min_deg()), hi.max(p.max_deg()))),
            })
    }

    /// Row-major constant matrix of the `z^-deg` coefficients.
    pub fn coefficient(&self, deg: i64) -> Vec<f64> {
        self.entries.iter().map(|p| p.coeff(deg)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, p| m.max(p.max_abs()))
    }

    /// Elementwise maximum absolute coefficient difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).max_abs())
            .fold(0.0, f64::max)
    }
}

/// Max absolute deviation of the coefficients of `m~(z) m(z)` from `scale * I`.
pub fn paraunitarity_defect(m: &PolyMatrix, scale: f64) -> f64 {
    let gram = m
        .paraconjugate()
        .mat_mul(m)
        .expect("paraconjugate always conforms");
    let mut defect: f64 = 0.0;
    for r in 0..gram.rows() {
        for c in 0..gram.cols() {
            let target = if r == c { scale } else { 0.0 };
            let p = gram.get(r, c);
            defect = defect.max((p.coeff(0) - target).abs());
            for (d, coef) in p.terms() {
                if d != 0 {
                    defect = defect.max(coef.abs());
                }
            }
        }
    }
    defect
}
