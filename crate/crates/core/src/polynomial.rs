//! Sparse multivariate polynomials over a fixed, ordered set of named variables.
//!
//! Coefficients are generic. Two instantiations are used throughout the crate:
//! [`Polynomial`] (exact [`Rational`] coefficients, produced by the parser and used
//! for identity checks) and [`FloatPolynomial`] (`f64`, used for SDP assembly and
//! evaluation). [`Polynomial::to_float`] is the only lossy conversion between them.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`], whose ordering is graded
//! lexicographic with the first ambient variable most significant.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolyError {
    #[error("variable sets differ: {left:?} vs {right:?}")]
    VariableMismatch { left: Vec<String>, right: Vec<String> },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
}

/// Parse failure with the 1-based column where it happened.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("column {column}: {message}")]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

/// Coefficient ring used by [`Poly`].
pub trait Coefficient:
    Clone
    + PartialEq
    + fmt::Debug
    + fmt::Display
    + Zero
    + One
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Send
    + Sync
{
}

impl<T> Coefficient for T where
    T: Clone
        + PartialEq
        + fmt::Debug
        + fmt::Display
        + Zero
        + One
        + Neg<Output = T>
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
        + Send
        + Sync
{
}

/// Exponent vector, one entry per ambient variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self / other` when `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(Monomial)
    }

    pub fn eval<C: Coefficient>(&self, point: &[C]) -> C {
        let mut acc = C::one();
        for (x, &e) in point.iter().zip(&self.0) {
            for _ in 0..e {
                acc = acc * x.clone();
            }
        }
        acc
    }

    /// Renders as `x*y^2`, `1` for the unit monomial.
    pub fn format(&self, vars: &[String]) -> String {
        if self.is_one() {
            return "1".to_string();
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(vars)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, v)| if e == 1 { v.clone() } else { format!("{v}^{e}") })
            .collect();
        parts.join("*")
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials of total degree `<= degree` in `nvars` variables, ascending graded-lex.
pub fn monomials_up_to(nvars: usize, degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut level = Vec::new();
        let mut current = vec![0u32; nvars];
        compositions(total, 0, &mut current, &mut level);
        level.sort();
        out.extend(level);
    }
    out
}

fn compositions(remaining: u32, index: usize, current: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if index == n - 1 {
        current[index] = remaining;
        out.push(Monomial(current.clone()));
        current[index] = 0;
        return;
    }
    for e in 0..=remaining {
        current[index] = e;
        compositions(remaining - e, index + 1, current, out);
    }
    current[index] = 0;
}

/// Sparse polynomial with coefficients in `C` over named variables.
#[derive(Debug, Clone)]
pub struct Poly<C> {
    vars: Arc<[String]>,
    terms: BTreeMap<Monomial, C>,
}

pub type Polynomial = Poly<Rational>;
pub type FloatPolynomial = Poly<f64>;

impl<C: Coefficient> PartialEq for Poly<C> {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.terms == other.terms
    }
}

impl<C: Coefficient> Poly<C> {
    pub fn zero<S: AsRef<str>>(vars: &[S]) -> Self {
        Poly {
            vars: vars.iter().map(|s| s.as_ref().to_string()).collect(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant<S: AsRef<str>>(vars: &[S], c: C) -> Self {
        let mut p = Self::zero(vars);
        let n = p.nvars();
        p.add_term(Monomial::one(n), c);
        p
    }

    /// The coordinate polynomial for `name`.
    pub fn variable<S: AsRef<str>>(vars: &[S], name: &str) -> Result<Self, PolyError> {
        let mut p = Self::zero(vars);
        let idx = p.var_index(name)?;
        let n = p.nvars();
        p.add_term(Monomial::var(n, idx), C::one());
        Ok(p)
    }

    pub fn from_terms<S: AsRef<str>>(vars: &[S], terms: impl IntoIterator<Item = (Monomial, C)>) -> Self {
        let mut p = Self::zero(vars);
        for (m, c) in terms {
            assert_eq!(m.nvars(), p.nvars(), "monomial arity");
            p.add_term(m, c);
        }
        p
    }

    fn with_vars(vars: Arc<[String]>) -> Self {
        Poly {
            vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_index(&self, name: &str) -> Result<usize, PolyError> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| PolyError::UnknownVariable(name.to_string()))
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &C)> + ExactSizeIterator {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> C {
        self.terms.get(m).cloned().unwrap_or_else(C::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, m: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.remove(&m) {
            Some(old) => {
                let s = old + c;
                if !s.is_zero() {
                    self.terms.insert(m, s);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    /// Total degree, `-1` for the zero polynomial.
    pub fn degree(&self) -> i64 {
        self.terms.keys().next_back().map(|m| m.degree() as i64).unwrap_or(-1)
    }

    /// Degree in one variable, `-1` for the zero polynomial.
    pub fn degree_in(&self, var: &str) -> Result<i64, PolyError> {
        let i = self.var_index(var)?;
        Ok(self.terms.keys().map(|m| m.0[i] as i64).max().unwrap_or(-1))
    }

    fn check_vars(&self, other: &Self) -> Result<(), PolyError> {
        if self.vars == other.vars {
            Ok(())
        } else {
            Err(PolyError::VariableMismatch {
                left: self.vars.to_vec(),
                right: other.vars.to_vec(),
            })
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_vars(other)?;
        let mut out = Self::with_vars(self.vars.clone());
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.add_term(m1.mul(m2), c1.clone() * c2.clone());
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = Self::with_vars(self.vars.clone());
        for (m, a) in &self.terms {
            out.add_term(m.clone(), a.clone() * c.clone());
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(&self.vars, C::one());
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    pub fn eval(&self, point: &[C]) -> Result<C, PolyError> {
        if point.len() != self.nvars() {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars(),
                got: point.len(),
            });
        }
        Ok(self
            .terms
            .iter()
            .fold(C::zero(), |acc, (m, c)| acc + c.clone() * m.eval(point)))
    }

    /// Binds some variables to values; the result lives over the remaining variables
    /// (in their original order).
    pub fn substitute(&self, bindings: &[(&str, C)]) -> Result<Self, PolyError> {
        let mut bound: Vec<Option<C>> = vec![None; self.nvars()];
        for (name, value) in bindings {
            let i = self.var_index(name)?;
            bound[i] = Some(value.clone());
        }
        let remaining: Arc<[String]> = self
            .vars
            .iter()
            .zip(&bound)
            .filter(|(_, b)| b.is_none())
            .map(|(v, _)| v.clone())
            .collect();
        let mut out = Self::with_vars(remaining);
        for (m, c) in &self.terms {
            let mut coef = c.clone();
            let mut exps = Vec::with_capacity(out.nvars());
            for (&e, b) in m.0.iter().zip(&bound) {
                match b {
                    Some(v) => {
                        for _ in 0..e {
                            coef = coef * v.clone();
                        }
                    }
                    None => exps.push(e),
                }
            }
            out.add_term(Monomial(exps), coef);
        }
        Ok(out)
    }

    /// Re-expresses the polynomial over a superset of its variables.
    pub fn embed<S: AsRef<str>>(&self, vars: &[S]) -> Result<Self, PolyError> {
        let target: Arc<[String]> = vars.iter().map(|s| s.as_ref().to_string()).collect();
        let map: Vec<usize> = self
            .vars
            .iter()
            .map(|v| {
                target
                    .iter()
                    .position(|t| t == v)
                    .ok_or_else(|| PolyError::UnknownVariable(v.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut out = Self::with_vars(target.clone());
        for (m, c) in &self.terms {
            let mut e = vec![0; target.len()];
            for (k, &i) in map.iter().enumerate() {
                e[i] = m.0[k];
            }
            out.add_term(Monomial(e), c.clone());
        }
        Ok(out)
    }

    /// `p(s_1 x_1, ..., s_n x_n)`.
    pub fn scale_vars(&self, scales: &[C]) -> Result<Self, PolyError> {
        if scales.len() != self.nvars() {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars(),
                got: scales.len(),
            });
        }
        let mut out = Self::with_vars(self.vars.clone());
        for (m, c) in &self.terms {
            let mut v = c.clone();
            for (s, &e) in scales.iter().zip(m.exponents()) {
                for _ in 0..e {
                    v = v * s.clone();
                }
            }
            out.add_term(m.clone(), v);
        }
        Ok(out)
    }

    pub fn map_coeffs<D: Coefficient>(&self, f: impl Fn(&C) -> D) -> Poly<D> {
        let mut out = Poly::<D>::with_vars(self.vars.clone());
        for (m, c) in &self.terms {
            out.add_term(m.clone(), f(c));
        }
        out
    }

    /// Highest coefficient magnitude under a caller-supplied norm.
    pub fn max_abs_coeff(&self, abs: impl Fn(&C) -> f64) -> f64 {
        self.terms.values().map(abs).fold(0.0, f64::max)
    }

    /// True when the polynomial is `+-(v - c)` style: a single coordinate variable
    /// with coefficient one plus a constant. Returns the variable index.
    pub fn as_coordinate(&self) -> Option<usize> {
        let mut var = None;
        for (m, c) in &self.terms {
            if m.is_one() {
                continue;
            }
            if m.degree() != 1 || !c.is_one() || var.is_some() {
                return None;
            }
            var = m.0.iter().position(|&e| e == 1);
        }
        var
    }
}

impl Poly<Rational> {
    /// Parses the polynomial text grammar over the given variables.
    pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Self, ParseError> {
        let names: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
        Parser::new(text, &names).parse()
    }

    pub fn to_float(&self) -> FloatPolynomial {
        self.map_coeffs(rational_to_f64)
    }
}

impl Poly<f64> {
    pub fn eval_f64(&self, point: &[f64]) -> Result<f64, PolyError> {
        self.eval(point)
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // numerator/denominator too large for direct conversion
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Exact rational value of a finite float.
pub fn f64_to_rational(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

pub fn rational_from_ints(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

impl<C: Coefficient> Add for &Poly<C> {
    type Output = Poly<C>;
    /// Panics on variable mismatch; see [`Poly::checked_add`].
    fn add(self, rhs: Self) -> Poly<C> {
        self.checked_add(rhs).expect("polynomial add")
    }
}

impl<C: Coefficient> Sub for &Poly<C> {
    type Output = Poly<C>;
    fn sub(self, rhs: Self) -> Poly<C> {
        self.checked_sub(rhs).expect("polynomial sub")
    }
}

impl<C: Coefficient> Mul for &Poly<C> {
    type Output = Poly<C>;
    fn mul(self, rhs: Self) -> Poly<C> {
        self.checked_mul(rhs).expect("polynomial mul")
    }
}

impl<C: Coefficient> Neg for &Poly<C> {
    type Output = Poly<C>;
    fn neg(self) -> Poly<C> {
        self.map_coeffs(|c| -c.clone())
    }
}

/// Writes terms highest first, e.g. `y^3 - x*y + 1`.
impl<C: Coefficient + SignedCoeff> fmt::Display for Poly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative_coeff();
            let mag = if neg { -c.clone() } else { c.clone() };
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            if m.is_one() {
                write!(f, "{mag}")?;
            } else if mag.is_one() {
                write!(f, "{}", m.format(&self.vars))?;
            } else {
                write!(f, "{mag}*{}", m.format(&self.vars))?;
            }
        }
        Ok(())
    }
}

/// Sign test used for display.
pub trait SignedCoeff {
    fn is_negative_coeff(&self) -> bool;
}

impl SignedCoeff for f64 {
    fn is_negative_coeff(&self) -> bool {
        *self < 0.0
    }
}

impl SignedCoeff for Rational {
    fn is_negative_coeff(&self) -> bool {
        self.is_negative()
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn new(text: &str, vars: &'a [String]) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            vars,
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: self.pos + 1,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial, ParseError> {
        let mut p = Polynomial::zero(self.vars);
        if self.peek().is_none() {
            return self.err("empty polynomial");
        }
        let mut first = true;
        loop {
            let sign = match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    Rational::one()
                }
                Some('-') => {
                    self.pos += 1;
                    -Rational::one()
                }
                Some(_) if first => Rational::one(),
                Some(c) => return self.err(format!("expected `+` or `-`, found `{c}`")),
                None => break,
            };
            first = false;
            let (m, c) = self.term()?;
            p.add_term(m, sign * c);
            if self.peek().is_none() {
                break;
            }
        }
        Ok(p)
    }

    fn term(&mut self) -> Result<(Monomial, Rational), ParseError> {
        let n = self.vars.len();
        let mut coef = Rational::one();
        let mut exps = vec![0u32; n];
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_digit() || c == '.' => {
                    coef *= self.number()?;
                }
                Some(c) if c.is_alphabetic() || c == '_' => {
                    let (i, e) = self.power()?;
                    exps[i] += e;
                }
                Some(c) => return self.err(format!("expected coefficient or variable, found `{c}`")),
                None => return self.err("expected coefficient or variable, found end of input"),
            }
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                }
                Some(c) if c.is_alphabetic() || c == '_' => {}
                _ => break,
            }
        }
        Ok((Monomial(exps), coef))
    }

    fn number(&mut self) -> Result<Rational, ParseError> {
        let start = self.pos;
        let mut int_part = String::new();
        let mut frac_part = String::new();
        while let Some(c) = self.chars.get(self.pos).copied().filter(char::is_ascii_digit) {
            int_part.push(c);
            self.pos += 1;
        }
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            while let Some(c) = self.chars.get(self.pos).copied().filter(char::is_ascii_digit) {
                frac_part.push(c);
                self.pos += 1;
            }
        }
        if int_part.is_empty() && frac_part.is_empty() {
            self.pos = start;
            return self.err("malformed number");
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: BigInt = digits.parse().expect("digits");
        let denom = num_traits::pow(BigInt::from(10), frac_part.len());
        let mut value = Rational::new(numer, denom);
        // optional `/q`
        let save = self.pos;
        self.skip_ws();
        if self.chars.get(self.pos) == Some(&'/') {
            self.pos += 1;
            self.skip_ws();
            let dstart = self.pos;
            let mut q = String::new();
            while let Some(c) = self.chars.get(self.pos).copied().filter(char::is_ascii_digit) {
                q.push(c);
                self.pos += 1;
            }
            if q.is_empty() {
                self.pos = dstart;
                return self.err("expected integer denominator after `/`");
            }
            let q: BigInt = q.parse().expect("digits");
            if q.is_zero() {
                self.pos = dstart;
                return self.err("zero denominator");
            }
            value /= Rational::from_integer(q);
        } else {
            self.pos = save;
        }
        Ok(value)
    }

    fn power(&mut self) -> Result<(usize, u32), ParseError> {
        let start = self.pos;
        let mut name = String::new();
        while let Some(c) = self
            .chars
            .get(self.pos)
            .copied()
            .filter(|c| c.is_alphanumeric() || *c == '_')
        {
            name.push(c);
            self.pos += 1;
        }
        let Some(i) = self.vars.iter().position(|v| *v == name) else {
            self.pos = start;
            return self.err(format!("unknown variable `{name}`"));
        };
        let mut e = 1;
        if self.peek() == Some('^') {
            self.pos += 1;
            self.skip_ws();
            let estart = self.pos;
            let mut digits = String::new();
            while let Some(c) = self.chars.get(self.pos).copied().filter(char::is_ascii_digit) {
                digits.push(c);
                self.pos += 1;
            }
            if digits.is_empty() {
                self.pos = estart;
                return self.err("expected integer exponent after `^`");
            }
            e = match digits.parse() {
                Ok(v) => v,
                Err(_) => {
                    self.pos = estart;
                    return self.err("exponent too large");
                }
            };
        }
        Ok((i, e))
    }
}

/// Checks a variable list for duplicates and empty names.
pub fn validate_vars<S: AsRef<str>>(vars: &[S]) -> Result<(), PolyError> {
    let mut seen = std::collections::HashSet::new();
    for v in vars {
        if !seen.insert(v.as_ref()) {
            return Err(PolyError::DuplicateVariable(v.as_ref().to_string()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy() -> Vec<&'static str> {
        vec!["x", "y"]
    }

    fn p(s: &str) -> Polynomial {
        Polynomial::parse(s, &xy()).unwrap()
    }

    fn q(n: i64, d: i64) -> Rational {
        rational_from_ints(n, d)
    }

    #[test]
    fn add_examples() {
        assert_eq!(&p("x + y") + &p("x - y"), p("2x"));
        assert_eq!(&p("x*y - 3") + &Polynomial::zero(&xy()), p("x*y - 3"));
        let s = &p("y^3") + &p("1 - x*y");
        assert_eq!(s, p("y^3 - x*y + 1"));
        assert_eq!(s.to_string(), "y^3 - x*y + 1");
    }

    #[test]
    fn mul_examples() {
        assert_eq!(&p("y + 1") * &p("1 - y"), p("1 - y^2"));
        assert_eq!(&p("x^2 - y") * &p("1"), p("x^2 - y"));
        assert_eq!((&p("x") * &p("y")).to_string(), "x*y");
    }

    #[test]
    fn mismatched_vars_rejected() {
        let a = Polynomial::parse("x", &["x"]).unwrap();
        let b = p("x");
        assert!(matches!(a.checked_add(&b), Err(PolyError::VariableMismatch { .. })));
        assert!(a.checked_mul(&b).is_err());
    }

    #[test]
    fn substitute_examples() {
        let f2 = p("y + x");
        let s = f2.substitute(&[("x", Rational::one())]).unwrap();
        assert_eq!(s, Polynomial::parse("y + 1", &["y"]).unwrap());

        let f4 = p("1 - x^2");
        let s = f4.substitute(&[("x", Rational::one())]).unwrap();
        assert!(s.is_zero());

        let f3 = p("1 - x*y");
        let s = f3.substitute(&[("x", q(1, 2))]).unwrap();
        assert_eq!(s, Polynomial::parse("1 - 1/2*y", &["y"]).unwrap());

        assert_eq!(
            f3.substitute(&[("z", Rational::one())]),
            Err(PolyError::UnknownVariable("z".into()))
        );
    }

    #[test]
    fn substitute_matches_sampling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f3 = p("1 - x*y").to_float();
        let s = f3.substitute(&[("x", 0.5)]).unwrap();
        for _ in 0..20 {
            let y: f64 = rng.gen_range(-10.0..10.0);
            let direct = f3.eval(&[0.5, y]).unwrap();
            let via = s.eval(&[y]).unwrap();
            assert!((direct - via).abs() <= 1e-12 * (1.0 + direct.abs()));
            assert!((via - (1.0 - 0.5 * y)).abs() <= 1e-12 * (1.0 + via.abs()));
        }
    }

    #[test]
    fn eval_examples() {
        let two = Rational::from_integer(2.into());
        assert_eq!(p("y^3").eval(&[Rational::zero(), two]).unwrap(), q(8, 1));
        assert_eq!(
            p("1 - x*y").eval(&[Rational::one(), Rational::one()]).unwrap(),
            Rational::zero()
        );
        let v = p("2y + x").to_float().eval(&[0.05, 1.0]).unwrap();
        // Horner in y with x fixed: (2)*y + 0.05
        let horner = 2.0f64.mul_add(1.0, 0.05);
        assert!((v - horner).abs() < 1e-15);
        assert!((v - 2.05).abs() < 1e-15);
        assert_eq!(
            p("x").eval(&[Rational::one()]),
            Err(PolyError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn degree_examples() {
        assert_eq!(p("y^3").degree(), 3);
        assert_eq!(Polynomial::zero(&xy()).degree(), -1);
        assert_eq!(p("2*y + x").degree_in("y").unwrap(), 1);
        assert_eq!(p("x^2*y + y^3").degree_in("x").unwrap(), 2);
        assert!(p("x").degree_in("w").is_err());
    }

    #[test]
    fn parse_grammar() {
        assert_eq!(p("1/2 x"), p("0.5*x"));
        assert_eq!(p(" 2 * x ^ 2 * y "), p("2x^2y"));
        assert_eq!(p("-x + x"), Polynomial::zero(&xy()));
        assert_eq!(p("x*x"), p("x^2"));
        assert!(Polynomial::parse("3 2 x", &xy()).is_err());
    }

    #[test]
    fn parse_errors_carry_columns() {
        let e = Polynomial::parse("y^", &xy()).unwrap_err();
        assert_eq!(e.column, 3);
        let e = Polynomial::parse("x + z", &xy()).unwrap_err();
        assert_eq!(e.column, 5);
        assert!(Polynomial::parse("", &xy()).is_err());
        assert!(Polynomial::parse("x +", &xy()).is_err());
        assert!(Polynomial::parse("1/0", &xy()).is_err());
        assert!(Polynomial::parse("x y", &xy()).is_ok());
        assert!(Polynomial::parse("x ) y", &xy()).is_err());
    }

    #[test]
    fn display_roundtrip() {
        for s in ["y^3 - x*y + 1", "-1/3*x^2 + y", "0", "7"] {
            let a = p(s);
            assert_eq!(p(&a.to_string()), a);
        }
    }

    #[test]
    fn basis_order_is_graded_lex() {
        let b = monomials_up_to(2, 2);
        let rendered: Vec<String> = b.iter().map(|m| m.format(&["x".into(), "y".into()])).collect();
        assert_eq!(rendered, ["1", "y", "x", "y^2", "x*y", "x^2"]);
        assert_eq!(monomials_up_to(3, 3).len(), 20);
        assert_eq!(monomials_up_to(0, 3).len(), 1);
    }

    #[test]
    fn coordinate_detection() {
        assert_eq!(p("x").as_coordinate(), Some(0));
        assert_eq!(p("y - 3").as_coordinate(), Some(1));
        assert_eq!(p("x*y").as_coordinate(), None);
        assert_eq!(p("2x").as_coordinate(), None);
    }

    #[test]
    fn embed_reorders() {
        let a = Polynomial::parse("y^2 + 1", &["y"]).unwrap();
        assert_eq!(a.embed(&xy()).unwrap(), p("y^2 + 1"));
    }
}
