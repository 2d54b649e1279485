//! Finitely generated quadratic modules and preorderings, their degree
//! truncations, and the coefficient-matching SDPs built from them.
//!
//! An element of the truncation `M_d` is `sum_e sigma_e * p_e`, where `p_e` runs
//! over the product set ([`ConeDescription::product_set`]) and each `sigma_e` is a
//! sum of squares of polynomials of total degree `<= d`, i.e.
//! `sigma_e = v' G_e v` with `v` the monomial basis of degree `<= d` and
//! `G_e` PSD.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_traits::One;

use crate::polynomial::{f64_to_rational, monomials_up_to, Monomial, PolyError, Polynomial, Rational};
use crate::sdp::{SdpProblem, SymEntry};

/// Preorderings expand to `2^s` products; beyond this many generators use QM mode.
pub const MAX_PREORDERING_GENERATORS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("preordering with {0} generators exceeds the limit of {MAX_PREORDERING_GENERATORS} (2^s products); use quadratic-module mode")]
    Capacity(usize),
    #[error("target has degree {target_degree} but degree bound d={d} only reaches {reach}; need d >= {required}")]
    DegreeTooLow {
        target_degree: i64,
        d: usize,
        reach: i64,
        required: usize,
    },
    #[error("label {0} is not a product of the cone")]
    UnknownLabel(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConeMode {
    #[serde(rename = "QM")]
    QuadraticModule,
    #[serde(rename = "PO")]
    Preordering,
}

impl fmt::Display for ConeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConeMode::QuadraticModule => write!(f, "QM"),
            ConeMode::Preordering => write!(f, "PO"),
        }
    }
}

impl std::str::FromStr for ConeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "QM" => Ok(ConeMode::QuadraticModule),
            "PO" => Ok(ConeMode::Preordering),
            other => Err(format!("unknown mode `{other}` (expected QM or PO)")),
        }
    }
}

/// `QM(f_1..f_s)` or `PO(f_1..f_s)` over named variables. No generators means the
/// cone of sums of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeDescription {
    vars: Vec<String>,
    generators: Vec<Polynomial>,
    mode: ConeMode,
}

/// One generator product `f_1^{e_1} ... f_s^{e_s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub label: Label,
    pub poly: Polynomial,
}

/// Exponent tuple `e` of a generator product.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub Vec<u8>);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| format!("label `{s}` is not a parenthesized tuple"))?;
        if inner.trim().is_empty() {
            return Ok(Label(Vec::new()));
        }
        inner
            .split(',')
            .map(|t| t.trim().parse::<u8>().map_err(|e| format!("label `{s}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Label)
    }
}

impl ConeDescription {
    pub fn new<S: AsRef<str>>(vars: &[S], generators: Vec<Polynomial>, mode: ConeMode) -> Result<Self, ConeError> {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        crate::polynomial::validate_vars(&vars)?;
        for g in &generators {
            if g.vars() != vars.as_slice() {
                return Err(PolyError::VariableMismatch {
                    left: vars.clone(),
                    right: g.vars().to_vec(),
                }
                .into());
            }
        }
        Ok(ConeDescription { vars, generators, mode })
    }

    /// Parses generator strings over `vars`.
    pub fn parse<S: AsRef<str>>(vars: &[S], generators: &[&str], mode: ConeMode) -> Result<Self, String> {
        let gens = generators
            .iter()
            .map(|g| Polynomial::parse(g, vars).map_err(|e| format!("`{g}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vars, gens, mode).map_err(|e| e.to_string())
    }

    pub fn sums_of_squares<S: AsRef<str>>(vars: &[S]) -> Self {
        Self::new(vars, Vec::new(), ConeMode::QuadraticModule).expect("no generators")
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn generators(&self) -> &[Polynomial] {
        &self.generators
    }

    pub fn mode(&self) -> ConeMode {
        self.mode
    }

    pub fn with_generators(&self, generators: Vec<Polynomial>) -> Result<Self, ConeError> {
        Self::new(&self.vars, generators, self.mode)
    }

    /// Products in deterministic order: QM gives `[1, f_1, ..., f_s]`; PO counts
    /// `e` in binary with `e_1` the least significant bit.
    pub fn product_set(&self) -> Result<Vec<Product>, ConeError> {
        let s = self.generators.len();
        let one = Polynomial::constant(&self.vars, num_traits::One::one());
        match self.mode {
            ConeMode::QuadraticModule => {
                let mut out = vec![Product {
                    label: Label(vec![0; s]),
                    poly: one,
                }];
                for (i, g) in self.generators.iter().enumerate() {
                    let mut e = vec![0; s];
                    e[i] = 1;
                    out.push(Product {
                        label: Label(e),
                        poly: g.clone(),
                    });
                }
                Ok(out)
            }
            ConeMode::Preordering => {
                if s > MAX_PREORDERING_GENERATORS {
                    return Err(ConeError::Capacity(s));
                }
                let mut out = Vec::with_capacity(1 << s);
                for k in 0u32..(1u32 << s) {
                    let e: Vec<u8> = (0..s).map(|i| ((k >> i) & 1) as u8).collect();
                    let mut poly = one.clone();
                    for (i, g) in self.generators.iter().enumerate() {
                        if e[i] == 1 {
                            poly = &poly * g;
                        }
                    }
                    out.push(Product { label: Label(e), poly });
                }
                Ok(out)
            }
        }
    }

    pub fn predicate(&self) -> SemialgebraicPredicate {
        SemialgebraicPredicate {
            generators: self.generators.iter().map(|g| g.to_float()).collect(),
        }
    }

    pub fn truncate(&self, degree: usize) -> TruncatedCone {
        TruncatedCone {
            cone: self.clone(),
            degree,
        }
    }
}

impl fmt::Display for ConeDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let gens: Vec<String> = self.generators.iter().map(|g| g.to_string()).collect();
        write!(f, "{}({})", self.mode, gens.join(", "))
    }
}

/// `S(f_1..f_s) = { x : f_i(x) >= 0 for all i }`, independent of the mode.
#[derive(Debug, Clone)]
pub struct SemialgebraicPredicate {
    generators: Vec<crate::polynomial::FloatPolynomial>,
}

impl SemialgebraicPredicate {
    pub fn contains(&self, point: &[f64]) -> bool {
        self.contains_with_slack(point, 0.0)
    }

    pub fn contains_with_slack(&self, point: &[f64], slack: f64) -> bool {
        self.generators
            .iter()
            .all(|g| g.eval(point).map(|v| v >= -slack).unwrap_or(false))
    }
}

/// `M_d`: Gram blocks over all monomials of total degree `<= d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedCone {
    pub cone: ConeDescription,
    pub degree: usize,
}

impl TruncatedCone {
    pub fn new(cone: ConeDescription, degree: usize) -> Self {
        TruncatedCone { cone, degree }
    }

    pub fn basis(&self) -> Vec<Monomial> {
        monomials_up_to(self.cone.vars.len(), self.degree as u32)
    }

    /// Largest total degree an element of the truncation can have.
    pub fn reach(&self) -> Result<i64, ConeError> {
        let maxprod = self
            .cone
            .product_set()?
            .iter()
            .map(|p| p.poly.degree())
            .max()
            .unwrap_or(0)
            .max(0);
        Ok(2 * self.degree as i64 + maxprod)
    }

    pub fn check_degree(&self, f: &Polynomial) -> Result<(), ConeError> {
        let reach = self.reach()?;
        let fd = f.degree();
        if fd > reach {
            let maxprod = reach - 2 * self.degree as i64;
            let required = ((fd - maxprod + 1) / 2).max(0) as usize;
            return Err(ConeError::DegreeTooLow {
                target_degree: fd,
                d: self.degree,
                reach,
                required,
            });
        }
        Ok(())
    }
}

/// Diagonal change of coordinates `x = s * z` combined with positive
/// normalization of every generator and of the target.
///
/// Membership of `f` in `M_d` is equivalent to membership of
/// `f(s*z) / c_f` in the truncation of `QM/PO(g_i(s*z) / c_i)`, with the same
/// labels and degree bound. All factors are powers of two, so the transform is
/// exact in both float and rational arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub var_scales: Vec<f64>,
    pub generator_scales: Vec<f64>,
    pub target_scale: f64,
}

impl Conditioning {
    pub fn identity(cone: &ConeDescription) -> Self {
        Conditioning {
            var_scales: vec![1.0; cone.vars.len()],
            generator_scales: vec![1.0; cone.generators.len()],
            target_scale: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.target_scale == 1.0 && self.var_scales.iter().chain(&self.generator_scales).all(|&v| v == 1.0)
    }

    /// Scales each variable to the extent of an interval cut out by affine
    /// univariate generators, then normalizes coefficients to max magnitude ~1.
    /// Factors close to one (within 4x for variables, 16x for coefficients) are
    /// left at one.
    pub fn choose(cone: &ConeDescription, f: &Polynomial) -> Self {
        let n = cone.vars.len();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for g in &cone.generators {
            if let Some((j, a, b)) = affine_univariate(g) {
                let end = -a / b;
                if b > 0.0 {
                    lo[j] = lo[j].max(end);
                } else {
                    hi[j] = hi[j].min(end);
                }
            }
        }
        let var_scales: Vec<f64> = (0..n)
            .map(|j| {
                let ext = lo[j].abs().max(hi[j].abs());
                if ext.is_finite() && ext > 0.0 && !(0.25..4.0).contains(&ext) {
                    pow2_round(ext)
                } else {
                    1.0
                }
            })
            .collect();
        let scaled_norm = |p: &Polynomial| -> f64 {
            let s: Vec<Rational> = var_scales.iter().map(|&v| f64_to_rational(v)).collect();
            let q = p.scale_vars(&s).expect("same variables");
            let m = q.to_float().max_abs_coeff(|c| c.abs());
            if m > 0.0 && !(1.0 / 16.0..16.0).contains(&m) {
                pow2_round(m)
            } else {
                1.0
            }
        };
        Conditioning {
            generator_scales: cone.generators.iter().map(scaled_norm).collect(),
            target_scale: scaled_norm(f),
            var_scales,
        }
    }

    fn rational_var_scales(&self) -> Vec<Rational> {
        self.var_scales.iter().map(|&v| f64_to_rational(v)).collect()
    }

    fn transform(&self, p: &Polynomial, c: f64) -> Result<Polynomial, ConeError> {
        let q = p.scale_vars(&self.rational_var_scales())?;
        Ok(q.scale(&(Rational::one() / f64_to_rational(c))))
    }

    /// The cone over the scaled coordinates with normalized generators.
    pub fn apply_cone(&self, cone: &ConeDescription) -> Result<ConeDescription, ConeError> {
        if self.var_scales.len() != cone.vars.len() || self.generator_scales.len() != cone.generators.len() {
            return Err(PolyError::DimensionMismatch {
                expected: cone.generators.len(),
                got: self.generator_scales.len(),
            }
            .into());
        }
        let gens = cone
            .generators
            .iter()
            .zip(&self.generator_scales)
            .map(|(g, &c)| self.transform(g, c))
            .collect::<Result<Vec<_>, _>>()?;
        cone.with_generators(gens)
    }

    /// `f(s*z) / c_f`
    pub fn apply_target(&self, f: &Polynomial) -> Result<Polynomial, ConeError> {
        self.transform(f, self.target_scale)
    }
}

fn pow2_round(x: f64) -> f64 {
    2f64.powi((x.log2().round() as i32).clamp(-40, 40))
}

/// `(j, a, b)` when `g = a + b * x_j` with `b != 0`.
fn affine_univariate(g: &Polynomial) -> Option<(usize, f64, f64)> {
    let gf = g.to_float();
    let mut lin = None;
    let mut a = 0.0;
    for (m, &c) in gf.terms() {
        match m.degree() {
            0 => a = c,
            1 => {
                if lin.is_some() {
                    return None;
                }
                let j = m.exponents().iter().position(|&e| e == 1)?;
                lin = Some((j, c));
            }
            _ => return None,
        }
    }
    lin.map(|(j, b)| (j, a, b))
}

/// Coefficient-matching SDP for `f in M_d`.
///
/// Block `k` is the Gram matrix of `products[k]`; row `i` matches the coefficient
/// of `rows[i]`.
#[derive(Debug, Clone)]
pub struct MembershipSystem {
    pub sdp: SdpProblem,
    pub basis: Vec<Monomial>,
    pub products: Vec<Product>,
    pub rows: Vec<Monomial>,
}

/// Level SDP `sup { r : f - r in M_d }` whose dual is the pseudo-moment problem
/// `min L(f)  s.t.  L(1) = 1, localizing matrices PSD`.
///
/// The constant coefficient is moved into the objective: the primal minimizes the
/// constant term of `sum_e sigma_e p_e` subject to matching every non-constant
/// coefficient of `f`, so `sup r = f(0) - p*`. Dual multipliers map to pseudo-moments
/// by `L(x^m) = -y_m` for `m = rows[i]`, with `L(1) = 1`.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub sdp: SdpProblem,
    pub basis: Vec<Monomial>,
    pub products: Vec<Product>,
    pub rows: Vec<Monomial>,
    /// constant coefficient of the target
    pub constant: f64,
}

impl MomentSystem {
    /// `sup r` from the primal objective value.
    pub fn level_from_objective(&self, primal_objective: f64) -> f64 {
        self.constant - primal_objective
    }

    /// Pseudo-moments from dual multipliers, constant monomial first.
    pub fn moments_from_dual(&self, y: &[f64]) -> Vec<(Monomial, f64)> {
        let n = self.basis.first().map(|m| m.nvars()).unwrap_or(0);
        let mut out = vec![(Monomial::one(n), 1.0)];
        out.extend(self.rows.iter().cloned().zip(y.iter().map(|v| -v)));
        out
    }

    /// Homogeneous functional from a Farkas vector (`L(1) = 0`).
    pub fn ray_from_farkas(&self, y: &[f64]) -> Vec<(Monomial, f64)> {
        let n = self.basis.first().map(|m| m.nvars()).unwrap_or(0);
        let mut out = vec![(Monomial::one(n), 0.0)];
        out.extend(self.rows.iter().cloned().zip(y.iter().map(|v| -v)));
        out
    }
}

/// Per-monomial coefficient matrices `B_m` over the nonzero products.
fn coefficient_rows(basis: &[Monomial], products: &[Product]) -> BTreeMap<Monomial, Vec<SymEntry>> {
    let mut rows: BTreeMap<Monomial, Vec<SymEntry>> = BTreeMap::new();
    for (k, prod) in products.iter().enumerate() {
        let pf = prod.poly.to_float();
        for i in 0..basis.len() {
            for j in i..basis.len() {
                let bij = basis[i].mul(&basis[j]);
                for (t, c) in pf.terms() {
                    rows.entry(bij.mul(t)).or_default().push(SymEntry::new(k, i, j, *c));
                }
            }
        }
    }
    rows
}

fn nonzero_products(tc: &TruncatedCone) -> Result<Vec<Product>, ConeError> {
    Ok(tc
        .cone
        .product_set()?
        .into_iter()
        .filter(|p| !p.poly.is_zero())
        .collect())
}

fn new_sdp(products: &[Product], side: usize) -> SdpProblem {
    let mut sdp = SdpProblem::default();
    for p in products {
        sdp.add_block(p.label.to_string(), side);
    }
    sdp
}

pub fn assemble_membership_system(tc: &TruncatedCone, f: &Polynomial) -> Result<MembershipSystem, ConeError> {
    check_target(tc, f)?;
    let basis = tc.basis();
    let products = nonzero_products(tc)?;
    let mut rows = coefficient_rows(&basis, &products);
    let ff = f.to_float();
    for (m, _) in ff.terms() {
        rows.entry(m.clone()).or_default();
    }
    let mut sdp = new_sdp(&products, basis.len());
    let mut row_monos = Vec::with_capacity(rows.len());
    for (m, entries) in rows {
        let rhs = ff.coeff(&m);
        sdp.add_constraint(entries, rhs);
        row_monos.push(m);
    }
    Ok(MembershipSystem {
        sdp,
        basis,
        products,
        rows: row_monos,
    })
}

pub fn assemble_dual_system(tc: &TruncatedCone, f: &Polynomial) -> Result<MomentSystem, ConeError> {
    check_target(tc, f)?;
    let basis = tc.basis();
    let products = nonzero_products(tc)?;
    let nvars = tc.cone.vars.len();
    let mut rows = coefficient_rows(&basis, &products);
    let ff = f.to_float();
    for (m, _) in ff.terms() {
        rows.entry(m.clone()).or_default();
    }
    let one = Monomial::one(nvars);
    let objective = rows.remove(&one).unwrap_or_default();
    let mut sdp = new_sdp(&products, basis.len());
    sdp.objective = objective;
    let mut row_monos = Vec::with_capacity(rows.len());
    for (m, entries) in rows {
        sdp.add_constraint(entries, ff.coeff(&m));
        row_monos.push(m);
    }
    Ok(MomentSystem {
        sdp,
        basis,
        products,
        rows: row_monos,
        constant: ff.coeff(&one),
    })
}

/// Max-margin separation SDP in pseudo-moment form:
///
/// `max -w(f)  s.t.  w(1) + |w(x^m)| <= 1 for every m, localizing matrices of w PSD`.
///
/// The optimum is zero when `f` lies in the closure of `M_d` and otherwise a lower
/// bound on the scale-invariant margin of the normalized functional `w / w(1)`.
/// The localizing constraints sit on the dual side of the standard form: dual
/// variable `k` is `w(rows[k])` and the product blocks of the slack are the
/// localizing matrices. Every bound is a `1x1` block after the product blocks.
#[derive(Debug, Clone)]
pub struct SeparationSystem {
    pub sdp: SdpProblem,
    pub basis: Vec<Monomial>,
    pub products: Vec<Product>,
    /// constant monomial first
    pub rows: Vec<Monomial>,
}

impl SeparationSystem {
    /// The unnormalized functional `w` from the dual vector.
    pub fn functional(&self, y: &[f64]) -> Vec<(Monomial, f64)> {
        self.rows.iter().cloned().zip(y.iter().copied()).collect()
    }
}

/// `localizer_margin` (`eta >= 0`) tightens the localizing constraints to
/// `M_p(w) >= eta * w(1) * I`, so the normalized functional keeps eigenvalue
/// slack `eta` for verification.
pub fn assemble_separation_system(
    tc: &TruncatedCone,
    f: &Polynomial,
    localizer_margin: f64,
) -> Result<SeparationSystem, ConeError> {
    check_target(tc, f)?;
    let basis = tc.basis();
    let products = nonzero_products(tc)?;
    let one = Monomial::one(tc.cone.vars.len());
    let mut rows = coefficient_rows(&basis, &products);
    let ff = f.to_float();
    for (m, _) in ff.terms() {
        rows.entry(m.clone()).or_default();
    }
    rows.entry(one.clone()).or_default();
    let mut sdp = new_sdp(&products, basis.len());
    let rows: Vec<(Monomial, Vec<SymEntry>)> = rows.into_iter().collect();
    debug_assert!(rows[0].0 == one);
    let nrows = rows.len();
    // bound blocks: 1 - 2 w0 >= 0, then 1 - w0 -+ w_m >= 0
    let first_bound = sdp.blocks.len();
    sdp.add_block("bound(1)", 1);
    for k in 1..nrows {
        sdp.add_block(format!("bound+{k}"), 1);
        sdp.add_block(format!("bound-{k}"), 1);
    }
    sdp.objective = (first_bound..sdp.blocks.len())
        .map(|b| SymEntry::new(b, 0, 0, 1.0))
        .collect();
    let mut row_monos = Vec::with_capacity(nrows);
    for (k, (m, entries)) in rows.into_iter().enumerate() {
        let mut coeffs: Vec<SymEntry> = entries.into_iter().map(|e| SymEntry { value: -e.value, ..e }).collect();
        if k == 0 {
            if localizer_margin > 0.0 {
                for b in 0..first_bound {
                    for i in 0..basis.len() {
                        coeffs.push(SymEntry::new(b, i, i, localizer_margin));
                    }
                }
            }
            coeffs.push(SymEntry::new(first_bound, 0, 0, 2.0));
            for j in 1..nrows {
                coeffs.push(SymEntry::new(first_bound + 2 * j - 1, 0, 0, 1.0));
                coeffs.push(SymEntry::new(first_bound + 2 * j, 0, 0, 1.0));
            }
        } else {
            coeffs.push(SymEntry::new(first_bound + 2 * k - 1, 0, 0, 1.0));
            coeffs.push(SymEntry::new(first_bound + 2 * k, 0, 0, -1.0));
        }
        sdp.add_constraint(coeffs, -ff.coeff(&m));
        row_monos.push(m);
    }
    Ok(SeparationSystem {
        sdp,
        basis,
        products,
        rows: row_monos,
    })
}

fn check_target(tc: &TruncatedCone, f: &Polynomial) -> Result<(), ConeError> {
    if f.vars() != tc.cone.vars.as_slice() {
        return Err(PolyError::VariableMismatch {
            left: tc.cone.vars.clone(),
            right: f.vars().to_vec(),
        }
        .into());
    }
    tc.check_degree(f)
}
