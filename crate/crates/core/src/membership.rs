//! Membership and nonmembership certificates for truncated cones, built on
//! [`crate::cone`] and [`crate::sdp`].
//!
//! A positive answer is a [`GramCertificate`] that has passed
//! [`verify_certificate`]; a negative answer is a [`DualFunctional`] (a
//! normalized pseudo-moment vector with PSD localizing matrices and `L(f) < 0`)
//! that has passed [`verify_dual`]. Solver statuses are never trusted on their
//! own. A negative answer only ever means "not in `M_d` at tolerance".

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{
    assemble_membership_system, assemble_separation_system, Conditioning, ConeDescription, ConeError, ConeMode, Label,
    Product, TruncatedCone,
};
use crate::polynomial::{f64_to_rational, rational_to_f64, FloatPolynomial, Monomial, Polynomial, Rational};
use crate::sdp::{self, min_eigenvalue, SdpError, SdpStatus, SolverOptions};

/// Blocks larger than this skip the exact rational PSD test and use eigenvalues.
pub const EXACT_PSD_MAX_SIDE: usize = 32;

#[derive(Debug, Error)]
pub enum MembershipError {
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("solver reported a solution that failed independent verification: {0}")]
    InternalInconsistency(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipOptions {
    pub solver: SolverOptions,
    /// max coefficient error of a reconstructed certificate
    pub residual_tol: f64,
    /// minimum scale-invariant margin `|L(f)| / (1 + ||y||_inf)` for a separation
    pub separation_tol: f64,
    /// denominator bound for rationalizing Gram entries
    pub max_denominator: u64,
    /// solve in rescaled coordinates chosen by [`Conditioning::choose`]
    pub auto_condition: bool,
    /// eigenvalue slack demanded of separating functionals inside the SDP;
    /// monomial moment matrices are badly conditioned, so anything well above
    /// the solver accuracy tends to make the separation problem infeasible
    pub localizer_margin: f64,
}

impl Default for MembershipOptions {
    fn default() -> Self {
        MembershipOptions {
            solver: SolverOptions::default(),
            residual_tol: 1e-6,
            separation_tol: 1e-6,
            max_denominator: 1_000_000,
            auto_condition: true,
            localizer_margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    pub label: Label,
    pub matrix: DMatrix<f64>,
}

/// `f = sum_e v' G_e v * p_e` with every `G_e` PSD.
///
/// The Gram matrices live in the coordinates of `conditioning`: the identity
/// they satisfy is `f(s*z)/c_f = sum_e v(z)' G_e v(z) * prod_i (g_i(s*z)/c_i)^e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramCertificate {
    pub cone: ConeDescription,
    pub conditioning: Conditioning,
    pub degree: usize,
    pub basis: Vec<Monomial>,
    pub blocks: Vec<GramBlock>,
    /// max absolute coefficient error of the reconstruction
    pub residual: f64,
}

impl GramCertificate {
    /// The same certificate over the degree `d + k` basis (zero padded).
    pub fn embed(&self, new_degree: usize) -> GramCertificate {
        assert!(new_degree >= self.degree);
        let tc = TruncatedCone::new(self.cone.clone(), new_degree);
        let basis = tc.basis();
        let n = basis.len();
        let old = self.basis.len();
        debug_assert_eq!(&basis[..old], &self.basis[..]);
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(n, n);
                m.view_mut((0, 0), (old, old)).copy_from(&b.matrix);
                GramBlock {
                    label: b.label.clone(),
                    matrix: m,
                }
            })
            .collect();
        GramCertificate {
            cone: self.cone.clone(),
            conditioning: self.conditioning.clone(),
            degree: new_degree,
            basis,
            blocks,
            residual: self.residual,
        }
    }

    /// `self + c * other`, both over the same cone and basis.
    pub fn add_scaled(&self, other: &GramCertificate, c: f64) -> Option<GramCertificate> {
        if self.cone != other.cone || self.conditioning != other.conditioning || self.basis != other.basis {
            return None;
        }
        let mut blocks = self.blocks.clone();
        for ob in &other.blocks {
            match blocks.iter_mut().find(|b| b.label == ob.label) {
                Some(b) => b.matrix += &ob.matrix * c,
                None => blocks.push(GramBlock {
                    label: ob.label.clone(),
                    matrix: &ob.matrix * c,
                }),
            }
        }
        Some(GramCertificate { blocks, ..self.clone() })
    }

    /// Adds the constant `c` (in the units of the original target) to the pure
    /// sum-of-squares block.
    pub fn shift_constant(&mut self, c: f64) {
        let zero = Label(vec![0; self.cone.generators().len()]);
        let c = c / self.conditioning.target_scale;
        if let Some(b) = self.blocks.iter_mut().find(|b| b.label == zero) {
            b.matrix[(0, 0)] += c;
        } else {
            let n = self.basis.len();
            let mut m = DMatrix::zeros(n, n);
            m[(0, 0)] = c;
            self.blocks.insert(0, GramBlock { label: zero, matrix: m });
        }
    }

    /// The cone in the certificate's coordinates.
    pub fn working_cone(&self) -> Result<ConeDescription, ConeError> {
        self.conditioning.apply_cone(&self.cone)
    }

    /// `sum_e sigma_e p_e` in floating point, in the certificate's coordinates.
    pub fn reconstruct_float(&self) -> Result<FloatPolynomial, ConeError> {
        let products = product_map(&self.working_cone()?)?;
        let vars = self.cone.vars();
        let mut total = FloatPolynomial::zero(vars);
        for b in &self.blocks {
            let p = products
                .get(&b.label)
                .ok_or_else(|| ConeError::UnknownLabel(b.label.to_string()))?
                .to_float();
            let n = self.basis.len();
            let mut sigma = FloatPolynomial::zero(vars);
            for i in 0..n {
                for j in 0..n {
                    sigma.add_term(self.basis[i].mul(&self.basis[j]), b.matrix[(i, j)]);
                }
            }
            total = &total + &(&sigma * &p);
        }
        Ok(total)
    }

    pub fn record(&self, target: Option<&Polynomial>, opts: &MembershipOptions) -> CertificateRecord {
        CertificateRecord {
            vars: self.cone.vars().to_vec(),
            cone: self.cone.generators().iter().map(|g| g.to_string()).collect(),
            mode: self.cone.mode(),
            d: self.degree,
            basis: self.basis.iter().map(|m| m.format(self.cone.vars())).collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockRecord {
                    label: b.label.to_string(),
                    matrix: (0..b.matrix.nrows())
                        .map(|i| (0..b.matrix.ncols()).map(|j| b.matrix[(i, j)]).collect())
                        .collect(),
                })
                .collect(),
            residual: self.residual,
            tolerances: ToleranceRecord {
                residual_tol: opts.residual_tol,
                eig_tol: opts.solver.eig_tol,
                max_denominator: opts.max_denominator,
            },
            target: target.map(|t| t.to_string()),
            conditioning: (!self.conditioning.is_identity()).then(|| self.conditioning.clone()),
        }
    }
}

/// Serialized certificate: `{cone, mode, d, basis, blocks: [{label, matrix}], residual, tolerances}`.
///
/// `matrix` is row-major (a list of rows). `vars` and `target` are carried so the
/// file can be re-verified on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub cone: Vec<String>,
    pub mode: ConeMode,
    pub d: usize,
    pub basis: Vec<String>,
    pub blocks: Vec<BlockRecord>,
    pub residual: f64,
    pub tolerances: ToleranceRecord,
    pub vars: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// absent means identity
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<Conditioning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub label: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRecord {
    pub residual_tol: f64,
    pub eig_tol: f64,
    pub max_denominator: u64,
}

impl CertificateRecord {
    /// Rebuilds the certificate; the basis must be the degree-`d` basis of the cone.
    pub fn to_certificate(&self) -> Result<GramCertificate, String> {
        let cone = ConeDescription::parse(
            &self.vars,
            &self.cone.iter().map(String::as_str).collect::<Vec<_>>(),
            self.mode,
        )?;
        let tc = TruncatedCone::new(cone.clone(), self.d);
        let basis = tc.basis();
        let rendered: Vec<String> = basis.iter().map(|m| m.format(cone.vars())).collect();
        if rendered != self.basis {
            return Err(format!(
                "basis {:?} does not match the degree-{} basis {:?}",
                self.basis, self.d, rendered
            ));
        }
        let n = basis.len();
        let labels: Vec<Label> = cone
            .product_set()
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|p| p.label)
            .collect();
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let label: Label = b.label.parse()?;
            if !labels.contains(&label) {
                return Err(format!("label {} is not a product of the cone", b.label));
            }
            if b.matrix.len() != n || b.matrix.iter().any(|r| r.len() != n) {
                return Err(format!("block {} is not {n}x{n}", b.label));
            }
            blocks.push(GramBlock {
                label,
                matrix: DMatrix::from_fn(n, n, |i, j| b.matrix[i][j]),
            });
        }
        let conditioning = self
            .conditioning
            .clone()
            .unwrap_or_else(|| Conditioning::identity(&cone));
        conditioning.apply_cone(&cone).map_err(|e| e.to_string())?;
        Ok(GramCertificate {
            cone,
            conditioning,
            degree: self.d,
            basis,
            blocks,
            residual: self.residual,
        })
    }
}

fn product_map(cone: &ConeDescription) -> Result<BTreeMap<Label, Polynomial>, ConeError> {
    Ok(cone.product_set()?.into_iter().map(|p| (p.label, p.poly)).collect())
}

/// Normalized pseudo-moment functional witnessing `f` outside `M_d`.
///
/// Moments are taken in the coordinates of `conditioning`, i.e. the functional
/// acts on `p` as `L(p(s*z))`; generators and target are normalized as there.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFunctional {
    pub degree: usize,
    pub conditioning: Conditioning,
    /// `L(x^m)` for every monomial the localizing matrices touch; `L(1) = 1`.
    pub moments: Vec<(Monomial, f64)>,
    /// `L(f)`
    pub value: f64,
    /// smallest eigenvalue of each localizing matrix, in product order
    pub min_eigenvalues: Vec<(Label, f64)>,
    /// `|L(f)| / (1 + ||y||_inf)`
    pub margin: f64,
}

impl DualFunctional {
    pub fn moment_map(&self) -> BTreeMap<Monomial, f64> {
        self.moments.iter().cloned().collect()
    }

    /// `L(f)` with `f` mapped through the functional's conditioning.
    pub fn apply(&self, f: &Polynomial) -> Result<f64, ConeError> {
        let g = self.conditioning.apply_target(f)?;
        Ok(apply_functional(&self.moment_map(), &g.to_float()))
    }

    pub fn record(&self, vars: &[String]) -> DualRecord {
        DualRecord {
            vars: vars.to_vec(),
            d: self.degree,
            moments: self.moments.iter().map(|(m, v)| (m.format(vars), *v)).collect(),
            value: self.value,
            margin: self.margin,
            min_eigenvalues: self.min_eigenvalues.iter().map(|(l, e)| (l.to_string(), *e)).collect(),
            conditioning: (!self.conditioning.is_identity()).then(|| self.conditioning.clone()),
        }
    }
}

/// Serialized dual functional. Moments are keyed by monomial text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRecord {
    pub vars: Vec<String>,
    pub d: usize,
    pub moments: Vec<(String, f64)>,
    pub value: f64,
    pub margin: f64,
    pub min_eigenvalues: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<Conditioning>,
}

fn apply_functional(moments: &BTreeMap<Monomial, f64>, f: &FloatPolynomial) -> f64 {
    f.terms().map(|(m, c)| c * moments.get(m).copied().unwrap_or(0.0)).sum()
}

/// Localizing matrix `M_p(y)_{ij} = sum_m p_m y_{b_i + b_j + m}`.
pub fn localizing_matrix(moments: &BTreeMap<Monomial, f64>, basis: &[Monomial], p: &FloatPolynomial) -> DMatrix<f64> {
    let n = basis.len();
    DMatrix::from_fn(n, n, |i, j| {
        let bij = basis[i].mul(&basis[j]);
        p.terms()
            .map(|(m, c)| c * moments.get(&bij.mul(m)).copied().unwrap_or(0.0))
            .sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResidualMode {
    /// exact rational reconstruction after rounding the Gram entries
    Exact,
    /// float reconstruction with eigenvalue slack
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub residual_mode: ResidualMode,
    pub exact_residual: Option<f64>,
    pub float_residual: f64,
    /// smallest eigenvalue per block (float)
    pub min_eigenvalues: Vec<(String, f64)>,
    pub exact_psd: bool,
    pub psd_ok: bool,
    pub residual_ok: bool,
    pub passed: bool,
}

/// Independent check of a Gram certificate against `f`.
///
/// Gram entries are rounded to nearby rationals (continued fractions with
/// denominator at most `max_denominator`); the reconstruction residual and a
/// PSD test by exact `LDL'` elimination are then done in rational arithmetic.
/// If rounding breaks PSD, the float residual and smallest eigenvalues (with
/// `eig_tol` slack) decide instead.
pub fn verify_certificate(cert: &GramCertificate, f: &Polynomial, opts: &MembershipOptions) -> VerificationReport {
    let eig_tol = opts.solver.eig_tol;
    let mut min_eigs = Vec::new();
    let mut float_psd = true;
    for b in &cert.blocks {
        let sym = (&b.matrix + b.matrix.transpose()) * 0.5;
        let e = min_eigenvalue(&sym);
        if !(e >= -eig_tol) {
            float_psd = false;
        }
        min_eigs.push((b.label.to_string(), e));
    }
    let target = cert.conditioning.apply_target(f);
    let float_residual = match (cert.reconstruct_float(), &target) {
        (Ok(r), Ok(t)) => {
            let ff = t.to_float();
            match ff.checked_sub(&r) {
                Ok(diff) => diff.max_abs_coeff(|c| c.abs()),
                Err(_) => f64::INFINITY,
            }
        }
        _ => f64::INFINITY,
    };
    let exact = target
        .ok()
        .and_then(|t| exact_check(cert, &t, opts.max_denominator, opts.residual_tol));
    let (mode, exact_residual, exact_psd) = match &exact {
        Some((res, psd)) => (
            if *psd { ResidualMode::Exact } else { ResidualMode::Float },
            Some(*res),
            *psd,
        ),
        None => (ResidualMode::Float, None, false),
    };
    let (psd_ok, residual_ok) = match (mode, exact_residual) {
        (ResidualMode::Exact, Some(r)) => (true, r <= opts.residual_tol),
        _ => (float_psd, float_residual <= opts.residual_tol),
    };
    VerificationReport {
        residual_mode: mode,
        exact_residual,
        float_residual,
        min_eigenvalues: min_eigs,
        exact_psd,
        psd_ok,
        residual_ok,
        passed: psd_ok && residual_ok,
    }
}

/// `(exact residual, exact PSD)` after rationalizing, or `None` when the blocks
/// are too large or the labels do not match the cone. Small-denominator
/// rounding is tried first; if it breaks PSD or the residual, the exact binary
/// values of the entries are used instead.
fn exact_check(cert: &GramCertificate, f: &Polynomial, max_den: u64, residual_tol: f64) -> Option<(f64, bool)> {
    let rounded = exact_check_with(cert, f, |x| rationalize(x, max_den))?;
    if rounded.1 && rounded.0 <= residual_tol {
        return Some(rounded);
    }
    let exact = exact_check_with(cert, f, f64_to_rational)?;
    Some(if exact.1 && exact.0 <= residual_tol {
        exact
    } else {
        rounded
    })
}

fn exact_check_with(
    cert: &GramCertificate,
    f: &Polynomial,
    to_rational: impl Fn(f64) -> Rational,
) -> Option<(f64, bool)> {
    if f.vars() != cert.cone.vars() {
        return None;
    }
    let products = product_map(&cert.working_cone().ok()?).ok()?;
    let vars = cert.cone.vars();
    let n = cert.basis.len();
    let mut total = Polynomial::zero(vars);
    let mut all_psd = true;
    for b in &cert.blocks {
        let p = products.get(&b.label)?;
        let q: Vec<Vec<Rational>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| to_rational(0.5 * (b.matrix[(i, j)] + b.matrix[(j, i)])))
                    .collect()
            })
            .collect();
        if all_psd {
            all_psd = n <= EXACT_PSD_MAX_SIDE && exact_psd(q.clone());
        }
        let mut sigma = Polynomial::zero(vars);
        for i in 0..n {
            for j in 0..n {
                if !q[i][j].is_zero() {
                    sigma.add_term(cert.basis[i].mul(&cert.basis[j]), q[i][j].clone());
                }
            }
        }
        total = &total + &(&sigma * p);
    }
    let diff = f - &total;
    let res = diff.terms().map(|(_, c)| rational_to_f64(&c.abs())).fold(0.0, f64::max);
    Some((res, all_psd))
}

/// Best rational approximation with denominator `<= max_den` among the
/// continued-fraction convergents of `x`.
pub fn rationalize(x: f64, max_den: u64) -> Rational {
    if !x.is_finite() {
        return Rational::zero();
    }
    let exact = f64_to_rational(x);
    let max_den = BigInt::from(max_den);
    let (mut p0, mut q0) = (BigInt::zero(), BigInt::one());
    let (mut p1, mut q1) = (BigInt::one(), BigInt::zero());
    let mut num = exact.numer().clone();
    let mut den = exact.denom().clone();
    let mut best = Rational::from_integer(exact.floor().to_integer());
    loop {
        if den.is_zero() {
            break;
        }
        let (a, r) = num.div_mod_floor(&den);
        let p2 = &a * &p1 + &p0;
        let q2 = &a * &q1 + &q0;
        if q2 > max_den {
            break;
        }
        best = Rational::new(p2.clone(), q2.clone());
        p0 = std::mem::replace(&mut p1, p2);
        q0 = std::mem::replace(&mut q1, q2);
        num = std::mem::replace(&mut den, r);
    }
    best
}

/// Exact PSD test by symmetric elimination without pivoting: a zero pivot
/// requires the rest of its row to vanish.
pub fn exact_psd(mut a: Vec<Vec<Rational>>) -> bool {
    let n = a.len();
    for k in 0..n {
        let pivot = a[k][k].clone();
        if pivot.is_negative() {
            return false;
        }
        if pivot.is_zero() {
            if (k + 1..n).any(|j| !a[k][j].is_zero()) {
                return false;
            }
            continue;
        }
        for i in k + 1..n {
            if a[i][k].is_zero() {
                continue;
            }
            let factor = &a[i][k] / &pivot;
            for j in k + 1..n {
                if a[k][j].is_zero() {
                    continue;
                }
                let delta = &factor * &a[k][j];
                a[i][j] -= delta;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub normalized: bool,
    pub value: f64,
    pub margin: f64,
    pub min_eigenvalue: f64,
    pub psd_ok: bool,
    pub sign_ok: bool,
    pub passed: bool,
}

/// Independent check of a separating functional: `L(1) = 1`, every localizing
/// matrix PSD up to `eig_tol`, and margin above `separation_tol`.
pub fn verify_dual(
    dual: &DualFunctional,
    tc: &TruncatedCone,
    f: &Polynomial,
    opts: &MembershipOptions,
) -> Result<DualReport, ConeError> {
    let tc = &TruncatedCone::new(dual.conditioning.apply_cone(&tc.cone)?, tc.degree);
    let f = &dual.conditioning.apply_target(f)?;
    let moments = dual.moment_map();
    let n = tc.cone.vars().len();
    let y0 = moments.get(&Monomial::one(n)).copied().unwrap_or(0.0);
    let normalized = (y0 - 1.0).abs() <= 1e-12;
    let basis = tc.basis();
    let mut lmin = f64::INFINITY;
    for p in tc.cone.product_set()? {
        if p.poly.is_zero() {
            continue;
        }
        let m = localizing_matrix(&moments, &basis, &p.poly.to_float());
        lmin = lmin.min(min_eigenvalue(&m));
    }
    let value = apply_functional(&moments, &f.to_float());
    let ynorm = moments.values().fold(0.0f64, |a, v| a.max(v.abs()));
    let margin = -value / (1.0 + ynorm);
    let psd_ok = lmin >= -opts.solver.eig_tol;
    let sign_ok = value < 0.0 && margin >= opts.separation_tol;
    Ok(DualReport {
        normalized,
        value,
        margin,
        min_eigenvalue: lmin,
        psd_ok,
        sign_ok,
        passed: normalized && psd_ok && sign_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownDiagnostics {
    pub feasibility_status: SdpStatus,
    pub separation_status: SdpStatus,
    /// optimum of the max-margin separation SDP when it converged
    pub separation_bound: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Member(GramCertificate),
    NotMember(DualFunctional),
    Unknown(UnknownDiagnostics),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MembershipStatus {
    Member,
    /// not in `M_d` at tolerance
    #[serde(rename = "NOT_MEMBER_AT_D")]
    NotMemberAtDegree,
    Unknown,
    /// `d` too small for the target degree
    DegreeTooLow,
}

impl Membership {
    pub fn status(&self) -> MembershipStatus {
        match self {
            Membership::Member(_) => MembershipStatus::Member,
            Membership::NotMember(_) => MembershipStatus::NotMemberAtDegree,
            Membership::Unknown(_) => MembershipStatus::Unknown,
        }
    }

    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member(_))
    }

    pub fn certificate(&self) -> Option<&GramCertificate> {
        match self {
            Membership::Member(c) => Some(c),
            _ => None,
        }
    }

    pub fn dual(&self) -> Option<&DualFunctional> {
        match self {
            Membership::NotMember(d) => Some(d),
            _ => None,
        }
    }
}

/// The problem as handed to the solver: the cone and target after conditioning.
struct Working<'a> {
    tc: &'a TruncatedCone,
    f: &'a Polynomial,
    conditioning: Conditioning,
    stc: TruncatedCone,
    sf: Polynomial,
}

impl<'a> Working<'a> {
    fn new(tc: &'a TruncatedCone, f: &'a Polynomial, opts: &MembershipOptions) -> Result<Self, ConeError> {
        tc.check_degree(f)?;
        let conditioning = if opts.auto_condition {
            Conditioning::choose(&tc.cone, f)
        } else {
            Conditioning::identity(&tc.cone)
        };
        let stc = TruncatedCone::new(conditioning.apply_cone(&tc.cone)?, tc.degree);
        let sf = conditioning.apply_target(f)?;
        Ok(Working {
            tc,
            f,
            conditioning,
            stc,
            sf,
        })
    }

    fn gram(&self, basis: Vec<Monomial>, products: &[Product], primal: &[DMatrix<f64>]) -> GramCertificate {
        GramCertificate {
            cone: self.tc.cone.clone(),
            conditioning: self.conditioning.clone(),
            degree: self.tc.degree,
            basis,
            blocks: products
                .iter()
                .zip(primal)
                .map(|(p, m)| GramBlock {
                    label: p.label.clone(),
                    matrix: m.clone(),
                })
                .collect(),
            residual: f64::NAN,
        }
    }
}

/// Decides `f in M_d` with an independently verified certificate either way.
///
/// The feasibility SDP is tried first. If it does not produce a verified Gram
/// certificate, a max-margin pseudo-moment SDP (see
/// [`crate::cone::SeparationSystem`]) supplies the separating functional, which
/// is normalized to `L(1) = 1` and verified. Both solves run in the coordinates
/// chosen by [`Conditioning::choose`] unless `auto_condition` is off.
pub fn test_membership(
    tc: &TruncatedCone,
    f: &Polynomial,
    opts: &MembershipOptions,
) -> Result<Membership, MembershipError> {
    let w = Working::new(tc, f, opts)?;
    let sys = assemble_membership_system(&w.stc, &w.sf)?;
    let sol = sdp::solve(&sys.sdp, &opts.solver)?;
    // an UNKNOWN solve may still carry a usable Gram matrix; verification decides
    if matches!(sol.status, SdpStatus::Feasible | SdpStatus::Unknown) {
        let mut cert = w.gram(sys.basis, &sys.products, &sol.primal);
        let report = verify_certificate(&cert, f, opts);
        if !report.passed && sol.status == SdpStatus::Unknown {
            return separate(&w, opts, sol.status);
        }
        if !report.passed {
            return Err(MembershipError::InternalInconsistency(format!(
                "certificate for {f} at d={} failed verification: {report:?}",
                tc.degree
            )));
        }
        cert.residual = match report.residual_mode {
            ResidualMode::Exact => report.exact_residual.unwrap_or(report.float_residual),
            ResidualMode::Float => report.float_residual,
        };
        return Ok(Membership::Member(cert));
    }
    separate(&w, opts, sol.status)
}

fn separate(
    w: &Working,
    opts: &MembershipOptions,
    feasibility_status: SdpStatus,
) -> Result<Membership, MembershipError> {
    let sys = assemble_separation_system(&w.stc, &w.sf, opts.localizer_margin)?;
    let sol = sdp::solve(&sys.sdp, &opts.solver)?;
    let bound = (sol.status == SdpStatus::Feasible).then_some(sol.dual_objective);
    let unknown = |note: &str| {
        Ok(Membership::Unknown(UnknownDiagnostics {
            feasibility_status,
            separation_status: sol.status,
            separation_bound: bound,
            note: note.to_string(),
        }))
    };
    if !matches!(sol.status, SdpStatus::Feasible | SdpStatus::Unknown) {
        return unknown("separation solve failed");
    }
    if sol.status == SdpStatus::Feasible && sol.dual_objective < opts.separation_tol {
        return unknown("no separating functional above the margin; membership is numerically marginal at this degree");
    }
    let functional = sys.functional(&sol.dual);
    let sf = w.sf.to_float();
    let mut best: Option<DualFunctional> = None;
    let mut consider = |v: &[(Monomial, f64)]| -> Result<bool, MembershipError> {
        let Some(candidate) = normalized(w, &sf, v)? else {
            return Ok(false);
        };
        let report = verify_dual(&candidate, w.tc, w.f, opts)?;
        let passed = report.passed;
        if passed && best.as_ref().map_or(true, |b| candidate.margin > b.margin) {
            best = Some(candidate);
        }
        Ok(passed)
    };
    if !consider(&functional)? {
        // pull a boundary optimum into the interior of the moment cone
        if let Some(center) = center_functional(&w.stc, opts)? {
            for delta in [1e-6, 1e-4, 1e-3, 1e-2, 1e-1] {
                let mixed: Vec<(Monomial, f64)> = functional
                    .iter()
                    .zip(&center)
                    .map(|((m, a), (_, c))| (m.clone(), (1.0 - delta) * a + delta * c))
                    .collect();
                if consider(&mixed)? {
                    break;
                }
            }
        }
    }
    match best {
        Some(d) => Ok(Membership::NotMember(d)),
        None => unknown("separating functional failed verification"),
    }
}

/// A strictly feasible functional of the separation system (`f = 0`, so the
/// interior point iterates stay near the analytic center).
fn center_functional(
    tc: &TruncatedCone,
    opts: &MembershipOptions,
) -> Result<Option<Vec<(Monomial, f64)>>, MembershipError> {
    let zero = Polynomial::zero(tc.cone.vars());
    let sys = assemble_separation_system(tc, &zero, opts.localizer_margin)?;
    let sol = sdp::solve(&sys.sdp, &opts.solver)?;
    Ok((sol.status == SdpStatus::Feasible).then(|| sys.functional(&sol.dual)))
}

fn normalized(w: &Working, sf: &FloatPolynomial, v: &[(Monomial, f64)]) -> Result<Option<DualFunctional>, ConeError> {
    let v0 = v.first().map(|(_, x)| *x).unwrap_or(0.0);
    if !(v0 > 0.0) {
        return Ok(None);
    }
    let moments = v.iter().map(|(m, x)| (m.clone(), x / v0)).collect();
    make_dual(&w.stc, sf, moments, w.conditioning.clone()).map(Some)
}

/// `tc` and `f` are in the coordinates of `conditioning`.
fn make_dual(
    tc: &TruncatedCone,
    f: &FloatPolynomial,
    moments: Vec<(Monomial, f64)>,
    conditioning: Conditioning,
) -> Result<DualFunctional, ConeError> {
    let map: BTreeMap<Monomial, f64> = moments.iter().cloned().collect();
    let basis = tc.basis();
    let mut eigs = Vec::new();
    for p in tc.cone.product_set()? {
        if p.poly.is_zero() {
            continue;
        }
        let m = localizing_matrix(&map, &basis, &p.poly.to_float());
        eigs.push((p.label, min_eigenvalue(&m)));
    }
    let value = apply_functional(&map, f);
    let ynorm = map.values().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(DualFunctional {
        degree: tc.degree,
        conditioning,
        moments,
        value,
        min_eigenvalues: eigs,
        margin: -value / (1.0 + ynorm),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeTrailEntry {
    pub degree: usize,
    pub status: MembershipStatus,
    pub residual: Option<f64>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalDegree {
    /// smallest verified degree, `None` when not found up to `d_max`
    pub degree: Option<usize>,
    pub certificate: Option<GramCertificate>,
    pub trail: Vec<DegreeTrailEntry>,
    /// an UNKNOWN status occurred below the reported degree
    pub marginal: bool,
}

pub const MAX_DEGREE_SWEEP: usize = 10;

/// Smallest `d <= d_max` with verified membership of `f` in `M_d`.
pub fn minimal_degree(
    cone: &ConeDescription,
    f: &Polynomial,
    d_max: usize,
    opts: &MembershipOptions,
) -> Result<MinimalDegree, MembershipError> {
    if d_max > MAX_DEGREE_SWEEP {
        return Err(MembershipError::InvalidRequest(format!(
            "d_max = {d_max} exceeds the sweep limit {MAX_DEGREE_SWEEP}"
        )));
    }
    let mut trail = Vec::new();
    let mut marginal = false;
    for d in 0..=d_max {
        let tc = TruncatedCone::new(cone.clone(), d);
        let outcome = match test_membership(&tc, f, opts) {
            Err(MembershipError::Cone(ConeError::DegreeTooLow { .. })) => {
                trail.push(DegreeTrailEntry {
                    degree: d,
                    status: MembershipStatus::DegreeTooLow,
                    residual: None,
                    margin: None,
                });
                continue;
            }
            other => other?,
        };
        let entry = DegreeTrailEntry {
            degree: d,
            status: outcome.status(),
            residual: outcome.certificate().map(|c| c.residual),
            margin: outcome.dual().map(|d| d.margin),
        };
        trail.push(entry);
        match outcome {
            Membership::Member(c) => {
                return Ok(MinimalDegree {
                    degree: Some(d),
                    certificate: Some(c),
                    trail,
                    marginal,
                })
            }
            Membership::Unknown(_) => marginal = true,
            Membership::NotMember(_) => {}
        }
    }
    Ok(MinimalDegree {
        degree: None,
        certificate: None,
        trail,
        marginal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureProbeEntry {
    pub epsilon: f64,
    pub degree: usize,
    pub status: MembershipStatus,
    pub margin: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureProbeResult {
    pub q: Polynomial,
    pub entries: Vec<ClosureProbeEntry>,
    pub all_succeeded: bool,
    /// per degree: (largest failing epsilon, smallest succeeding epsilon)
    pub thresholds: Vec<(usize, Option<f64>, Option<f64>)>,
}

/// Tests `f + eps*q in M_d` along a strictly decreasing schedule of `eps`.
pub fn closure_probe(
    cone: &ConeDescription,
    f: &Polynomial,
    q: &Polynomial,
    schedule: &[(f64, usize)],
    opts: &MembershipOptions,
) -> Result<ClosureProbeResult, MembershipError> {
    if schedule.is_empty() {
        return Err(MembershipError::InvalidRequest("empty epsilon schedule".into()));
    }
    for w in schedule.windows(2) {
        if !(w[1].0 < w[0].0) {
            return Err(MembershipError::InvalidRequest(
                "epsilon schedule must be strictly decreasing".into(),
            ));
        }
    }
    if schedule.iter().any(|(e, _)| !(*e > 0.0)) {
        return Err(MembershipError::InvalidRequest(
            "epsilon values must be positive".into(),
        ));
    }
    use rayon::prelude::*;
    let entries: Vec<ClosureProbeEntry> = schedule
        .par_iter()
        .map(|&(eps, d)| {
            let g = f + &q.scale(&f64_to_rational(eps));
            let tc = TruncatedCone::new(cone.clone(), d);
            let outcome = test_membership(&tc, &g, opts)?;
            Ok(ClosureProbeEntry {
                epsilon: eps,
                degree: d,
                status: outcome.status(),
                margin: outcome.dual().map(|x| x.margin),
                residual: outcome.certificate().map(|c| c.residual),
            })
        })
        .collect::<Result<_, MembershipError>>()?;
    let mut degrees: Vec<usize> = entries.iter().map(|e| e.degree).collect();
    degrees.sort_unstable();
    degrees.dedup();
    let thresholds = degrees
        .into_iter()
        .map(|d| {
            let at: Vec<&ClosureProbeEntry> = entries.iter().filter(|e| e.degree == d).collect();
            let fail = at
                .iter()
                .filter(|e| e.status == MembershipStatus::NotMemberAtDegree)
                .map(|e| e.epsilon)
                .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
            let ok = at
                .iter()
                .filter(|e| e.status == MembershipStatus::Member)
                .map(|e| e.epsilon)
                .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v))));
            (d, fail, ok)
        })
        .collect();
    Ok(ClosureProbeResult {
        q: q.clone(),
        all_succeeded: entries.iter().all(|e| e.status == MembershipStatus::Member),
        entries,
        thresholds,
    })
}
