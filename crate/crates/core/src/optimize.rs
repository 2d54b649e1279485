//! Perturbed level hierarchy for minimizing a polynomial on a possibly unbounded
//! semialgebraic set.
//!
//! For a perturbation `q` in the cone, `F_{eps,d} = sup { r : f - r + eps*q in M_d }`
//! is non-decreasing in `d` and non-increasing as `eps` shrinks. Each level is one
//! SDP with `r` entering through the constant coefficient
//! ([`crate::cone::assemble_dual_system`]). A brute-force grid oracle is provided
//! for validation on small boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nalgebra::DMatrix;

use crate::cone::{
    assemble_dual_system, Conditioning, ConeDescription, ConeError, Label, SemialgebraicPredicate, TruncatedCone,
};
use crate::membership::{
    test_membership, verify_certificate, CertificateRecord, GramBlock, GramCertificate, MembershipError,
    MembershipOptions, ResidualMode,
};
use crate::polynomial::{f64_to_rational, monomials_up_to, Monomial, Polynomial, Rational};
use crate::sdp::{self, SdpError, SdpStatus};

/// Largest `d` the default schedule reaches.
pub const DEFAULT_MAX_DEGREE: usize = 8;
/// Default `eps` schedule is `1/i` for `i = 1..=DEFAULT_EPSILON_STEPS`.
pub const DEFAULT_EPSILON_STEPS: usize = 6;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("{0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Membership(#[from] MembershipError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbationKind {
    /// `sum_j ((Y^j - 1)/2)^2 + ((Y^j + 1)/2)^2` in a distinguished variable `Y`
    Cylinder,
    /// `sum_{|a| <= ceil(deg f / 2)} x^(2a)`
    MonomialSquares,
    /// caller-supplied `q`, certified in the cone before use
    User,
}

impl std::str::FromStr for PerturbationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cylinder" => Ok(PerturbationKind::Cylinder),
            "monomial_squares" => Ok(PerturbationKind::MonomialSquares),
            "user" => Ok(PerturbationKind::User),
            other => Err(format!(
                "unknown perturbation `{other}` (expected cylinder, monomial_squares or user)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PerturbationParams {
    /// distinguished variable for [`PerturbationKind::Cylinder`]
    pub variable: Option<String>,
    /// `q` for [`PerturbationKind::User`]
    pub q: Option<Polynomial>,
    /// cone in which a user `q` is certified (sums of squares when absent)
    pub cone: Option<ConeDescription>,
    /// degree for certifying a user `q` (`ceil(deg q / 2)` when absent)
    pub degree: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRecipe {
    pub kind: PerturbationKind,
    pub variable: Option<String>,
    pub q: Polynomial,
    /// `q` as a verified cone element
    pub certificate: GramCertificate,
}

fn half_up(deg: i64) -> usize {
    ((deg.max(0) + 1) / 2) as usize
}

/// Sum-of-squares certificate `v' G v` over the degree-`d` basis with the given
/// squares `(sum_k c_k x^{m_k})^2`.
fn squares_certificate(vars: &[String], d: usize, squares: &[Vec<(Monomial, Rational)>]) -> GramCertificate {
    let cone = ConeDescription::sums_of_squares(vars);
    let basis = monomials_up_to(vars.len(), d as u32);
    let n = basis.len();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for sq in squares {
        let idx: Vec<(usize, f64)> = sq
            .iter()
            .map(|(m, c)| {
                let i = basis.iter().position(|b| b == m).expect("square within basis");
                (i, crate::polynomial::rational_to_f64(c))
            })
            .collect();
        for (i, a) in &idx {
            for (j, b) in &idx {
                g[(*i, *j)] += a * b;
            }
        }
    }
    GramCertificate {
        conditioning: Conditioning::identity(&cone),
        cone,
        degree: d,
        basis,
        blocks: vec![GramBlock {
            label: Label(Vec::new()),
            matrix: g,
        }],
        residual: f64::NAN,
    }
}

/// Builds the perturbation `q` for `f` together with its certificate.
pub fn build_perturbation(
    f: &Polynomial,
    kind: PerturbationKind,
    params: &PerturbationParams,
    opts: &MembershipOptions,
) -> Result<PerturbationRecipe, OptimizeError> {
    let vars = f.vars().to_vec();
    let n = vars.len();
    let half = Rational::new(1.into(), 2.into());
    let (q, mut certificate, variable) = match kind {
        PerturbationKind::Cylinder => {
            let y = params.variable.clone().ok_or_else(|| {
                OptimizeError::InvalidRequest("cylinder perturbation needs a distinguished variable".into())
            })?;
            let iy = f.var_index(&y).map_err(ConeError::from)?;
            let k = f.degree_in(&y).map_err(ConeError::from)?.max(0) as u32;
            let mut q = Polynomial::zero(&vars);
            let mut squares = Vec::new();
            for j in 0..=k {
                let yj = Monomial::new((0..n).map(|i| if i == iy { j } else { 0 }).collect());
                q.add_term(Monomial::one(n), half.clone());
                q.add_term(
                    Monomial::new(yj.exponents().iter().map(|e| 2 * e).collect()),
                    half.clone(),
                );
                if j == 0 {
                    // ((1 - 1)/2)^2 vanishes and ((1 + 1)/2)^2 = 1
                    squares.push(vec![(Monomial::one(n), Rational::from_integer(1.into()))]);
                } else {
                    squares.push(vec![(yj.clone(), half.clone()), (Monomial::one(n), -half.clone())]);
                    squares.push(vec![(yj, half.clone()), (Monomial::one(n), half.clone())]);
                }
            }
            (q, squares_certificate(&vars, k as usize, &squares), Some(y))
        }
        PerturbationKind::MonomialSquares => {
            let k = half_up(f.degree());
            let mut q = Polynomial::zero(&vars);
            let mut squares = Vec::new();
            for m in monomials_up_to(n, k as u32) {
                q.add_term(m.mul(&m), Rational::from_integer(1.into()));
                squares.push(vec![(m, Rational::from_integer(1.into()))]);
            }
            (q, squares_certificate(&vars, k, &squares), None)
        }
        PerturbationKind::User => {
            let q = params
                .q
                .clone()
                .ok_or_else(|| OptimizeError::InvalidRequest("user perturbation needs q".into()))?;
            let cone = params
                .cone
                .clone()
                .unwrap_or_else(|| ConeDescription::sums_of_squares(&vars));
            let d = params.degree.unwrap_or_else(|| half_up(q.degree()));
            let cert = match test_membership(&TruncatedCone::new(cone, d), &q, opts)? {
                crate::membership::Membership::Member(c) => c,
                _ => {
                    return Err(OptimizeError::InvalidRequest(format!(
                        "perturbation {q} could not be certified at degree {d}"
                    )))
                }
            };
            (q, cert, None)
        }
    };
    let report = verify_certificate(&certificate, &q, opts);
    if !report.passed {
        return Err(OptimizeError::Membership(MembershipError::InternalInconsistency(
            format!("perturbation certificate for {q} failed verification"),
        )));
    }
    certificate.residual = verified_residual(&report);
    Ok(PerturbationRecipe {
        kind,
        variable,
        q,
        certificate,
    })
}

fn verified_residual(report: &crate::membership::VerificationReport) -> f64 {
    match report.residual_mode {
        ResidualMode::Exact => report.exact_residual.unwrap_or(report.float_residual),
        ResidualMode::Float => report.float_residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LevelStatus {
    /// point value with a verified certificate at the backed-off level
    Optimal,
    /// no level is feasible (`F = -inf`), witnessed by a dual ray
    Infeasible,
    /// every level is feasible (`F = +inf`)
    Unbounded,
    /// solver did not converge; only an interval is reported
    Unknown,
    /// `f + eps*q` exceeds the reach of `M_d`
    DegreeTooLow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub epsilon: f64,
    pub degree: usize,
    pub status: LevelStatus,
    /// `F_{eps,d}`; infinite for infeasible/unbounded, NaN otherwise without a point value
    pub value: f64,
    /// largest verified level
    pub lower: f64,
    /// solver dual bound
    pub upper: f64,
    /// certificate for `f - lower + eps*q`
    pub certificate: Option<GramCertificate>,
}

impl LevelResult {
    fn without_value(epsilon: f64, degree: usize, status: LevelStatus, value: f64) -> Self {
        LevelResult {
            epsilon,
            degree,
            status,
            value,
            lower: if value == f64::INFINITY {
                value
            } else {
                f64::NEG_INFINITY
            },
            upper: if value == f64::NEG_INFINITY {
                value
            } else {
                f64::INFINITY
            },
            certificate: None,
        }
    }
}

/// `f + eps*q` with `eps` taken exactly from its binary value.
pub fn perturbed(f: &Polynomial, q: &Polynomial, epsilon: f64) -> Polynomial {
    f + &q.scale(&f64_to_rational(epsilon))
}

/// One level `F_{eps,d}` as a single SDP maximizing `r`.
pub fn solve_level(
    cone: &ConeDescription,
    f: &Polynomial,
    q: &Polynomial,
    epsilon: f64,
    degree: usize,
    opts: &MembershipOptions,
) -> Result<LevelResult, OptimizeError> {
    if !(epsilon > 0.0) {
        return Err(OptimizeError::InvalidRequest(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let g = perturbed(f, q, epsilon);
    let tc = TruncatedCone::new(cone.clone(), degree);
    let sys = match assemble_dual_system(&tc, &g) {
        Ok(s) => s,
        Err(ConeError::DegreeTooLow { .. }) => {
            return Ok(LevelResult::without_value(
                epsilon,
                degree,
                LevelStatus::DegreeTooLow,
                f64::NAN,
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let sol = sdp::solve(&sys.sdp, &opts.solver)?;
    match sol.status {
        SdpStatus::Infeasible if sol.farkas.is_some() => {
            return Ok(LevelResult::without_value(
                epsilon,
                degree,
                LevelStatus::Infeasible,
                f64::NEG_INFINITY,
            ))
        }
        SdpStatus::DualInfeasible => {
            return Ok(LevelResult::without_value(
                epsilon,
                degree,
                LevelStatus::Unbounded,
                f64::INFINITY,
            ))
        }
        _ => {}
    }
    let usable = matches!(sol.status, SdpStatus::Feasible | SdpStatus::Unknown);
    let level = sys.level_from_objective(sol.primal_objective);
    let backoff = 10.0 * opts.solver.gap_tol;
    let mut certificate = None;
    let mut lower = f64::NEG_INFINITY;
    if usable && level.is_finite() {
        let r = level - backoff;
        let mut cert = GramCertificate {
            conditioning: Conditioning::identity(cone),
            cone: cone.clone(),
            degree,
            basis: sys.basis.clone(),
            blocks: sys
                .products
                .iter()
                .zip(&sol.primal)
                .map(|(p, m)| GramBlock {
                    label: p.label.clone(),
                    matrix: m.clone(),
                })
                .collect(),
            residual: f64::NAN,
        };
        // the primal matches g - level; the back-off goes into the constant
        cert.shift_constant(backoff);
        let target = &g - &Polynomial::constant(cone.vars(), f64_to_rational(r));
        let report = verify_certificate(&cert, &target, opts);
        if report.passed {
            cert.residual = verified_residual(&report);
            certificate = Some(cert);
            lower = r;
        } else if sol.status == SdpStatus::Feasible {
            return Err(MembershipError::InternalInconsistency(format!(
                "level certificate for {g} at d={degree} failed verification: {report:?}"
            ))
            .into());
        }
    }
    let dual_ok = usable && sol.residuals.dual <= 1e3 * opts.solver.feas_tol;
    let upper = if dual_ok {
        sys.level_from_objective(sol.dual_objective)
    } else {
        f64::INFINITY
    };
    let (status, value) = if sol.status == SdpStatus::Feasible && certificate.is_some() {
        (LevelStatus::Optimal, level)
    } else {
        (LevelStatus::Unknown, f64::NAN)
    };
    Ok(LevelResult {
        epsilon,
        degree,
        status,
        value,
        lower,
        upper,
        certificate,
    })
}

/// Box, resolution and predicate for [`grid_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// `(lo, hi)` per variable
    pub bounds: Vec<(f64, f64)>,
    /// points per axis, endpoints included
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub spec: OracleSpec,
    /// min of `f` over feasible grid points; `+inf` when none is feasible
    pub value: f64,
    pub argmin: Option<Vec<f64>>,
    pub feasible_points: usize,
    pub total_points: usize,
    pub note: String,
}

pub const MIN_ORACLE_RESOLUTION: usize = 10;

/// Minimum of `f` over the grid points of a box that satisfy `predicate`.
///
/// The value upper-bounds the infimum of `f` on the set intersected with the box;
/// it is not a bound on the infimum itself.
pub fn grid_oracle(
    predicate: &SemialgebraicPredicate,
    f: &Polynomial,
    spec: &OracleSpec,
) -> Result<OracleResult, OptimizeError> {
    if spec.resolution < MIN_ORACLE_RESOLUTION {
        return Err(OptimizeError::InvalidRequest(format!(
            "oracle resolution {} is below {MIN_ORACLE_RESOLUTION}",
            spec.resolution
        )));
    }
    if spec.bounds.len() != f.nvars() {
        return Err(OptimizeError::InvalidRequest(format!(
            "box has {} axes for {} variables",
            spec.bounds.len(),
            f.nvars()
        )));
    }
    if spec
        .bounds
        .iter()
        .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(OptimizeError::InvalidRequest(
            "oracle box must be finite with lo <= hi".into(),
        ));
    }
    let n = spec.resolution;
    let dims = spec.bounds.len();
    let total = n
        .checked_pow(dims as u32)
        .ok_or_else(|| OptimizeError::InvalidRequest("oracle grid too large".into()))?;
    let ff = f.to_float();
    let axis = |k: usize, i: usize| {
        let (lo, hi) = spec.bounds[k];
        if i + 1 == n {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let point = |mut idx: usize| -> Vec<f64> {
        let mut p = vec![0.0; dims];
        for k in (0..dims).rev() {
            p[k] = axis(k, idx % n);
            idx /= n;
        }
        p
    };
    const CHUNK: usize = 4096;
    // (value, index) minimized lexicographically so ties resolve to the first point
    let (best, count) = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut best: Option<(f64, usize)> = None;
            let mut count = 0usize;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let p = point(idx);
                if !predicate.contains(&p) {
                    continue;
                }
                count += 1;
                let v = ff.eval(&p).unwrap_or(f64::INFINITY);
                if best.map_or(true, |(b, _)| v < b) {
                    best = Some((v, idx));
                }
            }
            (best, count)
        })
        .reduce(
            || (None, 0),
            |(a, ca), (b, cb)| {
                let best = match (a, b) {
                    (Some(x), Some(y)) => Some(if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x }),
                    (x, None) => x,
                    (None, y) => y,
                };
                (best, ca + cb)
            },
        );
    let (value, argmin, note) = match best {
        Some((v, idx)) => (
            v,
            Some(point(idx)),
            "upper bound on the infimum over the set within the box".to_string(),
        ),
        None => (f64::INFINITY, None, "no feasible grid point in the box".to_string()),
    };
    Ok(OracleResult {
        spec: spec.clone(),
        value,
        argmin,
        feasible_points: count,
        total_points: total,
        note,
    })
}

/// Default `eps` schedule `1, 1/2, ..., 1/6`.
pub fn default_epsilon_schedule() -> Vec<f64> {
    (1..=DEFAULT_EPSILON_STEPS).map(|i| 1.0 / i as f64).collect()
}

/// Default `d` schedule `ceil(deg f / 2), ..., 8`.
pub fn default_degree_schedule(f: &Polynomial) -> Vec<usize> {
    (half_up(f.degree())..=DEFAULT_MAX_DEGREE.max(half_up(f.degree()))).collect()
}

#[derive(Debug, Clone)]
pub struct HierarchyOptions {
    pub membership: MembershipOptions,
    pub oracle: Option<(SemialgebraicPredicate, OracleSpec)>,
}

/// Solver tolerance for level solves. Monotonicity of the table is asserted at
/// `1e-8`, so the levels themselves need to be resolved well below that.
pub const LEVEL_TOL: f64 = 1e-10;

/// Membership options with the solver tightened to [`LEVEL_TOL`].
pub fn level_options() -> MembershipOptions {
    let mut o = MembershipOptions::default();
    o.solver.feas_tol = LEVEL_TOL;
    o.solver.gap_tol = LEVEL_TOL;
    o
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions {
            membership: level_options(),
            oracle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    /// first `d` whose value moved by less than `10 * gap_tol`
    pub stable_degree: Option<usize>,
    /// `F_eps` estimate: the value at `stable_degree`
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyResult {
    pub objective: Polynomial,
    pub q: Polynomial,
    pub kind: PerturbationKind,
    pub epsilons: Vec<f64>,
    pub degrees: Vec<usize>,
    /// row-major over `(eps, d)` in schedule order
    pub table: Vec<LevelResult>,
    pub per_epsilon: Vec<EpsilonSummary>,
    pub stabilized: bool,
    /// `F` at the last `eps` and its stable degree
    pub estimate: Option<f64>,
    pub oracle: Option<OracleResult>,
}

impl HierarchyResult {
    pub fn level(&self, i_eps: usize, i_d: usize) -> &LevelResult {
        &self.table[i_eps * self.degrees.len() + i_d]
    }

    /// Pairs violating monotonicity beyond `tol`: in `d` at fixed `eps` (`d < d'`
    /// with `F_{eps,d'} < F_{eps,d} - tol`), and in `eps` at fixed `d`.
    pub fn monotonicity_violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let ok = |l: &LevelResult| l.status == LevelStatus::Optimal;
        for i in 0..self.epsilons.len() {
            for a in 0..self.degrees.len() {
                for b in a + 1..self.degrees.len() {
                    let (x, y) = (self.level(i, a), self.level(i, b));
                    if ok(x) && ok(y) && y.value < x.value - tol {
                        out.push(format!(
                            "eps={}: F(d={})={} < F(d={})={}",
                            x.epsilon, y.degree, y.value, x.degree, x.value
                        ));
                    }
                }
            }
        }
        for j in 0..self.degrees.len() {
            for a in 0..self.epsilons.len() {
                for b in a + 1..self.epsilons.len() {
                    let (x, y) = (self.level(a, j), self.level(b, j));
                    if ok(x) && ok(y) && y.value > x.value + tol {
                        out.push(format!(
                            "d={}: F(eps={})={} > F(eps={})={}",
                            x.degree, y.epsilon, y.value, x.epsilon, x.value
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn record(&self, opts: &MembershipOptions) -> HierarchyRecord {
        HierarchyRecord {
            objective: self.objective.to_string(),
            q: self.q.to_string(),
            kind: self.kind,
            rows: self
                .table
                .iter()
                .map(|l| {
                    let certificate = l.certificate.as_ref().map(|c| {
                        let g = perturbed(&self.objective, &self.q, l.epsilon);
                        let target = &g - &Polynomial::constant(g.vars(), f64_to_rational(l.lower));
                        c.record(Some(&target), opts)
                    });
                    LevelRecord {
                        epsilon: l.epsilon,
                        d: l.degree,
                        value: finite_or_none(l.value),
                        lower: finite_or_none(l.lower),
                        upper: finite_or_none(l.upper),
                        status: l.status,
                        certificate,
                    }
                })
                .collect(),
            per_epsilon: self.per_epsilon.clone(),
            stabilized: self.stabilized,
            estimate: self.estimate,
            oracle: self.oracle.clone(),
        }
    }

    /// `epsilon,d,F,status` rows; `F` is `-inf`, `inf` or `nan` when there is
    /// no finite point value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,d,F,status\n");
        for l in &self.table {
            out.push_str(&format!(
                "{},{},{},{}\n",
                l.epsilon,
                l.degree,
                l.value,
                level_status_text(l.status)
            ));
        }
        out
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn level_status_text(s: LevelStatus) -> &'static str {
    match s {
        LevelStatus::Optimal => "OPTIMAL",
        LevelStatus::Infeasible => "INFEASIBLE",
        LevelStatus::Unbounded => "UNBOUNDED",
        LevelStatus::Unknown => "UNKNOWN",
        LevelStatus::DegreeTooLow => "DEGREE_TOO_LOW",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub epsilon: f64,
    pub d: usize,
    /// absent when infinite or unknown; see `status`
    pub value: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub status: LevelStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRecord {
    pub objective: String,
    pub q: String,
    pub kind: PerturbationKind,
    pub rows: Vec<LevelRecord>,
    pub per_epsilon: Vec<EpsilonSummary>,
    pub stabilized: bool,
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleResult>,
}

/// Runs the full `(eps, d)` table and picks the stable degree for each `eps`.
///
/// The stable degree is the first `d` in the schedule whose value differs from
/// the previous one by less than `10 * gap_tol`. Without one for some `eps` the
/// result is marked not stabilized and carries no estimate for that `eps`.
pub fn run_hierarchy(
    cone: &ConeDescription,
    f: &Polynomial,
    recipe: &PerturbationRecipe,
    epsilons: &[f64],
    degrees: &[usize],
    opts: &HierarchyOptions,
) -> Result<HierarchyResult, OptimizeError> {
    if epsilons.is_empty() || degrees.is_empty() {
        return Err(OptimizeError::InvalidRequest("schedules must be non-empty".into()));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(OptimizeError::InvalidRequest(
            "epsilon schedule must be positive and strictly decreasing".into(),
        ));
    }
    if degrees.windows(2).any(|w| w[1] < w[0]) {
        return Err(OptimizeError::InvalidRequest(
            "degree schedule must be non-decreasing".into(),
        ));
    }
    let jobs: Vec<(f64, usize)> = epsilons
        .iter()
        .flat_map(|e| degrees.iter().map(move |d| (*e, *d)))
        .collect();
    let mut table: Vec<LevelResult> = jobs
        .par_iter()
        .map(|&(e, d)| solve_level(cone, f, &recipe.q, e, d, &opts.membership))
        .collect::<Result<_, _>>()?;
    let tol = 10.0 * opts.membership.solver.gap_tol;
    let nd = degrees.len();
    // M_d sits inside M_d' for d <= d', so a verified level carries upward
    for i in 0..epsilons.len() {
        for k in 1..nd {
            let (head, tail) = table.split_at_mut(i * nd + k);
            let prev = &head[i * nd + k - 1];
            let cur = &mut tail[0];
            if cur.status == LevelStatus::Unknown && prev.lower > cur.lower {
                if let Some(c) = &prev.certificate {
                    if c.degree <= cur.degree {
                        cur.lower = prev.lower;
                        cur.certificate = Some(c.embed(cur.degree));
                    }
                }
            }
        }
    }
    let per_epsilon: Vec<EpsilonSummary> = epsilons
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let row = &table[i * nd..(i + 1) * nd];
            let stable = (1..nd).find(|&k| {
                let (a, b) = (&row[k - 1], &row[k]);
                a.status == LevelStatus::Optimal && b.status == LevelStatus::Optimal && (b.value - a.value).abs() < tol
            });
            EpsilonSummary {
                epsilon: e,
                stable_degree: stable.map(|k| degrees[k]),
                estimate: stable.map(|k| row[k].value),
            }
        })
        .collect();
    let stabilized = per_epsilon.iter().all(|p| p.stable_degree.is_some());
    let estimate = per_epsilon.last().and_then(|p| p.estimate);
    let oracle = match &opts.oracle {
        Some((pred, spec)) => Some(grid_oracle(pred, f, spec)?),
        None => None,
    };
    Ok(HierarchyResult {
        objective: f.clone(),
        q: recipe.q.clone(),
        kind: recipe.kind,
        epsilons: epsilons.to_vec(),
        degrees: degrees.to_vec(),
        table,
        per_epsilon,
        stabilized,
        estimate,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::ConeMode;

    fn p(s: &str, vars: &[&str]) -> Polynomial {
        Polynomial::parse(s, vars).unwrap()
    }

    #[test]
    fn cylinder_in_y_of_degree_one() {
        let f = p("x y", &["x", "y"]);
        let params = PerturbationParams {
            variable: Some("y".into()),
            ..Default::default()
        };
        let r = build_perturbation(&f, PerturbationKind::Cylinder, &params, &MembershipOptions::default()).unwrap();
        assert_eq!(r.q, p("1/2 y^2 + 3/2", &["x", "y"]));
        assert_eq!(r.certificate.residual, 0.0);
        assert!(build_perturbation(
            &f,
            PerturbationKind::Cylinder,
            &Default::default(),
            &MembershipOptions::default()
        )
        .is_err());
    }

    #[test]
    fn monomial_squares() {
        let opts = MembershipOptions::default();
        let q0 = build_perturbation(
            &p("3", &["x", "y"]),
            PerturbationKind::MonomialSquares,
            &Default::default(),
            &opts,
        )
        .unwrap();
        assert_eq!(q0.q, p("1", &["x", "y"]));
        let q2 = build_perturbation(
            &p("x y + 1", &["x", "y"]),
            PerturbationKind::MonomialSquares,
            &Default::default(),
            &opts,
        )
        .unwrap();
        assert_eq!(q2.q, p("1 + x^2 + y^2", &["x", "y"]));
        // depends on the degree only
        let q2b = build_perturbation(
            &p("-7 x^2", &["x", "y"]),
            PerturbationKind::MonomialSquares,
            &Default::default(),
            &opts,
        )
        .unwrap();
        assert_eq!(q2.q, q2b.q);
    }

    #[test]
    fn square_level() {
        let sos = ConeDescription::sums_of_squares(&["y"]);
        let l = solve_level(&sos, &p("y^2", &["y"]), &p("1", &["y"]), 0.1, 1, &level_options()).unwrap();
        assert_eq!(l.status, LevelStatus::Optimal);
        assert!((l.value - 0.1).abs() < 1e-9, "{}", l.value);
        assert!(l.certificate.is_some());
        assert!(l.lower <= l.value && l.value <= l.upper + 1e-7);
    }

    #[test]
    fn interval_level() {
        let cone = ConeDescription::parse(&["x"], &["x", "1 - x"], ConeMode::Preordering).unwrap();
        let l = solve_level(&cone, &p("x", &["x"]), &p("1 + x^2", &["x"]), 0.01, 2, &level_options()).unwrap();
        assert_eq!(l.status, LevelStatus::Optimal);
        assert!(l.value >= 0.0 && l.value <= 0.02, "{}", l.value);
    }

    #[test]
    fn empty_set_is_unbounded() {
        let cone = ConeDescription::parse(&["x"], &["-1"], ConeMode::QuadraticModule).unwrap();
        let l = solve_level(&cone, &p("x", &["x"]), &p("1", &["x"]), 0.5, 1, &level_options()).unwrap();
        assert_eq!(l.status, LevelStatus::Unbounded);
    }

    #[test]
    fn odd_objective_without_constraints_is_minus_infinity() {
        let sos = ConeDescription::sums_of_squares(&["x"]);
        let l = solve_level(&sos, &p("x^3", &["x"]), &p("1", &["x"]), 0.5, 2, &level_options()).unwrap();
        assert_eq!(l.status, LevelStatus::Infeasible);
        assert_eq!(l.value, f64::NEG_INFINITY);
    }

    #[test]
    fn oracle_on_interval() {
        let cone = ConeDescription::parse(&["x"], &["x", "1 - x"], ConeMode::Preordering).unwrap();
        let spec = OracleSpec {
            bounds: vec![(0.0, 1.0)],
            resolution: 11,
        };
        let r = grid_oracle(&cone.predicate(), &p("x", &["x"]), &spec).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.feasible_points, 11);
        let empty = ConeDescription::parse(&["x"], &["x - 5"], ConeMode::Preordering).unwrap();
        let r = grid_oracle(&empty.predicate(), &p("x", &["x"]), &spec).unwrap();
        assert_eq!(r.value, f64::INFINITY);
        let coarse = OracleSpec { resolution: 5, ..spec };
        assert!(grid_oracle(&cone.predicate(), &p("x", &["x"]), &coarse).is_err());
    }

    #[test]
    fn schedules_are_validated() {
        let sos = ConeDescription::sums_of_squares(&["x"]);
        let f = p("x^2 + 1", &["x"]);
        let opts = MembershipOptions::default();
        let recipe = build_perturbation(&f, PerturbationKind::MonomialSquares, &Default::default(), &opts).unwrap();
        let h = HierarchyOptions::default();
        assert!(run_hierarchy(&sos, &f, &recipe, &[], &[1], &h).is_err());
        assert!(run_hierarchy(&sos, &f, &recipe, &[0.5, 0.5], &[1], &h).is_err());
        assert!(run_hierarchy(&sos, &f, &recipe, &[0.5], &[2, 1], &h).is_err());
    }

    #[test]
    fn single_degree_never_stabilizes() {
        let sos = ConeDescription::sums_of_squares(&["x"]);
        let f = p("x^2 + 1", &["x"]);
        let opts = MembershipOptions::default();
        let recipe = build_perturbation(&f, PerturbationKind::MonomialSquares, &Default::default(), &opts).unwrap();
        let r = run_hierarchy(&sos, &f, &recipe, &[0.5], &[1], &HierarchyOptions::default()).unwrap();
        assert!(!r.stabilized);
        assert_eq!(r.estimate, None);
        assert_eq!(r.table.len(), 1);
    }
}
