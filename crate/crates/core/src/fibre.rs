//! Fibre decomposition over bounded polynomials.
//!
//! Given bounded polynomials `b_1..b_t` with `lambda_i <= b_i <= Lambda_i` on the
//! set, the fibre at a grid point `r` adds the constraints `b_i = r_i` to the cone.
//! A scan tests targets on every fibre of a finite grid at one shared degree `d`,
//! which is the observable stand-in for a degree bound uniform across fibres.
//! Everything reported here holds on the probed grid only.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{ConeDescription, ConeError, TruncatedCone};
use crate::membership::{
    minimal_degree, test_membership, CertificateRecord, DualRecord, Membership, MembershipError, MembershipOptions,
    MembershipStatus, MinimalDegree,
};
use crate::polynomial::{f64_to_rational, Monomial, Polynomial, Rational};

pub const DEFAULT_GRID_POINTS: usize = 9;

#[derive(Debug, Error)]
pub enum FibreError {
    #[error("invalid fibre spec: {0}")]
    InvalidSpec(String),
    #[error("substitution style needs coordinate bounded polynomials; b_{index} = {poly} is not one")]
    NotCoordinate { index: usize, poly: String },
    #[error("grid point {r:?} lies outside the bounds")]
    OutOfBounds { r: Vec<f64> },
    #[error("fibre at r = {r:?}: {source}")]
    AtFibre {
        r: Vec<f64>,
        #[source]
        source: MembershipError,
    },
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Membership(#[from] MembershipError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FibreStyle {
    /// append `+-(b_i - r_i)` as generators
    #[serde(rename = "IDEAL")]
    Ideal,
    /// bind the coordinate `b_i` to `r_i` and drop it
    #[serde(rename = "SUBST")]
    Substitution,
}

impl fmt::Display for FibreStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FibreStyle::Ideal => write!(f, "ideal"),
            FibreStyle::Substitution => write!(f, "subst"),
        }
    }
}

impl std::str::FromStr for FibreStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ideal" => Ok(FibreStyle::Ideal),
            "subst" | "substitution" => Ok(FibreStyle::Substitution),
            other => Err(format!("unknown fibre style `{other}` (expected ideal or subst)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounded {
    pub poly: Polynomial,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Chebyshev-Lobatto points on each interval
    PointsPerAxis(usize),
    /// one value list per bounded polynomial
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FibreSpec {
    bounded: Vec<Bounded>,
    grid: Grid,
    degree: usize,
}

impl FibreSpec {
    pub fn new(bounded: Vec<Bounded>, grid: Grid, degree: usize) -> Result<Self, FibreError> {
        if bounded.is_empty() {
            return Err(FibreError::InvalidSpec("no bounded polynomials".into()));
        }
        for (i, b) in bounded.iter().enumerate() {
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower <= b.upper) {
                return Err(FibreError::InvalidSpec(format!(
                    "b_{i}: need finite lower <= upper, got [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }
        match &grid {
            Grid::PointsPerAxis(n) if *n < 2 => {
                return Err(FibreError::InvalidSpec(format!(
                    "grid needs at least 2 points per axis, got {n}"
                )))
            }
            Grid::Explicit(lists) => {
                if lists.len() != bounded.len() {
                    return Err(FibreError::InvalidSpec(format!(
                        "{} value lists for {} bounded polynomials",
                        lists.len(),
                        bounded.len()
                    )));
                }
                for (i, (list, b)) in lists.iter().zip(&bounded).enumerate() {
                    if list.is_empty() {
                        return Err(FibreError::InvalidSpec(format!("empty value list for b_{i}")));
                    }
                    if let Some(v) = list.iter().find(|v| !(**v >= b.lower && **v <= b.upper)) {
                        return Err(FibreError::InvalidSpec(format!(
                            "grid value {v} for b_{i} outside [{}, {}]",
                            b.lower, b.upper
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(FibreSpec { bounded, grid, degree })
    }

    pub fn bounded(&self) -> &[Bounded] {
        &self.bounded
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn with_degree(&self, degree: usize) -> Self {
        FibreSpec { degree, ..self.clone() }
    }

    pub fn axes(&self) -> Vec<Vec<f64>> {
        match &self.grid {
            Grid::PointsPerAxis(n) => self
                .bounded
                .iter()
                .map(|b| chebyshev_points(b.lower, b.upper, *n))
                .collect(),
            Grid::Explicit(lists) => lists.clone(),
        }
    }

    /// Cartesian product of the axes, first axis varying slowest.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in self.axes() {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        out
    }

    pub fn contains(&self, r: &[f64]) -> bool {
        r.len() == self.bounded.len() && r.iter().zip(&self.bounded).all(|(v, b)| *v >= b.lower && *v <= b.upper)
    }

    pub fn record(&self) -> FibreSpecRecord {
        FibreSpecRecord {
            bounded: self
                .bounded
                .iter()
                .map(|b| BoundedRecord {
                    poly: b.poly.to_string(),
                    lower: b.lower,
                    upper: b.upper,
                })
                .collect(),
            grid: self.grid.clone(),
            d: self.degree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedRecord {
    pub poly: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FibreSpecRecord {
    pub bounded: Vec<BoundedRecord>,
    pub grid: Grid,
    pub d: usize,
}

/// `n` Chebyshev-Lobatto points on `[lo, hi]`, ascending, endpoints included.
///
/// Uses the sine form so the points are exactly symmetric and an odd `n` hits the
/// midpoint exactly.
pub fn chebyshev_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let m = (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == 0 {
                return lo;
            }
            if k == n - 1 {
                return hi;
            }
            let t = (std::f64::consts::PI * (2.0 * k as f64 - m) / (2.0 * m)).sin();
            (mid + half * t).clamp(lo, hi)
        })
        .collect()
}

/// Variable index and constant offset of each bounded polynomial `x_j + c`.
fn coordinates(spec: &FibreSpec) -> Result<Vec<(usize, Rational)>, FibreError> {
    let mut seen = Vec::new();
    for (i, b) in spec.bounded.iter().enumerate() {
        let j = b.poly.as_coordinate().ok_or_else(|| FibreError::NotCoordinate {
            index: i,
            poly: b.poly.to_string(),
        })?;
        if seen.iter().any(|(k, _)| *k == j) {
            return Err(FibreError::NotCoordinate {
                index: i,
                poly: format!("{} (variable already bound)", b.poly),
            });
        }
        let c = b.poly.coeff(&Monomial::one(b.poly.nvars()));
        seen.push((j, c));
    }
    Ok(seen)
}

fn bindings(spec: &FibreSpec, vars: &[String], r: &[f64]) -> Result<Vec<(String, Rational)>, FibreError> {
    Ok(coordinates(spec)?
        .into_iter()
        .zip(r)
        .map(|((j, c), v)| (vars[j].clone(), f64_to_rational(*v) - c))
        .collect())
}

fn check_point(spec: &FibreSpec, r: &[f64]) -> Result<(), FibreError> {
    if spec.contains(r) {
        Ok(())
    } else {
        Err(FibreError::OutOfBounds { r: r.to_vec() })
    }
}

/// The fibre cone `M + J_r` at grid point `r`.
pub fn fibre_cone(
    cone: &ConeDescription,
    spec: &FibreSpec,
    r: &[f64],
    style: FibreStyle,
) -> Result<ConeDescription, FibreError> {
    check_point(spec, r)?;
    match style {
        FibreStyle::Ideal => {
            let mut gens = cone.generators().to_vec();
            for (b, v) in spec.bounded.iter().zip(r) {
                let shifted = &b.poly.embed(cone.vars()).map_err(ConeError::from)?
                    - &Polynomial::constant(cone.vars(), f64_to_rational(*v));
                let negated = -&shifted;
                gens.push(shifted);
                gens.push(negated);
            }
            Ok(cone.with_generators(gens)?)
        }
        FibreStyle::Substitution => {
            let spec_vars = spec.bounded[0].poly.vars().to_vec();
            if spec_vars != cone.vars() {
                return Err(FibreError::InvalidSpec(format!(
                    "bounded polynomials are over {:?} but the cone is over {:?}",
                    spec_vars,
                    cone.vars()
                )));
            }
            let binds = bindings(spec, cone.vars(), r)?;
            let refs: Vec<(&str, Rational)> = binds.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
            let mut gens: Vec<Polynomial> = Vec::new();
            for g in cone.generators() {
                let h = g.substitute(&refs).map_err(ConeError::from)?;
                if !h.is_zero() && !gens.contains(&h) {
                    gens.push(h);
                }
            }
            let remaining: Vec<String> = cone
                .vars()
                .iter()
                .filter(|v| !binds.iter().any(|(n, _)| n == *v))
                .cloned()
                .collect();
            Ok(ConeDescription::new(&remaining, gens, cone.mode())?)
        }
    }
}

/// A target restricted to the fibre: unchanged for the ideal style, with the
/// coordinates substituted for the substitution style.
pub fn fibre_target(f: &Polynomial, spec: &FibreSpec, r: &[f64], style: FibreStyle) -> Result<Polynomial, FibreError> {
    check_point(spec, r)?;
    match style {
        FibreStyle::Ideal => Ok(f.clone()),
        FibreStyle::Substitution => {
            let binds = bindings(spec, f.vars(), r)?;
            let refs: Vec<(&str, Rational)> = binds.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
            Ok(f.substitute(&refs).map_err(ConeError::from)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    pub style: FibreStyle,
    /// also sweep for the minimal degree up to this bound
    pub minimal_degree_max: Option<usize>,
    pub membership: MembershipOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            style: FibreStyle::Substitution,
            minimal_degree_max: None,
            membership: MembershipOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FibreEntry {
    pub r: Vec<f64>,
    pub style: FibreStyle,
    pub cone: ConeDescription,
    /// one per target; `None` when the target degree exceeds the reach of `d`
    pub outcomes: Vec<Option<Membership>>,
    pub statuses: Vec<MembershipStatus>,
    /// one per target when requested, else empty
    pub minimal_degrees: Vec<MinimalDegree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLocation {
    pub r: Vec<f64>,
    pub target: usize,
    pub status: MembershipStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub d: usize,
    /// every target verified at `d` on every probed fibre
    pub all_pass: bool,
    /// largest minimal degree found, when minimal degrees were requested
    pub max_minimal_degree: Option<usize>,
    /// fibre/target pairs with no verified degree up to the sweep bound
    pub minimal_degree_not_found: usize,
    pub failures: Vec<FailureLocation>,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FibreScanReport {
    pub spec: FibreSpec,
    pub targets: Vec<Polynomial>,
    pub grid: Vec<Vec<f64>>,
    pub entries: Vec<FibreEntry>,
    pub summary: ScanSummary,
}

/// Tests every target on every fibre of the grid at the spec's shared degree.
pub fn fibre_scan(
    cone: &ConeDescription,
    spec: &FibreSpec,
    targets: &[Polynomial],
    opts: &ScanOptions,
) -> Result<FibreScanReport, FibreError> {
    let grid = spec.grid_points();
    let d = spec.degree;
    let entries: Vec<FibreEntry> = grid
        .par_iter()
        .map(|r| {
            let at = |e: MembershipError| FibreError::AtFibre {
                r: r.clone(),
                source: e,
            };
            let fc = fibre_cone(cone, spec, r, opts.style).map_err(|e| match e {
                FibreError::Cone(c) => at(MembershipError::Cone(c)),
                other => other,
            })?;
            // capacity problems surface here rather than inside a worker
            fc.product_set().map_err(|c| at(MembershipError::Cone(c)))?;
            let tc = TruncatedCone::new(fc.clone(), d);
            let mut outcomes = Vec::with_capacity(targets.len());
            let mut statuses = Vec::with_capacity(targets.len());
            let mut minimal = Vec::new();
            for f in targets {
                let g = fibre_target(f, spec, r, opts.style)?;
                match test_membership(&tc, &g, &opts.membership) {
                    Ok(m) => {
                        statuses.push(m.status());
                        outcomes.push(Some(m));
                    }
                    Err(MembershipError::Cone(ConeError::DegreeTooLow { .. })) => {
                        statuses.push(MembershipStatus::DegreeTooLow);
                        outcomes.push(None);
                    }
                    Err(e) => return Err(at(e)),
                }
                if let Some(dmax) = opts.minimal_degree_max {
                    minimal.push(minimal_degree(&fc, &g, dmax, &opts.membership).map_err(at)?);
                }
            }
            Ok(FibreEntry {
                r: r.clone(),
                style: opts.style,
                cone: fc,
                outcomes,
                statuses,
                minimal_degrees: minimal,
            })
        })
        .collect::<Result<_, FibreError>>()?;
    let summary = summarize(&entries, d, grid.len(), opts.minimal_degree_max.is_some());
    Ok(FibreScanReport {
        spec: spec.clone(),
        targets: targets.to_vec(),
        grid,
        entries,
        summary,
    })
}

fn summarize(entries: &[FibreEntry], d: usize, npoints: usize, with_minimal: bool) -> ScanSummary {
    let mut failures = Vec::new();
    for e in entries {
        for (t, s) in e.statuses.iter().enumerate() {
            if *s != MembershipStatus::Member {
                failures.push(FailureLocation {
                    r: e.r.clone(),
                    target: t,
                    status: *s,
                });
            }
        }
    }
    let found: Vec<Option<usize>> = entries
        .iter()
        .flat_map(|e| e.minimal_degrees.iter().map(|m| m.degree))
        .collect();
    let max_minimal_degree = found.iter().flatten().copied().max();
    let not_found = found.iter().filter(|d| d.is_none()).count();
    let all_pass = failures.is_empty();
    let statement = if all_pass {
        format!("uniform degree d={d} holds on the probed grid ({npoints} points)")
    } else {
        format!(
            "uniform degree d={d} fails on the probed grid: {} of {} fibre/target pairs not verified",
            failures.len(),
            entries.iter().map(|e| e.statuses.len()).sum::<usize>()
        )
    };
    ScanSummary {
        d,
        all_pass,
        max_minimal_degree: if with_minimal { max_minimal_degree } else { None },
        minimal_degree_not_found: not_found,
        failures,
        statement,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub r: Vec<f64>,
    pub style: FibreStyle,
    pub cone: String,
    pub statuses: Vec<MembershipStatus>,
    pub minimal_degrees: Vec<Option<usize>>,
    /// keys into the report's certificate maps
    pub certificate_refs: Vec<Option<String>>,
}

/// JSON layout of a scan: `{spec, grid, entries, summary}` plus the certificates
/// referenced by the entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub spec: FibreSpecRecord,
    pub targets: Vec<String>,
    pub grid: Vec<Vec<f64>>,
    pub entries: Vec<EntryRecord>,
    pub summary: ScanSummary,
    pub certificates: BTreeMap<String, CertificateRecord>,
    pub duals: BTreeMap<String, DualRecord>,
}

impl FibreScanReport {
    pub fn record(&self, opts: &MembershipOptions) -> ScanRecord {
        let mut certificates = BTreeMap::new();
        let mut duals = BTreeMap::new();
        let mut entries = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let mut refs = Vec::with_capacity(e.outcomes.len());
            for (t, o) in e.outcomes.iter().enumerate() {
                let key = format!("fibre{i}/target{t}");
                refs.push(match o {
                    Some(Membership::Member(c)) => {
                        let g = fibre_target(&self.targets[t], &self.spec, &e.r, e.style).ok();
                        certificates.insert(key.clone(), c.record(g.as_ref(), opts));
                        Some(key)
                    }
                    Some(Membership::NotMember(dual)) => {
                        duals.insert(key.clone(), dual.record(e.cone.vars()));
                        Some(key)
                    }
                    _ => None,
                });
            }
            entries.push(EntryRecord {
                r: e.r.clone(),
                style: e.style,
                cone: e.cone.to_string(),
                statuses: e.statuses.clone(),
                minimal_degrees: e.minimal_degrees.iter().map(|m| m.degree).collect(),
                certificate_refs: refs,
            });
        }
        ScanRecord {
            spec: self.spec.record(),
            targets: self.targets.iter().map(|t| t.to_string()).collect(),
            grid: self.grid.clone(),
            entries,
            summary: self.summary.clone(),
            certificates,
            duals,
        }
    }

    /// One row per fibre and target: `r_1..r_t, target, status, d_min`.
    pub fn to_csv(&self) -> String {
        let t = self.spec.bounded.len();
        let mut out = String::new();
        let mut header: Vec<String> = (1..=t).map(|i| format!("r_{i}")).collect();
        header.extend(["target".to_string(), "status".to_string(), "d_min".to_string()]);
        out.push_str(&header.join(","));
        out.push('\n');
        for e in &self.entries {
            for (k, s) in e.statuses.iter().enumerate() {
                let mut row: Vec<String> = e.r.iter().map(|v| format!("{v}")).collect();
                row.push(k.to_string());
                row.push(status_text(*s).to_string());
                row.push(
                    e.minimal_degrees
                        .get(k)
                        .and_then(|m| m.degree)
                        .map(|d| d.to_string())
                        .unwrap_or_default(),
                );
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

pub fn status_text(s: MembershipStatus) -> &'static str {
    match s {
        MembershipStatus::Member => "MEMBER",
        MembershipStatus::NotMemberAtDegree => "NOT_MEMBER_AT_D",
        MembershipStatus::Unknown => "UNKNOWN",
        MembershipStatus::DegreeTooLow => "DEGREE_TOO_LOW",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `Lambda_i - b_i`
    Upper,
    /// `b_i - lambda_i`
    Lower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub index: usize,
    pub side: Side,
    pub poly: Polynomial,
    pub status: MembershipStatus,
    pub outcome: Option<Membership>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedMembershipReport {
    pub d: usize,
    pub checks: Vec<HypothesisCheck>,
    /// per bounded polynomial: both bounds certified
    pub witnessed: Vec<bool>,
    pub all_witnessed: bool,
}

/// Tests `Lambda_i - b_i` and `b_i - lambda_i` in `M_d` for every bounded polynomial.
pub fn check_bounded_membership(
    cone: &ConeDescription,
    spec: &FibreSpec,
    d: usize,
    opts: &MembershipOptions,
) -> Result<BoundedMembershipReport, FibreError> {
    let tc = TruncatedCone::new(cone.clone(), d);
    let mut checks = Vec::new();
    for (i, b) in spec.bounded.iter().enumerate() {
        let p = b.poly.embed(cone.vars()).map_err(ConeError::from)?;
        let upper = &Polynomial::constant(cone.vars(), f64_to_rational(b.upper)) - &p;
        let lower = &p - &Polynomial::constant(cone.vars(), f64_to_rational(b.lower));
        for (side, poly) in [(Side::Upper, upper), (Side::Lower, lower)] {
            let (status, outcome) = match test_membership(&tc, &poly, opts) {
                Ok(m) => (m.status(), Some(m)),
                Err(MembershipError::Cone(ConeError::DegreeTooLow { .. })) => (MembershipStatus::DegreeTooLow, None),
                Err(e) => return Err(e.into()),
            };
            checks.push(HypothesisCheck {
                index: i,
                side,
                poly,
                status,
                outcome,
            });
        }
    }
    let witnessed: Vec<bool> = (0..spec.bounded.len())
        .map(|i| {
            checks
                .iter()
                .filter(|c| c.index == i)
                .all(|c| c.status == MembershipStatus::Member)
        })
        .collect();
    let all_witnessed = witnessed.iter().all(|w| *w);
    Ok(BoundedMembershipReport {
        d,
        checks,
        witnessed,
        all_witnessed,
    })
}
