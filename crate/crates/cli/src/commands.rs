use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use posmod_core::cone::ConeError;
use posmod_core::fibre::{
    self, fibre_cone, fibre_scan, fibre_target, Bounded, FibreError, FibreSpec, FibreStyle, Grid, ScanOptions,
    ScanRecord,
};
use posmod_core::membership::{
    test_membership, verify_certificate, CertificateRecord, DualRecord, Membership, MembershipError,
    UnknownDiagnostics, VerificationReport,
};
use posmod_core::optimize::{
    build_perturbation, default_degree_schedule, default_epsilon_schedule, level_options, run_hierarchy,
    HierarchyOptions, HierarchyRecord, OptimizeError, OracleSpec, PerturbationKind, PerturbationParams,
    MIN_ORACLE_RESOLUTION,
};
use posmod_core::{ConeDescription, MembershipOptions, MembershipStatus, Polynomial, TruncatedCone};
use serde::Serialize;

use crate::args::{Common, FibreScanArgs, Format, MemberArgs, OptimizeArgs, StyleArg, VerifyArgs};
use crate::problem::{parse_number, ProblemError, ProblemFile};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Negative = 1,
    Unknown = 2,
    Parse = 3,
    Usage = 4,
    NotStabilized = 5,
    Internal = 6,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Parse,
            message: message.into(),
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        CliError::parse(e.to_string())
    }
}

impl From<ConeError> for CliError {
    fn from(e: ConeError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<MembershipError> for CliError {
    fn from(e: MembershipError) -> Self {
        match e {
            MembershipError::Cone(c) => c.into(),
            MembershipError::InvalidRequest(m) => CliError::usage(m),
            other => CliError {
                exit: Exit::Internal,
                message: other.to_string(),
            },
        }
    }
}

impl From<FibreError> for CliError {
    fn from(e: FibreError) -> Self {
        match e {
            FibreError::Membership(m) | FibreError::AtFibre { source: m, .. } => m.into(),
            FibreError::Cone(c) => c.into(),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::InvalidRequest(m) => CliError::usage(m),
            OptimizeError::Cone(c) => c.into(),
            OptimizeError::Membership(m) => m.into(),
            OptimizeError::Sdp(s) => CliError {
                exit: Exit::Internal,
                message: s.to_string(),
            },
        }
    }
}

/// Rendered result plus the exit code it implies.
#[derive(Debug)]
pub struct Outcome {
    pub exit: Exit,
    pub output: String,
}

#[derive(Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub timestamp_unix: u64,
    pub elapsed_ms: u128,
    pub threads: usize,
}

fn meta(common: &Common, start: Instant) -> Option<Meta> {
    if common.no_meta {
        return None;
    }
    Some(Meta {
        tool: "posmod",
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        elapsed_ms: start.elapsed().as_millis(),
        threads: rayon::current_num_threads(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize");
    s.push('\n');
    s
}

/// Applies `--tol KEY=VALUE` overrides.
pub fn apply_tolerances(opts: &mut MembershipOptions, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--tol expects KEY=VALUE, got `{o}`")))?;
        let v = parse_number(v).map_err(|e| CliError::usage(format!("--tol {k}: {e}")))?;
        if v <= 0.0 {
            return Err(CliError::usage(format!("--tol {k}: must be positive")));
        }
        match k.trim() {
            "feas" => opts.solver.feas_tol = v,
            "gap" => opts.solver.gap_tol = v,
            "infeas" => opts.solver.infeas_tol = v,
            "eig" => opts.solver.eig_tol = v,
            "residual" => opts.residual_tol = v,
            "separation" => opts.separation_tol = v,
            other => {
                return Err(CliError::usage(format!(
                    "unknown tolerance `{other}` (expected feas, gap, infeas, eig, residual or separation)"
                )))
            }
        }
    }
    Ok(())
}

fn style_of(arg: Option<StyleArg>, problem: &ProblemFile) -> FibreStyle {
    match arg {
        Some(StyleArg::Ideal) => FibreStyle::Ideal,
        Some(StyleArg::Subst) => FibreStyle::Substitution,
        None => problem
            .fibre
            .as_ref()
            .and_then(|f| f.style)
            .unwrap_or(FibreStyle::Substitution),
    }
}

fn target_arg(problem: &ProblemFile, text: &str) -> Result<Polynomial, CliError> {
    problem.poly(text).map_err(CliError::parse)
}

/// Turns `--fibre POLY=VALUE` bindings into a spec and the point `r`.
///
/// A binding whose polynomial matches a `bounded` line of the file takes that
/// interval, and the value must lie in it; other bindings get the degenerate
/// interval `[r, r]`.
fn fibre_bindings(
    problem: &ProblemFile,
    bindings: &[String],
    d: usize,
) -> Result<Option<(FibreSpec, Vec<f64>)>, CliError> {
    if bindings.is_empty() {
        return Ok(None);
    }
    let mut bounded = Vec::new();
    let mut r = Vec::new();
    for b in bindings {
        let (lhs, rhs) = b
            .rsplit_once('=')
            .ok_or_else(|| CliError::usage(format!("--fibre expects POLY=VALUE, got `{b}`")))?;
        let poly = problem.poly(lhs.trim()).map_err(CliError::parse)?;
        let value = parse_number(rhs).map_err(|e| CliError::usage(format!("--fibre {b}: {e}")))?;
        let declared = problem
            .fibre
            .as_ref()
            .and_then(|f| f.bounded.iter().find(|x| x.poly == poly));
        let (lower, upper) = match declared {
            Some(x) if value < x.lower || value > x.upper => {
                return Err(CliError::usage(format!(
                    "--fibre {b}: value outside the declared interval [{}, {}]",
                    x.lower, x.upper
                )))
            }
            Some(x) => (x.lower, x.upper),
            None => (value, value),
        };
        bounded.push(Bounded { poly, lower, upper });
        r.push(value);
    }
    let spec = FibreSpec::new(bounded, Grid::Explicit(r.iter().map(|v| vec![*v]).collect()), d)?;
    Ok(Some((spec, r)))
}

#[derive(Debug, Serialize)]
struct FibreBinding {
    style: FibreStyle,
    bounded: Vec<String>,
    r: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct MemberOutput {
    command: &'static str,
    status: &'static str,
    target: String,
    d: usize,
    vars: Vec<String>,
    mode: posmod_core::ConeMode,
    cone: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fibre: Option<FibreBinding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<CertificateRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dual: Option<DualRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unknown: Option<UnknownDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

fn status_exit(s: MembershipStatus) -> Exit {
    match s {
        MembershipStatus::Member => Exit::Ok,
        MembershipStatus::NotMemberAtDegree | MembershipStatus::DegreeTooLow => Exit::Negative,
        MembershipStatus::Unknown => Exit::Unknown,
    }
}

/// Cone and target after an optional fibre restriction.
fn restrict(
    problem: &ProblemFile,
    target: &Polynomial,
    bindings: &[String],
    style: FibreStyle,
    d: usize,
) -> Result<(ConeDescription, Polynomial, Option<FibreBinding>), CliError> {
    let cone = problem.cone();
    match fibre_bindings(problem, bindings, d)? {
        None => Ok((cone, target.clone(), None)),
        Some((spec, r)) => {
            let fc = fibre_cone(&cone, &spec, &r, style)?;
            let ft = fibre_target(target, &spec, &r, style)?;
            let binding = FibreBinding {
                style,
                bounded: spec.bounded().iter().map(|b| b.poly.to_string()).collect(),
                r,
            };
            Ok((fc, ft, Some(binding)))
        }
    }
}

pub fn member(problem: &ProblemFile, args: &MemberArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    if args.common.format == Format::Csv {
        return Err(CliError::usage("member writes JSON only"));
    }
    let mut opts = MembershipOptions::default();
    apply_tolerances(&mut opts, &args.common.tol)?;
    let target = match (&args.target, problem.targets.first()) {
        (Some(t), _) => target_arg(problem, t)?,
        (None, Some(t)) => t.clone(),
        (None, None) => return Err(CliError::usage("no target: pass --target or add a `target` line")),
    };
    let d = args
        .d
        .or(problem.degree)
        .ok_or_else(|| CliError::usage("no degree: pass --d or add a `d` line"))?;
    let style = style_of(args.style, problem);
    let (cone, f, fibre) = restrict(problem, &target, &args.fibre, style, d)?;
    let tc = TruncatedCone::new(cone.clone(), d);
    let outcome = test_membership(&tc, &f, &opts)?;
    let status = outcome.status();
    let (certificate, dual, unknown) = match &outcome {
        Membership::Member(c) => (Some(c.record(Some(&f), &opts)), None, None),
        Membership::NotMember(l) => (None, Some(l.record(cone.vars())), None),
        Membership::Unknown(u) => (None, None, Some(u.clone())),
    };
    let out = MemberOutput {
        command: "member",
        status: fibre::status_text(status),
        target: target.to_string(),
        d,
        vars: cone.vars().to_vec(),
        mode: cone.mode(),
        cone: cone.generators().iter().map(|g| g.to_string()).collect(),
        fibre,
        certificate,
        dual,
        unknown,
        meta: meta(&args.common, start),
    };
    Ok(Outcome {
        exit: status_exit(status),
        output: to_json(&out),
    })
}

/// `9` or `-1,0,1;0,1` into a grid.
pub fn parse_grid(text: &str) -> Result<Grid, CliError> {
    let t = text.trim();
    if let Ok(n) = t.parse::<usize>() {
        return Ok(Grid::PointsPerAxis(n));
    }
    let axes = t
        .split(';')
        .map(|axis| axis.split(',').map(parse_number).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::usage(format!("--grid: {e}")))?;
    Ok(Grid::Explicit(axes))
}

#[derive(Debug, Serialize)]
struct ScanOutput {
    command: &'static str,
    style: FibreStyle,
    mode: posmod_core::ConeMode,
    cone: Vec<String>,
    report: ScanRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn fibre_scan_cmd(problem: &ProblemFile, args: &FibreScanArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let block = problem
        .fibre
        .as_ref()
        .ok_or_else(|| CliError::usage("fibre-scan needs a [fibre] block"))?;
    let mut opts = ScanOptions {
        style: style_of(args.style, problem),
        minimal_degree_max: args.min_degree,
        ..Default::default()
    };
    apply_tolerances(&mut opts.membership, &args.common.tol)?;
    let targets: Vec<Polynomial> = if args.target.is_empty() {
        problem.targets.clone()
    } else {
        args.target
            .iter()
            .map(|t| target_arg(problem, t))
            .collect::<Result<_, _>>()?
    };
    if targets.is_empty() {
        return Err(CliError::usage("no targets: pass --target or add `target` lines"));
    }
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => block
            .grid
            .clone()
            .unwrap_or(Grid::PointsPerAxis(fibre::DEFAULT_GRID_POINTS)),
    };
    let d = args
        .d
        .or(block.degree)
        .or(problem.degree)
        .ok_or_else(|| CliError::usage("no degree: pass --d or add `d` to [fibre]"))?;
    let spec = FibreSpec::new(block.bounded.clone(), grid, d)?;
    let cone = problem.cone();
    let report = fibre_scan(&cone, &spec, &targets, &opts)?;
    let exit = if report.summary.all_pass {
        Exit::Ok
    } else if report
        .summary
        .failures
        .iter()
        .any(|f| status_exit(f.status) == Exit::Negative)
    {
        Exit::Negative
    } else {
        Exit::Unknown
    };
    let output = match args.common.format {
        Format::Csv => report.to_csv(),
        Format::Json => to_json(&ScanOutput {
            command: "fibre-scan",
            style: opts.style,
            mode: cone.mode(),
            cone: cone.generators().iter().map(|g| g.to_string()).collect(),
            report: report.record(&opts.membership),
            meta: meta(&args.common, start),
        }),
    };
    Ok(Outcome { exit, output })
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::usage(format!("{what}: bad value `{}`", s.trim())))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct OptimizeOutput {
    command: &'static str,
    mode: posmod_core::ConeMode,
    cone: Vec<String>,
    result: HierarchyRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

pub fn optimize_cmd(problem: &ProblemFile, args: &OptimizeArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let block = problem
        .optimize
        .as_ref()
        .ok_or_else(|| CliError::usage("optimize needs an [optimize] block"))?;
    let f = &block.objective;
    let mut opts = HierarchyOptions {
        membership: level_options(),
        oracle: None,
    };
    apply_tolerances(&mut opts.membership, &args.common.tol)?;
    let epsilons = match &args.epsilon_schedule {
        Some(s) => s
            .split(',')
            .map(|v| parse_number(v).map_err(|e| CliError::usage(format!("--epsilon-schedule: {e}"))))
            .collect::<Result<Vec<_>, _>>()?,
        None => block.epsilons.clone().unwrap_or_else(default_epsilon_schedule),
    };
    let degrees = match &args.d {
        Some(s) => parse_list::<usize>(s, "--d")?,
        None => block.degrees.clone().unwrap_or_else(|| default_degree_schedule(f)),
    };
    let (kind, params) = match &args.recipe {
        Some(r) => recipe_arg(problem, r)?,
        None => match &block.recipe {
            Some(r) => (
                r.kind,
                PerturbationParams {
                    variable: r.variable.clone(),
                    q: r.q.clone(),
                    ..Default::default()
                },
            ),
            None => (PerturbationKind::MonomialSquares, PerturbationParams::default()),
        },
    };
    if !block.oracle.is_empty() {
        let mut bounds = Vec::new();
        for v in &problem.vars {
            let (_, lo, hi) = block
                .oracle
                .iter()
                .find(|(name, _, _)| name == v)
                .ok_or_else(|| CliError::usage(format!("oracle box has no bounds for `{v}`")))?;
            bounds.push((*lo, *hi));
        }
        let resolution = block.resolution.unwrap_or(4 * MIN_ORACLE_RESOLUTION + 1);
        opts.oracle = Some((problem.cone().predicate(), OracleSpec { bounds, resolution }));
    }
    let cone = problem.cone();
    let recipe = build_perturbation(f, kind, &params, &opts.membership)?;
    let result = run_hierarchy(&cone, f, &recipe, &epsilons, &degrees, &opts)?;
    let exit = if result.stabilized {
        Exit::Ok
    } else {
        Exit::NotStabilized
    };
    let output = match args.common.format {
        Format::Csv => result.to_csv(),
        Format::Json => to_json(&OptimizeOutput {
            command: "optimize",
            mode: cone.mode(),
            cone: cone.generators().iter().map(|g| g.to_string()).collect(),
            result: result.record(&opts.membership),
            meta: meta(&args.common, start),
        }),
    };
    Ok(Outcome { exit, output })
}

fn recipe_arg(problem: &ProblemFile, text: &str) -> Result<(PerturbationKind, PerturbationParams), CliError> {
    let (head, rest) = match text.split_once(':') {
        Some((h, r)) => (h, Some(r.trim())),
        None => (text, None),
    };
    let kind = PerturbationKind::from_str(head).map_err(CliError::usage)?;
    let mut params = PerturbationParams::default();
    match (kind, rest) {
        (PerturbationKind::Cylinder, Some(v)) if problem.vars.iter().any(|x| x == v) => {
            params.variable = Some(v.to_string())
        }
        (PerturbationKind::User, Some(q)) => params.q = Some(problem.poly(q).map_err(CliError::parse)?),
        (PerturbationKind::MonomialSquares, None) => {}
        _ => {
            return Err(CliError::usage(format!(
                "--recipe `{text}`: expected cylinder:VAR, monomial-squares or user:POLY"
            )))
        }
    }
    Ok((kind, params))
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    command: &'static str,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

/// Reads a bare certificate or the `certificate` field of a `member` result.
pub fn read_certificate(text: &str) -> Result<CertificateRecord, CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::parse(format!("certificate JSON: {e}")))?;
    let inner = match value.get("certificate") {
        Some(c) => c.clone(),
        None => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::parse(format!("certificate schema: {e}")))
}

pub fn verify_cmd(problem: &ProblemFile, cert_text: &str, args: &VerifyArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    if args.common.format == Format::Csv {
        return Err(CliError::usage("verify writes JSON only"));
    }
    let record = read_certificate(cert_text)?;
    let mut opts = MembershipOptions::default();
    apply_tolerances(&mut opts, &args.common.tol)?;
    let cert = record
        .to_certificate()
        .map_err(|e| CliError::parse(format!("certificate schema: {e}")))?;
    let style = style_of(args.style, problem);
    let target = match (&args.target, &record.target) {
        (Some(t), _) => Some(target_arg(problem, t)?),
        (None, Some(_)) => None,
        (None, None) => return Err(CliError::usage("certificate records no target: pass --target")),
    };
    let probe = target.clone().unwrap_or_else(|| Polynomial::zero(&problem.vars));
    let (cone, restricted, _) = restrict(problem, &probe, &args.fibre, style, record.d)?;
    let target = match (target, &record.target) {
        (Some(_), _) => restricted,
        (None, Some(t)) => {
            Polynomial::parse(t, cone.vars()).map_err(|e| CliError::parse(format!("certificate target `{t}`: {e}")))?
        }
        (None, None) => unreachable!(),
    };
    let mut reason = None;
    let report = if cert.cone != cone {
        reason = Some(format!(
            "certificate cone {} does not match the problem cone {}",
            cert.cone, cone
        ));
        None
    } else {
        let r = verify_certificate(&cert, &target, &opts);
        if !r.passed {
            reason = Some(
                if r.psd_ok {
                    "residual above tolerance"
                } else {
                    "a Gram block is not PSD"
                }
                .into(),
            );
        }
        Some(r)
    };
    let passed = reason.is_none();
    let out = VerifyOutput {
        command: "verify",
        passed,
        reason,
        report,
        meta: meta(&args.common, start),
    };
    Ok(Outcome {
        exit: if passed { Exit::Ok } else { Exit::Negative },
        output: to_json(&out),
    })
}
