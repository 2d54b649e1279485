//! Line-based problem files.
//!
//! ```text
//! # comments run to the end of the line
//! vars: x, y
//! mode: PO
//! gen: y^3
//! gen: y + x
//! target: y
//! d: 1
//! command: fibre-scan
//!
//! [fibre]
//! bounded: x in [-1, 1]
//! points: 9
//! d: 1
//! style: subst
//!
//! [optimize]
//! objective: 2y + x
//! epsilons: 1, 1/2
//! degrees: 1, 2
//! recipe: cylinder y
//! oracle: x in [-1, 1]
//! resolution: 41
//! ```
//!
//! Top-level keys come first; `[fibre]` and `[optimize]` open optional blocks.
//! Repeated keys (`gen`, `target`, `bounded`, `axis`, `oracle`) accumulate in order.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use posmod_core::fibre::{Bounded, FibreStyle, Grid};
use posmod_core::optimize::PerturbationKind;
use posmod_core::{ConeDescription, ConeMode, Polynomial};
use thiserror::Error;

/// Parse failure at a 1-based line and column.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}, column {column}: {message}")]
pub struct ProblemError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Command a bundled file is meant to be run with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Designated {
    Member,
    FibreScan,
    Optimize,
}

impl Designated {
    pub fn as_str(&self) -> &'static str {
        match self {
            Designated::Member => "member",
            Designated::FibreScan => "fibre-scan",
            Designated::Optimize => "optimize",
        }
    }
}

impl FromStr for Designated {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "member" => Ok(Designated::Member),
            "fibre-scan" => Ok(Designated::FibreScan),
            "optimize" => Ok(Designated::Optimize),
            other => Err(format!(
                "unknown command `{other}` (expected member, fibre-scan or optimize)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FibreBlock {
    pub bounded: Vec<Bounded>,
    pub grid: Option<Grid>,
    pub degree: Option<usize>,
    pub style: Option<FibreStyle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub kind: PerturbationKind,
    /// cylinder variable
    pub variable: Option<String>,
    /// user-supplied `q`
    pub q: Option<Polynomial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeBlock {
    pub objective: Polynomial,
    pub epsilons: Option<Vec<f64>>,
    pub degrees: Option<Vec<usize>>,
    pub recipe: Option<Recipe>,
    /// `(variable, lo, hi)` box for the grid oracle
    pub oracle: Vec<(String, f64, f64)>,
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub vars: Vec<String>,
    pub mode: ConeMode,
    pub generators: Vec<Polynomial>,
    pub targets: Vec<Polynomial>,
    pub degree: Option<usize>,
    pub command: Option<Designated>,
    pub fibre: Option<FibreBlock>,
    pub optimize: Option<OptimizeBlock>,
}

impl ProblemFile {
    pub fn cone(&self) -> ConeDescription {
        ConeDescription::new(&self.vars, self.generators.clone(), self.mode)
            .expect("generators share the declared vars")
    }

    /// Parses a polynomial over the declared variables.
    pub fn poly(&self, text: &str) -> Result<Polynomial, String> {
        Polynomial::parse(text, &self.vars).map_err(|e| format!("`{text}`: {e}"))
    }

    pub fn parse(text: &str) -> Result<Self, ProblemError> {
        Parser::default().run(text)
    }

    /// Canonical text form; `parse(&p.to_string())` gives back `p`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vars: {}", self.vars.join(", "));
        let _ = writeln!(out, "mode: {}", self.mode);
        for g in &self.generators {
            let _ = writeln!(out, "gen: {g}");
        }
        for t in &self.targets {
            let _ = writeln!(out, "target: {t}");
        }
        if let Some(d) = self.degree {
            let _ = writeln!(out, "d: {d}");
        }
        if let Some(c) = self.command {
            let _ = writeln!(out, "command: {}", c.as_str());
        }
        if let Some(f) = &self.fibre {
            out.push_str("\n[fibre]\n");
            for b in &f.bounded {
                let _ = writeln!(out, "bounded: {} in [{}, {}]", b.poly, b.lower, b.upper);
            }
            match &f.grid {
                Some(Grid::PointsPerAxis(n)) => {
                    let _ = writeln!(out, "points: {n}");
                }
                Some(Grid::Explicit(axes)) => {
                    for a in axes {
                        let _ = writeln!(out, "axis: {}", join(a));
                    }
                }
                None => {}
            }
            if let Some(d) = f.degree {
                let _ = writeln!(out, "d: {d}");
            }
            if let Some(s) = f.style {
                let _ = writeln!(out, "style: {}", style_text(s));
            }
        }
        if let Some(o) = &self.optimize {
            out.push_str("\n[optimize]\n");
            let _ = writeln!(out, "objective: {}", o.objective);
            if let Some(e) = &o.epsilons {
                let _ = writeln!(out, "epsilons: {}", join(e));
            }
            if let Some(d) = &o.degrees {
                let _ = writeln!(out, "degrees: {}", join(d));
            }
            if let Some(r) = &o.recipe {
                let _ = match (r.kind, &r.variable, &r.q) {
                    (PerturbationKind::Cylinder, Some(v), _) => writeln!(out, "recipe: cylinder {v}"),
                    (PerturbationKind::User, _, Some(q)) => writeln!(out, "recipe: user {q}"),
                    _ => writeln!(out, "recipe: monomial-squares"),
                };
            }
            for (v, lo, hi) in &o.oracle {
                let _ = writeln!(out, "oracle: {v} in [{lo}, {hi}]");
            }
            if let Some(n) = o.resolution {
                let _ = writeln!(out, "resolution: {n}");
            }
        }
        out
    }
}

impl fmt::Display for ProblemFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn style_text(s: FibreStyle) -> &'static str {
    match s {
        FibreStyle::Ideal => "ideal",
        FibreStyle::Substitution => "subst",
    }
}

/// Decimal or `p/q` number.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad number `{s}`"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad number `{s}`"))?;
            if q == 0.0 {
                return Err(format!("zero denominator in `{s}`"));
            }
            p / q
        }
        None => s.parse().map_err(|_| format!("bad number `{s}`"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("number `{s}` is not finite"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Top,
    Fibre,
    Optimize,
}

/// Key/value with the 1-based column of the value.
struct Field<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
    column: usize,
}

impl Field<'_> {
    fn err(&self, message: impl Into<String>) -> ProblemError {
        ProblemError {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn err_at(&self, offset: usize, message: impl Into<String>) -> ProblemError {
        ProblemError {
            line: self.line,
            column: self.column + offset,
            message: message.into(),
        }
    }
}

#[derive(Default)]
struct Parser {
    vars: Option<Vec<String>>,
    mode: Option<ConeMode>,
    generators: Vec<Polynomial>,
    targets: Vec<Polynomial>,
    degree: Option<usize>,
    command: Option<Designated>,
    fibre: Option<FibreParts>,
    optimize: Option<OptimizeParts>,
}

#[derive(Default)]
struct FibreParts {
    bounded: Vec<Bounded>,
    points: Option<usize>,
    axes: Vec<Vec<f64>>,
    degree: Option<usize>,
    style: Option<FibreStyle>,
    line: usize,
}

#[derive(Default)]
struct OptimizeParts {
    objective: Option<Polynomial>,
    epsilons: Option<Vec<f64>>,
    degrees: Option<Vec<usize>>,
    recipe: Option<Recipe>,
    oracle: Vec<(String, f64, f64)>,
    resolution: Option<usize>,
    line: usize,
}

fn set_once<T>(slot: &mut Option<T>, v: T, f: &Field) -> Result<(), ProblemError> {
    if slot.is_some() {
        return Err(f.err(format!("duplicate key `{}`", f.key)));
    }
    *slot = Some(v);
    Ok(())
}

impl Parser {
    fn run(mut self, text: &str) -> Result<ProblemFile, ProblemError> {
        let mut section = Section::Top;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            let indent = content.len() - content.trim_start().len();
            if trimmed.starts_with('[') {
                section = match trimmed {
                    "[fibre]" if self.fibre.is_none() => {
                        self.fibre = Some(FibreParts {
                            line,
                            ..Default::default()
                        });
                        Section::Fibre
                    }
                    "[optimize]" if self.optimize.is_none() => {
                        self.optimize = Some(OptimizeParts {
                            line,
                            ..Default::default()
                        });
                        Section::Optimize
                    }
                    "[fibre]" | "[optimize]" => {
                        return Err(ProblemError {
                            line,
                            column: indent + 1,
                            message: format!("duplicate section {trimmed}"),
                        })
                    }
                    other => {
                        return Err(ProblemError {
                            line,
                            column: indent + 1,
                            message: format!("unknown section {other} (expected [fibre] or [optimize])"),
                        })
                    }
                };
                continue;
            }
            let Some(colon) = content.find(':') else {
                return Err(ProblemError {
                    line,
                    column: indent + 1,
                    message: "expected `key: value`".into(),
                });
            };
            let key = content[..colon].trim();
            let after = &content[colon + 1..];
            let lead = after.len() - after.trim_start().len();
            let field = Field {
                line,
                key,
                value: after.trim(),
                column: colon + 2 + lead,
            };
            if field.value.is_empty() {
                return Err(field.err(format!("empty value for `{key}`")));
            }
            match section {
                Section::Top => self.top(&field)?,
                Section::Fibre => self.fibre_field(&field)?,
                Section::Optimize => self.optimize_field(&field)?,
            }
        }
        self.finish()
    }

    fn vars(&self, f: &Field) -> Result<&[String], ProblemError> {
        self.vars
            .as_deref()
            .ok_or_else(|| f.err("`vars` must come before any polynomial"))
    }

    fn poly(&self, f: &Field, text: &str, offset: usize) -> Result<Polynomial, ProblemError> {
        let vars = self.vars(f)?;
        Polynomial::parse(text, vars).map_err(|e| f.err_at(offset + e.column.saturating_sub(1), e.message))
    }

    fn number(&self, f: &Field, text: &str) -> Result<f64, ProblemError> {
        parse_number(text).map_err(|m| f.err(m))
    }

    fn count(&self, f: &Field) -> Result<usize, ProblemError> {
        f.value
            .parse()
            .map_err(|_| f.err(format!("`{}` expects a nonnegative integer, got `{}`", f.key, f.value)))
    }

    /// `<poly> in [lo, hi]`, returning the polynomial text and its bounds.
    fn interval<'a>(&self, f: &Field<'a>) -> Result<(&'a str, f64, f64), ProblemError> {
        let (lhs, rhs) = f
            .value
            .rsplit_once(" in ")
            .ok_or_else(|| f.err("expected `<polynomial> in [lo, hi]`"))?;
        let rhs = rhs.trim();
        let inner = rhs
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| f.err_at(lhs.len() + 4, "expected `[lo, hi]`"))?;
        let (lo, hi) = inner
            .split_once(',')
            .ok_or_else(|| f.err_at(lhs.len() + 4, "expected `[lo, hi]`"))?;
        let lo = self.number(f, lo)?;
        let hi = self.number(f, hi)?;
        if lo > hi {
            return Err(f.err_at(lhs.len() + 4, format!("empty interval [{lo}, {hi}]")));
        }
        Ok((lhs.trim_end(), lo, hi))
    }

    fn top(&mut self, f: &Field) -> Result<(), ProblemError> {
        match f.key {
            "vars" => {
                let vars: Vec<String> = f
                    .value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                for v in &vars {
                    if !v.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                        || !v.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    {
                        return Err(f.err(format!("bad variable name `{v}`")));
                    }
                }
                posmod_core::polynomial::validate_vars(&vars).map_err(|e| f.err(e.to_string()))?;
                set_once(&mut self.vars, vars, f)
            }
            "mode" => {
                let m = ConeMode::from_str(f.value).map_err(|e| f.err(e))?;
                set_once(&mut self.mode, m, f)
            }
            "gen" => {
                let p = self.poly(f, f.value, 0)?;
                self.generators.push(p);
                Ok(())
            }
            "target" => {
                let p = self.poly(f, f.value, 0)?;
                self.targets.push(p);
                Ok(())
            }
            "d" => {
                let d = self.count(f)?;
                set_once(&mut self.degree, d, f)
            }
            "command" => {
                let c = Designated::from_str(f.value).map_err(|e| f.err(e))?;
                set_once(&mut self.command, c, f)
            }
            other => Err(f.err(format!("unknown key `{other}`"))),
        }
    }

    fn fibre_field(&mut self, f: &Field) -> Result<(), ProblemError> {
        match f.key {
            "bounded" => {
                let (text, lower, upper) = self.interval(f)?;
                let poly = self.poly(f, text, 0)?;
                self.fibre
                    .as_mut()
                    .unwrap()
                    .bounded
                    .push(Bounded { poly, lower, upper });
                Ok(())
            }
            "points" => {
                let n = self.count(f)?;
                set_once(&mut self.fibre.as_mut().unwrap().points, n, f)
            }
            "axis" => {
                let axis = f
                    .value
                    .split(',')
                    .map(|s| self.number(f, s))
                    .collect::<Result<Vec<_>, _>>()?;
                self.fibre.as_mut().unwrap().axes.push(axis);
                Ok(())
            }
            "d" => {
                let d = self.count(f)?;
                set_once(&mut self.fibre.as_mut().unwrap().degree, d, f)
            }
            "style" => {
                let s = FibreStyle::from_str(f.value).map_err(|e| f.err(e))?;
                set_once(&mut self.fibre.as_mut().unwrap().style, s, f)
            }
            other => Err(f.err(format!("unknown key `{other}` in [fibre]"))),
        }
    }

    fn optimize_field(&mut self, f: &Field) -> Result<(), ProblemError> {
        match f.key {
            "objective" => {
                let p = self.poly(f, f.value, 0)?;
                set_once(&mut self.optimize.as_mut().unwrap().objective, p, f)
            }
            "epsilons" => {
                let e = f
                    .value
                    .split(',')
                    .map(|s| self.number(f, s))
                    .collect::<Result<Vec<_>, _>>()?;
                set_once(&mut self.optimize.as_mut().unwrap().epsilons, e, f)
            }
            "degrees" => {
                let d = f
                    .value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| f.err(format!("bad degree `{}`", s.trim())))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                set_once(&mut self.optimize.as_mut().unwrap().degrees, d, f)
            }
            "recipe" => {
                let (head, rest) = match f.value.split_once(char::is_whitespace) {
                    Some((h, r)) => (h, r.trim()),
                    None => (f.value, ""),
                };
                let kind = PerturbationKind::from_str(head).map_err(|e| f.err(e))?;
                let offset = f.value.len() - rest.len();
                let recipe = match kind {
                    PerturbationKind::Cylinder => {
                        if !self.vars(f)?.iter().any(|v| v == rest) {
                            return Err(f.err_at(offset, format!("cylinder needs a declared variable, got `{rest}`")));
                        }
                        Recipe {
                            kind,
                            variable: Some(rest.to_string()),
                            q: None,
                        }
                    }
                    PerturbationKind::User => Recipe {
                        kind,
                        variable: None,
                        q: Some(self.poly(f, rest, offset)?),
                    },
                    PerturbationKind::MonomialSquares => {
                        if !rest.is_empty() {
                            return Err(f.err_at(offset, "monomial-squares takes no argument"));
                        }
                        Recipe {
                            kind,
                            variable: None,
                            q: None,
                        }
                    }
                };
                set_once(&mut self.optimize.as_mut().unwrap().recipe, recipe, f)
            }
            "oracle" => {
                let (var, lo, hi) = self.interval(f)?;
                if !self.vars(f)?.iter().any(|v| v == var) {
                    return Err(f.err(format!("oracle bounds need a declared variable, got `{var}`")));
                }
                let o = self.optimize.as_mut().unwrap();
                if o.oracle.iter().any(|(v, _, _)| v == var) {
                    return Err(f.err(format!("duplicate oracle bounds for `{var}`")));
                }
                o.oracle.push((var.to_string(), lo, hi));
                Ok(())
            }
            "resolution" => {
                let n = self.count(f)?;
                set_once(&mut self.optimize.as_mut().unwrap().resolution, n, f)
            }
            other => Err(f.err(format!("unknown key `{other}` in [optimize]"))),
        }
    }

    fn finish(self) -> Result<ProblemFile, ProblemError> {
        let missing = |line: usize, message: &str| ProblemError {
            line,
            column: 1,
            message: message.into(),
        };
        let vars = self.vars.ok_or_else(|| missing(1, "missing `vars`"))?;
        let fibre = match self.fibre {
            None => None,
            Some(p) => {
                if p.bounded.is_empty() {
                    return Err(missing(p.line, "[fibre] needs at least one `bounded` line"));
                }
                let grid = match (p.points, p.axes.is_empty()) {
                    (Some(_), false) => return Err(missing(p.line, "[fibre] takes `points` or `axis`, not both")),
                    (Some(n), true) => Some(Grid::PointsPerAxis(n)),
                    (None, false) => Some(Grid::Explicit(p.axes)),
                    (None, true) => None,
                };
                Some(FibreBlock {
                    bounded: p.bounded,
                    grid,
                    degree: p.degree,
                    style: p.style,
                })
            }
        };
        let optimize = match self.optimize {
            None => None,
            Some(p) => Some(OptimizeBlock {
                objective: p
                    .objective
                    .ok_or_else(|| missing(p.line, "[optimize] needs an `objective`"))?,
                epsilons: p.epsilons,
                degrees: p.degrees,
                recipe: p.recipe,
                oracle: p.oracle,
                resolution: p.resolution,
            }),
        };
        Ok(ProblemFile {
            vars,
            mode: self.mode.unwrap_or(ConeMode::QuadraticModule),
            generators: self.generators,
            targets: self.targets,
            degree: self.degree,
            command: self.command,
            fibre,
            optimize,
        })
    }
}
