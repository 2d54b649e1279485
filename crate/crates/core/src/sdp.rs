//! Dense primal-dual interior point solver for small block-diagonal SDPs.
//!
//! Problems are in standard primal form
//!
//! ```text
//!   minimize   <C, X>
//!   subject to <A_i, X> = b_i,  i = 1..m
//!              X = diag(X_1, ..., X_k) PSD
//! ```
//!
//! with dual `maximize b'y  s.t.  sum_i y_i A_i + S = C,  S PSD`.
//!
//! The iteration runs on the homogeneous self-dual embedding, so every run ends in
//! one of: an optimal primal-dual pair, a Farkas certificate of primal
//! infeasibility (a dual improving ray), a primal improving ray (dual
//! infeasibility), or [`SdpStatus::Unknown`] with the residuals reached.
//! Search directions use Nesterov-Todd scaling with a Mehrotra
//! predictor-corrector and a dense Cholesky factorization of the Schur complement.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One upper-triangle entry of a block-diagonal symmetric matrix.
///
/// An off-diagonal entry `(row, col)` also stands for its mirror `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl SymEntry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        SymEntry { block, row, col, value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<SymEntry>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<BlockSpec>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<SymEntry>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("problem has no blocks")]
    NoBlocks,
    #[error("block {0} has size zero")]
    EmptyBlock(usize),
    #[error("entry ({block},{row},{col}) out of range")]
    EntryOutOfRange { block: usize, row: usize, col: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl SdpProblem {
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        SdpProblem {
            blocks,
            constraints: Vec::new(),
            objective: Vec::new(),
        }
    }

    pub fn add_block(&mut self, name: impl Into<String>, size: usize) -> usize {
        self.blocks.push(BlockSpec {
            name: name.into(),
            size,
        });
        self.blocks.len() - 1
    }

    pub fn add_constraint(&mut self, coeffs: Vec<SymEntry>, rhs: f64) {
        self.constraints.push(Constraint { coeffs, rhs });
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.blocks.is_empty() {
            return Err(SdpError::NoBlocks);
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.size == 0 {
                return Err(SdpError::EmptyBlock(k));
            }
        }
        let check = |e: &SymEntry, what: &str| -> Result<(), SdpError> {
            let size = self
                .blocks
                .get(e.block)
                .map(|b| b.size)
                .ok_or(SdpError::EntryOutOfRange {
                    block: e.block,
                    row: e.row,
                    col: e.col,
                })?;
            if e.row >= size || e.col >= size {
                return Err(SdpError::EntryOutOfRange {
                    block: e.block,
                    row: e.row,
                    col: e.col,
                });
            }
            if !e.value.is_finite() {
                return Err(SdpError::NonFinite(what.to_string()));
            }
            Ok(())
        };
        for e in &self.objective {
            check(e, "objective")?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(SdpError::NonFinite(format!("rhs {i}")));
            }
            for e in &c.coeffs {
                check(e, &format!("constraint {i}"))?;
            }
        }
        Ok(())
    }

    pub fn zero_blocks(&self) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|b| DMatrix::zeros(b.size, b.size)).collect()
    }

    /// `<M, X>` for a sparse symmetric `M`.
    pub fn sparse_inner(entries: &[SymEntry], x: &[DMatrix<f64>]) -> f64 {
        entries
            .iter()
            .map(|e| {
                let v = x[e.block][(e.row, e.col)];
                if e.row == e.col {
                    e.value * v
                } else {
                    2.0 * e.value * v
                }
            })
            .sum()
    }

    /// `A(X)`.
    pub fn apply_constraints(&self, x: &[DMatrix<f64>]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| Self::sparse_inner(&c.coeffs, x))
            .collect()
    }

    /// `sum_i y_i A_i`.
    pub fn adjoint(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out = self.zero_blocks();
        for (c, &yi) in self.constraints.iter().zip(y) {
            add_sparse(&mut out, &c.coeffs, yi);
        }
        out
    }

    pub fn objective_blocks(&self) -> Vec<DMatrix<f64>> {
        let mut out = self.zero_blocks();
        add_sparse(&mut out, &self.objective, 1.0);
        out
    }

    /// Sparse SDPA text, for cross-checking with external solvers.
    ///
    /// Layout, one item per line: `"`-prefixed comment, number of constraints `m`,
    /// number of blocks, block sizes, the `m` right-hand sides, then
    /// `matno blkno i j value` entries (1-based, `i <= j`) with `matno = 0` holding
    /// `-C` and `matno = k` holding `A_k`. SDPA maximizes `<F0, Y>` subject to
    /// `<F_k, Y> = c_k`, which is this problem with the objective negated.
    /// Floats are written as shortest round-trip decimals.
    pub fn to_sdpa(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "\"posmod SDP export");
        let _ = writeln!(s, "{}", self.constraints.len());
        let _ = writeln!(s, "{}", self.blocks.len());
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.size.to_string()).collect();
        let _ = writeln!(s, "{}", sizes.join(" "));
        let rhs: Vec<String> = self.constraints.iter().map(|c| fmt_f64(c.rhs)).collect();
        let _ = writeln!(s, "{}", rhs.join(" "));
        let mut emit = |mat: usize, entries: &[SymEntry], sign: f64| {
            for e in merge_entries(entries) {
                let _ = writeln!(
                    s,
                    "{} {} {} {} {}",
                    mat,
                    e.block + 1,
                    e.row + 1,
                    e.col + 1,
                    fmt_f64(sign * e.value)
                );
            }
        };
        emit(0, &self.objective, -1.0);
        for (k, c) in self.constraints.iter().enumerate() {
            emit(k + 1, &c.coeffs, 1.0);
        }
        s
    }
}

fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalize -0
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// Sums duplicate positions and drops zeros, ordered by (block, row, col).
pub fn merge_entries(entries: &[SymEntry]) -> Vec<SymEntry> {
    let mut v: Vec<SymEntry> = entries
        .iter()
        .map(|e| SymEntry::new(e.block, e.row, e.col, e.value))
        .collect();
    v.sort_by(|a, b| (a.block, a.row, a.col).cmp(&(b.block, b.row, b.col)));
    let mut out: Vec<SymEntry> = Vec::with_capacity(v.len());
    for e in v {
        match out.last_mut() {
            Some(last) if (last.block, last.row, last.col) == (e.block, e.row, e.col) => {
                last.value += e.value;
            }
            _ => out.push(e),
        }
    }
    out.retain(|e| e.value != 0.0);
    out
}

fn add_sparse(out: &mut [DMatrix<f64>], entries: &[SymEntry], scale: f64) {
    for e in entries {
        let v = scale * e.value;
        out[e.block][(e.row, e.col)] += v;
        if e.row != e.col {
            out[e.block][(e.col, e.row)] += v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub eig_tol: f64,
    /// relative residual accepted for Farkas certificates and improving rays
    #[serde(default = "default_infeas_tol")]
    pub infeas_tol: f64,
    pub max_iters: usize,
}

fn default_infeas_tol() -> f64 {
    1e-8
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            eig_tol: 1e-8,
            infeas_tol: default_infeas_tol(),
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SdpStatus {
    /// Primal and dual solutions within tolerance, zero gap.
    Feasible,
    /// The primal constraints admit no PSD solution; a Farkas certificate is attached.
    Infeasible,
    /// The dual is infeasible; a primal improving ray is attached.
    DualInfeasible,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// `||A(X) - b||_inf / (1 + ||b||_inf)`
    pub primal: f64,
    /// `||A*(y) + S - C||_max / (1 + ||C||_max)`
    pub dual: f64,
    /// `max(|<C,X> - b'y|, <X,S>) / (1 + |<C,X>| + |b'y|)`
    pub gap: f64,
}

/// `y` with `b'y = 1` and `sum_i y_i A_i` negative semidefinite up to `max_eigenvalue`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarkasCertificate {
    pub y: Vec<f64>,
    pub max_eigenvalue: f64,
}

/// `X` PSD with `<C,X> = -1` and `A(X)` small.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovingRay {
    pub x: Vec<DMatrix<f64>>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal: Vec<DMatrix<f64>>,
    pub dual: Vec<f64>,
    pub slack: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub farkas: Option<FarkasCertificate>,
    pub ray: Option<ImprovingRay>,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn objective(&self) -> f64 {
        self.primal_objective
    }
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for 0x0).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    -min_eigenvalue(&(-m))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Internal copy of the problem after dropping empty rows and normalizing.
struct Scaled {
    sizes: Vec<usize>,
    rows: Vec<Vec<SymEntry>>,
    b: DVector<f64>,
    c: Vec<SymEntry>,
    /// original index of each kept row
    kept: Vec<usize>,
    row_scale: Vec<f64>,
    beta: f64,
    gamma: f64,
}

impl Scaled {
    fn new(p: &SdpProblem) -> Result<Self, (usize, f64)> {
        let mut rows = Vec::new();
        let mut b = Vec::new();
        let mut kept = Vec::new();
        let mut row_scale = Vec::new();
        for (i, con) in p.constraints.iter().enumerate() {
            let merged = merge_entries(&con.coeffs);
            let norm = merged
                .iter()
                .map(|e| {
                    let w = if e.row == e.col { 1.0 } else { 2.0 };
                    w * e.value * e.value
                })
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                if con.rhs != 0.0 {
                    return Err((i, con.rhs));
                }
                continue;
            }
            rows.push(
                merged
                    .into_iter()
                    .map(|e| SymEntry {
                        value: e.value / norm,
                        ..e
                    })
                    .collect(),
            );
            b.push(con.rhs / norm);
            kept.push(i);
            row_scale.push(norm);
        }
        let bmax = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let beta = bmax.max(1.0);
        let c = merge_entries(&p.objective);
        let cmax = c.iter().fold(0.0f64, |a, e| a.max(e.value.abs()));
        let gamma = cmax.max(1.0);
        Ok(Scaled {
            sizes: p.blocks.iter().map(|b| b.size).collect(),
            rows,
            b: DVector::from_iterator(b.len(), b.into_iter().map(|v| v / beta)),
            c: c.into_iter()
                .map(|e| SymEntry {
                    value: e.value / gamma,
                    ..e
                })
                .collect(),
            kept,
            row_scale,
            beta,
            gamma,
        })
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn zeros(&self) -> Vec<DMatrix<f64>> {
        self.sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect()
    }

    fn identity(&self) -> Vec<DMatrix<f64>> {
        self.sizes.iter().map(|&n| DMatrix::identity(n, n)).collect()
    }

    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.rows.iter().map(|r| SdpProblem::sparse_inner(r, x)))
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out = self.zeros();
        for (r, &yi) in self.rows.iter().zip(y.iter()) {
            add_sparse(&mut out, r, yi);
        }
        out
    }

    fn cmat(&self) -> Vec<DMatrix<f64>> {
        let mut out = self.zeros();
        add_sparse(&mut out, &self.c, 1.0);
        out
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn axpy(out: &mut [DMatrix<f64>], alpha: f64, x: &[DMatrix<f64>]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v * alpha;
    }
}

fn lin(a: &[DMatrix<f64>], alpha: f64, b: &[DMatrix<f64>], beta: f64) -> Vec<DMatrix<f64>> {
    a.iter().zip(b).map(|(x, y)| x * alpha + y * beta).collect()
}

fn fro(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

/// Per-block Nesterov-Todd scaling: `R' S R = R^{-1} X R^{-T} = diag(lambda)`.
struct NtScaling {
    r: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = Cholesky::new(symmetrize(x))?.l();
    let ls = Cholesky::new(symmetrize(s))?.l();
    let prod = ls.transpose() * &lx;
    let svd = prod.svd(false, true);
    let v_t = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt()));
    let r = lx * v_t.transpose() * inv_sqrt;
    let w = &r * r.transpose();
    Some(NtScaling { r, w, lambda })
}

/// Solves `Lambda o Z = T` for diagonal `Lambda`, where `A o B = (AB + BA)/2`.
fn lyap_diag(lambda: &DVector<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lambda.len();
    DMatrix::from_fn(n, n, |i, j| 2.0 * t[(i, j)] / (lambda[i] + lambda[j]))
}

/// Largest `alpha <= 1/limit` keeping `Lambda + alpha*D` PSD, for diagonal `Lambda`.
fn max_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let scaled = DMatrix::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i].sqrt() * lambda[j].sqrt()));
    let lmin = min_eigenvalue(&scaled);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dtau: f64,
    dkappa: f64,
    /// scaled directions, kept for the corrector term
    dx_scaled: Vec<DMatrix<f64>>,
    ds_scaled: Vec<DMatrix<f64>>,
}

/// State of the homogeneous iteration.
#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

const STALL_ITERS: usize = 8;
/// below this complementarity the directions are too inaccurate to keep going
const STALL_MU: f64 = 1e-10;

/// Solves `p`. Deterministic: fixed starting point, no randomization.
pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let scaled = match Scaled::new(p) {
        Ok(s) => s,
        Err((row, rhs)) => return Ok(trivially_infeasible(p, row, rhs)),
    };
    Ok(Solver::new(p, scaled, *opts).run())
}

fn trivially_infeasible(p: &SdpProblem, row: usize, rhs: f64) -> SdpSolution {
    let mut y = vec![0.0; p.constraints.len()];
    y[row] = 1.0 / rhs;
    SdpSolution {
        status: SdpStatus::Infeasible,
        primal: p.zero_blocks(),
        dual: vec![0.0; p.constraints.len()],
        slack: p.zero_blocks(),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        residuals: Residuals::default(),
        farkas: Some(FarkasCertificate { y, max_eigenvalue: 0.0 }),
        ray: None,
        iterations: 0,
    }
}

struct Solver<'a> {
    orig: &'a SdpProblem,
    sc: Scaled,
    opts: SolverOptions,
    cmat: Vec<DMatrix<f64>>,
    dim: f64,
}

impl<'a> Solver<'a> {
    fn new(orig: &'a SdpProblem, sc: Scaled, opts: SolverOptions) -> Self {
        let cmat = sc.cmat();
        let dim = sc.sizes.iter().sum::<usize>() as f64;
        Solver {
            orig,
            sc,
            opts,
            cmat,
            dim,
        }
    }

    fn run(&self) -> SdpSolution {
        let mut it = Iterate {
            x: self.sc.identity(),
            y: DVector::zeros(self.sc.m()),
            s: self.sc.identity(),
            tau: 1.0,
            kappa: 1.0,
        };
        // accuracy of the Newton directions collapses once mu is far below
        // the attainable residuals, so keep the best iterate seen
        let mut best = (f64::INFINITY, it.clone(), 0);
        let mut iter = 0;
        while iter < self.opts.max_iters {
            if let Some(sol) = self.check_termination(&it, iter) {
                return sol;
            }
            let merit = self.merit(&it);
            if merit < best.0 {
                best = (merit, it.clone(), iter);
            } else if iter >= best.2 + STALL_ITERS && self.mu(&it) < STALL_MU {
                break;
            }
            match self.step(&mut it) {
                Some(alpha) if alpha > 1e-12 => {}
                _ => break,
            }
            iter += 1;
        }
        if let Some(sol) = self.check_termination(&it, iter) {
            return sol;
        }
        if self.merit(&it) < best.0 {
            return self.unknown(&it, iter);
        }
        self.unknown(&best.1, iter)
    }

    /// Worst residual relative to its tolerance.
    fn merit(&self, it: &Iterate) -> f64 {
        if !(it.tau > 0.0) {
            return f64::INFINITY;
        }
        let (x, y, s) = self.unscale(it);
        let (res, _, _) = self.original_residuals(&x, &y, &s);
        (res.primal / self.opts.feas_tol)
            .max(res.dual / self.opts.feas_tol)
            .max(res.gap / self.opts.gap_tol)
    }

    fn mu(&self, it: &Iterate) -> f64 {
        (inner(&it.x, &it.s) + it.tau * it.kappa) / (self.dim + 1.0)
    }

    /// Primal/dual solution in original units from the current iterate.
    fn unscale(&self, it: &Iterate) -> (Vec<DMatrix<f64>>, Vec<f64>, Vec<DMatrix<f64>>) {
        let sc = &self.sc;
        let x: Vec<_> = it.x.iter().map(|m| symmetrize(m) * (sc.beta / it.tau)).collect();
        let mut y = vec![0.0; self.orig.constraints.len()];
        for (k, &orig_i) in sc.kept.iter().enumerate() {
            y[orig_i] = sc.gamma * it.y[k] / (sc.row_scale[k] * it.tau);
        }
        let s: Vec<_> = it.s.iter().map(|m| symmetrize(m) * (sc.gamma / it.tau)).collect();
        (x, y, s)
    }

    fn original_residuals(&self, x: &[DMatrix<f64>], y: &[f64], s: &[DMatrix<f64>]) -> (Residuals, f64, f64) {
        let p = self.orig;
        let ax = p.apply_constraints(x);
        let bmax = p.constraints.iter().fold(0.0f64, |a, c| a.max(c.rhs.abs()));
        let pres = ax
            .iter()
            .zip(&p.constraints)
            .fold(0.0f64, |a, (v, c)| a.max((v - c.rhs).abs()))
            / (1.0 + bmax);
        let c = p.objective_blocks();
        let cmax = c.iter().fold(0.0f64, |a, m| a.max(m.amax()));
        let aty = p.adjoint(y);
        let dres = aty
            .iter()
            .zip(s)
            .zip(&c)
            .fold(0.0f64, |a, ((u, v), w)| a.max((u + v - w).amax()))
            / (1.0 + cmax);
        let pobj = inner(&c, x);
        let dobj: f64 = p.constraints.iter().zip(y).map(|(c, yi)| c.rhs * yi).sum();
        // duality gap and complementarity differ by the infeasibilities; bound both
        let xs = inner(x, s).abs();
        let gap = (pobj - dobj).abs().max(xs) / (1.0 + pobj.abs() + dobj.abs());
        (
            Residuals {
                primal: pres,
                dual: dres,
                gap,
            },
            pobj,
            dobj,
        )
    }

    fn check_termination(&self, it: &Iterate, iter: usize) -> Option<SdpSolution> {
        let sc = &self.sc;
        let tol = self.opts.feas_tol;
        if it.tau > 0.0 {
            let (x, y, s) = self.unscale(it);
            let (res, pobj, dobj) = self.original_residuals(&x, &y, &s);
            if res.primal <= tol && res.dual <= tol && res.gap <= self.opts.gap_tol {
                return Some(SdpSolution {
                    status: SdpStatus::Feasible,
                    primal: x,
                    dual: y,
                    slack: s,
                    primal_objective: pobj,
                    dual_objective: dobj,
                    residuals: res,
                    farkas: None,
                    ray: None,
                    iterations: iter,
                });
            }
        }
        // primal infeasibility: b'y > 0 with A*(y) <= 0
        let by = sc.b.dot(&it.y);
        if by > 0.0 {
            let mut y = vec![0.0; self.orig.constraints.len()];
            for (k, &orig_i) in sc.kept.iter().enumerate() {
                y[orig_i] = it.y[k] / sc.row_scale[k];
            }
            let bty: f64 = self.orig.constraints.iter().zip(&y).map(|(c, v)| c.rhs * v).sum();
            if bty > 0.0 {
                for v in &mut y {
                    *v /= bty;
                }
                let aty = self.orig.adjoint(&y);
                let viol = aty.iter().map(max_eigenvalue).fold(f64::NEG_INFINITY, f64::max);
                let scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if viol <= self.opts.infeas_tol * scale && it.tau < it.kappa {
                    return Some(SdpSolution {
                        status: SdpStatus::Infeasible,
                        primal: self.orig.zero_blocks(),
                        dual: vec![0.0; y.len()],
                        slack: self.orig.zero_blocks(),
                        primal_objective: f64::NAN,
                        dual_objective: f64::NAN,
                        residuals: Residuals::default(),
                        farkas: Some(FarkasCertificate {
                            y,
                            max_eigenvalue: viol.max(0.0),
                        }),
                        ray: None,
                        iterations: iter,
                    });
                }
            }
        }
        // dual infeasibility: <C,X> < 0 with A(X) = 0
        let cx = inner(&self.cmat, &it.x);
        if cx < 0.0 && it.tau < it.kappa {
            let scale = -cx * sc.gamma;
            let x: Vec<_> = it.x.iter().map(|m| symmetrize(m) / (-cx)).collect();
            let ax = self.orig.apply_constraints(&x);
            let residual = ax.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let xmax = x.iter().fold(0.0f64, |a, m| a.max(m.amax()));
            if residual <= self.opts.infeas_tol * (1.0 + xmax) && scale > 0.0 {
                // rescale so that <C,X> = -1 in original units
                let x: Vec<_> = x.iter().map(|m| m / sc.gamma).collect();
                let residual = residual / sc.gamma;
                return Some(SdpSolution {
                    status: SdpStatus::DualInfeasible,
                    primal: self.orig.zero_blocks(),
                    dual: vec![0.0; self.orig.constraints.len()],
                    slack: self.orig.zero_blocks(),
                    primal_objective: f64::NEG_INFINITY,
                    dual_objective: f64::NAN,
                    residuals: Residuals::default(),
                    farkas: None,
                    ray: Some(ImprovingRay { x, residual }),
                    iterations: iter,
                });
            }
        }
        None
    }

    fn unknown(&self, it: &Iterate, iter: usize) -> SdpSolution {
        let (x, y, s) = if it.tau > 0.0 {
            self.unscale(it)
        } else {
            (
                self.orig.zero_blocks(),
                vec![0.0; self.orig.constraints.len()],
                self.orig.zero_blocks(),
            )
        };
        let (res, pobj, dobj) = self.original_residuals(&x, &y, &s);
        SdpSolution {
            status: SdpStatus::Unknown,
            primal: x,
            dual: y,
            slack: s,
            primal_objective: pobj,
            dual_objective: dobj,
            residuals: res,
            farkas: None,
            ray: None,
            iterations: iter,
        }
    }

    /// One predictor-corrector step; returns the step length or `None` on breakdown.
    fn step(&self, it: &mut Iterate) -> Option<f64> {
        let sc = &self.sc;
        let nt: Vec<NtScaling> =
            it.x.iter()
                .zip(&it.s)
                .map(|(x, s)| nt_scaling(x, s))
                .collect::<Option<_>>()?;
        let w: Vec<DMatrix<f64>> = nt.iter().map(|n| n.w.clone()).collect();

        // Schur complement M_ij = <A_i, W A_j W>
        let m = sc.m();
        let wajw: Vec<Vec<DMatrix<f64>>> = sc.rows.iter().map(|r| congruence_sparse(&w, r)).collect();
        let mut schur = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in j..m {
                let v = SdpProblem::sparse_inner(&sc.rows[i], &wajw[j]);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        let chol = factor_schur(schur.clone())?;
        // one step of iterative refinement against the unregularized matrix
        let solve_m = |h: &DVector<f64>| -> DVector<f64> {
            let mut u = chol.solve(h);
            let r = h - &schur * &u;
            u += chol.solve(&r);
            u
        };

        let wcw: Vec<DMatrix<f64>> = w.iter().zip(&self.cmat).map(|(w, c)| w * c * w).collect();
        let a_wcw = sc.apply(&wcw);
        let h2 = &sc.b + &a_wcw;
        let v = solve_m(&h2);
        let c_wcw = inner(&self.cmat, &wcw);

        // residuals
        let rp = sc.apply(&it.x) - &sc.b * it.tau;
        let aty = sc.adjoint(&it.y);
        let rd: Vec<DMatrix<f64>> = aty
            .iter()
            .zip(&it.s)
            .zip(&self.cmat)
            .map(|((a, s), c)| a + s - c * it.tau)
            .collect();
        let rg = inner(&self.cmat, &it.x) - sc.b.dot(&it.y) + it.kappa;
        let mu = self.mu(it);

        let solve_dir = |eta: f64, target: f64, corr: Option<(&Direction, f64)>| -> Direction {
            // rhs of the scaled complementarity equation
            let rc: Vec<DMatrix<f64>> = nt
                .iter()
                .enumerate()
                .map(|(k, n)| {
                    let l = &n.lambda;
                    let dim = l.len();
                    let mut t = DMatrix::from_fn(dim, dim, |i, j| {
                        let mut v = 0.0;
                        if i == j {
                            v += target - l[i] * l[i];
                        }
                        v
                    });
                    if let Some((d, _)) = corr {
                        let a = &d.dx_scaled[k];
                        let b = &d.ds_scaled[k];
                        t -= (a * b + b * a) * 0.5;
                    }
                    lyap_diag(l, &t)
                })
                .collect();
            let tk_rhs = target - it.tau * it.kappa - corr.map(|(_, c)| c).unwrap_or(0.0);

            let e_const: Vec<DMatrix<f64>> = nt
                .iter()
                .zip(&rc)
                .zip(&rd)
                .map(|((n, rc), rd)| &n.r * rc * n.r.transpose() + &n.w * rd * &n.w * eta)
                .collect();
            let h1 = -(&rp * eta) - sc.apply(&e_const);
            let u = solve_m(&h1);
            let c_e = inner(&self.cmat, &e_const) + a_wcw.dot(&u);
            let c_f = a_wcw.dot(&v) - c_wcw;
            let denom = c_f - sc.b.dot(&v) - it.kappa / it.tau;
            let numer = -eta * rg - c_e + sc.b.dot(&u) - tk_rhs / it.tau;
            let dtau = numer / denom;
            let dy = &u + &v * dtau;
            let atdy = sc.adjoint(&dy);
            let ds: Vec<DMatrix<f64>> = rd
                .iter()
                .zip(&atdy)
                .zip(&self.cmat)
                .map(|((rd, a), c)| -(rd * eta) - a + c * dtau)
                .collect();
            let ds_scaled: Vec<DMatrix<f64>> = nt
                .iter()
                .zip(&ds)
                .map(|(n, d)| symmetrize(&(n.r.transpose() * d * &n.r)))
                .collect();
            let dx_scaled: Vec<DMatrix<f64>> = rc.iter().zip(&ds_scaled).map(|(r, d)| r - d).collect();
            let dx: Vec<DMatrix<f64>> = nt
                .iter()
                .zip(&dx_scaled)
                .map(|(n, d)| symmetrize(&(&n.r * d * n.r.transpose())))
                .collect();
            let dkappa = (tk_rhs - it.kappa * dtau) / it.tau;
            Direction {
                dx,
                dy,
                ds,
                dtau,
                dkappa,
                dx_scaled,
                ds_scaled,
            }
        };

        let step_len = |d: &Direction| -> f64 {
            let mut a = f64::INFINITY;
            for (k, n) in nt.iter().enumerate() {
                a = a.min(max_step(&n.lambda, &d.dx_scaled[k]));
                a = a.min(max_step(&n.lambda, &d.ds_scaled[k]));
            }
            if d.dtau < 0.0 {
                a = a.min(-it.tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-it.kappa / d.dkappa);
            }
            a
        };

        // predictor
        let aff = solve_dir(1.0, 0.0, None);
        let alpha_aff = step_len(&aff).min(1.0);
        let x_aff = lin(&it.x, 1.0, &aff.dx, alpha_aff);
        let s_aff = lin(&it.s, 1.0, &aff.ds, alpha_aff);
        let mu_aff = (inner(&x_aff, &s_aff) + (it.tau + alpha_aff * aff.dtau) * (it.kappa + alpha_aff * aff.dkappa))
            / (self.dim + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let dir = solve_dir(1.0 - sigma, sigma * mu, Some((&aff, aff.dtau * aff.dkappa)));
        let alpha = (0.99 * step_len(&dir)).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            return None;
        }
        axpy(&mut it.x, alpha, &dir.dx);
        axpy(&mut it.s, alpha, &dir.ds);
        it.y += &dir.dy * alpha;
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
        for m in it.x.iter_mut().chain(it.s.iter_mut()) {
            *m = symmetrize(m);
        }
        // keep tau/kappa well inside the positive orthant
        if !(it.tau > 0.0 && it.kappa > 0.0) || !fro(&it.x).is_finite() {
            return None;
        }
        // rescale the homogeneous iterate when it drifts in magnitude
        let scale = it.tau + it.kappa + fro(&it.x).max(fro(&it.s));
        if scale > 1e8 {
            let f = 1.0 / scale;
            for m in it.x.iter_mut().chain(it.s.iter_mut()) {
                *m *= f;
            }
            it.y *= f;
            it.tau *= f;
            it.kappa *= f;
        }
        Some(alpha)
    }
}

/// `W A W` for a sparse symmetric `A`, block by block.
fn congruence_sparse(w: &[DMatrix<f64>], entries: &[SymEntry]) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = w.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
    for e in entries {
        let wb = &w[e.block];
        let cr = wb.column(e.row);
        let cc = wb.column(e.col);
        let o = &mut out[e.block];
        if e.row == e.col {
            o.ger(e.value, &cr, &cr, 1.0);
        } else {
            o.ger(e.value, &cr, &cc, 1.0);
            o.ger(e.value, &cc, &cr, 1.0);
        }
    }
    out
}

fn factor_schur(m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if m.nrows() == 0 {
        return Cholesky::new(m);
    }
    let scale = m.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut t = m.clone();
        if reg > 0.0 {
            for i in 0..t.nrows() {
                t[(i, i)] += reg;
            }
        }
        if let Some(c) = Cholesky::new(t) {
            return Some(c);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}
