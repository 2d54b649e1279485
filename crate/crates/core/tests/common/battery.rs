//! Small SDPs with known answers. KKT residuals are recomputed here from the
//! problem data, independently of the solver's own residual report.

#![allow(dead_code)]

use nalgebra::DMatrix;
use posmod_core::sdp::{solve, BlockSpec, SdpProblem, SdpSolution, SdpStatus, SolverOptions, SymEntry};

pub const KKT_TOL: f64 = 1e-8;

fn blocks(sizes: &[usize]) -> SdpProblem {
    SdpProblem::new(
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| BlockSpec {
                name: format!("B{i}"),
                size: n,
            })
            .collect(),
    )
}

fn dense(p: &SdpProblem, entries: &[SymEntry]) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = p.blocks.iter().map(|b| DMatrix::zeros(b.size, b.size)).collect();
    for e in entries {
        out[e.block][(e.row, e.col)] += e.value;
        if e.row != e.col {
            out[e.block][(e.col, e.row)] += e.value;
        }
    }
    out
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn max_abs(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().fold(0.0, |a, m| a.max(m.amax()))
}

/// Relative primal, dual, gap and complementarity residuals plus the smallest
/// eigenvalue over all primal and dual blocks.
fn kkt(p: &SdpProblem, sol: &SdpSolution) -> ([f64; 4], f64) {
    let c = dense(p, &p.objective);
    let a: Vec<Vec<DMatrix<f64>>> = p.constraints.iter().map(|k| dense(p, &k.coeffs)).collect();
    let b: Vec<f64> = p.constraints.iter().map(|k| k.rhs).collect();
    let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pres = a
        .iter()
        .zip(&b)
        .map(|(ai, bi)| (inner(ai, &sol.primal) - bi).abs())
        .fold(0.0, f64::max)
        / (1.0 + bnorm);
    let mut r: Vec<DMatrix<f64>> = c.iter().zip(&sol.slack).map(|(ci, si)| ci - si).collect();
    for (ai, yi) in a.iter().zip(&sol.dual) {
        for (rk, ak) in r.iter_mut().zip(ai) {
            *rk -= ak * *yi;
        }
    }
    let dres = max_abs(&r) / (1.0 + max_abs(&c));
    let cx = inner(&c, &sol.primal);
    let by: f64 = b.iter().zip(&sol.dual).map(|(x, y)| x * y).sum();
    let gap = (cx - by).abs() / (1.0 + cx.abs() + by.abs());
    let comp = inner(&sol.primal, &sol.slack) / (1.0 + cx.abs() + by.abs());
    let eig = sol
        .primal
        .iter()
        .chain(&sol.slack)
        .map(min_eig)
        .fold(f64::INFINITY, f64::min);
    ([pres, dres, gap, comp], eig)
}

pub enum Expect {
    Optimal(f64),
    Infeasible,
}

pub struct Case {
    pub name: &'static str,
    pub label: &'static str,
    pub problem: SdpProblem,
    pub expect: Expect,
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Solves twice and checks status, KKT residuals or the Farkas vector, the
/// known optimum, and bitwise equality of the two runs.
pub fn check(case: &Case) -> Result<(), String> {
    match case.expect {
        Expect::Optimal(v) => check_optimal(case.label, &case.problem, v),
        Expect::Infeasible => check_infeasible(case.label, &case.problem),
    }
}

fn check_optimal(name: &str, p: &SdpProblem, expect: f64) -> Result<(), String> {
    let opts = SolverOptions::default();
    let sol = solve(p, &opts).map_err(|e| e.to_string())?;
    ensure!(
        sol.status == SdpStatus::Feasible,
        "{name}: status {:?}, {:?}",
        sol.status,
        sol.residuals
    );
    let (res, eig) = kkt(p, &sol);
    for (label, v) in ["primal", "dual", "gap", "complementarity"].iter().zip(res) {
        ensure!(v <= KKT_TOL, "{name}: {label} residual {v:e}");
    }
    ensure!(eig >= -opts.eig_tol, "{name}: min eigenvalue {eig:e}");
    ensure!(
        (sol.primal_objective - expect).abs() <= 1e-7 * (1.0 + expect.abs()),
        "{name}: objective {} vs {expect}",
        sol.primal_objective
    );
    let again = solve(p, &opts).map_err(|e| e.to_string())?;
    ensure!(again.status == sol.status, "{name}: status differs between runs");
    ensure!(
        again.primal_objective.to_bits() == sol.primal_objective.to_bits(),
        "{name}: objective differs between runs"
    );
    ensure!(again.primal == sol.primal, "{name}: primal differs between runs");
    Ok(())
}

fn check_infeasible(name: &str, p: &SdpProblem) -> Result<(), String> {
    let opts = SolverOptions::default();
    let sol = solve(p, &opts).map_err(|e| e.to_string())?;
    ensure!(sol.status == SdpStatus::Infeasible, "{name}: status {:?}", sol.status);
    let Some(f) = sol.farkas.as_ref() else {
        return Err(format!("{name}: no Farkas certificate"));
    };
    let b: Vec<f64> = p.constraints.iter().map(|k| k.rhs).collect();
    let by: f64 = b.iter().zip(&f.y).map(|(x, y)| x * y).sum();
    ensure!((by - 1.0).abs() < 1e-12, "{name}: b'y = {by}");
    let mut aty: Vec<DMatrix<f64>> = p.blocks.iter().map(|bl| DMatrix::zeros(bl.size, bl.size)).collect();
    for (k, yk) in p.constraints.iter().zip(&f.y) {
        for (m, a) in aty.iter_mut().zip(dense(p, &k.coeffs)) {
            *m += a * *yk;
        }
    }
    let scale = 1.0 + f.y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let viol = aty.iter().map(|m| -min_eig(&(-m))).fold(f64::NEG_INFINITY, f64::max);
    ensure!(viol <= KKT_TOL * scale, "{name}: A*(y) has eigenvalue {viol:e}");
    let again = solve(p, &opts).map_err(|e| e.to_string())?;
    ensure!(again.status == sol.status, "{name}: status differs between runs");
    ensure!(again.farkas == sol.farkas, "{name}: certificate differs between runs");
    Ok(())
}

fn e(block: usize, row: usize, col: usize, value: f64) -> SymEntry {
    SymEntry::new(block, row, col, value)
}

fn diag_objective(block: usize, d: &[f64]) -> Vec<SymEntry> {
    d.iter().enumerate().map(|(i, v)| e(block, i, i, *v)).collect()
}

fn trace(block: usize, n: usize) -> Vec<SymEntry> {
    diag_objective(block, &vec![1.0; n])
}

/// `min <A, X>` over `tr X = 1` is the smallest eigenvalue of `A`.
fn eigen_problem(a: &DMatrix<f64>) -> SdpProblem {
    let n = a.nrows();
    let mut p = blocks(&[n]);
    for i in 0..n {
        for j in i..n {
            if a[(i, j)] != 0.0 {
                p.objective.push(e(0, i, j, a[(i, j)]));
            }
        }
    }
    p.add_constraint(trace(0, n), 1.0);
    p
}

/// Lovasz theta as `min -<J, X>` over `tr X = 1`, `X_ij = 0` on edges.
fn theta(n: usize, edges: &[(usize, usize)]) -> SdpProblem {
    let mut p = blocks(&[n]);
    for i in 0..n {
        for j in i..n {
            p.objective.push(e(0, i, j, -1.0));
        }
    }
    p.add_constraint(trace(0, n), 1.0);
    for &(i, j) in edges {
        p.add_constraint(vec![e(0, i, j, 0.5)], 0.0);
    }
    p
}

pub fn battery() -> Vec<Case> {
    vec![
        d01_trace_with_fixed_corner(),
        d02_diagonal_cost_unit_trace(),
        d03_diagonal_cost_trace_two(),
        d04_two_scalar_blocks(),
        d05_scalar_lp_on_simplex(),
        d06_diagonal_blocks_mixed_sizes(),
        r07_rank_one_max_eigenvalue(),
        r08_rank_one_off_diagonal(),
        r09_rank_one_negative_coupling(),
        r10_min_eigenvalue_2x2(),
        r11_min_eigenvalue_3x3(),
        r12_lovasz_theta_pentagon(),
        r13_lovasz_theta_triangle(),
        r14_lovasz_theta_empty_graph(),
        r15_scaled_constraints_keep_status(),
        r16_pure_feasibility(),
        i17_negative_scalar(),
        i18_negative_trace(),
        i19_inconsistent_scalars(),
        i20_off_diagonal_too_large(),
    ]
}

fn d01_trace_with_fixed_corner() -> Case {
    let mut p = blocks(&[2]);
    p.objective = trace(0, 2);
    p.add_constraint(vec![e(0, 0, 0, 1.0)], 1.0);
    Case {
        name: "d01",
        label: "trace with X11 = 1",
        problem: p,
        expect: Expect::Optimal(1.0),
    }
}

fn d02_diagonal_cost_unit_trace() -> Case {
    let mut p = blocks(&[3]);
    p.objective = diag_objective(0, &[1.0, 2.0, 3.0]);
    p.add_constraint(trace(0, 3), 1.0);
    Case {
        name: "d02",
        label: "diag(1,2,3), tr X = 1",
        problem: p,
        expect: Expect::Optimal(1.0),
    }
}

fn d03_diagonal_cost_trace_two() -> Case {
    let mut p = blocks(&[3]);
    p.objective = diag_objective(0, &[3.0, 1.0, 2.0]);
    p.add_constraint(trace(0, 3), 2.0);
    Case {
        name: "d03",
        label: "diag(3,1,2), tr X = 2",
        problem: p,
        expect: Expect::Optimal(2.0),
    }
}

fn d04_two_scalar_blocks() -> Case {
    // min x + y  s.t.  x + 2y = 4
    let mut p = blocks(&[1, 1]);
    p.objective = vec![e(0, 0, 0, 1.0), e(1, 0, 0, 1.0)];
    p.add_constraint(vec![e(0, 0, 0, 1.0), e(1, 0, 0, 2.0)], 4.0);
    Case {
        name: "d04",
        label: "scalar LP",
        problem: p,
        expect: Expect::Optimal(2.0),
    }
}

fn d05_scalar_lp_on_simplex() -> Case {
    let mut p = blocks(&[1, 1]);
    p.objective = vec![e(0, 0, 0, 2.0), e(1, 0, 0, 3.0)];
    p.add_constraint(vec![e(0, 0, 0, 1.0), e(1, 0, 0, 1.0)], 1.0);
    Case {
        name: "d05",
        label: "simplex LP",
        problem: p,
        expect: Expect::Optimal(2.0),
    }
}

fn d06_diagonal_blocks_mixed_sizes() -> Case {
    // min tr X + 2 tr Y  s.t.  tr X + tr Y = 3
    let mut p = blocks(&[2, 3]);
    p.objective = trace(0, 2);
    p.objective.extend(diag_objective(1, &[2.0, 2.0, 2.0]));
    let mut c = trace(0, 2);
    c.extend(trace(1, 3));
    p.add_constraint(c, 3.0);
    Case {
        name: "d06",
        label: "two diagonal blocks",
        problem: p,
        expect: Expect::Optimal(3.0),
    }
}

fn r07_rank_one_max_eigenvalue() -> Case {
    // min -<a a', X>, tr X = 1 with a = (1, 2): value -|a|^2
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, -2.0, -4.0]);
    Case {
        name: "r07",
        label: "rank-one a a'",
        problem: eigen_problem(&a),
        expect: Expect::Optimal(-5.0),
    }
}

fn r08_rank_one_off_diagonal() -> Case {
    // min X11 + X22  s.t.  X12 = 1: optimum [[1,1],[1,1]]
    let mut p = blocks(&[2]);
    p.objective = trace(0, 2);
    p.add_constraint(vec![e(0, 0, 1, 0.5)], 1.0);
    Case {
        name: "r08",
        label: "X12 = 1",
        problem: p,
        expect: Expect::Optimal(2.0),
    }
}

fn r09_rank_one_negative_coupling() -> Case {
    let mut p = blocks(&[2]);
    p.objective = trace(0, 2);
    p.add_constraint(vec![e(0, 0, 1, 0.5)], -3.0);
    Case {
        name: "r09",
        label: "X12 = -3",
        problem: p,
        expect: Expect::Optimal(6.0),
    }
}

fn r10_min_eigenvalue_2x2() -> Case {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    Case {
        name: "r10",
        label: "lambda_min [[2,1],[1,2]]",
        problem: eigen_problem(&a),
        expect: Expect::Optimal(1.0),
    }
}

fn r11_min_eigenvalue_3x3() -> Case {
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
    // tridiagonal with eigenvalues 3 and 3 +- sqrt(3)
    Case {
        name: "r11",
        label: "lambda_min tridiagonal",
        problem: eigen_problem(&a),
        expect: Expect::Optimal(3.0 - 3f64.sqrt()),
    }
}

fn r12_lovasz_theta_pentagon() -> Case {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)];
    Case {
        name: "r12",
        label: "theta(C5)",
        problem: theta(5, &edges),
        expect: Expect::Optimal(-(5f64.sqrt())),
    }
}

fn r13_lovasz_theta_triangle() -> Case {
    Case {
        name: "r13",
        label: "theta(K3)",
        problem: theta(3, &[(0, 1), (1, 2), (0, 2)]),
        expect: Expect::Optimal(-1.0),
    }
}

fn r14_lovasz_theta_empty_graph() -> Case {
    Case {
        name: "r14",
        label: "theta(empty on 3)",
        problem: theta(3, &[]),
        expect: Expect::Optimal(-3.0),
    }
}

fn r15_scaled_constraints_keep_status() -> Case {
    let mut p = blocks(&[2]);
    p.objective = trace(0, 2);
    p.add_constraint(vec![e(0, 0, 0, 1e3)], 1e3);
    Case {
        name: "r15",
        label: "trace with X11 = 1, scaled by 1e3",
        problem: p,
        expect: Expect::Optimal(1.0),
    }
}

fn r16_pure_feasibility() -> Case {
    let mut p = blocks(&[2]);
    p.add_constraint(vec![e(0, 0, 0, 1.0)], 1.0);
    p.add_constraint(vec![e(0, 1, 1, 1.0)], 1.0);
    Case {
        name: "r16",
        label: "feasibility X11 = X22 = 1",
        problem: p,
        expect: Expect::Optimal(0.0),
    }
}

fn i17_negative_scalar() -> Case {
    let mut p = blocks(&[1]);
    p.add_constraint(vec![e(0, 0, 0, 1.0)], -1.0);
    Case {
        name: "i17",
        label: "x = -1",
        problem: p,
        expect: Expect::Infeasible,
    }
}

fn i18_negative_trace() -> Case {
    let mut p = blocks(&[2]);
    p.objective = trace(0, 2);
    p.add_constraint(trace(0, 2), -1.0);
    Case {
        name: "i18",
        label: "tr X = -1",
        problem: p,
        expect: Expect::Infeasible,
    }
}

fn i19_inconsistent_scalars() -> Case {
    let mut p = blocks(&[1, 1]);
    p.add_constraint(vec![e(0, 0, 0, 1.0), e(1, 0, 0, 1.0)], 1.0);
    p.add_constraint(vec![e(0, 0, 0, 1.0), e(1, 0, 0, 1.0)], 2.0);
    Case {
        name: "i19",
        label: "x + y = 1 and x + y = 2",
        problem: p,
        expect: Expect::Infeasible,
    }
}

fn i20_off_diagonal_too_large() -> Case {
    let mut p = blocks(&[2]);
    p.add_constraint(vec![e(0, 0, 0, 1.0)], 1.0);
    p.add_constraint(vec![e(0, 1, 1, 1.0)], 1.0);
    p.add_constraint(vec![e(0, 0, 1, 0.5)], 2.0);
    Case {
        name: "i20",
        label: "X11 = X22 = 1, X12 = 2",
        problem: p,
        expect: Expect::Infeasible,
    }
}
