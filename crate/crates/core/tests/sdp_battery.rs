//! The analytic SDP battery plus one moment-system cross-check.

mod common;

use common::battery::{battery, check};
use posmod_core::cone::{assemble_dual_system, ConeDescription, ConeMode, TruncatedCone};
use posmod_core::sdp::{solve, SdpStatus, SolverOptions};
use posmod_core::Polynomial;

fn run(name: &str) {
    let case = battery().into_iter().find(|c| c.name == name).unwrap();
    if let Err(e) = check(&case) {
        panic!("{e}");
    }
}

#[test]
fn battery_has_twenty_problems() {
    assert_eq!(battery().len(), 20);
}

#[test]
fn d01_trace_with_fixed_corner() {
    run("d01");
}

#[test]
fn d02_diagonal_cost_unit_trace() {
    run("d02");
}

#[test]
fn d03_diagonal_cost_trace_two() {
    run("d03");
}

#[test]
fn d04_two_scalar_blocks() {
    run("d04");
}

#[test]
fn d05_scalar_lp_on_simplex() {
    run("d05");
}

#[test]
fn d06_diagonal_blocks_mixed_sizes() {
    run("d06");
}

#[test]
fn r07_rank_one_max_eigenvalue() {
    run("r07");
}

#[test]
fn r08_rank_one_off_diagonal() {
    run("r08");
}

#[test]
fn r09_rank_one_negative_coupling() {
    run("r09");
}

#[test]
fn r10_min_eigenvalue_2x2() {
    run("r10");
}

#[test]
fn r11_min_eigenvalue_3x3() {
    run("r11");
}

#[test]
fn r12_lovasz_theta_pentagon() {
    run("r12");
}

#[test]
fn r13_lovasz_theta_triangle() {
    run("r13");
}

#[test]
fn r14_lovasz_theta_empty_graph() {
    run("r14");
}

#[test]
fn r15_scaled_constraints_keep_status() {
    run("r15");
}

#[test]
fn r16_pure_feasibility() {
    run("r16");
}

#[test]
fn i17_negative_scalar() {
    run("i17");
}

#[test]
fn i18_negative_trace() {
    run("i18");
}

#[test]
fn i19_inconsistent_scalars() {
    run("i19");
}

#[test]
fn i20_off_diagonal_too_large() {
    run("i20");
}

/// Level `sup { r : Y - r in PO(Y^3, Y+1, 1-Y)_2 }`. Reference -1/15 from an
/// off-the-shelf conic solver on the moment formulation (Clarabel -0.0666668,
/// SCS -0.0666924).
#[test]
fn level_system_matches_external_solver() {
    let cone = ConeDescription::parse(&["y"], &["y^3", "y + 1", "1 - y"], ConeMode::Preordering).unwrap();
    let f = Polynomial::parse("y", &["y"]).unwrap();
    let sys = assemble_dual_system(&TruncatedCone::new(cone, 2), &f).unwrap();
    let sol = solve(&sys.sdp, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Feasible);
    let level = sys.level_from_objective(sol.primal_objective);
    assert!(level < 0.0);
    assert!((level + 1.0 / 15.0).abs() < 1e-6, "{level}");
}
