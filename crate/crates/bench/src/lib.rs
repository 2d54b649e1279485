//! Shared fixtures for the benchmarks.

use posmod_core::{ConeDescription, ConeMode, Polynomial};

pub fn fibre_at_one() -> ConeDescription {
    ConeDescription::parse(&["y"], &["y^3", "y + 1", "1 - y"], ConeMode::Preordering).expect("fixture")
}

pub fn counterexample() -> ConeDescription {
    ConeDescription::parse(
        &["x", "y"],
        &["y^3", "y + x", "1 - x y", "1 - x^2"],
        ConeMode::Preordering,
    )
    .expect("fixture")
}

pub fn strip_m2() -> ConeDescription {
    ConeDescription::parse(&["x", "y"], &["x", "y", "x y", "1 - x y"], ConeMode::QuadraticModule).expect("fixture")
}

pub fn poly(text: &str, vars: &[&str]) -> Polynomial {
    Polynomial::parse(text, vars).expect("fixture")
}
