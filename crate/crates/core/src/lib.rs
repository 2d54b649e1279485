//! Certificates for membership in truncated quadratic modules and preorderings,
//! fibre scans over bounded polynomials, and the perturbed level hierarchy for
//! polynomial optimization on possibly unbounded semialgebraic sets.

pub mod cone;
pub mod fibre;
pub mod membership;
pub mod optimize;
pub mod polynomial;
pub mod sdp;

pub use cone::{ConeDescription, ConeError, ConeMode, Label, Product, TruncatedCone};
pub use fibre::{fibre_scan, FibreScanReport, FibreSpec, FibreStyle, Grid, ScanOptions};
pub use membership::{
    DualFunctional, GramCertificate, Membership, MembershipError, MembershipOptions, MembershipStatus,
};
pub use optimize::{
    run_hierarchy, HierarchyOptions, HierarchyResult, LevelResult, LevelStatus, PerturbationKind, PerturbationRecipe,
};
pub use polynomial::{FloatPolynomial, Monomial, Polynomial, Rational};
pub use sdp::{SdpProblem, SdpSolution, SdpStatus, SolverOptions};
