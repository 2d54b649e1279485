use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use posmod_bench::{counterexample, fibre_at_one, poly, strip_m2};
use posmod_core::fibre::{fibre_scan, Bounded, FibreSpec, Grid, ScanOptions};
use posmod_core::membership::test_membership;
use posmod_core::optimize::{
    build_perturbation, run_hierarchy, HierarchyOptions, PerturbationKind, PerturbationParams,
};
use posmod_core::{MembershipOptions, TruncatedCone};

fn nonmembership(c: &mut Criterion) {
    let opts = MembershipOptions::default();
    let f = poly("y", &["y"]);
    let mut g = c.benchmark_group("nonmembership_y");
    for d in 1..=4 {
        let tc = TruncatedCone::new(fibre_at_one(), d);
        g.bench_with_input(BenchmarkId::from_parameter(d), &tc, |b, tc| {
            b.iter(|| test_membership(tc, &f, &opts).unwrap())
        });
    }
    g.finish();
}

fn membership(c: &mut Criterion) {
    let opts = MembershipOptions::default();
    let f = poly("2y + x", &["x", "y"]);
    let mut g = c.benchmark_group("membership_2y_plus_x");
    g.sample_size(10);
    for d in 1..=2 {
        let tc = TruncatedCone::new(counterexample(), d);
        g.bench_with_input(BenchmarkId::from_parameter(d), &tc, |b, tc| {
            b.iter(|| test_membership(tc, &f, &opts).unwrap())
        });
    }
    g.finish();
}

fn scan(c: &mut Criterion) {
    let vars = ["x", "y"];
    let spec = FibreSpec::new(
        vec![Bounded {
            poly: poly("x", &vars),
            lower: -1.0,
            upper: 1.0,
        }],
        Grid::PointsPerAxis(9),
        1,
    )
    .unwrap();
    let targets = [poly("y", &vars), poly("2y + x", &vars)];
    let opts = ScanOptions::default();
    let mut g = c.benchmark_group("fibre_scan");
    g.sample_size(10);
    g.bench_function("counterexample_9_points_d1", |b| {
        b.iter(|| fibre_scan(&counterexample(), &spec, &targets, &opts).unwrap())
    });
    g.finish();
}

fn hierarchy(c: &mut Criterion) {
    let opts = HierarchyOptions::default();
    let f = poly("x y", &["x", "y"]);
    let recipe = build_perturbation(
        &f,
        PerturbationKind::MonomialSquares,
        &PerturbationParams::default(),
        &opts.membership,
    )
    .unwrap();
    let mut g = c.benchmark_group("hierarchy");
    g.sample_size(10);
    g.bench_function("xy_on_m2_3x3", |b| {
        b.iter(|| run_hierarchy(&strip_m2(), &f, &recipe, &[0.1, 0.01, 1e-4], &[1, 2, 3], &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, nonmembership, membership, scan, hierarchy);
criterion_main!(benches);
