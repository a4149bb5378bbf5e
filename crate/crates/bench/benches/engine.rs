use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use sgbp_core::oracles::enumerate;
use sgbp_core::stability::LinearizedSweep;
use sgbp_core::{build_lattice, ActiveEdges, EngineConfig, LatticeSpec, MessagePlan, RegionLayout, Variant};

const BETA: f64 = 0.3;

fn cases() -> Vec<(&'static str, LatticeSpec, RegionLayout)> {
    vec![
        ("2d-L16-n2", LatticeSpec::ferromagnet(2, 16), RegionLayout::square_2d(2)),
        ("2d-L16-n4", LatticeSpec::ferromagnet(2, 16), RegionLayout::square_2d(4)),
        ("3d-L6", LatticeSpec::edwards_anderson(3, 6, 1), RegionLayout::cube_3d()),
    ]
}

fn sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    let config = EngineConfig {
        damping: 0.5,
        max_iters: 50,
        ..EngineConfig::default()
    };
    for (name, spec, layout) in cases() {
        let fg = build_lattice(&spec).unwrap();
        let rg = layout.build(&fg, &spec).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let state = plan.solve(BETA, &config).unwrap().state;
        group.bench_with_input(BenchmarkId::from_parameter(name), &state, |b, s| {
            b.iter(|| plan.sweep(black_box(s), BETA, &config).unwrap())
        });
    }
    group.finish();
}

fn jacobian_products(c: &mut Criterion) {
    let mut group = c.benchmark_group("jacobian_vector");
    group.sample_size(20);
    let config = EngineConfig {
        damping: 0.5,
        max_iters: 50,
        ..EngineConfig::default()
    };
    for (name, spec, layout) in cases() {
        let fg = build_lattice(&spec).unwrap();
        let rg = layout.build(&fg, &spec).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let state = plan.solve(BETA, &config).unwrap().state;
        let op = LinearizedSweep::new(&plan, &state, BETA, 1e-6).unwrap();
        let v: Vec<f64> = (0..op.dim()).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        group.bench_function(name, |b| b.iter(|| op.apply(black_box(&v)).unwrap()));
    }
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let fg = build_lattice(&LatticeSpec::ferromagnet(2, 4)).unwrap();
    c.bench_function("enumerate/2d-L4", |b| {
        b.iter(|| enumerate(black_box(&fg), BETA).unwrap())
    });
}

criterion_group!(benches, sweeps, jacobian_products, enumeration);
criterion_main!(benches);
