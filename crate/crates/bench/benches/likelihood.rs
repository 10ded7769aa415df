use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mvplc_core::model::{box_probability, GhkNodes, Model, ModelSpec, PriorSpec, Variant};

fn ghk(c: &mut Criterion) {
    let l = [1.0, 0.0, 0.0, 0.4, 0.916_515_138_991_168, 0.0, 0.2, 0.3, 0.932_737_905_308_881_5];
    let lo = [-0.5, f64::NEG_INFINITY, 0.1];
    let hi = [f64::INFINITY, 0.7, 1.3];
    for m in [64, 256, 1024] {
        let nodes = GhkNodes::new(2, m, 1);
        c.bench_function(&format!("ghk_box_3d_m{m}"), |b| b.iter(|| box_probability(black_box(&lo), black_box(&hi), &l, &nodes, None)));
    }
}

fn gradient(c: &mut Criterion) {
    let data = mvplc_bench::dataset(1);
    for (variant, m) in [(Variant::M3, 256), (Variant::M4, 64), (Variant::M4, 256)] {
        let mut spec = ModelSpec::variant(variant, 3);
        spec.ghk_nodes = m;
        let model = Model::new(&data, spec, PriorSpec::default_for(data.tests(), 0)).expect("model");
        let x = vec![0.1; model.dim()];
        c.bench_function(&format!("log_density_gradient_{variant:?}_m{m}"), |b| b.iter(|| model.log_density_gradient(black_box(&x)).expect("finite")));
    }
}

criterion_group!(benches, ghk, gradient);
criterion_main!(benches);
