use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DMatrix;
use sns_core::baseline::build_cotan;
use sns_core::diffgeo::fundamental_forms_batch;
use sns_core::fields::{AnalyticField, FieldDomain, GeometryCache, LboForm};
use sns_core::mesh::icosphere;
use sns_core::mlp::{Mlp, MlpSpec};
use sns_core::sns::SnsModel;
use sns_core::sphere::uniform_sphere;

fn mlp(c: &mut Criterion) {
    let net = Mlp::new(MlpSpec::new(3, 3, 64, 4), 0).unwrap();
    let ps = uniform_sphere(1024, 1).points;
    let x = DMatrix::from_fn(3, ps.len(), |r, j| ps[j][r]);
    c.bench_function("mlp forward 64x4, 1024 points", |b| b.iter(|| net.forward_batch(black_box(&x)).unwrap()));
    c.bench_function("mlp jacobian 64x4, 1024 points", |b| b.iter(|| net.jacobian_batch(black_box(&x)).unwrap()));
    c.bench_function("mlp second order 64x4, 1024 points", |b| b.iter(|| net.second_order_batch(black_box(&x)).unwrap()));
}

fn geometry(c: &mut Criterion) {
    let model = SnsModel::init(64, 4, 0, "bench").unwrap();
    let ps = uniform_sphere(1024, 2).points;
    c.bench_function("fundamental forms, 1024 points", |b| b.iter(|| fundamental_forms_batch(&model, black_box(&ps)).unwrap()));

    let cache = GeometryCache::build(&model, &ps, "bench").unwrap();
    let field = AnalyticField::VariableSine { k0: 2.0, k1: 1.0 };
    for form in [LboForm::DivGrad, LboForm::MeanCurv] {
        c.bench_function(&format!("lbo {form:?}, 1024 cached points"), |b| {
            b.iter(|| cache.lbo(&field, FieldDomain::Ambient, form).unwrap())
        });
    }
}

fn cotan(c: &mut Criterion) {
    let mut group = c.benchmark_group("cotan");
    group.sample_size(20);
    for level in [3, 5] {
        let mesh = icosphere(level);
        group.bench_function(format!("build icosphere({level})"), |b| {
            b.iter_batched(|| mesh.clone(), |m| build_cotan(&m).unwrap(), BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, mlp, geometry, cotan);
criterion_main!(benches);
