use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use latentfair::classify::{ClassifierModel, Space, Target};
use latentfair::fairmetrics::{average_precision, roc_auc};
use latentfair::ndcore::{Activation, Mlp, ParamStore, Tape};
use latentfair::stylegen::{GeneratorModel, GeneratorShape, StyleLayout, StyleStack};
use latentfair::traverse::{LatentClassifiers, Objective, TraversalConfig};
use latentfair::{Rng, Subgroup, Tensor};

fn tensors(c: &mut Criterion) {
    let mut rng = Rng::new(1, 0);
    let a = Tensor::matrix(128, 64, rng.normals(128 * 64)).unwrap();
    let b = Tensor::matrix(64, 64, rng.normals(64 * 64)).unwrap();
    c.bench_function("matmul_128x64x64", |bch| bch.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));

    let mut store = ParamStore::new();
    let net = Mlp::init(&mut store, "m", &[64, 64, 64, 1], Activation::LeakyRelu, &mut rng);
    c.bench_function("mlp_forward_backward_128", |bch| {
        bch.iter(|| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let x = tape.constant(a.clone());
            let out = net.forward(&mut tape, &bound, x).unwrap();
            let loss = tape.l2_norm_sq(out).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn generator(c: &mut Criterion) {
    let mut rng = Rng::new(2, 0);
    let g = GeneratorModel::new(GeneratorShape::default(), &mut rng);
    let stacks: Vec<StyleStack> = (0..256).map(|_| StyleStack::shared(rng.normals(32), 2)).collect();
    c.bench_function("generate_batch_256", |bch| bch.iter(|| g.generate_batch(black_box(&stacks)).unwrap()));
}

fn traversal(c: &mut Criterion) {
    let mut rng = Rng::new(3, 0);
    let space = Space::Latent { layout: StyleLayout::Shared };
    let d = ClassifierModel::new(Target::Disease, space, 32, &[64, 64], &mut rng);
    let s = ClassifierModel::new(Target::Subgroup, space, 32, &[64, 64], &mut rng);
    let clfs = LatentClassifiers::new(&d, &s).unwrap();
    let w0 = rng.normals(32);
    let objective = Objective::new(clfs, w0.clone(), Subgroup::AfricanAmerican, &TraversalConfig::default());
    c.bench_function("traversal_objective_gradient", |bch| bch.iter(|| objective.evaluate(black_box(&w0)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let mut rng = Rng::new(4, 0);
    let labels: Vec<u8> = (0..10_000).map(|_| u8::from(rng.uniform() < 0.3)).collect();
    let scores: Vec<f64> = labels.iter().map(|&l| f64::from(l) + rng.normal()).collect();
    c.bench_function("roc_auc_10k", |bch| bch.iter(|| roc_auc(black_box(&labels), black_box(&scores)).unwrap()));
    c.bench_function("average_precision_10k", |bch| {
        bch.iter(|| average_precision(black_box(&labels), black_box(&scores)).unwrap())
    });
}

criterion_group!(benches, tensors, generator, traversal, metrics);
criterion_main!(benches);
