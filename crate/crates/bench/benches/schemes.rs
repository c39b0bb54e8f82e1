use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use levylab_core::euler::PreparedIncrement;
use levylab_core::rng::{self, Domain};
use levylab_core::stable::stable_jump_sample;
use levylab_core::{
    apply_operator, ks_distance, potential_from_q, CompensationFunction, IncrementPlan, JumpMeasure, LevyTriplet,
    PsiOptions, QuadratureConfig, StableField, TestFunction,
};

fn stable_step(c: &mut Criterion) {
    let field = StableField::new(2, |x| 1.0 + 0.1 * x[0].cos(), |x| 1.2 + 0.2 * x[1].sin()).unwrap();
    let mut r = rng::stream(1, Domain::Diagnostic, 0);
    c.bench_function("stable_jump_sample d=2", |b| {
        b.iter(|| stable_jump_sample(&field, black_box(&[0.3, -0.2]), 1000.0, &mut r).unwrap())
    });
}

fn euler_increment(c: &mut Criterion) {
    let t = LevyTriplet::pure_jump(1, JumpMeasure::stable(1.0, 1.5).unwrap());
    let plan = IncrementPlan::default().with_tau(1e-2);
    let p = PreparedIncrement::new(&t, &CompensationFunction::Chi1, &[0.0], 0.01, &plan).unwrap();
    let mut r = rng::stream(2, Domain::Diagnostic, 0);
    c.bench_function("euler increment alpha=1.5 tau=1e-2", |b| b.iter(|| p.sample(&mut r).unwrap()));
}

fn potential_transition(c: &mut Criterion) {
    let mut r = rng::stream(3, Domain::Diagnostic, 0);
    let q: Vec<f64> = (0..2001).map(|_| 0.1 * rng::std_normal(&mut r)).collect();
    let v = potential_from_q(&q, -1000, 0.01).unwrap();
    let opts = PsiOptions::default();
    c.bench_function("lattice transition", |b| b.iter(|| v.transition(black_box(1.23), 0.01, &opts).unwrap()));
}

fn operator_eval(c: &mut Criterion) {
    let t = LevyTriplet::pure_jump(2, JumpMeasure::stable(1.0, 1.3).unwrap());
    let f = TestFunction::radial_bump(vec![0.0, 0.0], 1.0).unwrap();
    let cfg = QuadratureConfig::default();
    c.bench_function("apply_operator stable d=2", |b| {
        b.iter(|| apply_operator(&t, &CompensationFunction::Chi1, &f, black_box(&[0.2, 0.1]), &cfg).unwrap())
    });
}

fn ks(c: &mut Criterion) {
    let mut r = rng::stream(4, Domain::Diagnostic, 0);
    let a: Vec<f64> = (0..100_000).map(|_| rng::std_normal(&mut r)).collect();
    let b: Vec<f64> = (0..100_000).map(|_| rng::std_normal(&mut r)).collect();
    c.bench_function("ks_distance 1e5 x 1e5", |bch| bch.iter(|| ks_distance(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group!(benches, stable_step, euler_increment, potential_transition, operator_eval, ks);
criterion_main!(benches);
