use criterion::{criterion_group, criterion_main, Criterion};
use ruled_bench::fixture;
use ruled_core::expansion::{scal_series, TOTAL_ORDER};
use ruled_core::ruledgeom::TotalJets;
use std::hint::black_box;

fn total_jets(c: &mut Criterion) {
    let (bundle, pts) = fixture("hirzebruch1_perturbed", 1);
    c.bench_function("total_jets_hirzebruch1_perturbed", |b| {
        b.iter(|| TotalJets::new(black_box(&bundle), black_box(&pts[0]), TOTAL_ORDER).unwrap())
    });
}

fn exact_scal(c: &mut Criterion) {
    let (bundle, pts) = fixture("hirzebruch1_perturbed", 1);
    let tj = TotalJets::new(&bundle, &pts[0], TOTAL_ORDER).unwrap();
    c.bench_function("scal_k_hirzebruch1_perturbed", |b| b.iter(|| tj.scal_k(black_box(40.0)).unwrap()));
}

fn expansion(c: &mut Criterion) {
    let (bundle, pts) = fixture("hirzebruch1_perturbed", 1);
    c.bench_function("scal_series_hirzebruch1_perturbed", |b| {
        b.iter(|| scal_series(black_box(&bundle), black_box(&pts[0])).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = total_jets, exact_scal, expansion
}
criterion_main!(kernels);
