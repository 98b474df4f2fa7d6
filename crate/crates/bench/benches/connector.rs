use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use geotok::harness::{patch_report, token_budget_curve, BudgetConfig, GateMode};
use geotok::numcore::{ParamSet, Tape, Tensor};
use geotok::patcher::{patch_from_logits, PatchConfig};
use geotok::trainer::init_encoder;
use geotok::RunConfig;
use geotok_bench::chain_batch;

fn patching(c: &mut Criterion) {
    let mut group = c.benchmark_group("patching");
    let cfg = PatchConfig::default();
    for n in [64usize, 256, 1024] {
        let batch = chain_batch(n);
        let x = Tensor::from_fn(n, 32, |i, j| ((i * 31 + j * 7) % 13) as f64 / 13.0);
        let coords = Tensor::from_fn(n, 3, |i, k| batch.coords[i][k]);
        let logits = Tensor::from_fn(n, 1, |i, _| (i % 17) as f64 / 17.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let out = patch_from_logits(
                    tape.constant(logits.clone()),
                    tape.constant(x.clone()),
                    tape.constant(coords.clone()),
                    &batch,
                    &cfg,
                )
                .unwrap();
                black_box(out.counts())
            })
        });
    }
    group.finish();
}

fn encoder_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_forward");
    group.sample_size(20);
    let config = RunConfig::default();
    let mut params = ParamSet::new();
    let encoder = init_encoder(&config, &mut params).unwrap();
    for n in [32usize, 128, 512] {
        let batch = chain_batch(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(encoder.encode(&params, &batch).unwrap()))
        });
    }
    group.finish();
}

fn patch_report_end_to_end(c: &mut Criterion) {
    let graph = chain_batch(128).unbatch().remove(0);
    let config = RunConfig::default();
    c.bench_function("patch_report_128", |b| {
        b.iter(|| black_box(patch_report(&graph, "Describe this molecule.", None, &config).unwrap()))
    });
}

fn budget_curve(c: &mut Criterion) {
    let sizes: Vec<usize> = (5..=17).map(|p| 1usize << p).collect();
    let config = BudgetConfig::default();
    c.bench_function("budget_curve_uniform", |b| {
        b.iter(|| black_box(token_budget_curve(&sizes, &GateMode::Uniform, &config).unwrap()))
    });
}

criterion_group!(benches, patching, encoder_forward, patch_report_end_to_end, budget_curve);
criterion_main!(benches);
