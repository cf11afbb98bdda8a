use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use std::hint::black_box;
use transmix::em::{expectation, maximize_coefficients, PreparedSites};
use transmix::sim::{builtin_scenario, generate_dataset, ScenarioName};
use transmix::{compute_site_scales, run_em, EmConfig};

fn s0() -> (
    transmix::TriadDataset,
    Vec<transmix::SiteScales>,
    Vec<transmix::ClusterCoefficients>,
) {
    let spec = builtin_scenario(ScenarioName::S0, 1).unwrap();
    let data = generate_dataset(&spec).unwrap().data;
    let scales = compute_site_scales(&data).unwrap();
    let truth = spec.clusters.iter().map(|c| c.coefficients).collect();
    (data, scales, truth)
}

fn bench(c: &mut Criterion) {
    let (data, scales, truth) = s0();
    let prep = PreparedSites::new(&data, &scales).unwrap();
    let mixing = vec![0.25; 4];

    c.bench_function("prepare_s0", |b| {
        b.iter(|| PreparedSites::new(black_box(&data), &scales).unwrap())
    });
    c.bench_function("e_step_s0_k4", |b| {
        b.iter(|| expectation(&prep, black_box(&truth), &mixing))
    });

    let (resp, _) = expectation(&prep, &truth, &mixing);
    let start: Vec<_> = truth
        .iter()
        .map(|g| transmix::ClusterCoefficients::new(g.gamma0 + 0.2, g.gamma1 - 0.1, g.gamma2 + 0.1))
        .collect();
    c.bench_function("m_step_s0_k4", |b| {
        b.iter(|| maximize_coefficients(&prep, black_box(&resp), &start).unwrap())
    });

    let hard: Array2<f64> = resp.mapv(|r| if r > 0.5 { 1.0 } else { 0.0 });
    c.bench_function("m_step_s0_k4_hard", |b| {
        b.iter(|| maximize_coefficients(&prep, black_box(&hard), &start).unwrap())
    });

    let mut group = c.benchmark_group("run_em");
    group.sample_size(10);
    group.bench_function("s0_k4_one_start", |b| {
        let config = EmConfig {
            n_restarts: 1,
            ..EmConfig::new(4)
        };
        b.iter(|| run_em(&data, &scales, black_box(&config)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
