use criterion::{criterion_group, criterion_main, Criterion};

use promise_bench::{hourly_series, quote_fixture, small_scenario};
use promise_core::pipeline::leg_stsf_config;
use promise_core::stsf;

fn simulation(c: &mut Criterion) {
    let s = small_scenario();
    let mut group = c.benchmark_group("simnet");
    group.sample_size(10);
    group.bench_function("generate_35_days", |b| b.iter(|| s.generate(1).expect("simulates")));
    group.finish();
}

fn forecaster(c: &mut Criterion) {
    let series = hourly_series(2);
    let config = leg_stsf_config(0.9);
    c.bench_function("stsf_fit_4_weeks_hourly", |b| b.iter(|| stsf::fit(&series, &config).expect("fits")));
}

fn quoting(c: &mut Criterion) {
    let (models, orders) = quote_fixture();
    let mut i = 0;
    c.bench_function("quote_one_order", |b| {
        b.iter(|| {
            i = (i + 1) % orders.len();
            models.quote(&orders[i]).expect("quotes")
        })
    });
}

criterion_group!(benches, simulation, forecaster, quoting);
criterion_main!(benches);
