//! Shared fixtures for the benchmarks.

use rand::Rng;

use promise_core::evalkit::{experiment_params, train_leg, LegModelSpec, Split, TrainRequest};
use promise_core::pipeline::{ModelLeg, ModelSet};
use promise_core::simnet::{Scenario, SimOutput};
use promise_core::stsf::SeriesObservation;
use promise_core::{rng, BoosterParams, CategoricalColumn, Dataset, Date, LossSpec, NumericColumn, Order};

/// Three numeric and two categorical features with a right-skewed target.
pub fn synthetic_dataset(rows: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, "bench.dataset");
    let x: Vec<Vec<f64>> = (0..3).map(|_| (0..rows).map(|_| r.random_range(0.0..10.0)).collect()).collect();
    let lane: Vec<Option<String>> = (0..rows).map(|_| Some(format!("lane{}", r.random_range(0..16)))).collect();
    let tier: Vec<Option<String>> = (0..rows).map(|_| r.random_bool(0.95).then(|| format!("t{}", r.random_range(0..3)))).collect();
    let target = (0..rows)
        .map(|i| {
            let u: f64 = r.random_range(1e-9..1.0);
            24.0 + 2.0 * x[0][i] + (x[1][i] > 5.0) as u8 as f64 * 8.0 + if tier[i].is_none() { 6.0 } else { 0.0 } - 5.0 * u.ln()
        })
        .collect();
    let numeric = x.into_iter().enumerate().map(|(k, values)| NumericColumn { name: format!("x{k}"), values }).collect();
    let categorical = vec![CategoricalColumn::from_levels("lane", &lane), CategoricalColumn::from_levels("tier", &tier)];
    Dataset::new(numeric, categorical, target, vec![Date(0); rows]).expect("synthetic dataset is valid")
}

/// Booster settings sized for a benchmark iteration.
pub fn bench_params(loss: LossSpec) -> BoosterParams {
    BoosterParams { boosting_iterations: 50, loss, ..experiment_params(1) }
}

/// Five weeks at low volume.
pub fn small_scenario() -> Scenario {
    Scenario { days: 35, orders_per_day: 300, ..Scenario::default_scenario() }
}

/// Hourly series over four weeks with trend, weekly cycle and noise.
pub fn hourly_series(seed: u64) -> Vec<SeriesObservation> {
    let mut r = rng::stream(seed, "bench.series");
    let start = Date::ymd(2024, 1, 1).expect("valid date").start();
    (0..28 * 24)
        .map(|h| {
            let hf = h as f64;
            let y = 30.0 + 0.01 * hf + 3.0 * (std::f64::consts::TAU * hf / 168.0).sin() + r.random_range(-1.0..1.0);
            SeriesObservation { t: start.plus_minutes(h * 60), y }
        })
        .collect()
}

/// Models for every leg trained on a small simulation, and the orders of
/// its held-out week.
pub fn quote_fixture() -> (ModelSet, Vec<Order>) {
    let s = small_scenario();
    let out: SimOutput = s.generate(1).expect("scenario simulates");
    let mut models = ModelSet::default();
    for (leg, model) in [
        (ModelLeg::Vendor, LegModelSpec::Baseline),
        (ModelLeg::Warehouse, LegModelSpec::Gbdt { loss: LossSpec::Mse }),
        (ModelLeg::Shipping, LegModelSpec::Gbdt { loss: LossSpec::Quantile { tau: 0.8 } }),
    ] {
        let req = TrainRequest { leg, model, recipe: None, params: Some(bench_params(LossSpec::Mse)), seed: 1 };
        models.legs.insert(leg, train_leg(&s, &out, &req).expect("leg trains").0);
    }
    let eval_start = Split::for_scenario(&s).eval_start;
    let orders = out.records.iter().filter(|r| r.order.placed_at.date() >= eval_start).map(|r| r.order.clone()).collect();
    (models, orders)
}
