//! Feedback breach control.
//!
//! Recent predictions are compared with what actually happened. An additive
//! target per example is built as a weighted combination of linehaul spread
//! and last-mile flow statistics, with weights tuned on history so that the
//! corrected breach rate stays under a cutoff on every delivery date. A
//! small mse booster then learns that target, and its non-negative output is
//! added to new base predictions.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Date, NumericColumn, Timestamp};
use crate::error::{Error, Result};
use crate::fsio;
use crate::gbdt::{self, BoostedModel, BoosterParams};
use crate::losses::LossSpec;

/// Context available at prediction time for one shipment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFeatures {
    pub weekend_handling_hours: f64,
    pub holiday_handling_hours: f64,
    /// 0 = Monday.
    pub day_of_week: f64,
    pub hour_of_day: f64,
    /// Spread of recent linehaul times on the lane.
    pub linehaul_sd_hours: f64,
    /// Daily packets arriving at the destination center.
    pub inflow_mean: f64,
    pub inflow_sd: f64,
    /// Daily packets delivered by the destination center.
    pub outflow_mean: f64,
    pub outflow_sd: f64,
}

impl FeedbackFeatures {
    pub const NAMES: [&'static str; 9] = [
        "weekend_handling_hours",
        "holiday_handling_hours",
        "day_of_week",
        "hour_of_day",
        "linehaul_sd_hours",
        "inflow_mean",
        "inflow_sd",
        "outflow_mean",
        "outflow_sd",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.weekend_handling_hours,
            self.holiday_handling_hours,
            self.day_of_week,
            self.hour_of_day,
            self.linehaul_sd_hours,
            self.inflow_mean,
            self.inflow_sd,
            self.outflow_mean,
            self.outflow_sd,
        ]
    }

    /// Hours of extra queueing implied by inflow exceeding outflow.
    pub fn flow_mean_hours(&self) -> f64 {
        (self.inflow_mean - self.outflow_mean).max(0.0) / self.outflow_mean.max(1.0) * 24.0
    }

    /// Day-to-day flow noise expressed in hours of queueing.
    pub fn flow_sd_hours(&self) -> f64 {
        self.inflow_sd.hypot(self.outflow_sd) / self.outflow_mean.max(1.0) * 24.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackExample {
    pub features: FeedbackFeatures,
    /// Hours.
    pub actual: f64,
    pub base_prediction: f64,
    /// Clock start of the predicted duration.
    pub start: Timestamp,
    pub delivery_date: Date,
}

impl FeedbackExample {
    fn breached(&self, prediction: f64) -> bool {
        self.start.plus_hours(self.actual).date() > self.start.plus_hours(prediction).date()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreachTargetWeights {
    pub w_linehaul_sd: f64,
    pub w_flow_mean: f64,
    pub w_flow_sd: f64,
}

pub const GRID_VALUES: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];

/// All weight triples over [`GRID_VALUES`], lexicographic.
pub fn default_grid() -> Vec<BreachTargetWeights> {
    let mut out = Vec::with_capacity(125);
    for &a in &GRID_VALUES {
        for &b in &GRID_VALUES {
            for &c in &GRID_VALUES {
                out.push(BreachTargetWeights { w_linehaul_sd: a, w_flow_mean: b, w_flow_sd: c });
            }
        }
    }
    out
}

pub fn target_for(f: &FeedbackFeatures, w: &BreachTargetWeights) -> f64 {
    (w.w_linehaul_sd * f.linehaul_sd_hours + w.w_flow_mean * f.flow_mean_hours() + w.w_flow_sd * f.flow_sd_hours()).max(0.0)
}

pub fn construct_targets(examples: &[FeedbackExample], weights: &BreachTargetWeights) -> Vec<f64> {
    examples.iter().map(|e| target_for(&e.features, weights)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub weights: BreachTargetWeights,
    /// Whether every delivery date met the cutoff.
    pub feasible: bool,
    pub worst_breach: f64,
    pub mean_added_hours: f64,
}

fn evaluate(history: &[FeedbackExample], w: &BreachTargetWeights) -> (f64, f64) {
    let mut per_date: BTreeMap<Date, (usize, usize)> = BTreeMap::new();
    let mut added = 0.0;
    for e in history {
        let t = target_for(&e.features, w);
        added += t;
        let slot = per_date.entry(e.delivery_date).or_default();
        slot.1 += 1;
        if e.breached(e.base_prediction + t) {
            slot.0 += 1;
        }
    }
    let worst = per_date.values().map(|&(b, n)| b as f64 / n as f64).fold(0.0, f64::max);
    (worst, added / history.len() as f64)
}

/// Picks the grid point with the least mean added time among those keeping
/// breach within `cutoff` on every delivery date, or the one with the
/// lowest worst-date breach if none does. Earlier grid points win ties.
pub fn tune_weights(history: &[FeedbackExample], cutoff: f64, grid: &[BreachTargetWeights]) -> Result<TuneOutcome> {
    if history.is_empty() {
        return Err(Error::invalid("empty breach history"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty weight grid"));
    }
    let dates: std::collections::BTreeSet<Date> = history.iter().map(|e| e.delivery_date).collect();
    if dates.len() < 7 {
        return Err(Error::InsufficientData(format!("history covers {} delivery dates, need 7", dates.len())));
    }
    // Canonical order so float sums do not depend on input order.
    let mut sorted = history.to_vec();
    sorted.sort_by(|a, b| {
        (a.delivery_date, a.start)
            .cmp(&(b.delivery_date, b.start))
            .then(a.actual.total_cmp(&b.actual))
            .then(a.base_prediction.total_cmp(&b.base_prediction))
            .then_with(|| {
                let (x, y) = (a.features.values(), b.features.values());
                x.iter().zip(&y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let scored: Vec<(f64, f64)> = grid.par_iter().map(|w| evaluate(&sorted, w)).collect();

    let feasible = |worst: f64| worst <= cutoff + 1e-12;
    let pick = if scored.iter().any(|s| feasible(s.0)) {
        (0..grid.len()).filter(|&i| feasible(scored[i].0)).min_by(|&i, &j| scored[i].1.total_cmp(&scored[j].1).then(i.cmp(&j)))
    } else {
        (0..grid.len()).min_by(|&i, &j| scored[i].0.total_cmp(&scored[j].0).then(i.cmp(&j)))
    }
    .expect("grid is non-empty");
    Ok(TuneOutcome {
        weights: grid[pick],
        feasible: feasible(scored[pick].0),
        worst_breach: scored[pick].0,
        mean_added_hours: scored[pick].1,
    })
}

/// Default booster settings for the corrector.
pub fn corrector_params(seed: u64) -> BoosterParams {
    BoosterParams {
        boosting_iterations: 200,
        learning_rate: 0.05,
        num_leaves: 15,
        data_fraction: 0.8,
        feature_fraction: 1.0,
        min_data_in_leaf: 20,
        loss: LossSpec::Mse,
        seed,
        ..BoosterParams::default()
    }
}

fn feature_dataset(rows: &[(f64, FeedbackFeatures)], targets: Vec<f64>) -> Result<Dataset> {
    let mut cols: Vec<NumericColumn> = std::iter::once("base_prediction")
        .chain(FeedbackFeatures::NAMES)
        .map(|n| NumericColumn { name: n.into(), values: Vec::with_capacity(rows.len()) })
        .collect();
    for (base, f) in rows {
        cols[0].values.push(*base);
        for (c, v) in cols[1..].iter_mut().zip(f.values()) {
            c.values.push(v);
        }
    }
    let n = rows.len();
    Dataset::new(cols, vec![], targets, vec![Date(0); n])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreachCorrector {
    pub weights: BreachTargetWeights,
    pub model: BoostedModel,
}

/// Fits the corrector on examples whose targets were built with `weights`.
pub fn train_corrector(examples: &[FeedbackExample], weights: BreachTargetWeights, params: &BoosterParams) -> Result<BreachCorrector> {
    if examples.is_empty() {
        return Err(Error::invalid("no feedback examples"));
    }
    let targets = construct_targets(examples, &weights);
    let rows: Vec<(f64, FeedbackFeatures)> = examples.iter().map(|e| (e.base_prediction, e.features)).collect();
    let ds = feature_dataset(&rows, targets)?;
    let params = BoosterParams { loss: LossSpec::Mse, ..params.clone() };
    Ok(BreachCorrector { weights, model: gbdt::train(&ds, &params)? })
}

impl BreachCorrector {
    /// `base + max(0, corrector output)`.
    pub fn correct(&self, base_prediction: f64, features: &FeedbackFeatures) -> f64 {
        let mut row = vec![base_prediction];
        row.extend(features.values());
        base_prediction + self.model.predict_encoded(&row, &[]).max(0.0)
    }

    pub fn correct_many(&self, rows: &[(f64, FeedbackFeatures)]) -> Vec<f64> {
        rows.iter().map(|(b, f)| self.correct(*b, f)).collect()
    }

    /// Writes `weights.json` and `corrector.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fsio::write_atomic(&dir.join("weights.json"), serde_json::to_string_pretty(&self.weights)?.as_bytes())?;
        self.model.save(&dir.join("corrector.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let weights = serde_json::from_slice(&fsio::read(&dir.join("weights.json"))?)?;
        let model = BoostedModel::load(&dir.join("corrector.json"))?;
        Ok(BreachCorrector { weights, model })
    }
}
