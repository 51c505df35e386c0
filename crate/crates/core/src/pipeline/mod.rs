//! Feature engineering and leg composition.
//!
//! [`features`] turns delivery history into point-in-time model rows,
//! [`models`] holds trained leg predictors, and [`quote`] adds the
//! pre-ship, dispatch and shipping legs into a promise.

pub mod features;
pub mod models;
pub mod pendency;
pub mod recipe;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{
    build_features, leg_dataset, resolve_backoff, Environment, History, ModelLeg, Query, RowContext, Snapshot, BACKOFF_MIN_COUNT,
};
pub use models::{
    leg_stsf_config, series_key, train_gbdt, train_stsf, LegArtifact, LegPredictor, TrainWindow, ARTIFACT_VERSION, GLOBAL_SERIES,
};
pub use pendency::{pendency_balance, project_pendency, Projection};
pub use recipe::{Aggregation, Family, FeatureDef, FeatureRecipe, GeoLevel, Quantity};

use crate::baseline::roll_to_cutoff;
use crate::domain::{NodeId, Order, Source, Timestamp};
use crate::error::{Error, Result};

/// Leg-prediction key for the wait between pre-ship completion and dispatch.
pub const DISPATCH_WAIT: &str = "dispatch_wait";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromiseQuote {
    pub order_id: u64,
    /// Hours per leg; they sum to `promise_at - placed_at`.
    pub leg_predictions: BTreeMap<String, f64>,
    pub promise_at: Timestamp,
    pub model_tags: BTreeMap<String, String>,
}

/// Anything that predicts a leg's duration from its start.
pub trait LegEstimator: Sync {
    fn estimate(&self, order: &Order, start: Timestamp) -> Result<f64>;
    fn tag(&self) -> String;
}

impl LegEstimator for LegArtifact {
    fn estimate(&self, order: &Order, start: Timestamp) -> Result<f64> {
        Ok(self.predict(&[Query { order, start, target: None }])?[0])
    }

    fn tag(&self) -> String {
        LegArtifact::tag(self)
    }
}

fn pre_ship_leg(order: &Order) -> ModelLeg {
    match order.source {
        Source::Vendor(_) => ModelLeg::Vendor,
        Source::Warehouse(_) => ModelLeg::Warehouse,
    }
}

/// Pre-ship leg from placement, rolled to the origin's next dispatch
/// cutoff, then the shipping leg from dispatch. Origins without a cutoff
/// list dispatch immediately.
pub fn quote(order: &Order, models: &BTreeMap<ModelLeg, &dyn LegEstimator>, cutoffs: &BTreeMap<NodeId, Vec<u32>>) -> Result<PromiseQuote> {
    let model = |leg: ModelLeg| models.get(&leg).copied().ok_or_else(|| Error::MissingModel(format!("no trained {} model", leg.as_str())));
    let pre_leg = pre_ship_leg(order);
    let (pre, ship) = (model(pre_leg)?, model(ModelLeg::Shipping)?);
    let ready = order.placed_at.plus_hours(pre.estimate(order, order.placed_at)?.max(0.0));
    let dispatch = match cutoffs.get(&order.lane.origin()) {
        Some(c) => roll_to_cutoff(ready, c),
        None => ready,
    };
    let promise_at = dispatch.plus_hours(ship.estimate(order, dispatch)?.max(0.0));

    let legs = BTreeMap::from([
        (pre_leg.as_str().to_owned(), ready.hours_since(order.placed_at)),
        (DISPATCH_WAIT.to_owned(), dispatch.hours_since(ready)),
        (ModelLeg::Shipping.as_str().to_owned(), promise_at.hours_since(dispatch)),
    ]);
    let tags = BTreeMap::from([(pre_leg.as_str().to_owned(), pre.tag()), (ModelLeg::Shipping.as_str().to_owned(), ship.tag())]);
    Ok(PromiseQuote { order_id: order.order_id, leg_predictions: legs, promise_at, model_tags: tags })
}

/// Leg artifacts loaded from a model directory holding any of
/// `vendor.json`, `warehouse.json` and `shipping.json`.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub legs: BTreeMap<ModelLeg, LegArtifact>,
}

impl ModelSet {
    pub fn file_name(leg: ModelLeg) -> String {
        format!("{}.json", leg.as_str())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::config(format!("model directory {} does not exist", dir.display())));
        }
        let mut legs = BTreeMap::new();
        for leg in [ModelLeg::Vendor, ModelLeg::Warehouse, ModelLeg::Shipping] {
            let path = dir.join(Self::file_name(leg));
            if path.exists() {
                let art = LegArtifact::load(&path)?;
                if art.leg != leg {
                    return Err(Error::config(format!("{} holds a {} model", path.display(), art.leg.as_str())));
                }
                legs.insert(leg, art);
            }
        }
        if legs.is_empty() {
            return Err(Error::MissingModel(format!("no leg models in {}", dir.display())));
        }
        Ok(ModelSet { legs })
    }

    /// Union of the artifacts' dispatch cutoffs.
    pub fn cutoffs(&self) -> BTreeMap<NodeId, Vec<u32>> {
        self.legs.values().flat_map(|a| a.cutoffs.iter().map(|c| (c.node, c.minutes.clone()))).collect()
    }

    pub fn estimators(&self) -> BTreeMap<ModelLeg, &dyn LegEstimator> {
        self.legs.iter().map(|(k, v)| (*k, v as &dyn LegEstimator)).collect()
    }

    pub fn quote(&self, order: &Order) -> Result<PromiseQuote> {
        quote(order, &self.estimators(), &self.cutoffs())
    }

    /// Format version and predictor tag per leg.
    pub fn versions(&self) -> BTreeMap<String, String> {
        self.legs.iter().map(|(k, a)| (k.as_str().to_owned(), format!("v{} {}", a.format_version, LegEstimator::tag(a)))).collect()
    }
}
