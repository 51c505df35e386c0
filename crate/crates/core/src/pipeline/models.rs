//! Trained leg predictors and their on-disk artifacts.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{leg_dataset, Environment, ModelLeg, Query, RowContext, Snapshot};
use super::recipe::FeatureRecipe;
use crate::baseline::{rule_shipping_promise, NodeCutoffs, RuleConfig};
use crate::breach::{BreachCorrector, FeedbackFeatures};
use crate::domain::{decay_weights, Date, DeliveryRecord, Source, Timestamp};
use crate::error::{Error, Result};
use crate::fsio;
use crate::gbdt::{self, BoostedModel, BoosterParams};
use crate::simnet::CenterDay;
use crate::stats;
use crate::stsf::{self, SeasonalModel, SeriesObservation, StsfConfig};

/// Version of the leg artifact layout.
pub const ARTIFACT_VERSION: u32 = 1;
/// Key of the pooled series used when a route has no series of its own.
pub const GLOBAL_SERIES: &str = "*";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LegPredictor {
    Gbdt {
        recipe: FeatureRecipe,
        model: BoostedModel,
    },
    /// One forecaster per lane (shipping) or origin (pre-ship), predicting
    /// the residual quantile `level` above the point forecast.
    Stsf {
        level: f64,
        series: BTreeMap<String, SeasonalModel>,
    },
    Baseline {
        rules: RuleConfig,
    },
}

impl LegPredictor {
    pub fn recipe(&self) -> FeatureRecipe {
        match self {
            LegPredictor::Gbdt { recipe, .. } => recipe.clone(),
            _ => FeatureRecipe { features: Vec::new() },
        }
    }

    pub fn tag(&self) -> String {
        match self {
            LegPredictor::Gbdt { model, .. } => format!("gbdt:{}", model.params().loss.label()),
            LegPredictor::Stsf { level, .. } => format!("stsf:{level}"),
            LegPredictor::Baseline { .. } => "baseline".into(),
        }
    }

    /// Hours for each query, never negative.
    pub fn predict(&self, leg: ModelLeg, ctx: &RowContext<'_>, queries: &[Query<'_>]) -> Result<Vec<f64>> {
        let raw = match self {
            LegPredictor::Gbdt { model, .. } => model.predict(&ctx.rows(queries)?)?,
            LegPredictor::Stsf { level, series } => queries
                .iter()
                .map(|q| {
                    let m = series
                        .get(&series_key(leg, q.order))
                        .or_else(|| series.get(GLOBAL_SERIES))
                        .ok_or_else(|| Error::MissingModel(format!("no {} series for order {}", leg.as_str(), q.order.order_id)))?;
                    Ok(m.forecast(q.start, *level)?.upper)
                })
                .collect::<Result<Vec<_>>>()?,
            LegPredictor::Baseline { rules } => queries
                .iter()
                .map(|q| match (leg, q.order.source) {
                    (ModelLeg::Shipping, _) => Ok(rule_shipping_promise(q.order, q.start, rules, ctx.calendar())?.hours_since(q.start)),
                    (_, Source::Vendor(v)) => rules.vendor_hours(v),
                    (_, Source::Warehouse(w)) => rules.warehouse_hours(w),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(raw.into_iter().map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 }).collect())
    }
}

/// Series a forecaster is keyed by for a leg.
pub fn series_key(leg: ModelLeg, order: &crate::domain::Order) -> String {
    match leg {
        ModelLeg::Shipping => order.lane.key(),
        _ => order.lane.origin().to_string(),
    }
}

/// A self-contained trained leg: predictor, optional breach corrector and
/// the feature state needed to quote without the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegArtifact {
    pub format_version: u32,
    pub leg: ModelLeg,
    pub predictor: LegPredictor,
    #[serde(default)]
    pub corrector: Option<BreachCorrector>,
    pub env: Environment,
    /// Dispatch cutoffs per origin, minutes after midnight.
    #[serde(default)]
    pub cutoffs: Vec<NodeCutoffs>,
    pub snapshot: Snapshot,
}

impl LegArtifact {
    pub fn new(
        leg: ModelLeg,
        predictor: LegPredictor,
        env: Environment,
        cutoffs: Vec<NodeCutoffs>,
        records: &[DeliveryRecord],
        center_days: &[CenterDay],
        as_of: Date,
    ) -> Result<Self> {
        let snapshot = Snapshot::build(&env, records, center_days, &predictor.recipe(), as_of)?;
        Ok(LegArtifact { format_version: ARTIFACT_VERSION, leg, predictor, corrector: None, env, cutoffs, snapshot })
    }

    pub fn tag(&self) -> String {
        match self.corrector {
            Some(_) => format!("{}+breach", self.predictor.tag()),
            None => self.predictor.tag(),
        }
    }

    /// Predictions from the stored snapshot, corrected when a corrector is
    /// attached.
    pub fn predict(&self, queries: &[Query<'_>]) -> Result<Vec<f64>> {
        self.predict_with(&self.snapshot, queries)
    }

    /// Like [`LegArtifact::predict`], with features from another snapshot.
    pub fn predict_with(&self, snapshot: &Snapshot, queries: &[Query<'_>]) -> Result<Vec<f64>> {
        let recipe = self.predictor.recipe();
        let ctx = RowContext::new(&self.env, snapshot, &recipe);
        let base = self.predictor.predict(self.leg, &ctx, queries)?;
        Ok(match &self.corrector {
            Some(c) => base.iter().zip(queries).map(|(b, q)| c.correct(*b, &ctx.feedback_features(q))).collect(),
            None => base,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            format_version: u32,
        }
        let bytes = fsio::read(path)?;
        let probe: Probe = serde_json::from_slice(&bytes)?;
        if probe.format_version != ARTIFACT_VERSION {
            return Err(Error::UnsupportedVersion { found: probe.format_version, supported: ARTIFACT_VERSION });
        }
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Settings shared by the training entry points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainWindow {
    /// Leg start dates used for training rows.
    pub dates: Range<Date>,
    /// Outcomes after this date are unknown at training time.
    pub known_before: Date,
    pub half_life_days: f64,
}

pub fn train_gbdt(
    env: &Environment,
    records: &[DeliveryRecord],
    center_days: &[CenterDay],
    recipe: &FeatureRecipe,
    leg: ModelLeg,
    window: &TrainWindow,
    params: &BoosterParams,
) -> Result<(LegPredictor, Vec<f64>)> {
    let (ds, _) = leg_dataset(env, records, center_days, recipe, leg, window.dates.clone(), window.known_before)?;
    if ds.is_empty() {
        return Err(Error::InsufficientData(format!("no {} rows in the training window", leg.as_str())));
    }
    let ds = decay_weights(ds, window.known_before.offset(-1), window.half_life_days)?;
    let (model, trace) = gbdt::train_with_trace(&ds, params)?;
    Ok((LegPredictor::Gbdt { recipe: recipe.clone(), model }, trace))
}

/// Forecaster settings for leg series: hourly means need a weekly and a
/// daily cycle but few changepoints.
pub fn leg_stsf_config(level: f64) -> StsfConfig {
    StsfConfig { n_changepoints: 8, residual_levels: vec![0.5, level], ..StsfConfig::default() }
}

/// Fits one forecaster per route on hourly mean durations, plus a pooled
/// one. Residual offsets are recalibrated on individual outcomes, since the
/// promise covers single orders rather than hourly means.
pub fn train_stsf(records: &[DeliveryRecord], leg: ModelLeg, window: &TrainWindow, level: f64) -> Result<LegPredictor> {
    let config = leg_stsf_config(level);
    let mut groups: BTreeMap<String, Vec<(Timestamp, f64)>> = BTreeMap::new();
    for r in records {
        let start = leg.start(r);
        if !leg.applies_to(&r.order) || !window.dates.contains(&start.date()) || r.delivered_at.date() >= window.known_before {
            continue;
        }
        if let Some(y) = leg.target(r) {
            groups.entry(series_key(leg, &r.order)).or_default().push((start, y));
            groups.entry(GLOBAL_SERIES.into()).or_default().push((start, y));
        }
    }
    let mut series = BTreeMap::new();
    for (key, obs) in groups {
        match fit_hourly(&obs, &config, level) {
            Ok(m) => {
                series.insert(key, m);
            }
            Err(Error::InsufficientData(_)) if key != GLOBAL_SERIES => {}
            Err(e) => return Err(e),
        }
    }
    Ok(LegPredictor::Stsf { level, series })
}

fn fit_hourly(obs: &[(Timestamp, f64)], config: &StsfConfig, level: f64) -> Result<SeasonalModel> {
    let mut hourly: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (t, y) in obs {
        let e = hourly.entry(t.minutes().div_euclid(60)).or_default();
        e.0 += y;
        e.1 += 1;
    }
    let series: Vec<SeriesObservation> = hourly
        .into_iter()
        .map(|(h, (s, n))| Ok(SeriesObservation { t: Timestamp::from_minutes(h * 60 + 30)?, y: s / n as f64 }))
        .collect::<Result<_>>()?;
    let mut model = stsf::fit(&series, config)?;
    let residuals: Vec<f64> = obs.iter().map(|(t, y)| y - model.point(*t)).collect();
    for r in &mut model.residual_quantiles {
        r.offset = stats::quantile(&residuals, r.level).unwrap_or(r.offset);
    }
    debug_assert!(model.residual_quantile(level).is_ok());
    Ok(model)
}

/// Feedback features for every query, from one snapshot.
pub fn feedback_rows(ctx: &RowContext<'_>, queries: &[Query<'_>], base: &[f64]) -> Vec<(f64, FeedbackFeatures)> {
    base.iter().zip(queries).map(|(b, q)| (*b, ctx.feedback_features(q))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::Scenario;

    #[test]
    fn stsf_leg_round_trips_and_prefers_route_series() {
        let s = Scenario { days: 28, orders_per_day: 300, ..Scenario::default_scenario() };
        let out = s.generate(3).unwrap();
        let split = s.start_date.offset(24);
        let window = TrainWindow { dates: s.start_date..split.offset(-3), known_before: split, half_life_days: 14.0 };
        let pred = train_stsf(&out.records, ModelLeg::Shipping, &window, 0.9).unwrap();
        let LegPredictor::Stsf { series, .. } = &pred else { panic!() };
        assert!(series.contains_key(GLOBAL_SERIES) && series.len() > 2);
        let env = Environment::from_sim(&s, &out, false);
        let before: Vec<DeliveryRecord> = out.records.iter().filter(|r| r.delivered_at.date() < split).cloned().collect();
        let days: Vec<CenterDay> = out.center_days.iter().filter(|d| d.date < split).copied().collect();
        let art = LegArtifact::new(ModelLeg::Shipping, pred, env, vec![], &before, &days, split).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shipping.json");
        art.save(&path).unwrap();
        assert_eq!(LegArtifact::load(&path).unwrap(), art);
        let r = out.records.iter().find(|r| r.shipped_at.date() == split).unwrap();
        let p = art.predict(&[Query { order: &r.order, start: r.shipped_at, target: None }]).unwrap();
        assert!(p[0] > 0.0 && p[0] < 200.0);
    }

    #[test]
    fn wrong_artifact_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        std::fs::write(&path, r#"{"format_version": 99}"#).unwrap();
        assert!(matches!(LegArtifact::load(&path), Err(Error::UnsupportedVersion { found: 99, .. })));
    }
}
