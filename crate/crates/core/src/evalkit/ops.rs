//! Batch entry points behind the command line: train one leg, tune the
//! breach corrector, and replay a model set over the held-out week.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::harness::{experiment_params, Experiment, Split, STSF_HISTORY_DAYS};
use super::{score, OutcomePair, Report, DEFAULT_HOLIDAY_PAD, DEFAULT_STSF_LEVEL, DEFAULT_WEEKEND_PAD};
use crate::breach::{BreachCorrector, TuneOutcome};
use crate::domain::{Date, Order, Timestamp};
use crate::error::{Error, Result};
use crate::gbdt::BoosterParams;
use crate::losses::LossSpec;
use crate::pipeline::{
    quote, train_gbdt, train_stsf, Environment, FeatureRecipe, History, LegArtifact, LegEstimator, LegPredictor, ModelLeg, ModelSet,
    PromiseQuote, Query, Snapshot,
};
use crate::rng;
use crate::simnet::{Scenario, SimOutput};

/// Model family of a trained leg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LegModelSpec {
    Gbdt {
        loss: LossSpec,
    },
    /// Promises the residual quantile `level` above the point forecast.
    Stsf {
        level: f64,
    },
    Baseline,
}

impl LegModelSpec {
    /// `gbdt` takes any loss (mse by default). `stsf` takes a quantile loss,
    /// whose level becomes the promised residual quantile. `baseline` takes
    /// none.
    pub fn parse(model: &str, loss: Option<LossSpec>) -> Result<Self> {
        match (model, loss) {
            ("gbdt", loss) => Ok(LegModelSpec::Gbdt { loss: loss.unwrap_or(LossSpec::Mse) }),
            ("stsf", None) => Ok(LegModelSpec::Stsf { level: DEFAULT_STSF_LEVEL }),
            ("stsf", Some(LossSpec::Quantile { tau })) => Ok(LegModelSpec::Stsf { level: tau }),
            ("stsf", Some(l)) => Err(Error::config(format!("stsf promises a residual quantile; loss {} does not apply", l.label()))),
            ("baseline", None) => Ok(LegModelSpec::Baseline),
            ("baseline", Some(l)) => Err(Error::config(format!("the rule baseline takes no loss, got {}", l.label()))),
            (other, _) => Err(Error::config(format!("unknown model {other:?}; expected gbdt, stsf or baseline"))),
        }
    }
}

pub fn default_recipe(leg: ModelLeg) -> FeatureRecipe {
    match leg {
        ModelLeg::Vendor => FeatureRecipe::default_vendor(),
        ModelLeg::Warehouse => FeatureRecipe::default_warehouse(),
        ModelLeg::Shipping => FeatureRecipe::default_shipping(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRequest {
    pub leg: ModelLeg,
    pub model: LegModelSpec,
    /// Defaults to [`default_recipe`].
    pub recipe: Option<FeatureRecipe>,
    /// Defaults to [`experiment_params`]; the loss and seed are overridden.
    pub params: Option<BoosterParams>,
    pub seed: u64,
}

/// Trains on everything before the scenario's held-out week and snapshots
/// features as of its first day. Returns the artifact and the per-iteration
/// training loss (empty for models without iterations).
pub fn train_leg(scenario: &Scenario, out: &SimOutput, req: &TrainRequest) -> Result<(LegArtifact, Vec<f64>)> {
    let split = Split::for_scenario(scenario);
    split.validate()?;
    let env = Environment::from_sim(scenario, out, true);
    let window = split.train_window(split.eval_start);
    let recipe = req.recipe.clone().unwrap_or_else(|| default_recipe(req.leg));
    let (predictor, trace) = match req.model {
        LegModelSpec::Gbdt { loss } => {
            let base = req.params.clone().unwrap_or_else(|| experiment_params(0));
            let seed = rng::derive(req.seed, &format!("train.{}.{}", req.leg.as_str(), loss.label()));
            let params = BoosterParams { loss, seed, ..base };
            train_gbdt(&env, &out.records, &out.center_days, &recipe, req.leg, &window, &params)?
        }
        LegModelSpec::Stsf { level } => {
            let mut w = window.clone();
            w.dates.start = w.dates.start.max(split.eval_start.offset(-STSF_HISTORY_DAYS));
            (train_stsf(&out.records, req.leg, &w, level)?, Vec::new())
        }
        LegModelSpec::Baseline => {
            let rules = scenario.network.rule_config(DEFAULT_WEEKEND_PAD, DEFAULT_HOLIDAY_PAD);
            (LegPredictor::Baseline { rules }, Vec::new())
        }
    };
    let cutoffs = scenario.network.origin_cutoffs();
    let art = LegArtifact::new(req.leg, predictor, env, cutoffs, &out.records, &out.center_days, split.eval_start)?;
    Ok((art, trace))
}

/// Tunes target weights for `cutoff` on the weeks before the held-out week
/// and fits the shipping-leg corrector.
pub fn tune_breach(scenario: &Scenario, out: &SimOutput, cutoff: f64, seed: u64) -> Result<(BreachCorrector, TuneOutcome)> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::config(format!("breach cutoff must lie in (0, 1), got {cutoff}")));
    }
    let exp = Experiment { scenario, out, split: Split::for_scenario(scenario), early_window: 1, seed };
    exp.split.validate()?;
    exp.fit_corrector(&Environment::from_sim(scenario, out, true), &FeatureRecipe::default_shipping(), cutoff)
}

/// A quote for `out.records[record]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayedQuote {
    pub record: usize,
    pub quote: PromiseQuote,
}

/// An artifact answering from a snapshot other than its own.
struct Refreshed<'a> {
    art: &'a LegArtifact,
    snapshot: Snapshot,
}

impl LegEstimator for Refreshed<'_> {
    fn estimate(&self, order: &Order, start: Timestamp) -> Result<f64> {
        Ok(self.art.predict_with(&self.snapshot, &[Query { order, start, target: None }])?[0])
    }

    fn tag(&self) -> String {
        self.art.tag()
    }
}

/// Quotes every order placed on `dates` as it would have been quoted at
/// placement, with features from the history delivered before that day.
/// Orders whose legs have no model are skipped and counted.
pub fn replay(models: &ModelSet, out: &SimOutput, dates: Range<Date>) -> Result<(Vec<ReplayedQuote>, usize)> {
    let mut by_day: BTreeMap<Date, Vec<usize>> = BTreeMap::new();
    for (i, r) in out.records.iter().enumerate() {
        let d = r.order.placed_at.date();
        if dates.contains(&d) {
            by_day.entry(d).or_default().push(i);
        }
    }
    let history = History::new(&out.records, &out.center_days);
    let cutoffs = models.cutoffs();
    let days: Vec<(Date, Vec<usize>)> = by_day.into_iter().collect();
    let parts: Vec<(Vec<ReplayedQuote>, usize)> = days
        .par_iter()
        .map(|(d, rows)| {
            let fresh: Vec<(ModelLeg, Refreshed<'_>)> = models
                .legs
                .iter()
                .map(|(leg, art)| {
                    let snapshot = Snapshot::from_history(&art.env, &history, &art.predictor.recipe(), *d)?;
                    Ok((*leg, Refreshed { art, snapshot }))
                })
                .collect::<Result<_>>()?;
            let estimators: BTreeMap<ModelLeg, &dyn LegEstimator> = fresh.iter().map(|(leg, r)| (*leg, r as &dyn LegEstimator)).collect();
            let mut quotes = Vec::with_capacity(rows.len());
            let mut skipped = 0;
            for &i in rows {
                match quote(&out.records[i].order, &estimators, &cutoffs) {
                    Ok(q) => quotes.push(ReplayedQuote { record: i, quote: q }),
                    Err(Error::MissingModel(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((quotes, skipped))
        })
        .collect::<Result<_>>()?;
    let skipped = parts.iter().map(|p| p.1).sum();
    Ok((parts.into_iter().flat_map(|p| p.0).collect(), skipped))
}

/// Name of a model set in reports: `leg=tag` per leg.
pub fn model_set_name(models: &ModelSet) -> String {
    models.legs.iter().map(|(leg, a)| format!("{}={}", leg.as_str(), a.tag())).collect::<Vec<_>>().join(" ")
}

/// End-to-end promises of `models` over the scenario's held-out week, by
/// placement date. Returns the report and the number of skipped orders.
pub fn evaluate_models(models: &ModelSet, scenario: &Scenario, out: &SimOutput, early_window: u32) -> Result<(Report, usize)> {
    if !(1..=2).contains(&early_window) {
        return Err(Error::config(format!("early window must be 1 or 2, got {early_window}")));
    }
    let split = Split::for_scenario(scenario);
    let (quotes, skipped) = replay(models, out, split.eval_start..split.eval_end())?;
    if quotes.is_empty() {
        return Err(Error::InsufficientData("no quotable orders in the evaluation window".into()));
    }
    let mut pairs = Vec::with_capacity(quotes.len());
    let mut hours = Vec::with_capacity(quotes.len());
    for q in &quotes {
        let r = &out.records[q.record];
        pairs.push(OutcomePair::new(r.order.placed_at.date(), q.quote.promise_at.date(), r.delivered_at.date())?);
        hours.push(q.quote.promise_at.hours_since(r.order.placed_at));
    }
    let row = score(&model_set_name(models), &pairs, &hours, early_window)?;
    let report = Report { early_window, eval_start: split.eval_start, eval_end: split.eval_end().offset(-1), rows: vec![row] };
    Ok((report, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_spec_parsing() {
        assert_eq!(LegModelSpec::parse("gbdt", None).unwrap(), LegModelSpec::Gbdt { loss: LossSpec::Mse });
        let q = LossSpec::Quantile { tau: 0.7 };
        assert_eq!(LegModelSpec::parse("stsf", Some(q)).unwrap(), LegModelSpec::Stsf { level: 0.7 });
        assert!(LegModelSpec::parse("stsf", Some(LossSpec::Mse)).is_err());
        assert!(LegModelSpec::parse("baseline", Some(q)).is_err());
        assert!(matches!(LegModelSpec::parse("forest", None), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_model_set_evaluates_end_to_end() {
        let s = Scenario { days: 35, orders_per_day: 150, ..Scenario::default_scenario() };
        let out = s.generate(6).unwrap();
        let mut models = ModelSet::default();
        for leg in [ModelLeg::Warehouse, ModelLeg::Shipping] {
            let req = TrainRequest { leg, model: LegModelSpec::Baseline, recipe: None, params: None, seed: 1 };
            models.legs.insert(leg, train_leg(&s, &out, &req).unwrap().0);
        }
        let (report, skipped) = evaluate_models(&models, &s, &out, 1).unwrap();
        let vendor_orders = out
            .records
            .iter()
            .filter(|r| r.order.placed_at.date() >= s.end_date().offset(-7) && matches!(r.order.source, crate::Source::Vendor(_)))
            .count();
        assert_eq!(skipped, vendor_orders);
        assert!(report.rows[0].orders > 500);
        assert_eq!(report.rows[0].model, "warehouse=baseline shipping=baseline");
        assert!(evaluate_models(&models, &s, &out, 3).is_err());
    }
}
