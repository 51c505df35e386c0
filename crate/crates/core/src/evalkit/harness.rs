//! Train-then-evaluate runs of several promise pipelines on one simulated
//! history, scored on the shipping leg over a held-out week.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score, OutcomePair, Report, ReportRow};
use crate::breach::{self, BreachCorrector, FeedbackExample};
use crate::domain::{Date, DeliveryRecord, DEFAULT_HALF_LIFE_DAYS};
use crate::error::{Error, Result};
use crate::gbdt::BoosterParams;
use crate::losses::LossSpec;
use crate::pipeline::{
    train_gbdt, train_stsf, Environment, FeatureRecipe, History, LegPredictor, ModelLeg, Query, RowContext, Snapshot, TrainWindow,
};
use crate::rng;
use crate::simnet::{CenterDay, Scenario, SimOutput};

/// Quantile of the shipping-time distribution promised by the quantile
/// pipeline.
pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_WEEKEND_PAD: f64 = 12.0;
pub const DEFAULT_HOLIDAY_PAD: f64 = 24.0;
/// Upper residual level promised by the forecaster pipeline.
pub const DEFAULT_STSF_LEVEL: f64 = 0.9;
/// Trailing days the forecaster is fitted on, so that one past sale does
/// not dominate its trend and residual spread.
pub const STSF_HISTORY_DAYS: i32 = 28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineKind {
    RuleBaseline {
        weekend_pad: f64,
        holiday_pad: f64,
    },
    Gbdt {
        loss: LossSpec,
    },
    /// Mse model plus a breach corrector tuned to `cutoff`.
    GbdtBreach {
        cutoff: f64,
    },
    Stsf {
        level: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub name: String,
    pub kind: PipelineKind,
    pub recipe: FeatureRecipe,
}

impl Pipeline {
    pub fn new(name: &str, kind: PipelineKind) -> Self {
        Pipeline { name: name.into(), kind, recipe: FeatureRecipe::default_shipping() }
    }

    pub fn with_recipe(mut self, recipe: FeatureRecipe) -> Self {
        self.recipe = recipe;
        self
    }

    pub fn rule() -> Self {
        Self::new("rule_baseline", PipelineKind::RuleBaseline { weekend_pad: DEFAULT_WEEKEND_PAD, holiday_pad: DEFAULT_HOLIDAY_PAD })
    }

    pub fn quantile(tau: f64) -> Self {
        Self::new("gbdt_quantile", PipelineKind::Gbdt { loss: LossSpec::Quantile { tau } })
    }

    pub fn mse() -> Self {
        Self::new("gbdt_mse", PipelineKind::Gbdt { loss: LossSpec::Mse })
    }

    pub fn asymmetric(alpha: f64) -> Self {
        Self::new("gbdt_asymmetric", PipelineKind::Gbdt { loss: LossSpec::Asymmetric { alpha } })
    }

    pub fn breach(cutoff: f64) -> Self {
        Self::new("gbdt_mse_breach", PipelineKind::GbdtBreach { cutoff })
    }

    pub fn stsf(level: f64) -> Self {
        Self::new("stsf", PipelineKind::Stsf { level })
    }

    /// The comparison set of the default experiment.
    pub fn standard_set() -> Vec<Pipeline> {
        vec![
            Self::rule(),
            Self::quantile(DEFAULT_TAU),
            Self::mse(),
            Self::breach(0.05),
            Self::asymmetric(crate::losses::DEFAULT_ALPHA),
            Self::stsf(DEFAULT_STSF_LEVEL),
        ]
    }
}

/// Date boundaries of an experiment. Training rows start at `train_start`
/// and stop `censor_days` before `eval_start`, so that slow deliveries of
/// the last training days are not missing from the sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_start: Date,
    pub eval_start: Date,
    pub eval_days: u32,
    pub censor_days: u32,
    /// Days before `eval_start` whose outcomes tune the breach corrector.
    pub feedback_days: u32,
}

impl Split {
    /// Last week held out; the first week only warms up the features.
    pub fn for_scenario(s: &Scenario) -> Self {
        Split { train_start: s.start_date.offset(7), eval_start: s.end_date().offset(-7), eval_days: 7, censor_days: 4, feedback_days: 14 }
    }

    pub fn eval_end(&self) -> Date {
        self.eval_start.offset(self.eval_days as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let train_end = self.eval_start.offset(-(self.censor_days as i32));
        let feedback_start = self.eval_start.offset(-(self.feedback_days as i32));
        if self.eval_days == 0 {
            return Err(Error::config("evaluation window is empty"));
        }
        if feedback_start.offset(-(self.censor_days as i32)) <= self.train_start || train_end <= self.train_start {
            return Err(Error::config(format!(
                "training window {}..{} is too short for {} feedback and {} censor days",
                self.train_start, self.eval_start, self.feedback_days, self.censor_days
            )));
        }
        Ok(())
    }

    pub fn train_window(&self, known_before: Date) -> TrainWindow {
        TrainWindow {
            dates: self.train_start..known_before.offset(-(self.censor_days as i32)),
            known_before,
            half_life_days: DEFAULT_HALF_LIFE_DAYS,
        }
    }
}

/// Booster settings for shipping-leg experiments.
pub fn experiment_params(seed: u64) -> BoosterParams {
    BoosterParams {
        boosting_iterations: 300,
        learning_rate: 0.08,
        num_leaves: 31,
        min_data_in_leaf: 50,
        data_fraction: 0.7,
        feature_fraction: 0.8,
        max_bins: 63,
        seed,
        ..BoosterParams::default()
    }
}

pub struct Experiment<'a> {
    pub scenario: &'a Scenario,
    pub out: &'a SimOutput,
    pub split: Split,
    pub early_window: u32,
    pub seed: u64,
}

/// One pipeline's held-out promises, aligned with `rows`.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub name: String,
    pub rows: Vec<usize>,
    pub promise_hours: Vec<f64>,
    /// Uncorrected predictions, for corrected pipelines.
    pub base_hours: Option<Vec<f64>>,
    pub pairs: Vec<OutcomePair>,
}

/// Predictions for `rows` of `records`, each from a snapshot of the history
/// known before its leg started. Returns (base, corrected) hours.
pub fn predict_leg(
    env: &Environment,
    records: &[DeliveryRecord],
    center_days: &[CenterDay],
    predictor: &LegPredictor,
    corrector: Option<&BreachCorrector>,
    leg: ModelLeg,
    rows: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut by_day: BTreeMap<Date, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in rows.iter().enumerate() {
        by_day.entry(leg.start(&records[i]).date()).or_default().push(pos);
    }
    let recipe = predictor.recipe();
    let days: Vec<(Date, Vec<usize>)> = by_day.into_iter().collect();
    let history = History::new(records, center_days);
    let parts: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = days
        .par_iter()
        .map(|(d, positions)| {
            let snap = Snapshot::from_history(env, &history, &recipe, *d)?;
            let ctx = RowContext::new(env, &snap, &recipe);
            let queries: Vec<Query<'_>> = positions
                .iter()
                .map(|&p| {
                    let r = &records[rows[p]];
                    Query { order: &r.order, start: leg.start(r), target: None }
                })
                .collect();
            let base = predictor.predict(leg, &ctx, &queries)?;
            let corrected = match corrector {
                Some(c) => base.iter().zip(&queries).map(|(b, q)| c.correct(*b, &ctx.feedback_features(q))).collect(),
                None => base.clone(),
            };
            Ok((positions.clone(), base, corrected))
        })
        .collect::<Result<_>>()?;
    let mut base = vec![0.0; rows.len()];
    let mut corrected = vec![0.0; rows.len()];
    for (positions, b, c) in parts {
        for (k, p) in positions.into_iter().enumerate() {
            base[p] = b[k];
            corrected[p] = c[k];
        }
    }
    Ok((base, corrected))
}

impl Experiment<'_> {
    fn env(&self) -> Environment {
        Environment::from_sim(self.scenario, self.out, true)
    }

    /// Records whose shipping leg starts inside `dates`.
    fn rows_in(&self, dates: std::ops::Range<Date>) -> Vec<usize> {
        (0..self.out.records.len()).filter(|&i| dates.contains(&self.out.records[i].shipped_at.date())).collect()
    }

    fn pairs(&self, rows: &[usize], hours: &[f64]) -> Result<Vec<OutcomePair>> {
        rows.iter()
            .zip(hours)
            .map(|(&i, h)| {
                let r = &self.out.records[i];
                OutcomePair::new(r.shipped_at.date(), r.shipped_at.plus_hours(*h).date(), r.delivered_at.date())
            })
            .collect()
    }

    fn gbdt(&self, env: &Environment, recipe: &FeatureRecipe, loss: LossSpec, known_before: Date, tag: &str) -> Result<LegPredictor> {
        let params = BoosterParams { loss, seed: rng::derive(self.seed, tag), ..experiment_params(0) };
        let window = self.split.train_window(known_before);
        Ok(train_gbdt(env, &self.out.records, &self.out.center_days, recipe, ModelLeg::Shipping, &window, &params)?.0)
    }

    /// Mse model trained `feedback_days` earlier, its errors over the
    /// feedback window, tuned weights and the fitted corrector.
    pub fn fit_corrector(&self, env: &Environment, recipe: &FeatureRecipe, cutoff: f64) -> Result<(BreachCorrector, breach::TuneOutcome)> {
        let t1 = self.split.eval_start.offset(-(self.split.feedback_days as i32));
        let early = self.gbdt(env, recipe, LossSpec::Mse, t1, "evalkit.breach.base")?;
        let censor_start = self.split.eval_start.offset(-(self.split.censor_days as i32));
        let rows: Vec<usize> = self
            .rows_in(t1..censor_start)
            .into_iter()
            .filter(|&i| self.out.records[i].delivered_at.date() < self.split.eval_start)
            .collect();
        let (base, _) = predict_leg(env, &self.out.records, &self.out.center_days, &early, None, ModelLeg::Shipping, &rows)?;
        let examples: Vec<FeedbackExample> = self.feedback_examples(env, &early, &rows, &base)?;
        let tuned = breach::tune_weights(&examples, cutoff, &breach::default_grid())?;
        let params = breach::corrector_params(rng::derive(self.seed, "evalkit.breach.corrector"));
        Ok((breach::train_corrector(&examples, tuned.weights, &params)?, tuned))
    }

    fn feedback_examples(&self, env: &Environment, predictor: &LegPredictor, rows: &[usize], base: &[f64]) -> Result<Vec<FeedbackExample>> {
        let recipe = predictor.recipe();
        let mut by_day: BTreeMap<Date, Vec<usize>> = BTreeMap::new();
        for (pos, &i) in rows.iter().enumerate() {
            by_day.entry(self.out.records[i].shipped_at.date()).or_default().push(pos);
        }
        let history = History::new(&self.out.records, &self.out.center_days);
        let mut out = Vec::with_capacity(rows.len());
        for (d, positions) in by_day {
            let snap = Snapshot::from_history(env, &history, &recipe, d)?;
            let ctx = RowContext::new(env, &snap, &recipe);
            for p in positions {
                let r = &self.out.records[rows[p]];
                let q = Query { order: &r.order, start: r.shipped_at, target: None };
                out.push(FeedbackExample {
                    features: ctx.feedback_features(&q),
                    actual: r.shipping_hours(),
                    base_prediction: base[p],
                    start: r.shipped_at,
                    delivery_date: r.delivered_at.date(),
                });
            }
        }
        Ok(out)
    }

    pub fn run(&self, pipeline: &Pipeline) -> Result<PipelineRun> {
        self.split.validate()?;
        pipeline.recipe.validate()?;
        let env = self.env();
        let rows = self.rows_in(self.split.eval_start..self.split.eval_end());
        if rows.is_empty() {
            return Err(Error::InsufficientData("no shipments in the evaluation window".into()));
        }
        let records = &self.out.records;
        let days = &self.out.center_days;
        let leg = ModelLeg::Shipping;
        let (base, corrected, keep_base) = match &pipeline.kind {
            PipelineKind::RuleBaseline { weekend_pad, holiday_pad } => {
                let p = LegPredictor::Baseline { rules: self.scenario.network.rule_config(*weekend_pad, *holiday_pad) };
                let (b, c) = predict_leg(&env, records, days, &p, None, leg, &rows)?;
                (b, c, false)
            }
            PipelineKind::Gbdt { loss } => {
                let p = self.gbdt(&env, &pipeline.recipe, *loss, self.split.eval_start, &format!("evalkit.{}", loss.label()))?;
                let (b, c) = predict_leg(&env, records, days, &p, None, leg, &rows)?;
                (b, c, false)
            }
            PipelineKind::GbdtBreach { cutoff } => {
                let (corrector, _) = self.fit_corrector(&env, &pipeline.recipe, *cutoff)?;
                let p = self.gbdt(&env, &pipeline.recipe, LossSpec::Mse, self.split.eval_start, "evalkit.mse")?;
                let (b, c) = predict_leg(&env, records, days, &p, Some(&corrector), leg, &rows)?;
                (b, c, true)
            }
            PipelineKind::Stsf { level } => {
                let mut window = self.split.train_window(self.split.eval_start);
                window.dates.start = window.dates.start.max(self.split.eval_start.offset(-STSF_HISTORY_DAYS));
                let p = train_stsf(records, leg, &window, *level)?;
                let (b, c) = predict_leg(&env, records, days, &p, None, leg, &rows)?;
                (b, c, false)
            }
        };
        let pairs = self.pairs(&rows, &corrected)?;
        Ok(PipelineRun { name: pipeline.name.clone(), rows, promise_hours: corrected, base_hours: keep_base.then_some(base), pairs })
    }
}

/// Runs every pipeline on the same split and scores them side by side.
pub fn compare(exp: &Experiment<'_>, pipelines: &[Pipeline]) -> Result<(Report, Vec<PipelineRun>)> {
    if !(1..=2).contains(&exp.early_window) {
        return Err(Error::config(format!("early window must be 1 or 2, got {}", exp.early_window)));
    }
    let mut runs = Vec::with_capacity(pipelines.len());
    let mut rows: Vec<ReportRow> = Vec::with_capacity(pipelines.len());
    for p in pipelines {
        let run = exp.run(p)?;
        if let Some(first) = runs.first().map(|r: &PipelineRun| &r.rows) {
            if *first != run.rows {
                return Err(Error::invalid(format!("pipeline {} was scored on a different evaluation window", p.name)));
            }
        }
        rows.push(score(&p.name, &run.pairs, &run.promise_hours, exp.early_window)?);
        runs.push(run);
    }
    let report =
        Report { early_window: exp.early_window, eval_start: exp.split.eval_start, eval_end: exp.split.eval_end().offset(-1), rows };
    Ok((report, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_comparison_gives_identical_rows() {
        let s = Scenario { days: 42, orders_per_day: 200, ..Scenario::default_scenario() };
        let out = s.generate(2).unwrap();
        let exp = Experiment { scenario: &s, out: &out, split: Split::for_scenario(&s), early_window: 1, seed: 5 };
        let mut twin = Pipeline::rule();
        twin.name = "rule_again".into();
        let (report, _) = compare(&exp, &[Pipeline::rule(), twin]).unwrap();
        let (a, b) = (&report.rows[0], &report.rows[1]);
        assert_eq!((a.accuracy, a.breach, a.orders), (b.accuracy, b.breach, b.orders));
        assert!(a.orders > 1000);
    }

    #[test]
    fn bad_split_is_rejected() {
        let s = Scenario { days: 14, orders_per_day: 50, ..Scenario::default_scenario() };
        let out = s.generate(2).unwrap();
        let exp = Experiment { scenario: &s, out: &out, split: Split::for_scenario(&s), early_window: 1, seed: 5 };
        assert!(matches!(compare(&exp, &[Pipeline::rule()]), Err(Error::Config(_))));
        let exp = Experiment { early_window: 3, ..exp };
        assert!(compare(&exp, &[Pipeline::rule()]).is_err());
    }
}
