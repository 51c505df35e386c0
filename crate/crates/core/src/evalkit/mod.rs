//! Order-day promise metrics and the model comparison harness.
//!
//! Promises and deliveries are compared at date granularity. Accuracy is
//! the share of orders delivered on the promised date or up to
//! `early_window` days before it; breach is the share delivered after it.
//! Both are computed per order date and averaged over the period without
//! weighting by volume.

mod harness;
mod ops;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use harness::{
    compare, experiment_params, predict_leg, Experiment, Pipeline, PipelineKind, PipelineRun, Split, DEFAULT_HOLIDAY_PAD,
    DEFAULT_STSF_LEVEL, DEFAULT_TAU, DEFAULT_WEEKEND_PAD, STSF_HISTORY_DAYS,
};
pub use ops::{default_recipe, evaluate_models, model_set_name, replay, train_leg, tune_breach, LegModelSpec, ReplayedQuote, TrainRequest};

use crate::domain::Date;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomePair {
    pub order_date: Date,
    pub promised_date: Date,
    pub delivered_date: Date,
}

impl OutcomePair {
    pub fn new(order_date: Date, promised_date: Date, delivered_date: Date) -> Result<Self> {
        if delivered_date < order_date {
            return Err(Error::invalid(format!("delivered {delivered_date} before order date {order_date}")));
        }
        Ok(OutcomePair { order_date, promised_date, delivered_date })
    }

    /// Promised minus delivered, in days.
    pub fn slack_days(&self) -> i32 {
        self.delivered_date.days_until(self.promised_date)
    }

    pub fn accurate(&self, early_window: u32) -> bool {
        (0..=early_window as i32).contains(&self.slack_days())
    }

    pub fn breached(&self) -> bool {
        self.delivered_date > self.promised_date
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub order_date: Date,
    pub orders: usize,
    pub accuracy: f64,
    pub breach: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub early_window: u32,
    pub per_day: Vec<DayMetrics>,
    /// Unweighted mean over order dates.
    pub accuracy: f64,
    pub breach: f64,
}

pub fn metrics(pairs: &[OutcomePair], early_window: u32) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::invalid("no outcome pairs to score"));
    }
    let mut days: BTreeMap<Date, (usize, usize, usize)> = BTreeMap::new();
    for p in pairs {
        let e = days.entry(p.order_date).or_default();
        e.0 += 1;
        e.1 += p.accurate(early_window) as usize;
        e.2 += p.breached() as usize;
    }
    let per_day: Vec<DayMetrics> = days
        .into_iter()
        .map(|(d, (n, a, b))| DayMetrics { order_date: d, orders: n, accuracy: a as f64 / n as f64, breach: b as f64 / n as f64 })
        .collect();
    let k = per_day.len() as f64;
    let accuracy = per_day.iter().map(|d| d.accuracy).sum::<f64>() / k;
    let breach = per_day.iter().map(|d| d.breach).sum::<f64>() / k;
    Ok(Metrics { early_window, per_day, accuracy, breach })
}

/// One scored pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub accuracy: f64,
    pub breach: f64,
    pub orders: usize,
    /// Mean promised duration, hours.
    pub mean_promise_hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub early_window: u32,
    pub eval_start: Date,
    pub eval_end: Date,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    fn accuracy_label(&self) -> String {
        format!("accuracy_0_to_-{}", self.early_window)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", &self.accuracy_label(), "breach", "orders", "mean_promise_hours"])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.breach),
                r.orders.to_string(),
                format!("{:.3}", r.mean_promise_hours),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "Evaluation {} to {}, Accuracy(0 to -{}) and breach as order-day averages.\n\n",
            self.eval_start, self.eval_end, self.early_window
        );
        s.push_str(&format!("| model | Accuracy(0 to -{}) | breach | orders | mean promise (h) |\n", self.early_window));
        s.push_str("|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.2}% | {:.2}% | {} | {:.1} |\n",
                r.model,
                100.0 * r.accuracy,
                100.0 * r.breach,
                r.orders,
                r.mean_promise_hours
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.csv`, `report.md` and `report.json` into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::fsio::write_atomic(&dir.join("report.csv"), self.to_csv()?.as_bytes())?;
        crate::fsio::write_atomic(&dir.join("report.md"), self.to_markdown().as_bytes())?;
        crate::fsio::write_atomic(&dir.join("report.json"), self.to_json()?.as_bytes())
    }
}

/// Scores promises: `(order_date, promised_date, delivered_date)` rows.
pub fn score(model: &str, pairs: &[OutcomePair], promise_hours: &[f64], early_window: u32) -> Result<ReportRow> {
    let m = metrics(pairs, early_window)?;
    let mean = if promise_hours.is_empty() { 0.0 } else { promise_hours.iter().sum::<f64>() / promise_hours.len() as f64 };
    Ok(ReportRow { model: model.into(), accuracy: m.accuracy, breach: m.breach, orders: pairs.len(), mean_promise_hours: mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(k: i32) -> Date {
        Date::ymd(2024, 3, 10).unwrap().offset(k)
    }

    fn pair(order: i32, promised: i32, delivered: i32) -> OutcomePair {
        OutcomePair::new(d(order), d(promised), d(delivered)).unwrap()
    }

    #[test]
    fn perfect_promises() {
        let pairs: Vec<OutcomePair> = (0..5).map(|k| pair(0, k + 2, k + 2)).collect();
        let m = metrics(&pairs, 1).unwrap();
        assert_eq!((m.accuracy, m.breach), (1.0, 0.0));
    }

    #[test]
    fn definition_arithmetic() {
        // Promised {d, d, d+1}, delivered {d, d-1, d+3}.
        let pairs = [pair(-5, 0, 0), pair(-5, 0, -1), pair(-5, 1, 3)];
        let m = metrics(&pairs, 1).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.breach - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn early_beyond_window_is_neither() {
        let p = pair(-5, 2, 0);
        assert!(!p.accurate(1) && !p.breached());
        assert!(p.accurate(2));
        let m = metrics(&[p], 1).unwrap();
        assert_eq!((m.accuracy, m.breach), (0.0, 0.0));
    }

    #[test]
    fn period_average_is_unweighted() {
        // Day 0: 1 of 1 accurate. Day 1: 1 of 3 accurate.
        let pairs = [pair(0, 3, 3), pair(1, 3, 3), pair(1, 3, 5), pair(1, 3, 5)];
        let m = metrics(&pairs, 1).unwrap();
        assert!((m.accuracy - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(m.per_day.len(), 2);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(metrics(&[], 1).is_err());
        assert!(OutcomePair::new(d(1), d(2), d(0)).is_err());
    }

    #[test]
    fn report_formats() {
        let r = Report {
            early_window: 1,
            eval_start: d(0),
            eval_end: d(6),
            rows: vec![ReportRow { model: "rule".into(), accuracy: 0.5, breach: 0.25, orders: 10, mean_promise_hours: 40.0 }],
        };
        assert!(r
            .to_csv()
            .unwrap()
            .starts_with("model,accuracy_0_to_-1,breach,orders,mean_promise_hours\nrule,0.500000,0.250000,10,40.000\n"));
        assert!(r.to_markdown().contains("| rule | 50.00% | 25.00% | 10 | 40.0 |"));
        let back: Report = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    fn pairs_strategy() -> impl Strategy<Value = Vec<OutcomePair>> {
        prop::collection::vec((0i32..5, 0i32..8, 0i32..8), 1..80)
            .prop_map(|v| v.into_iter().map(|(o, p, dl)| pair(o, o + p, o + dl)).collect())
    }

    proptest! {
        #[test]
        fn categories_are_disjoint(pairs in pairs_strategy(), w in 1u32..3) {
            let m = metrics(&pairs, w).unwrap();
            for day in &m.per_day {
                prop_assert!(day.accuracy + day.breach <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn order_invariant(pairs in pairs_strategy(), w in 1u32..3) {
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert_eq!(metrics(&pairs, w).unwrap(), metrics(&rev, w).unwrap());
        }

        #[test]
        fn per_day_split_reproduces_period(pairs in pairs_strategy(), w in 1u32..3) {
            let m = metrics(&pairs, w).unwrap();
            let mut acc = 0.0;
            let mut n = 0.0;
            for day in &m.per_day {
                let sub: Vec<OutcomePair> = pairs.iter().filter(|p| p.order_date == day.order_date).copied().collect();
                let dm = metrics(&sub, w).unwrap();
                prop_assert_eq!(dm.accuracy, day.accuracy);
                acc += dm.accuracy;
                n += 1.0;
            }
            prop_assert_eq!(acc / n, m.accuracy);
        }
    }
}
