//! Backlog arithmetic for last-mile centers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Date, NodeId};
use crate::simnet::{CenterDay, PlanRow};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub projected_arrivals: f64,
    /// Queue expected at the start of the landing date.
    pub projected_backlog: f64,
    pub planned_outflow: f64,
}

/// Arrivals minus deliveries at `center` over `[as_of - window, as_of)`.
pub fn pendency_balance(days: &[CenterDay], center: NodeId, as_of: Date, window: u32) -> f64 {
    let from = as_of.offset(-(window as i32));
    days.iter().filter(|d| d.center == center && d.date >= from && d.date < as_of).map(|d| d.arrivals as f64 - d.deliveries as f64).sum()
}

/// Plan rows keyed by (center, date).
pub fn plan_index(plans: &[PlanRow]) -> BTreeMap<(NodeId, Date), PlanRow> {
    plans.iter().map(|p| ((p.center, p.date), *p)).collect()
}

/// Center days strictly before `as_of`, keyed by (center, date).
pub fn day_index(days: &[CenterDay], as_of: Date) -> BTreeMap<(NodeId, Date), CenterDay> {
    days.iter().filter(|d| d.date < as_of).map(|d| ((d.center, d.date), *d)).collect()
}

/// Walks the queue forward from the last known day to `landing`. Planned
/// arrivals and capacity are used where the plan covers a date; otherwise
/// arrivals are the shipments dispatched `modal_transit_days` earlier (or
/// the trailing 7-day dispatch mean for dates not yet shipped) and outflow
/// is the capacity of the same weekday in the most recent known week.
pub fn project_pendency(
    plans: Option<&BTreeMap<(NodeId, Date), PlanRow>>,
    days: &BTreeMap<(NodeId, Date), CenterDay>,
    center: NodeId,
    as_of: Date,
    landing: Date,
    modal_transit_days: i32,
) -> Projection {
    let known = |d: Date| if d < as_of { days.get(&(center, d)) } else { None };
    let trailing: Vec<f64> = (1..=7).filter_map(|k| known(as_of.offset(-k))).map(|d| d.shipped as f64).collect();
    let trailing_ship = if trailing.is_empty() { 0.0 } else { trailing.iter().sum::<f64>() / trailing.len() as f64 };
    let plan = |d: Date| plans.and_then(|p| p.get(&(center, d)));

    let arrivals = |d: Date| -> f64 {
        if let Some(p) = plan(d) {
            return p.planned_arrivals;
        }
        let shipped_on = d.offset(-modal_transit_days);
        match known(shipped_on) {
            Some(k) => k.shipped as f64,
            None => trailing_ship,
        }
    };
    let outflow = |d: Date| -> f64 {
        if let Some(p) = plan(d) {
            return p.planned_capacity;
        }
        let mut back = d.offset(-7);
        while back >= as_of {
            back = back.offset(-7);
        }
        known(back).map_or(0.0, |k| k.capacity)
    };

    let mut backlog = known(as_of.offset(-1)).map_or(0.0, |k| k.backlog as f64);
    let mut d = as_of;
    while d < landing {
        backlog = (backlog + arrivals(d) - outflow(d)).max(0.0);
        d = d.offset(1);
    }
    Projection { projected_arrivals: arrivals(landing), projected_backlog: backlog, planned_outflow: outflow(landing) }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: NodeId = NodeId(31);

    fn day(date: Date, shipped: u32, arrivals: u32, deliveries: u32, backlog: u32, capacity: f64) -> CenterDay {
        CenterDay { date, center: C, shipped, arrivals, deliveries, backlog, capacity, own_staff: 0.0, contract_staff: 0.0 }
    }

    fn plan(date: Date, arrivals: f64, capacity: f64) -> PlanRow {
        PlanRow { date, center: C, planned_ship_volume: arrivals, planned_arrivals: arrivals, planned_capacity: capacity }
    }

    fn d0() -> Date {
        Date::ymd(2024, 2, 5).unwrap()
    }

    #[test]
    fn balance_arithmetic() {
        let days = [day(d0(), 0, 100, 80, 20, 100.0), day(d0().offset(1), 0, 100, 90, 30, 100.0)];
        assert_eq!(pendency_balance(&days, C, d0().offset(2), 2), 30.0);
        assert_eq!(pendency_balance(&days, C, d0().offset(2), 1), 10.0);
        assert_eq!(pendency_balance(&days, C, d0().offset(1), 7), 20.0);
        assert_eq!(pendency_balance(&days, NodeId(1), d0().offset(2), 2), 0.0);
    }

    #[test]
    fn balanced_plan_keeps_zero_backlog() {
        let plans = plan_index(&[plan(d0(), 100.0, 100.0), plan(d0().offset(1), 100.0, 100.0), plan(d0().offset(2), 100.0, 100.0)]);
        for k in 0..3 {
            let p = project_pendency(Some(&plans), &BTreeMap::new(), C, d0(), d0().offset(k), 1);
            assert_eq!(p.projected_backlog, 0.0);
        }
    }

    #[test]
    fn backlog_is_cumulative_difference() {
        let plans = plan_index(&[plan(d0(), 300.0, 100.0), plan(d0().offset(1), 100.0, 100.0)]);
        let p = project_pendency(Some(&plans), &BTreeMap::new(), C, d0(), d0().offset(1), 1);
        assert_eq!(p.projected_backlog, 200.0);
        assert_eq!((p.projected_arrivals, p.planned_outflow), (100.0, 100.0));
    }

    #[test]
    fn history_projection_shifts_by_transit() {
        let hist: Vec<CenterDay> = (1..=14).map(|k| day(d0().offset(-k), 100, 100, 100, 0, 120.0)).collect();
        let idx = day_index(&hist, d0());
        let p = project_pendency(None, &idx, C, d0(), d0().offset(3), 2);
        assert_eq!(p.projected_arrivals, 100.0);
        assert_eq!(p.planned_outflow, 120.0);
        assert_eq!(p.projected_backlog, 0.0);
    }

    #[test]
    fn starts_from_last_known_backlog() {
        let hist = vec![day(d0().offset(-1), 50, 500, 100, 400, 100.0)];
        let idx = day_index(&hist, d0());
        let p = project_pendency(None, &idx, C, d0(), d0(), 1);
        assert_eq!(p.projected_backlog, 400.0);
        // Future rows never leak into the index.
        assert!(day_index(&[day(d0(), 1, 1, 1, 1, 1.0)], d0()).is_empty());
    }
}
