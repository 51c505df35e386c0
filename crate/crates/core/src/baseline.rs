//! Static rule-based promise: configured leg times, dispatch cutoffs and
//! fixed weekend/holiday paddings. It never adapts to data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Date, DayKind, HolidayCalendar, Leg, NodeId, Order, Timestamp, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::fsio;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeHours {
    pub node: NodeId,
    pub hours: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarehouseLegHours {
    pub warehouse: NodeId,
    pub leg: Leg,
    pub hours: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopHours {
    pub from: NodeId,
    pub to: NodeId,
    pub hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCutoffs {
    pub node: NodeId,
    /// Minutes after midnight, ascending. Empty means departures at any time.
    pub minutes: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub vendor_times: Vec<NodeHours>,
    pub warehouse_times: Vec<WarehouseLegHours>,
    pub hop_times: Vec<HopHours>,
    pub lastmile_time: f64,
    pub cutoffs: Vec<NodeCutoffs>,
    pub weekend_pad: f64,
    pub holiday_pad: f64,
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        let times = self
            .vendor_times
            .iter()
            .map(|v| v.hours)
            .chain(self.warehouse_times.iter().map(|w| w.hours))
            .chain(self.hop_times.iter().map(|h| h.hours))
            .chain([self.lastmile_time, self.weekend_pad, self.holiday_pad]);
        for t in times {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::config(format!("rule times must be finite and >= 0, got {t}")));
            }
        }
        for c in &self.cutoffs {
            if c.minutes.windows(2).any(|w| w[0] >= w[1]) || c.minutes.iter().any(|&m| m as i64 >= MINUTES_PER_DAY) {
                return Err(Error::config(format!("cutoffs for node {} must be ascending minutes within a day", c.node)));
            }
        }
        Ok(())
    }

    /// Reads TOML or JSON by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsio::read(path)?).map_err(|_| Error::config(format!("{} is not UTF-8", path.display())))?;
        let cfg: RuleConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vendor_hours(&self, vendor: NodeId) -> Result<f64> {
        self.vendor_times
            .iter()
            .find(|v| v.node == vendor)
            .map(|v| v.hours)
            .ok_or_else(|| Error::config(format!("no vendor time for vendor {vendor}")))
    }

    pub fn warehouse_hours(&self, warehouse: NodeId) -> Result<f64> {
        let mut legs: Vec<&WarehouseLegHours> = self.warehouse_times.iter().filter(|w| w.warehouse == warehouse).collect();
        if legs.is_empty() {
            return Err(Error::config(format!("no warehouse time for warehouse {warehouse}")));
        }
        legs.sort_by_key(|w| w.leg);
        Ok(legs.iter().map(|w| w.hours).sum())
    }

    pub fn hop_hours(&self, from: NodeId, to: NodeId) -> Result<f64> {
        self.hop_times
            .iter()
            .find(|h| h.from == from && h.to == to)
            .map(|h| h.hours)
            .ok_or_else(|| Error::config(format!("no hop time for hop {from}->{to}")))
    }

    pub fn node_cutoffs(&self, node: NodeId) -> Result<&[u32]> {
        self.cutoffs
            .iter()
            .find(|c| c.node == node)
            .map(|c| c.minutes.as_slice())
            .ok_or_else(|| Error::config(format!("no cutoff list for dispatch node {node}")))
    }
}

/// The earliest cutoff at or after `t`. An empty list leaves `t` unchanged.
pub fn roll_to_cutoff(t: Timestamp, cutoffs: &[u32]) -> Timestamp {
    let Some(&first) = cutoffs.first() else {
        return t;
    };
    let day_start = t.date().start();
    let mod_ = t.minute_of_day();
    match cutoffs.iter().find(|&&c| c as i64 >= mod_) {
        Some(&c) => day_start.plus_minutes(c as i64),
        None => day_start.plus_minutes(MINUTES_PER_DAY + first as i64),
    }
}

/// Calendar dates intersecting `[from, to)`.
fn dates_crossed(from: Timestamp, to: Timestamp) -> impl Iterator<Item = Date> {
    let last = if to > from { to.plus_minutes(-1).date().days() } else { from.date().days() - 1 };
    (from.date().days()..=last).map(Date)
}

/// Pad hours for the days crossed between `from` and `to` at the
/// destination region.
fn pads(from: Timestamp, to: Timestamp, region: NodeId, config: &RuleConfig, calendar: &HolidayCalendar) -> f64 {
    dates_crossed(from, to)
        .map(|d| match calendar.day_kind(region, d) {
            DayKind::Weekend => config.weekend_pad,
            DayKind::Fixed | DayKind::Flexible => config.holiday_pad,
            DayKind::Bau => 0.0,
        })
        .sum()
}

/// Runs the lane from the origin dispatch onward; `t` is when the
/// shipment is ready at the origin.
fn ship_from(order: &Order, ready: Timestamp, config: &RuleConfig) -> Result<Timestamp> {
    let nodes = order.lane.nodes();
    let mut t = ready;
    for w in nodes.windows(2) {
        t = roll_to_cutoff(t, config.node_cutoffs(w[0])?);
        t = t.plus_hours(config.hop_hours(w[0], w[1])?);
    }
    Ok(t.plus_hours(config.lastmile_time))
}

/// Promised delivery time for an order at placement.
pub fn rule_promise(order: &Order, config: &RuleConfig, calendar: &HolidayCalendar) -> Result<Timestamp> {
    let pre_ship = match order.source {
        crate::domain::Source::Vendor(v) => config.vendor_hours(v)?,
        crate::domain::Source::Warehouse(w) => config.warehouse_hours(w)?,
    };
    let ready = order.placed_at.plus_hours(pre_ship);
    let unpadded = ship_from(order, ready, config)?;
    let pad = pads(order.placed_at, unpadded, order.lane.destination(), config, calendar);
    Ok(unpadded.plus_hours(pad))
}

/// Promise for the shipping part only, given the actual dispatch departure
/// from the origin. Pads count the days crossed after `shipped_at`.
pub fn rule_shipping_promise(order: &Order, shipped_at: Timestamp, config: &RuleConfig, calendar: &HolidayCalendar) -> Result<Timestamp> {
    let nodes = order.lane.nodes();
    let mut t = shipped_at.plus_hours(config.hop_hours(nodes[0], nodes[1])?);
    for w in nodes.windows(2).skip(1) {
        t = roll_to_cutoff(t, config.node_cutoffs(w[0])?);
        t = t.plus_hours(config.hop_hours(w[0], w[1])?);
    }
    let unpadded = t.plus_hours(config.lastmile_time);
    let pad = pads(shipped_at, unpadded, order.lane.destination(), config, calendar);
    Ok(unpadded.plus_hours(pad))
}

/// Per-node lookup of cutoff lists, for callers composing their own legs.
pub fn cutoff_table(config: &RuleConfig) -> BTreeMap<NodeId, Vec<u32>> {
    config.cutoffs.iter().map(|c| (c.node, c.minutes.clone())).collect()
}
