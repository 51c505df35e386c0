//! Seeded synthetic supply chain.
//!
//! Orders flow from a vendor or warehouse through dispatch cutoffs and
//! lognormal linehaul hops into last-mile centers, where a daily FIFO queue
//! with limited capacity turns load spikes, weekends and holidays into
//! pendency. Everything is a pure function of the scenario and the seed.

mod engine;
mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baseline::{HopHours, NodeCutoffs, NodeHours, RuleConfig, WarehouseLegHours};
use crate::domain::{CalendarEntry, Carrier, CityTier, Date, HolidayCalendar, HolidayKind, Lane, Leg, NodeId};
use crate::error::{Error, Result};
use crate::fsio;

pub use engine::{generate, ground_truth_quantile, CenterDay, PlanRow, SimOutput};
pub use io::{read_center_days, read_plans, read_records, write_center_days, write_plans, write_records, SimFiles};

/// `exp(log_mean + log_sd * z)` hours, `z` standard normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl LogNormal {
    pub fn with_median(hours: f64, log_sd: f64) -> Self {
        LogNormal { log_mean: hours.ln(), log_sd }
    }

    /// A point mass at `hours`.
    pub fn fixed(hours: f64) -> Self {
        Self::with_median(hours, 0.0)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.log_mean + self.log_sd * z).exp()
    }

    pub fn median(&self) -> f64 {
        self.log_mean.exp()
    }

    pub fn mean(&self) -> f64 {
        (self.log_mean + 0.5 * self.log_sd * self.log_sd).exp()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !self.log_mean.is_finite() || !(self.log_sd >= 0.0 && self.log_sd.is_finite()) {
            return Err(Error::config(format!("{what}: bad lognormal {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarehouseSpec {
    pub id: NodeId,
    pub shift_start_hour: f64,
    /// 24 or more means the floor never stops.
    pub shift_hours: f64,
    /// Work hours inside shifts.
    pub processing: LogNormal,
    /// Extra consolidation work for multi-item orders.
    pub multi_item_wait: LogNormal,
    /// Minutes after midnight.
    pub dispatch_cutoffs: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VendorSpec {
    pub id: NodeId,
    pub vendor_type: String,
    /// Designated purchase-order processing hours, continuous clock.
    pub processing: LogNormal,
    pub pickup_cutoffs: Vec<u32>,
    pub coloader: bool,
    pub max_processing_hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PincodeSpec {
    pub pincode: String,
    pub city_tier: CityTier,
    pub weight: f64,
    /// Added to every delivery run into this pincode.
    pub extra_hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub id: NodeId,
    /// Packets per day before multipliers.
    pub capacity_per_day: f64,
    /// Capacity multipliers, Monday first.
    pub weekday_multipliers: [f64; 7],
    /// Absenteeism written to the calendar for every weekend day.
    pub weekend_absenteeism: f64,
    pub sort_hours: f64,
    /// Delivery runs leave at this hour.
    pub run_start_hour: f64,
    /// Packets sorted after this hour wait for the next day's run.
    pub run_cutoff_hour: f64,
    pub delivery: LogNormal,
    pub pincodes: Vec<PincodeSpec>,
    pub own_staff: f64,
    pub contract_staff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub lane: Lane,
    /// One distribution per hop, in route order.
    pub hops: Vec<LogNormal>,
    /// Share of order volume.
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolidayEffect {
    pub kind: HolidayKind,
    pub capacity_multiplier: f64,
    pub transit_delay_hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub warehouses: Vec<WarehouseSpec>,
    pub vendors: Vec<VendorSpec>,
    pub hubs: Vec<NodeId>,
    pub lastmile_centers: Vec<CenterSpec>,
    pub lanes: Vec<LaneSpec>,
    /// Order volume multipliers, Monday first.
    pub weekday_volume: [f64; 7],
    /// Hop time multipliers by departure weekday.
    pub weekday_transit: [f64; 7],
    pub holiday_effects: Vec<HolidayEffect>,
    pub calendar: HolidayCalendar,
    pub multi_item_share: f64,
    pub max_items: u32,
    pub home_share: f64,
}

/// A high revenue day sale: order volume is multiplied over its span and
/// plan tables are published around it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrdEvent {
    pub start: Date,
    pub duration_days: u32,
    pub volume_multiplier: f64,
    #[serde(default = "one")]
    pub capacity_multiplier: f64,
    /// Plans deviate from the truth by a uniform factor in `1 ± plan_noise`.
    pub plan_noise: f64,
}

fn one() -> f64 {
    1.0
}

/// Days before the event and after its end covered by plan tables.
pub const PLAN_LEAD_DAYS: i32 = 3;
pub const PLAN_TAIL_DAYS: i32 = 7;

impl HrdEvent {
    pub fn end(&self) -> Date {
        self.start.offset(self.duration_days as i32)
    }

    pub fn contains(&self, d: Date) -> bool {
        d >= self.start && d < self.end()
    }

    pub fn plan_span(&self) -> std::ops::Range<Date> {
        self.start.offset(-PLAN_LEAD_DAYS)..self.end().offset(PLAN_TAIL_DAYS)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume_multiplier >= 1.0 && self.volume_multiplier.is_finite()) {
            return Err(Error::config(format!("HRD volume multiplier must be at least 1, got {}", self.volume_multiplier)));
        }
        if !(self.capacity_multiplier > 0.0 && self.capacity_multiplier.is_finite()) {
            return Err(Error::config("HRD capacity multiplier must be positive"));
        }
        if self.duration_days == 0 {
            return Err(Error::config("HRD event must last at least one day"));
        }
        if !(0.0..1.0).contains(&self.plan_noise) {
            return Err(Error::config(format!("plan noise must be in [0, 1), got {}", self.plan_noise)));
        }
        Ok(())
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let mut nodes = BTreeSet::new();
        let all = self
            .warehouses
            .iter()
            .map(|w| w.id)
            .chain(self.vendors.iter().map(|v| v.id))
            .chain(self.hubs.iter().copied())
            .chain(self.lastmile_centers.iter().map(|c| c.id));
        for n in all {
            if !nodes.insert(n) {
                return Err(Error::config(format!("node {n} declared twice")));
            }
        }
        if self.lanes.is_empty() {
            return Err(Error::config("network has no lanes"));
        }
        for l in &self.lanes {
            let key = l.lane.key();
            if let Some(n) = l.lane.nodes().iter().find(|n| !nodes.contains(n)) {
                return Err(Error::config(format!("lane {key}: unknown node {n}")));
            }
            if self.origin(l.lane.origin()).is_none() {
                return Err(Error::config(format!("lane {key}: origin is neither a warehouse nor a vendor")));
            }
            if self.center(l.lane.destination()).is_none() {
                return Err(Error::config(format!("lane {key}: destination is not a last-mile center")));
            }
            if l.hops.len() != l.lane.nodes().len() - 1 {
                return Err(Error::config(format!("lane {key}: {} hop distributions for {} hops", l.hops.len(), l.lane.nodes().len() - 1)));
            }
            for h in &l.hops {
                h.validate(&key)?;
            }
            if !(l.weight > 0.0 && l.weight.is_finite()) {
                return Err(Error::config(format!("lane {key}: weight must be positive")));
            }
        }
        for c in &self.lastmile_centers {
            if !(c.capacity_per_day > 0.0 && c.capacity_per_day.is_finite()) {
                return Err(Error::config(format!("center {}: capacity must be positive", c.id)));
            }
            if c.weekday_multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                return Err(Error::config(format!("center {}: weekday multipliers must be positive", c.id)));
            }
            if c.pincodes.is_empty() || c.pincodes.iter().any(|p| !(p.weight > 0.0)) {
                return Err(Error::config(format!("center {}: needs pincodes with positive weights", c.id)));
            }
            if !(0.0..=1.0).contains(&c.weekend_absenteeism) {
                return Err(Error::config(format!("center {}: weekend absenteeism outside [0, 1]", c.id)));
            }
            c.delivery.validate("center delivery")?;
        }
        for w in &self.warehouses {
            w.processing.validate("warehouse processing")?;
            w.multi_item_wait.validate("warehouse consolidation")?;
            if !(w.shift_hours > 0.0) {
                return Err(Error::config(format!("warehouse {}: shift must be positive", w.id)));
            }
        }
        for v in &self.vendors {
            v.processing.validate("vendor processing")?;
        }
        let positive = |m: &[f64; 7]| m.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.weekday_volume) || !positive(&self.weekday_transit) {
            return Err(Error::config("weekday multipliers must be positive"));
        }
        if self.holiday_effects.iter().any(|h| !(h.capacity_multiplier > 0.0) || h.transit_delay_hours < 0.0) {
            return Err(Error::config("holiday capacity multipliers must be positive and delays non-negative"));
        }
        if self.max_items == 0 || !(0.0..=1.0).contains(&self.multi_item_share) || !(0.0..=1.0).contains(&self.home_share) {
            return Err(Error::config("bad item or address mix"));
        }
        Ok(())
    }

    pub fn origin(&self, node: NodeId) -> Option<Origin<'_>> {
        if let Some(w) = self.warehouses.iter().find(|w| w.id == node) {
            return Some(Origin::Warehouse(w));
        }
        self.vendors.iter().find(|v| v.id == node).map(Origin::Vendor)
    }

    pub fn center(&self, node: NodeId) -> Option<&CenterSpec> {
        self.lastmile_centers.iter().find(|c| c.id == node)
    }

    pub fn vendor(&self, node: NodeId) -> Option<&VendorSpec> {
        self.vendors.iter().find(|v| v.id == node)
    }

    pub fn lane_spec(&self, lane: &Lane) -> Option<&LaneSpec> {
        self.lanes.iter().find(|l| &l.lane == lane)
    }

    pub fn holiday_effect(&self, kind: HolidayKind) -> Option<&HolidayEffect> {
        self.holiday_effects.iter().find(|h| h.kind == kind)
    }

    pub fn center_ids(&self) -> Vec<NodeId> {
        self.lastmile_centers.iter().map(|c| c.id).collect()
    }

    /// Static rules an operator would write from nominal timings: median
    /// processing and hop times, mean sort-plus-delivery time across
    /// centers, the configured origin cutoffs and fixed pads.
    pub fn rule_config(&self, weekend_pad: f64, holiday_pad: f64) -> RuleConfig {
        let mut hops: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
        for l in &self.lanes {
            for ((from, to), h) in l.lane.hops().zip(&l.hops) {
                hops.entry((from, to)).or_insert(h.median());
            }
        }
        let lastmile: f64 = self.lastmile_centers.iter().map(|c| c.sort_hours + c.delivery.median()).sum::<f64>()
            / self.lastmile_centers.len().max(1) as f64;
        let mut cutoffs: Vec<NodeCutoffs> = self
            .warehouses
            .iter()
            .map(|w| NodeCutoffs { node: w.id, minutes: w.dispatch_cutoffs.clone() })
            .chain(self.vendors.iter().map(|v| NodeCutoffs { node: v.id, minutes: v.pickup_cutoffs.clone() }))
            .collect();
        cutoffs.extend(self.hubs.iter().map(|&h| NodeCutoffs { node: h, minutes: Vec::new() }));
        RuleConfig {
            vendor_times: self.vendors.iter().map(|v| NodeHours { node: v.id, hours: v.processing.median() }).collect(),
            warehouse_times: self
                .warehouses
                .iter()
                .map(|w| WarehouseLegHours { warehouse: w.id, leg: Leg::Warehouse, hours: w.processing.median() })
                .collect(),
            hop_times: hops.into_iter().map(|((from, to), hours)| HopHours { from, to, hours }).collect(),
            lastmile_time: lastmile,
            cutoffs,
            weekend_pad,
            holiday_pad,
        }
    }

    /// Origin dispatch cutoffs, as used when quoting.
    pub fn origin_cutoffs(&self) -> Vec<NodeCutoffs> {
        self.rule_config(0.0, 0.0).cutoffs.into_iter().filter(|c| self.origin(c.node).is_some()).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Origin<'a> {
    Warehouse(&'a WarehouseSpec),
    Vendor(&'a VendorSpec),
}

impl Origin<'_> {
    pub fn cutoffs(&self) -> &[u32] {
        match self {
            Origin::Warehouse(w) => &w.dispatch_cutoffs,
            Origin::Vendor(v) => &v.pickup_cutoffs,
        }
    }
}

/// A complete simulation setup as read from a scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start_date: Date,
    pub days: u32,
    pub orders_per_day: u32,
    pub network: NetworkSpec,
    #[serde(default)]
    pub events: Vec<HrdEvent>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::config("scenario must simulate at least one day"));
        }
        self.network.validate()?;
        for e in &self.events {
            e.validate()?;
        }
        Ok(())
    }

    /// TOML or JSON, by extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsio::read(path)?).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let s: Scenario = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn end_date(&self) -> Date {
        self.start_date.offset(self.days as i32)
    }

    /// Four centers fed by two warehouses and two vendors through three
    /// hubs, thirteen weeks from Monday 2024-01-01, with a two-day 3x sale
    /// in week six and capacity about 1.4x the average daily load.
    pub fn default_scenario() -> Self {
        let start = Date::ymd(2024, 1, 1).expect("valid date");
        Scenario {
            start_date: start,
            days: 91,
            orders_per_day: 1600,
            network: default_network(start, 91),
            events: vec![HrdEvent {
                start: start.offset(38),
                duration_days: 2,
                volume_multiplier: 3.0,
                capacity_multiplier: 1.0,
                plan_noise: 0.05,
            }],
        }
    }

    /// The default scenario with a second sale inside the final week.
    pub fn hrd_scenario() -> Self {
        let mut s = Self::default_scenario();
        s.events.push(HrdEvent {
            start: s.start_date.offset(85),
            duration_days: 2,
            volume_multiplier: 3.0,
            capacity_multiplier: 1.0,
            plan_noise: 0.05,
        });
        s
    }
}

const WAREHOUSES: [u32; 2] = [1, 2];
const VENDORS: [u32; 2] = [11, 12];
const HUBS: [u32; 3] = [21, 22, 23];
const CENTERS: [u32; 4] = [31, 32, 33, 34];

fn default_network(start: Date, days: i32) -> NetworkSpec {
    let cutoffs_wh = vec![600, 960, 1320];
    let warehouses = WAREHOUSES
        .iter()
        .enumerate()
        .map(|(i, &id)| WarehouseSpec {
            id: NodeId(id),
            shift_start_hour: 6.0,
            shift_hours: 16.0,
            processing: LogNormal::with_median(3.0 + i as f64, 0.5),
            multi_item_wait: LogNormal::with_median(4.0, 0.6),
            dispatch_cutoffs: cutoffs_wh.clone(),
        })
        .collect();
    let vendors = VENDORS
        .iter()
        .enumerate()
        .map(|(i, &id)| VendorSpec {
            id: NodeId(id),
            vendor_type: if i == 0 { "brand".into() } else { "marketplace".into() },
            processing: LogNormal::with_median(18.0 + 8.0 * i as f64, 0.45),
            pickup_cutoffs: vec![840],
            coloader: i == 1,
            max_processing_hours: 48.0 + 24.0 * i as f64,
        })
        .collect();
    let centers: Vec<CenterSpec> = CENTERS
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let base = 5600 + 100 * i as u32;
            let tiers = [CityTier::Tier1, CityTier::Tier1, CityTier::Tier2, CityTier::Tier2, CityTier::Tier3, CityTier::Tier3];
            let pincodes = (0..6u32)
                .map(|p| PincodeSpec {
                    pincode: format!("{}{:02}", base + p / 3, p),
                    city_tier: tiers[p as usize],
                    // The last pincode is rare and remote.
                    weight: if p == 5 { 0.02 } else { 1.0 },
                    extra_hours: [0.0, 1.0, 2.0, 3.0, 6.0, 18.0][p as usize],
                })
                .collect();
            CenterSpec {
                id: NodeId(id),
                capacity_per_day: 560.0,
                weekday_multipliers: [1.0, 1.0, 1.0, 1.0, 1.0, 0.6, 0.5],
                weekend_absenteeism: 0.0,
                sort_hours: 1.5,
                run_start_hour: 9.0,
                run_cutoff_hour: 18.0,
                delivery: LogNormal::with_median(4.0, 0.7),
                pincodes,
                own_staff: 40.0,
                contract_staff: 15.0,
            }
        })
        .collect();

    let mut lanes = Vec::new();
    for (oi, &origin) in WAREHOUSES.iter().chain(&VENDORS).enumerate() {
        let is_vendor = oi >= 2;
        let hub = if is_vendor { 23 } else { HUBS[oi] };
        for (ci, &center) in CENTERS.iter().enumerate() {
            let carrier = if center == 34 { Carrier::ThirdParty } else { Carrier::OwnLogistics };
            // Far centers go through a second hub.
            let far = (ci + oi) % 3 == 2;
            let mut path = vec![NodeId(origin), NodeId(hub)];
            let mut hops = vec![LogNormal::with_median(5.0, 0.2)];
            if far {
                let second = if hub == 22 { 21 } else { 22 };
                path.push(NodeId(second));
                hops.push(LogNormal::with_median(10.0, 0.25));
            }
            path.push(NodeId(center));
            let sd = if carrier == Carrier::ThirdParty { 0.65 } else { 0.45 };
            hops.push(LogNormal::with_median(8.0 + 4.0 * ci as f64, sd));
            let lane = Lane::new(NodeId(origin), NodeId(center), path, carrier).expect("static lane is valid");
            let weight = if is_vendor { 0.5 } else { 2.0 };
            lanes.push(LaneSpec { lane, hops, weight });
        }
    }

    NetworkSpec {
        warehouses,
        vendors,
        hubs: HUBS.iter().map(|&h| NodeId(h)).collect(),
        lastmile_centers: centers,
        lanes,
        weekday_volume: [1.05, 1.0, 1.0, 1.0, 1.05, 0.95, 0.95],
        weekday_transit: [1.0, 1.0, 1.0, 1.0, 1.05, 1.1, 1.15],
        holiday_effects: vec![
            HolidayEffect { kind: HolidayKind::Fixed, capacity_multiplier: 0.35, transit_delay_hours: 8.0 },
            HolidayEffect { kind: HolidayKind::Flexible, capacity_multiplier: 0.75, transit_delay_hours: 3.0 },
        ],
        calendar: default_holidays(start, days),
        multi_item_share: 0.25,
        max_items: 4,
        home_share: 0.7,
    }
}

/// A handful of weekday holidays per center, with national fixed holidays
/// shared by all and flexible ones staggered by center.
fn default_holidays(start: Date, days: i32) -> HolidayCalendar {
    let mut cal = HolidayCalendar::new();
    let weekday_at = |mut d: Date| {
        while d.is_weekend() {
            d = d.offset(1);
        }
        d
    };
    for (i, &c) in CENTERS.iter().enumerate() {
        let mut taken = BTreeMap::new();
        for (k, off) in [15, 50, 80].into_iter().enumerate() {
            let d = weekday_at(start.offset(off));
            taken.insert(d, (HolidayKind::Fixed, 0.45 + 0.03 * k as f64));
        }
        for (k, off) in [8, 30, 58, 72].into_iter().enumerate() {
            let d = weekday_at(start.offset(off + i as i32));
            taken.entry(d).or_insert((HolidayKind::Flexible, 0.2 + 0.02 * k as f64));
        }
        for (date, (kind, rate)) in taken {
            if date.days() < start.days() + days {
                cal.insert(CalendarEntry { region: NodeId(c), date, kind, absenteeism_rate: rate }).expect("unique");
            }
        }
    }
    cal
}

/// Uniform factor in `1 ± noise`.
fn noise_factor<R: rand::Rng + ?Sized>(rng: &mut R, noise: f64) -> f64 {
    1.0 + noise * (2.0 * rng.random::<f64>() - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid_and_round_trips() {
        let s = Scenario::default_scenario();
        s.validate().unwrap();
        let toml = s.to_toml().unwrap();
        let back: Scenario = toml::from_str(&toml).unwrap();
        assert_eq!(back, s);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
    }

    #[test]
    fn validation_catches_bad_networks() {
        let mut s = Scenario::default_scenario();
        s.network.lastmile_centers[0].capacity_per_day = 0.0;
        assert!(s.validate().is_err());
        let mut s = Scenario::default_scenario();
        s.network.lanes[0].hops.pop();
        assert!(s.validate().is_err());
        let mut s = Scenario::default_scenario();
        s.network.hubs.clear();
        assert!(s.validate().is_err());
        let mut s = Scenario::default_scenario();
        s.events[0].volume_multiplier = 0.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn lognormal_moments() {
        let d = LogNormal::with_median(6.0, 0.0);
        assert!((d.median() - 6.0).abs() < 1e-12 && (d.mean() - 6.0).abs() < 1e-12);
        let mut rng = crate::rng::stream(1, "t");
        assert!((d.sample(&mut rng) - 6.0).abs() < 1e-12);
    }
}
