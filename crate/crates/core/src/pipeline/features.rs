//! Point-in-time feature rows.
//!
//! A [`Snapshot`] holds every statistic derived from history known before
//! its `as_of` date; rows for orders on or after that date are computed from
//! the snapshot, the static [`Environment`] and the order alone.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pendency::{self, Projection};
use super::recipe::{FeatureDef, FeatureRecipe, GeoLevel, Quantity};
use crate::breach::FeedbackFeatures;
use crate::calendar::{CalendarParams, HandlingTable, LastMileIndex};
use crate::domain::{
    CategoricalColumn, Dataset, Date, DayKind, DeliveryRecord, HolidayCalendar, Leg, NodeId, NumericColumn, Order, Source, Timestamp,
};
use crate::error::{Error, Result};
use crate::simnet::{CenterDay, HrdEvent, PlanRow, Scenario, SimOutput, VendorSpec};
use crate::stats;

/// Observations a geo level needs before its statistic is trusted.
pub const BACKOFF_MIN_COUNT: u32 = 30;
/// Days of center log kept in a snapshot beyond the longest window.
const LOG_DAYS: i32 = 35;
/// Days of deliveries used to find the typical transit time.
const TRANSIT_DAYS: i32 = 28;
/// Days ahead covered by a snapshot's handling table.
const HANDLING_HORIZON: i32 = 21;
/// Days of history behind the breach feedback features.
const FEEDBACK_DAYS: i32 = 14;

/// The three predicted legs of a promise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelLeg {
    Vendor,
    Warehouse,
    Shipping,
}

impl ModelLeg {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelLeg::Vendor => "vendor",
            ModelLeg::Warehouse => "warehouse",
            ModelLeg::Shipping => "shipping",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vendor" => Ok(ModelLeg::Vendor),
            "warehouse" => Ok(ModelLeg::Warehouse),
            "shipping" => Ok(ModelLeg::Shipping),
            _ => Err(Error::config(format!("unknown leg {s:?}; expected vendor, warehouse or shipping"))),
        }
    }

    pub fn applies_to(self, order: &Order) -> bool {
        match self {
            ModelLeg::Vendor => matches!(order.source, Source::Vendor(_)),
            ModelLeg::Warehouse => matches!(order.source, Source::Warehouse(_)),
            ModelLeg::Shipping => true,
        }
    }

    /// When the leg's clock starts.
    pub fn start(self, r: &DeliveryRecord) -> Timestamp {
        match self {
            ModelLeg::Shipping => r.shipped_at,
            _ => r.order.placed_at,
        }
    }

    pub fn target(self, r: &DeliveryRecord) -> Option<f64> {
        match self {
            ModelLeg::Vendor => r.leg(Leg::Vendor),
            ModelLeg::Warehouse => r.leg(Leg::Warehouse),
            ModelLeg::Shipping => Some(r.shipping_hours()),
        }
    }
}

/// Inputs that do not come from delivery history: calendars, vendor
/// metadata, the sale schedule and, optionally, published plans.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub calendar: HolidayCalendar,
    pub centers: Vec<NodeId>,
    pub vendors: Vec<VendorSpec>,
    pub events: Vec<HrdEvent>,
    pub plans: Option<Vec<PlanRow>>,
    #[serde(default)]
    pub calendar_params: CalendarParams,
}

impl Environment {
    pub fn from_sim(scenario: &Scenario, out: &SimOutput, with_plans: bool) -> Self {
        Environment {
            calendar: out.calendar.clone(),
            centers: scenario.network.center_ids(),
            vendors: scenario.network.vendors.clone(),
            events: scenario.events.clone(),
            plans: with_plans.then(|| out.plans.clone()),
            calendar_params: CalendarParams::default(),
        }
    }
}

/// Statistics from history strictly before `as_of`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub as_of: Date,
    /// Per recipe feature: key to aggregated value.
    keyed: Vec<BTreeMap<String, f64>>,
    /// Per recipe feature, per backoff level: key to (count, value).
    geo: Vec<Vec<BTreeMap<String, (u32, f64)>>>,
    center_days: Vec<CenterDay>,
    lane_transit_days: BTreeMap<String, i32>,
    center_transit_days: BTreeMap<NodeId, i32>,
    handling: HandlingTable,
    /// Lane key to the spread of linehaul hours over the feedback window.
    lane_linehaul_sd: BTreeMap<String, f64>,
    /// `center|date` to mean shipping hours of that day's dispatches.
    proxy_hours: BTreeMap<String, f64>,
}

/// Delivery history ordered by delivery time, so that the records known on a
/// date and those inside a trailing window are contiguous. Each record is
/// flattened to interned keys and leg hours once, up front.
pub struct History<'a> {
    rows: Vec<HistoryRow>,
    keys: Vec<String>,
    center_days: &'a [CenterDay],
    lastmile: LastMileIndex,
}

struct HistoryRow {
    delivered_at: Timestamp,
    shipped_on: Date,
    center: NodeId,
    lane: u32,
    origin: u32,
    destination: u32,
    /// Pincode, prefix, tier and global keys.
    geo: [u32; 4],
    shipping: f64,
    /// NaN when the leg is absent.
    linehaul: f64,
    lastmile: f64,
    pre_ship: f64,
    transit_days: i32,
}

impl<'a> History<'a> {
    pub fn new(records: &'a [DeliveryRecord], center_days: &'a [CenterDay]) -> Self {
        let mut sorted: Vec<&DeliveryRecord> = records.iter().collect();
        sorted.sort_by_key(|r| (r.delivered_at, r.order.order_id));
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut keys = Vec::new();
        let mut intern = |k: String| -> u32 {
            *ids.entry(k).or_insert_with_key(|k| {
                keys.push(k.clone());
                keys.len() as u32 - 1
            })
        };
        let rows = sorted
            .iter()
            .map(|r| {
                let o = &r.order;
                HistoryRow {
                    delivered_at: r.delivered_at,
                    shipped_on: r.shipped_at.date(),
                    center: o.lane.destination(),
                    lane: intern(o.lane.key()),
                    origin: intern(o.lane.origin().to_string()),
                    destination: intern(o.lane.destination().to_string()),
                    geo: [GeoLevel::Pincode, GeoLevel::Prefix, GeoLevel::Tier, GeoLevel::Global].map(|l| intern(geo_key(l, o))),
                    shipping: r.shipping_hours(),
                    linehaul: r.leg(Leg::Linehaul).unwrap_or(f64::NAN),
                    lastmile: r.leg(Leg::Lastmile).unwrap_or(f64::NAN),
                    pre_ship: r.pre_ship_hours(),
                    transit_days: r.shipped_at.date().days_until(r.center_arrival().date()),
                }
            })
            .collect();
        History { rows, keys, center_days, lastmile: LastMileIndex::new(records) }
    }

    /// Rows delivered in `[as_of - days, as_of)`.
    fn window(&self, as_of: Date, days: i32) -> &[HistoryRow] {
        let from = self.rows.partition_point(|r| r.delivered_at < as_of.offset(-days).start());
        &self.known(as_of)[from..]
    }

    fn known(&self, as_of: Date) -> &[HistoryRow] {
        &self.rows[..self.rows.partition_point(|r| r.delivered_at < as_of.start())]
    }

    /// Values grouped by key.
    fn group<T>(&self, rows: &[HistoryRow], pick: impl Fn(&HistoryRow) -> Option<(u32, T)>) -> BTreeMap<String, Vec<T>> {
        let mut groups: HashMap<u32, Vec<T>> = HashMap::new();
        for r in rows {
            if let Some((k, v)) = pick(r) {
                groups.entry(k).or_default().push(v);
            }
        }
        groups.into_iter().map(|(k, v)| (self.keys[k as usize].clone(), v)).collect()
    }
}

fn record_key(q: Quantity, r: &HistoryRow) -> u32 {
    match q {
        Quantity::LaneShippingHours | Quantity::LaneLinehaulHours => r.lane,
        Quantity::OriginPreShipHours => r.origin,
        _ => r.destination,
    }
}

fn record_value(q: Quantity, r: &HistoryRow) -> Option<f64> {
    let v = match q {
        Quantity::LaneShippingHours => r.shipping,
        Quantity::LaneLinehaulHours => r.linehaul,
        Quantity::OriginPreShipHours => r.pre_ship,
        Quantity::CenterLastmileHours | Quantity::GeoLastmileHours => r.lastmile,
        _ => return None,
    };
    (!v.is_nan()).then_some(v)
}

fn geo_key(level: GeoLevel, order: &Order) -> String {
    match level {
        GeoLevel::Pincode => order.geo.pincode(),
        GeoLevel::Prefix => order.geo.pincode_prefix(),
        GeoLevel::Tier => order.geo.city_tier().as_str(),
        GeoLevel::Global => "*",
    }
    .to_owned()
}

type GroupCache = HashMap<(Quantity, u32, Option<GeoLevel>), BTreeMap<String, Vec<f64>>>;

/// Smallest most frequent value.
fn mode(values: &[i32]) -> Option<i32> {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(*v).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(v, _)| v)
}

fn proxy_key(center: NodeId, date: Date) -> String {
    format!("{center}|{date}")
}

impl Snapshot {
    /// Uses only records delivered, and center days dated, before `as_of`.
    pub fn build(
        env: &Environment,
        records: &[DeliveryRecord],
        center_days: &[CenterDay],
        recipe: &FeatureRecipe,
        as_of: Date,
    ) -> Result<Self> {
        Self::from_history(env, &History::new(records, center_days), recipe, as_of)
    }

    pub fn from_history(env: &Environment, history: &History<'_>, recipe: &FeatureRecipe, as_of: Date) -> Result<Self> {
        recipe.validate()?;
        let mut keyed = Vec::with_capacity(recipe.features.len());
        let mut geo = Vec::with_capacity(recipe.features.len());
        // Features sharing a quantity and window share one grouping pass.
        let mut groups = GroupCache::new();
        for f in &recipe.features {
            let q = f.quantity;
            let window = history.window(as_of, f.window_days as i32);
            let grouped = |groups: &mut GroupCache, level: Option<GeoLevel>| -> BTreeMap<String, Vec<f64>> {
                groups
                    .entry((q, f.window_days, level))
                    .or_insert_with(|| {
                        history.group(window, |r| {
                            let key = level.map_or_else(|| record_key(q, r), |l| r.geo[l as usize]);
                            record_value(q, r).map(|v| (key, v))
                        })
                    })
                    .clone()
            };
            let mut k = BTreeMap::new();
            let mut g = Vec::new();
            if q == Quantity::GeoLastmileHours {
                for &level in &f.backoff {
                    g.push(
                        grouped(&mut groups, Some(level))
                            .into_iter()
                            .map(|(key, v)| (key, (v.len() as u32, f.aggregation.apply(&v))))
                            .filter(|(_, (_, v))| v.is_finite())
                            .collect(),
                    );
                }
            } else if q.from_records() {
                k = grouped(&mut groups, None)
                    .into_iter()
                    .map(|(key, v)| (key, f.aggregation.apply(&v)))
                    .filter(|(_, v)| v.is_finite())
                    .collect();
            }
            keyed.push(k);
            geo.push(g);
        }

        let longest = recipe.features.iter().map(|f| f.window_days as i32).max().unwrap_or(1);
        let log_from = as_of.offset(-(LOG_DAYS.max(longest)));
        let log: Vec<CenterDay> = history.center_days.iter().filter(|d| d.date >= log_from && d.date < as_of).copied().collect();

        let transit = history.window(as_of, TRANSIT_DAYS);
        let lane_transit_days =
            history.group(transit, |r| Some((r.lane, r.transit_days))).into_iter().filter_map(|(k, v)| mode(&v).map(|m| (k, m))).collect();
        let mut center_offsets: BTreeMap<NodeId, Vec<i32>> = BTreeMap::new();
        for r in transit {
            center_offsets.entry(r.center).or_default().push(r.transit_days);
        }
        let center_transit_days = center_offsets.into_iter().filter_map(|(k, v)| mode(&v).map(|m| (k, m))).collect();

        let known = history.known(as_of);
        let handling = HandlingTable::from_index(
            &env.calendar,
            &history.lastmile,
            &env.centers,
            as_of..as_of.offset(HANDLING_HORIZON),
            as_of,
            &env.calendar_params,
        )?;

        let lane_linehaul_sd = history
            .group(history.window(as_of, FEEDBACK_DAYS), |r| record_value(Quantity::LaneLinehaulHours, r).map(|v| (r.lane, v)))
            .into_iter()
            .filter_map(|(k, v)| stats::sd(&v).map(|s| (k, s)))
            .collect();

        let mut proxy_hours = BTreeMap::new();
        if recipe.features.iter().any(|f| f.quantity == Quantity::HrdProxyHours) {
            let mut sums: BTreeMap<(NodeId, Date), (f64, usize)> = BTreeMap::new();
            for ev in env.events.iter().filter(|e| e.plan_span().start < as_of) {
                let span = ev.plan_span();
                for r in known.iter().filter(|r| span.contains(&r.shipped_on)) {
                    let e = sums.entry((r.center, r.shipped_on)).or_default();
                    e.0 += r.shipping;
                    e.1 += 1;
                }
            }
            proxy_hours = sums.into_iter().map(|((c, d), (s, n))| (proxy_key(c, d), s / n as f64)).collect();
        }

        Ok(Snapshot {
            as_of,
            keyed,
            geo,
            center_days: log,
            lane_transit_days,
            center_transit_days,
            handling,
            lane_linehaul_sd,
            proxy_hours,
        })
    }

    /// Typical whole days from dispatch to center arrival.
    pub fn transit_days(&self, order: &Order) -> i32 {
        self.lane_transit_days
            .get(&order.lane.key())
            .or_else(|| self.center_transit_days.get(&order.lane.destination()))
            .copied()
            .unwrap_or(1)
    }
}

/// One prediction request: an order and when the predicted leg starts.
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub order: &'a Order,
    pub start: Timestamp,
    /// Known outcome for training rows.
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Num(f64),
    Cat(Option<String>),
}

/// Picks the first level with enough observations, or the last level.
pub fn resolve_backoff(levels: &[GeoLevel], count_at: impl Fn(GeoLevel) -> u32) -> GeoLevel {
    levels.iter().copied().find(|&l| l == GeoLevel::Global || count_at(l) >= BACKOFF_MIN_COUNT).unwrap_or(GeoLevel::Global)
}

/// Everything a row needs, indexed once per snapshot.
pub struct RowContext<'a> {
    env: &'a Environment,
    snap: &'a Snapshot,
    recipe: &'a FeatureRecipe,
    plans: Option<BTreeMap<(NodeId, Date), PlanRow>>,
    days: BTreeMap<(NodeId, Date), CenterDay>,
}

impl<'a> RowContext<'a> {
    pub fn new(env: &'a Environment, snap: &'a Snapshot, recipe: &'a FeatureRecipe) -> Self {
        RowContext {
            env,
            snap,
            recipe,
            plans: env.plans.as_deref().map(pendency::plan_index),
            days: pendency::day_index(&snap.center_days, snap.as_of),
        }
    }

    pub fn calendar(&self) -> &HolidayCalendar {
        &self.env.calendar
    }

    /// Context for the breach corrector.
    pub fn feedback_features(&self, q: &Query<'_>) -> FeedbackFeatures {
        let o = q.order;
        let center = o.lane.destination();
        let landing = q.start.date().offset(self.snap.transit_days(o));
        let extra = self.snap.handling.extra_hours(center, landing);
        let kind = self.env.calendar.day_kind(center, landing);
        let inflow: Vec<f64> = self.window_days(center, 7).map(|d| d.arrivals as f64).collect();
        let outflow: Vec<f64> = self.window_days(center, 7).map(|d| d.deliveries as f64).collect();
        let or0 = |v: Option<f64>| v.filter(|x| x.is_finite()).unwrap_or(0.0);
        FeedbackFeatures {
            weekend_handling_hours: if kind == DayKind::Weekend { extra } else { 0.0 },
            holiday_handling_hours: if kind.is_holiday() { extra } else { 0.0 },
            day_of_week: q.start.date().weekday() as f64,
            hour_of_day: q.start.hour_of_day(),
            linehaul_sd_hours: or0(self.snap.lane_linehaul_sd.get(&o.lane.key()).copied()),
            inflow_mean: or0(stats::mean(&inflow)),
            inflow_sd: or0(stats::sd(&inflow)),
            outflow_mean: or0(stats::mean(&outflow)),
            outflow_sd: or0(stats::sd(&outflow)),
        }
    }

    fn window_days(&self, center: NodeId, window: u32) -> impl Iterator<Item = &CenterDay> {
        let as_of = self.snap.as_of;
        (1..=window as i32).filter_map(move |k| self.days.get(&(center, as_of.offset(-k))))
    }

    fn projection(&self, center: NodeId, landing: Date) -> Projection {
        let transit = self.snap.center_transit_days.get(&center).copied().unwrap_or(1);
        pendency::project_pendency(self.plans.as_ref(), &self.days, center, self.snap.as_of, landing, transit)
    }

    /// Same offset into the previous sale's plan span, truncated to its length.
    fn hrd_proxy(&self, center: NodeId, date: Date) -> f64 {
        let events = &self.env.events;
        let Some(current) = events.iter().find(|e| e.plan_span().contains(&date)) else {
            return f64::NAN;
        };
        let Some(prior) =
            events.iter().filter(|e| e.start < current.start && e.plan_span().start < self.snap.as_of).max_by_key(|e| e.start)
        else {
            return f64::NAN;
        };
        let offset = current.plan_span().start.days_until(date);
        let span = prior.plan_span();
        let len = span.start.days_until(span.end);
        let proxy = span.start.offset(offset.min(len - 1));
        self.snap.proxy_hours.get(&proxy_key(center, proxy)).copied().unwrap_or(f64::NAN)
    }

    fn value(&self, idx: usize, f: &FeatureDef, q: &Query<'_>) -> (Value, Option<f64>) {
        use Quantity::*;
        let o = q.order;
        let center = o.lane.destination();
        let start_date = q.start.date();
        let landing = start_date.offset(self.snap.transit_days(o));
        let cat = |s: String| Value::Cat(Some(s));
        let num = Value::Num;
        let center_window = |pick: fn(&CenterDay) -> f64| {
            let v: Vec<f64> = self.window_days(center, f.window_days).map(pick).collect();
            num(f.aggregation.apply(&v))
        };
        let vendor = match o.source {
            Source::Vendor(v) => self.env.vendors.iter().find(|s| s.id == v),
            Source::Warehouse(_) => None,
        };
        let plan = |d: Date| self.plans.as_ref().and_then(|p| p.get(&(center, d)));
        let v = match f.quantity {
            Lane => cat(o.lane.key()),
            Carrier => cat(o.lane.carrier().as_str().into()),
            Origin => cat(o.lane.origin().to_string()),
            Center => cat(center.to_string()),
            CityTier => cat(o.geo.city_tier().as_str().into()),
            AddressType => cat(o.geo.address_type().as_str().into()),
            PincodePrefix => cat(o.geo.pincode_prefix().into()),
            ItemCount => num(o.item_count as f64),
            GeoLastmileHours => {
                let levels = &self.snap.geo[idx];
                let at = |l: GeoLevel| {
                    let i = f.backoff.iter().position(|x| *x == l).expect("level in chain");
                    levels[i].get(&geo_key(l, o)).copied()
                };
                let level = resolve_backoff(&f.backoff, |l| at(l).map_or(0, |c| c.0));
                return (num(at(level).map_or(f64::NAN, |c| c.1)), Some(level.code()));
            }
            LaneShippingHours | LaneLinehaulHours | OriginPreShipHours | CenterLastmileHours => {
                let key = match f.quantity {
                    LaneShippingHours | LaneLinehaulHours => o.lane.key(),
                    OriginPreShipHours => o.lane.origin().to_string(),
                    _ => center.to_string(),
                };
                num(self.snap.keyed[idx].get(&key).copied().unwrap_or(f64::NAN))
            }
            CenterArrivals => center_window(|d| d.arrivals as f64),
            CenterShipped => center_window(|d| d.shipped as f64),
            OwnStaff => center_window(|d| d.own_staff),
            ContractStaff => center_window(|d| d.contract_staff),
            CenterUtilization => center_window(|d| d.deliveries as f64 / d.capacity.max(1.0)),
            StartHour => num(q.start.hour_of_day()),
            StartWeekday => num(start_date.weekday() as f64),
            StartDayKind => cat(self.env.calendar.day_kind(center, start_date).as_str().into()),
            LandingWeekday => num(landing.weekday() as f64),
            LandingDayKind => cat(self.env.calendar.day_kind(center, landing).as_str().into()),
            LandingHandlingHours => num(self.snap.handling.extra_hours(center, landing)),
            PlannedArrivals => num(plan(landing).map_or(f64::NAN, |p| p.planned_arrivals)),
            PlannedCapacity => num(plan(landing).map_or(f64::NAN, |p| p.planned_capacity)),
            PlannedShipVolume => num(plan(start_date).map_or(f64::NAN, |p| p.planned_ship_volume)),
            HrdProxyHours => num(self.hrd_proxy(center, start_date)),
            PendencyBalance => num(pendency::pendency_balance(&self.snap.center_days, center, self.snap.as_of, f.window_days)),
            Backlog => num(self.days.get(&(center, self.snap.as_of.offset(-1))).map_or(f64::NAN, |d| d.backlog as f64)),
            ProjectedBacklog => num(self.projection(center, landing).projected_backlog),
            ProjectedArrivals => num(self.projection(center, landing).projected_arrivals),
            VendorType => Value::Cat(vendor.map(|v| v.vendor_type.clone())),
            VendorColoader => num(vendor.map_or(f64::NAN, |v| if v.coloader { 1.0 } else { 0.0 })),
            VendorMaxHours => num(vendor.map_or(f64::NAN, |v| v.max_processing_hours)),
            VendorPickupHour => num(vendor.and_then(|v| v.pickup_cutoffs.first()).map_or(f64::NAN, |m| *m as f64 / 60.0)),
        };
        (v, None)
    }

    /// Feature rows for `queries`, columns in recipe order.
    pub fn rows(&self, queries: &[Query<'_>]) -> Result<Dataset> {
        let mut numeric: Vec<NumericColumn> = Vec::new();
        let mut categorical: Vec<(String, Vec<Option<String>>)> = Vec::new();
        for (i, f) in self.recipe.features.iter().enumerate() {
            let values: Vec<(Value, Option<f64>)> = queries.iter().map(|q| self.value(i, f, q)).collect();
            if f.quantity.is_categorical() {
                let col = values.into_iter().map(|(v, _)| if let Value::Cat(s) = v { s } else { None }).collect();
                categorical.push((f.name.clone(), col));
            } else {
                let level = f.quantity == Quantity::GeoLastmileHours;
                let (vals, levels): (Vec<f64>, Vec<f64>) =
                    values.into_iter().map(|(v, l)| (if let Value::Num(x) = v { x } else { f64::NAN }, l.unwrap_or(f64::NAN))).unzip();
                numeric.push(NumericColumn { name: f.name.clone(), values: vals });
                if level {
                    numeric.push(NumericColumn { name: f.level_column(), values: levels });
                }
            }
        }
        let categorical = categorical.iter().map(|(n, v)| CategoricalColumn::from_levels(n.clone(), v)).collect();
        let target = queries.iter().map(|q| q.target.unwrap_or(f64::NAN)).collect();
        let dates = queries.iter().map(|q| q.order.placed_at.date()).collect();
        Dataset::new(numeric, categorical, target, dates)
    }
}

/// Rows for `queries` from history that must lie strictly before `as_of`.
pub fn build_features(
    env: &Environment,
    records: &[DeliveryRecord],
    center_days: &[CenterDay],
    recipe: &FeatureRecipe,
    queries: &[Query<'_>],
    as_of: Date,
) -> Result<Dataset> {
    if let Some(r) = records.iter().find(|r| r.delivered_at.date() >= as_of) {
        return Err(Error::invalid(format!(
            "history record {} was delivered on {}, not before as-of date {as_of}",
            r.order.order_id,
            r.delivered_at.date()
        )));
    }
    if let Some(d) = center_days.iter().find(|d| d.date >= as_of) {
        return Err(Error::invalid(format!("center log row dated {} is not before as-of date {as_of}", d.date)));
    }
    if let Some(q) = queries.iter().find(|q| q.start.date() < as_of) {
        return Err(Error::invalid(format!("order {} starts before the as-of date {as_of}", q.order.order_id)));
    }
    let snap = Snapshot::build(env, records, center_days, recipe, as_of)?;
    RowContext::new(env, &snap, recipe).rows(queries)
}

/// Training or evaluation rows for every record whose leg starts inside
/// `dates` and whose outcome was known before `known_before`. Each day's
/// rows see only history from before that day.
pub fn leg_dataset(
    env: &Environment,
    records: &[DeliveryRecord],
    center_days: &[CenterDay],
    recipe: &FeatureRecipe,
    leg: ModelLeg,
    dates: Range<Date>,
    known_before: Date,
) -> Result<(Dataset, Vec<usize>)> {
    let mut by_day: BTreeMap<Date, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let d = leg.start(r).date();
        if leg.applies_to(&r.order) && dates.contains(&d) && r.delivered_at.date() < known_before && leg.target(r).is_some() {
            by_day.entry(d).or_default().push(i);
        }
    }
    let days: Vec<(Date, Vec<usize>)> = by_day.into_iter().collect();
    let history = History::new(records, center_days);
    let parts: Vec<Dataset> = days
        .par_iter()
        .map(|(d, idx)| {
            let snap = Snapshot::from_history(env, &history, recipe, *d)?;
            let queries: Vec<Query<'_>> = idx
                .iter()
                .map(|&i| Query { order: &records[i].order, start: leg.start(&records[i]), target: leg.target(&records[i]) })
                .collect();
            RowContext::new(env, &snap, recipe).rows(&queries)
        })
        .collect::<Result<_>>()?;
    let mut out = Dataset::default();
    for p in &parts {
        out.append(p)?;
    }
    let index = days.into_iter().flat_map(|(_, idx)| idx).collect();
    Ok((out, index))
}
