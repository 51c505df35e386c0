//! Order generation and the per-center queue.

use std::collections::{BTreeMap, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{noise_factor, CenterSpec, HrdEvent, LaneSpec, NetworkSpec, Origin, Scenario};
use crate::baseline::roll_to_cutoff;
use crate::domain::{AddressType, Date, DeliveryRecord, GeoKey, HolidayCalendar, Leg, NodeId, Order, Source, Timestamp, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::stats;

/// One center's queue on one day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterDay {
    pub date: Date,
    pub center: NodeId,
    /// Packets dispatched toward this center from their origins.
    pub shipped: u32,
    /// Packets joining the delivery queue.
    pub arrivals: u32,
    pub deliveries: u32,
    /// Queue length at the end of the day.
    pub backlog: u32,
    pub capacity: f64,
    pub own_staff: f64,
    pub contract_staff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub date: Date,
    pub center: NodeId,
    pub planned_ship_volume: f64,
    pub planned_arrivals: f64,
    pub planned_capacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    /// Sorted by order id.
    pub records: Vec<DeliveryRecord>,
    /// Sorted by (center, date); covers every day from the start until the
    /// last queue has drained.
    pub center_days: Vec<CenterDay>,
    /// Sorted by (date, center); only dates inside HRD plan spans.
    pub plans: Vec<PlanRow>,
    /// The scenario calendar plus weekend entries for every center.
    pub calendar: HolidayCalendar,
}

impl Scenario {
    pub fn generate(&self, seed: u64) -> Result<SimOutput> {
        self.validate()?;
        generate(&self.network, &self.events, self.start_date, self.days, self.orders_per_day, seed)
    }
}

/// Everything drawn for one shipment's path, before queueing.
#[derive(Clone, Copy, Debug)]
struct Path {
    ready: Timestamp,
    shipped: Timestamp,
    arrival: Timestamp,
    /// Sorted at the center and waiting for a run.
    sorted: Timestamp,
    eligible: Date,
    delivery_hours: f64,
}

/// Adds `work_hours` of work that can only happen inside the daily shift.
fn shift_process(start: Timestamp, work_hours: f64, shift_start_hour: f64, shift_hours: f64) -> Timestamp {
    if shift_hours >= 24.0 {
        return start.plus_hours(work_hours);
    }
    let day = MINUTES_PER_DAY as f64;
    let (s0, len) = (shift_start_hour * 60.0, shift_hours * 60.0);
    let mut t = start.minutes() as f64;
    let mut remaining = work_hours * 60.0;
    loop {
        let d = (t / day).floor();
        // The window holding `t`, or the next one to open.
        let (ws, we) = [d - 1.0, d, d + 1.0]
            .iter()
            .map(|k| (k * day + s0, k * day + s0 + len))
            .find(|&(_, we)| we > t)
            .expect("some window ends after t");
        if t < ws {
            t = ws;
            continue;
        }
        let avail = we - t;
        if remaining <= avail {
            t += remaining;
            break;
        }
        remaining -= avail;
        t = ws + day;
    }
    Timestamp::from_minutes(t.round() as i64).unwrap_or(start)
}

fn holiday_delay(spec: &NetworkSpec, calendar: &HolidayCalendar, center: NodeId, date: Date) -> f64 {
    calendar.get(center, date).and_then(|e| spec.holiday_effect(e.kind)).map_or(0.0, |h| h.transit_delay_hours)
}

fn draw_path(
    spec: &NetworkSpec,
    calendar: &HolidayCalendar,
    order: &Order,
    lane: &LaneSpec,
    center: &CenterSpec,
    extra_hours: f64,
    rng: &mut Rng,
) -> Path {
    let origin = spec.origin(order.lane.origin()).expect("validated lane origin");
    let ready = match origin {
        Origin::Warehouse(w) => {
            let mut work = w.processing.sample(rng);
            if order.is_multi_item {
                work += w.multi_item_wait.sample(rng);
            }
            shift_process(order.placed_at, work, w.shift_start_hour, w.shift_hours)
        }
        Origin::Vendor(v) => order.placed_at.plus_hours(v.processing.sample(rng)),
    };
    let shipped = roll_to_cutoff(ready, origin.cutoffs());
    let dest = order.lane.destination();
    let mut t = shipped;
    for hop in &lane.hops {
        let date = t.date();
        let hours = hop.sample(rng) * spec.weekday_transit[date.weekday() as usize] + holiday_delay(spec, calendar, dest, date);
        t = t.plus_hours(hours);
    }
    let arrival = t;
    let sorted = arrival.plus_hours(center.sort_hours);
    let eligible = if sorted.hour_of_day() > center.run_cutoff_hour { sorted.date().offset(1) } else { sorted.date() };
    let delivery_hours = center.delivery.sample(rng) + extra_hours;
    Path { ready, shipped, arrival, sorted, eligible, delivery_hours }
}

fn delivered_at(path: &Path, service_day: Date, center: &CenterSpec) -> Timestamp {
    let run = service_day.start().plus_hours(center.run_start_hour);
    path.sorted.max(run).plus_hours(path.delivery_hours)
}

struct Capacity<'a> {
    spec: &'a NetworkSpec,
    events: &'a [HrdEvent],
    calendar: &'a HolidayCalendar,
}

impl Capacity<'_> {
    /// Effective packets per day and the two staff counts behind it.
    fn on(&self, center: &CenterSpec, date: Date) -> (f64, f64, f64) {
        let weekday = center.weekday_multipliers[date.weekday() as usize];
        let mut cap = center.capacity_per_day * weekday;
        let mut present = 1.0;
        if let Some(e) = self.calendar.get(center.id, date) {
            if let Some(h) = self.spec.holiday_effect(e.kind) {
                cap *= h.capacity_multiplier;
            }
            present = 1.0 - e.absenteeism_rate;
            cap *= present;
        }
        let mut surge = 1.0;
        for ev in self.events.iter().filter(|ev| ev.contains(date)) {
            surge *= ev.capacity_multiplier;
        }
        cap *= surge;
        let own = (center.own_staff * weekday * present).round();
        let contract = (center.contract_staff * weekday * surge).round();
        (cap, own, contract)
    }
}

struct Pending {
    order: Order,
    path: Path,
}

fn volume_multiplier(events: &[HrdEvent], date: Date) -> f64 {
    events.iter().filter(|e| e.contains(date)).map(|e| e.volume_multiplier).product()
}

fn simulation_calendar(spec: &NetworkSpec, start: Date, end: Date) -> Result<HolidayCalendar> {
    let mut cal = spec.calendar.clone();
    for c in &spec.lastmile_centers {
        cal.add_weekends(c.id, start.offset(-28), end.offset(60), c.weekend_absenteeism)?;
    }
    Ok(cal)
}

/// Simulates `days` days of orders from `start` and drains every queue.
pub fn generate(spec: &NetworkSpec, events: &[HrdEvent], start: Date, days: u32, orders_per_day: u32, seed: u64) -> Result<SimOutput> {
    if days == 0 {
        return Err(Error::invalid("days must be at least 1"));
    }
    spec.validate()?;
    for e in events {
        e.validate()?;
    }
    let end = start.offset(days as i32);
    let calendar = simulation_calendar(spec, start, end)?;
    let lane_pick = WeightedIndex::new(spec.lanes.iter().map(|l| l.weight)).map_err(|e| Error::config(e.to_string()))?;
    let pin_pick: BTreeMap<NodeId, WeightedIndex<f64>> = spec
        .lastmile_centers
        .iter()
        .map(|c| Ok((c.id, WeightedIndex::new(c.pincodes.iter().map(|p| p.weight)).map_err(|e| Error::config(e.to_string()))?)))
        .collect::<Result<_>>()?;

    let mut pending: BTreeMap<NodeId, Vec<Pending>> = BTreeMap::new();
    let mut next_id = 0u64;
    for d in 0..days as i32 {
        let date = start.offset(d);
        let mut rng = rng::stream_indexed(seed, "simnet.orders", d as u64);
        let mean = orders_per_day as f64 * spec.weekday_volume[date.weekday() as usize] * volume_multiplier(events, date);
        let n = if mean > 0.0 { Poisson::new(mean).map_err(|e| Error::config(e.to_string()))?.sample(&mut rng) as u64 } else { 0 };
        for _ in 0..n {
            let lane = &spec.lanes[lane_pick.sample(&mut rng)];
            let center = spec.center(lane.lane.destination()).expect("validated destination");
            let hour = if rng.random::<f64>() < 0.75 { 8.0 + 14.0 * rng.random::<f64>() } else { 24.0 * rng.random::<f64>() };
            let placed = date.start().plus_minutes((hour * 60.0).floor() as i64);
            let items =
                if spec.max_items > 1 && rng.random::<f64>() < spec.multi_item_share { rng.random_range(2..=spec.max_items) } else { 1 };
            let pin = &center.pincodes[pin_pick[&center.id].sample(&mut rng)];
            let address = if rng.random::<f64>() < spec.home_share { AddressType::Home } else { AddressType::Office };
            let source = match spec.origin(lane.lane.origin()) {
                Some(Origin::Warehouse(w)) => Source::Warehouse(w.id),
                _ => Source::Vendor(lane.lane.origin()),
            };
            let geo = GeoKey::new(pin.pincode.clone(), pin.city_tier, address)?;
            let order = Order::new(next_id, placed, source, lane.lane.clone(), geo, items)?;
            next_id += 1;
            let path = draw_path(spec, &calendar, &order, lane, center, pin.extra_hours, &mut rng);
            pending.entry(center.id).or_default().push(Pending { order, path });
        }
    }

    let capacity = Capacity { spec, events, calendar: &calendar };
    let mut records = Vec::with_capacity(next_id as usize);
    let mut center_days = Vec::new();
    for center in &spec.lastmile_centers {
        let mut list = pending.remove(&center.id).unwrap_or_default();
        list.sort_by_key(|p| (p.path.eligible, p.path.sorted, p.order.order_id));
        let mut shipped: BTreeMap<Date, u32> = BTreeMap::new();
        for p in &list {
            *shipped.entry(p.path.shipped.date()).or_default() += 1;
        }
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut next = 0;
        let mut day = start;
        while day < end || next < list.len() || !queue.is_empty() {
            let before = queue.len();
            while next < list.len() && list[next].path.eligible <= day {
                queue.push_back(next);
                next += 1;
            }
            let arrivals = queue.len() - before;
            let (cap, own, contract) = capacity.on(center, day);
            let slots = (cap.floor() as usize).max(1);
            let served = slots.min(queue.len());
            for _ in 0..served {
                let i = queue.pop_front().expect("served <= queue length");
                let p = &list[i];
                let delivered = delivered_at(&p.path, day, center);
                records.push(record(&p.order, &p.path, delivered));
            }
            center_days.push(CenterDay {
                date: day,
                center: center.id,
                shipped: shipped.get(&day).copied().unwrap_or(0),
                arrivals: arrivals as u32,
                deliveries: served as u32,
                backlog: queue.len() as u32,
                capacity: cap,
                own_staff: own,
                contract_staff: contract,
            });
            day = day.offset(1);
        }
    }
    records.sort_by_key(|r| r.order.order_id);
    let plans = plan_tables(spec, events, &center_days, &capacity, seed);
    Ok(SimOutput { records, center_days, plans, calendar })
}

fn record(order: &Order, path: &Path, delivered: Timestamp) -> DeliveryRecord {
    let mut legs = BTreeMap::new();
    legs.insert(order.source.pre_ship_leg(), path.ready.hours_since(order.placed_at));
    legs.insert(Leg::DispatchWait, path.shipped.hours_since(path.ready));
    legs.insert(Leg::Linehaul, path.arrival.hours_since(path.shipped));
    legs.insert(Leg::Lastmile, delivered.hours_since(path.arrival));
    DeliveryRecord { order: order.clone(), shipped_at: path.shipped, delivered_at: delivered, leg_durations: legs }
}

/// True daily volumes around each event, perturbed by the event's noise.
fn plan_tables(spec: &NetworkSpec, events: &[HrdEvent], center_days: &[CenterDay], capacity: &Capacity<'_>, seed: u64) -> Vec<PlanRow> {
    let truth: BTreeMap<(Date, NodeId), &CenterDay> = center_days.iter().map(|c| ((c.date, c.center), c)).collect();
    let mut rows: BTreeMap<(Date, NodeId), PlanRow> = BTreeMap::new();
    let mut rng = rng::stream(seed, "simnet.plans");
    for ev in events {
        let span = ev.plan_span();
        for d in span.start.days()..span.end.days() {
            let date = Date(d);
            for c in &spec.lastmile_centers {
                let (ship, arr) = truth.get(&(date, c.id)).map_or((0.0, 0.0), |t| (t.shipped as f64, t.arrivals as f64));
                let cap = capacity.on(c, date).0;
                let row = PlanRow {
                    date,
                    center: c.id,
                    planned_ship_volume: ship * noise_factor(&mut rng, ev.plan_noise),
                    planned_arrivals: arr * noise_factor(&mut rng, ev.plan_noise),
                    planned_capacity: cap * noise_factor(&mut rng, ev.plan_noise),
                };
                rows.entry((date, c.id)).or_insert(row);
            }
        }
    }
    rows.into_values().collect()
}

/// Monte-Carlo `q`-quantile of placement-to-delivery hours for `order`,
/// assuming its center has spare capacity on the day it becomes eligible.
pub fn ground_truth_quantile(spec: &NetworkSpec, order: &Order, q: f64, n_draws: usize, seed: u64) -> Result<f64> {
    if n_draws < 1000 {
        return Err(Error::invalid(format!("need at least 1000 draws, got {n_draws}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    spec.validate()?;
    let lane = spec.lane_spec(&order.lane).ok_or_else(|| Error::invalid(format!("lane {} not in the network", order.lane.key())))?;
    let center = spec.center(order.lane.destination()).expect("validated destination");
    let extra = center.pincodes.iter().find(|p| p.pincode == order.geo.pincode()).map_or(0.0, |p| p.extra_hours);
    let mut rng = rng::stream(seed, "simnet.oracle");
    let draws: Vec<f64> = (0..n_draws)
        .map(|_| {
            let path = draw_path(spec, &spec.calendar, order, lane, center, extra, &mut rng);
            delivered_at(&path, path.eligible, center).hours_since(order.placed_at)
        })
        .collect();
    Ok(stats::quantile(&draws, q).expect("non-empty draws"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Carrier, CityTier, Lane};
    use crate::simnet::{LogNormal, PincodeSpec, Scenario, WarehouseSpec};

    /// One warehouse, one hub, one center, no randomness and no waiting.
    fn degenerate() -> NetworkSpec {
        let lane = Lane::new(NodeId(1), NodeId(9), vec![NodeId(1), NodeId(5), NodeId(9)], Carrier::OwnLogistics).unwrap();
        NetworkSpec {
            warehouses: vec![WarehouseSpec {
                id: NodeId(1),
                shift_start_hour: 0.0,
                shift_hours: 24.0,
                processing: LogNormal::fixed(6.0),
                multi_item_wait: LogNormal::fixed(2.0),
                dispatch_cutoffs: vec![],
            }],
            vendors: vec![],
            hubs: vec![NodeId(5)],
            lastmile_centers: vec![CenterSpec {
                id: NodeId(9),
                capacity_per_day: 1e9,
                weekday_multipliers: [1.0; 7],
                weekend_absenteeism: 0.0,
                sort_hours: 1.0,
                run_start_hour: 0.0,
                run_cutoff_hour: 24.0,
                delivery: LogNormal::fixed(3.0),
                pincodes: vec![PincodeSpec { pincode: "560001".into(), city_tier: CityTier::Tier1, weight: 1.0, extra_hours: 0.0 }],
                own_staff: 10.0,
                contract_staff: 5.0,
            }],
            lanes: vec![LaneSpec { lane, hops: vec![LogNormal::fixed(10.0), LogNormal::fixed(20.0)], weight: 1.0 }],
            weekday_volume: [1.0; 7],
            weekday_transit: [1.0; 7],
            holiday_effects: vec![],
            calendar: HolidayCalendar::new(),
            multi_item_share: 0.0,
            max_items: 1,
            home_share: 1.0,
        }
    }

    fn monday() -> Date {
        Date::ymd(2024, 1, 1).unwrap()
    }

    #[test]
    fn degenerate_network_is_sum_of_means() {
        let out = generate(&degenerate(), &[], monday(), 10, 50, 3).unwrap();
        assert!(!out.records.is_empty());
        for r in &out.records {
            r.validate().unwrap();
            assert_eq!(r.delivered_at.hours_since(r.order.placed_at), 6.0 + 10.0 + 20.0 + 1.0 + 3.0);
        }
        let o = &out.records[0].order;
        for q in [0.05, 0.5, 0.95] {
            assert_eq!(ground_truth_quantile(&degenerate(), o, q, 1000, 1).unwrap(), 40.0);
        }
    }

    #[test]
    fn shift_work_pauses_outside_the_shift() {
        let t = monday().start().plus_hours(20.0);
        // Shift 06:00-22:00: 2h today, 3h from 06:00 tomorrow.
        assert_eq!(shift_process(t, 5.0, 6.0, 16.0), monday().start().plus_hours(24.0 + 9.0));
        let night = monday().start().plus_hours(2.0);
        assert_eq!(shift_process(night, 1.0, 6.0, 16.0), monday().start().plus_hours(7.0));
        // Overnight shift 22:00-06:00.
        assert_eq!(shift_process(night, 1.0, 22.0, 8.0), monday().start().plus_hours(3.0));
        assert_eq!(shift_process(night, 5.0, 22.0, 8.0), monday().start().plus_hours(23.0));
    }

    #[test]
    fn identical_seed_identical_output() {
        let s = Scenario { days: 14, orders_per_day: 200, ..Scenario::default_scenario() };
        let a = s.generate(7).unwrap();
        let b = s.generate(7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records, s.generate(8).unwrap().records);
    }

    #[test]
    fn queues_conserve_packets_and_stay_non_negative() {
        let s = Scenario { days: 28, orders_per_day: 600, ..Scenario::default_scenario() };
        let out = s.generate(11).unwrap();
        for c in s.network.center_ids() {
            let days: Vec<&CenterDay> = out.center_days.iter().filter(|d| d.center == c).collect();
            let arrivals: u64 = days.iter().map(|d| d.arrivals as u64).sum();
            let delivered: u64 = days.iter().map(|d| d.deliveries as u64).sum();
            assert_eq!(arrivals, delivered + days.last().unwrap().backlog as u64);
            let mut backlog = 0i64;
            for d in &days {
                backlog += d.arrivals as i64 - d.deliveries as i64;
                assert_eq!(backlog, d.backlog as i64);
                assert!(d.deliveries as f64 <= d.capacity.floor().max(1.0));
            }
            let shipped: u64 = days.iter().map(|d| d.shipped as u64).sum();
            assert_eq!(shipped, out.records.iter().filter(|r| r.order.lane.destination() == c).count() as u64);
        }
        for r in &out.records {
            r.validate().unwrap();
        }
    }

    fn mean_hours<'a>(rs: impl Iterator<Item = &'a DeliveryRecord>) -> f64 {
        let v: Vec<f64> = rs.map(|r| r.delivered_at.hours_since(r.order.placed_at)).collect();
        stats::mean(&v).unwrap()
    }

    #[test]
    fn hrd_spike_raises_post_event_delivery_times() {
        let base = Scenario::default_scenario();
        let ev = base.events[0];
        let out = base.generate(5).unwrap();
        let pre = mean_hours(out.records.iter().filter(|r| {
            let d = r.order.placed_at.date();
            d >= ev.start.offset(-7) && d < ev.start
        }));
        let post = mean_hours(out.records.iter().filter(|r| {
            let d = r.order.placed_at.date();
            d >= ev.end() && d < ev.end().offset(7)
        }));
        assert!(post > pre, "post {post} pre {pre}");
        let plans = &out.plans;
        assert!(!plans.is_empty());
        assert!(plans.iter().all(|p| ev.plan_span().contains(&p.date) && p.planned_capacity > 0.0));
    }

    #[test]
    fn weekend_dip_delays_saturday_arrivals() {
        let mut s = Scenario { events: vec![], ..Scenario::default_scenario() };
        s.network.calendar = HolidayCalendar::new();
        let out = s.generate(2).unwrap();
        let by_day = |wd: u8| out.records.iter().filter(move |r| r.center_arrival().date().weekday() == wd);
        let sat: Vec<f64> = by_day(5).filter_map(|r| r.leg(Leg::Lastmile)).collect();
        let mid: Vec<f64> = by_day(1).chain(by_day(2)).filter_map(|r| r.leg(Leg::Lastmile)).collect();
        assert!(sat.len() >= 5000 && mid.len() >= 5000, "{} {}", sat.len(), mid.len());
        let (ms, mm) = (stats::mean(&sat).unwrap(), stats::mean(&mid).unwrap());
        assert!(ms > mm + 2.0, "saturday {ms} midweek {mm}");
    }

    #[test]
    fn oracle_median_sits_below_mean() {
        let s = Scenario::default_scenario();
        let out = Scenario { days: 2, orders_per_day: 50, ..s.clone() }.generate(1).unwrap();
        let o = &out.records.iter().find(|r| matches!(r.order.source, Source::Warehouse(_))).unwrap().order;
        let lane = s.network.lane_spec(&o.lane).unwrap();
        let mut rng = rng::stream(9, "t");
        let center = s.network.center(o.lane.destination()).unwrap();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let p = draw_path(&s.network, &s.network.calendar, o, lane, center, 0.0, &mut rng);
                delivered_at(&p, p.eligible, center).hours_since(o.placed_at)
            })
            .collect();
        let mean = stats::mean(&draws).unwrap();
        let extra = center.pincodes.iter().find(|p| p.pincode == o.geo.pincode()).unwrap().extra_hours;
        let med = ground_truth_quantile(&s.network, o, 0.5, 100_000, 3).unwrap() - extra;
        assert!(med >= mean / 1.5 && med <= mean, "median {med} mean {mean}");
        let hi = ground_truth_quantile(&s.network, o, 0.95, 10_000, 3).unwrap();
        assert!(hi >= med + extra);
        assert!(ground_truth_quantile(&s.network, o, 0.5, 999, 3).is_err());
    }
}
