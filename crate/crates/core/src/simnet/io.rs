//! Flat-file output of a simulation run.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CenterDay, PlanRow, Scenario, SimOutput};
use crate::domain::{
    sidecar_path, AddressType, Carrier, CityTier, ColumnRole, Date, DeliveryRecord, GeoKey, HolidayCalendar, Lane, Leg, NodeId, Order,
    Sidecar, SidecarColumn, Source, Timestamp,
};
use crate::error::{Error, Result};
use crate::fsio;

#[derive(Serialize, Deserialize)]
struct RecordRow {
    order_id: u64,
    placed_at: i64,
    order_date: Date,
    source_kind: String,
    source_id: u32,
    lane: String,
    hop_sequence: String,
    carrier: Carrier,
    pincode: String,
    pincode_prefix: String,
    city_tier: CityTier,
    address_type: AddressType,
    item_count: u32,
    shipped_at: i64,
    delivered_at: i64,
    vendor_hours: Option<f64>,
    warehouse_hours: Option<f64>,
    dispatch_wait_hours: Option<f64>,
    linehaul_hours: Option<f64>,
    lastmile_hours: Option<f64>,
    shipping_hours: f64,
}

const ROLES: [(&str, ColumnRole); 21] = [
    ("order_id", ColumnRole::Ignore),
    ("placed_at", ColumnRole::Time),
    ("order_date", ColumnRole::OrderDate),
    ("source_kind", ColumnRole::Categorical),
    ("source_id", ColumnRole::Categorical),
    ("lane", ColumnRole::Categorical),
    ("hop_sequence", ColumnRole::Ignore),
    ("carrier", ColumnRole::Categorical),
    ("pincode", ColumnRole::Categorical),
    ("pincode_prefix", ColumnRole::Categorical),
    ("city_tier", ColumnRole::Categorical),
    ("address_type", ColumnRole::Categorical),
    ("item_count", ColumnRole::Numeric),
    ("shipped_at", ColumnRole::Ignore),
    ("delivered_at", ColumnRole::Ignore),
    // Leg durations are outcomes, not features.
    ("vendor_hours", ColumnRole::Ignore),
    ("warehouse_hours", ColumnRole::Ignore),
    ("dispatch_wait_hours", ColumnRole::Ignore),
    ("linehaul_hours", ColumnRole::Ignore),
    ("lastmile_hours", ColumnRole::Ignore),
    ("shipping_hours", ColumnRole::Target),
];

/// The sidecar written next to a delivery log.
pub fn records_sidecar() -> Sidecar {
    Sidecar::new(ROLES.iter().map(|(n, r)| SidecarColumn { name: (*n).into(), role: *r, levels: None }).collect())
}

fn to_row(r: &DeliveryRecord) -> RecordRow {
    let o = &r.order;
    let (kind, id) = match o.source {
        Source::Warehouse(n) => ("warehouse", n.0),
        Source::Vendor(n) => ("vendor", n.0),
    };
    let path: Vec<String> = o.lane.nodes().iter().map(|n| n.to_string()).collect();
    RecordRow {
        order_id: o.order_id,
        placed_at: o.placed_at.minutes(),
        order_date: o.placed_at.date(),
        source_kind: kind.into(),
        source_id: id,
        lane: o.lane.key(),
        hop_sequence: path.join("-"),
        carrier: o.lane.carrier(),
        pincode: o.geo.pincode().into(),
        pincode_prefix: o.geo.pincode_prefix().into(),
        city_tier: o.geo.city_tier(),
        address_type: o.geo.address_type(),
        item_count: o.item_count,
        shipped_at: r.shipped_at.minutes(),
        delivered_at: r.delivered_at.minutes(),
        vendor_hours: r.leg(Leg::Vendor),
        warehouse_hours: r.leg(Leg::Warehouse),
        dispatch_wait_hours: r.leg(Leg::DispatchWait),
        linehaul_hours: r.leg(Leg::Linehaul),
        lastmile_hours: r.leg(Leg::Lastmile),
        shipping_hours: r.shipping_hours(),
    }
}

fn from_row(row: RecordRow) -> Result<DeliveryRecord> {
    let nodes = row
        .hop_sequence
        .split('-')
        .map(|s| s.parse::<u32>().map(NodeId).map_err(|e| Error::invalid(format!("hop sequence {:?}: {e}", row.hop_sequence))))
        .collect::<Result<Vec<_>>>()?;
    let (first, last) = (nodes[0], nodes[nodes.len() - 1]);
    let lane = Lane::new(first, last, nodes, row.carrier)?;
    let source = match row.source_kind.as_str() {
        "warehouse" => Source::Warehouse(NodeId(row.source_id)),
        "vendor" => Source::Vendor(NodeId(row.source_id)),
        other => return Err(Error::invalid(format!("order {}: unknown source kind {other:?}", row.order_id))),
    };
    let geo = GeoKey::new(row.pincode, row.city_tier, row.address_type)?;
    let order = Order::new(row.order_id, Timestamp::from_minutes(row.placed_at)?, source, lane, geo, row.item_count)?;
    let mut legs = BTreeMap::new();
    for (leg, v) in [
        (Leg::Vendor, row.vendor_hours),
        (Leg::Warehouse, row.warehouse_hours),
        (Leg::DispatchWait, row.dispatch_wait_hours),
        (Leg::Linehaul, row.linehaul_hours),
        (Leg::Lastmile, row.lastmile_hours),
    ] {
        if let Some(v) = v {
            legs.insert(leg, v);
        }
    }
    let rec = DeliveryRecord {
        order,
        shipped_at: Timestamp::from_minutes(row.shipped_at)?,
        delivered_at: Timestamp::from_minutes(row.delivered_at)?,
        leg_durations: legs,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_records<W: Write>(records: &[DeliveryRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(to_row(r))?;
    }
    w.flush().map_err(|e| Error::io("deliveries.csv", e))
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<DeliveryRecord>> {
    csv::Reader::from_reader(reader).deserialize::<RecordRow>().map(|row| from_row(row?)).collect()
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("table.csv", e))
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_plans<W: Write>(plans: &[PlanRow], writer: W) -> Result<()> {
    write_rows(plans, writer)
}

pub fn read_plans<R: Read>(reader: R) -> Result<Vec<PlanRow>> {
    read_rows(reader)
}

pub fn write_center_days<W: Write>(days: &[CenterDay], writer: W) -> Result<()> {
    write_rows(days, writer)
}

pub fn read_center_days<R: Read>(reader: R) -> Result<Vec<CenterDay>> {
    read_rows(reader)
}

/// File names inside a simulation output directory.
pub struct SimFiles;

impl SimFiles {
    pub const DELIVERIES: &'static str = "deliveries.csv";
    pub const PLANS: &'static str = "plans.csv";
    pub const CENTER_DAYS: &'static str = "center_days.csv";
    pub const CALENDAR: &'static str = "calendar.csv";
    pub const SCENARIO: &'static str = "scenario.json";

    pub fn write(dir: &Path, scenario: &Scenario, out: &SimOutput) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut buf = Vec::new();
        write_records(&out.records, &mut buf)?;
        let deliveries = dir.join(Self::DELIVERIES);
        fsio::write_atomic(&deliveries, &buf)?;
        fsio::write_atomic(&sidecar_path(&deliveries), serde_json::to_string_pretty(&records_sidecar())?.as_bytes())?;
        buf.clear();
        write_plans(&out.plans, &mut buf)?;
        fsio::write_atomic(&dir.join(Self::PLANS), &buf)?;
        buf.clear();
        write_center_days(&out.center_days, &mut buf)?;
        fsio::write_atomic(&dir.join(Self::CENTER_DAYS), &buf)?;
        buf.clear();
        out.calendar.write_csv(&mut buf)?;
        fsio::write_atomic(&dir.join(Self::CALENDAR), &buf)?;
        fsio::write_atomic(&dir.join(Self::SCENARIO), serde_json::to_string_pretty(scenario)?.as_bytes())
    }

    /// Reads a directory written by [`SimFiles::write`]. The delivery log may
    /// live elsewhere; `deliveries` overrides its path.
    pub fn read(dir: &Path, deliveries: Option<&Path>) -> Result<(Scenario, SimOutput)> {
        let scenario: Scenario = serde_json::from_slice(&fsio::read(&dir.join(Self::SCENARIO))?)?;
        scenario.validate()?;
        let default_path = dir.join(Self::DELIVERIES);
        let records = read_records(fsio::read(deliveries.unwrap_or(&default_path))?.as_slice())?;
        let plans = read_plans(fsio::read(&dir.join(Self::PLANS))?.as_slice())?;
        let center_days = read_center_days(fsio::read(&dir.join(Self::CENTER_DAYS))?.as_slice())?;
        let calendar = HolidayCalendar::read_csv(fsio::read(&dir.join(Self::CALENDAR))?.as_slice())?;
        Ok((scenario, SimOutput { records, center_days, plans, calendar }))
    }
}
