use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::time::Timestamp;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    OwnLogistics,
    ThirdParty,
}

impl Carrier {
    pub fn as_str(self) -> &'static str {
        match self {
            Carrier::OwnLogistics => "own_logistics",
            Carrier::ThirdParty => "third_party",
        }
    }
}

/// An origin-to-destination route. `hop_sequence` is the full node path,
/// starting at the origin and ending at the destination center.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LaneRepr", into = "LaneRepr")]
pub struct Lane {
    origin_node: NodeId,
    destination_center: NodeId,
    hop_sequence: Vec<NodeId>,
    carrier: Carrier,
}

#[derive(Serialize, Deserialize)]
struct LaneRepr {
    origin_node: NodeId,
    destination_center: NodeId,
    hop_sequence: Vec<NodeId>,
    carrier: Carrier,
}

impl Lane {
    pub fn new(origin_node: NodeId, destination_center: NodeId, hop_sequence: Vec<NodeId>, carrier: Carrier) -> Result<Self> {
        if hop_sequence.len() < 2 {
            return Err(Error::invalid("lane needs at least one hop"));
        }
        if hop_sequence[0] != origin_node {
            return Err(Error::invalid("lane hop sequence must start at the origin"));
        }
        if hop_sequence[hop_sequence.len() - 1] != destination_center {
            return Err(Error::invalid("lane hop sequence must end at the destination center"));
        }
        let mut seen = hop_sequence.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != hop_sequence.len() {
            return Err(Error::invalid("lane hop sequence repeats a node"));
        }
        Ok(Lane { origin_node, destination_center, hop_sequence, carrier })
    }

    pub fn origin(&self) -> NodeId {
        self.origin_node
    }

    pub fn destination(&self) -> NodeId {
        self.destination_center
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.hop_sequence
    }

    pub fn carrier(&self) -> Carrier {
        self.carrier
    }

    /// Consecutive (from, to) pairs along the route.
    pub fn hops(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.hop_sequence.windows(2).map(|w| (w[0], w[1]))
    }

    /// Stable text key, e.g. `1-4-9:own_logistics`.
    pub fn key(&self) -> String {
        let path: Vec<String> = self.hop_sequence.iter().map(|n| n.to_string()).collect();
        format!("{}:{}", path.join("-"), self.carrier.as_str())
    }
}

impl TryFrom<LaneRepr> for Lane {
    type Error = Error;
    fn try_from(r: LaneRepr) -> Result<Self> {
        Lane::new(r.origin_node, r.destination_center, r.hop_sequence, r.carrier)
    }
}

impl From<Lane> for LaneRepr {
    fn from(l: Lane) -> Self {
        LaneRepr { origin_node: l.origin_node, destination_center: l.destination_center, hop_sequence: l.hop_sequence, carrier: l.carrier }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CityTier {
    Tier1,
    Tier2,
    Tier3,
}

impl CityTier {
    pub fn as_str(self) -> &'static str {
        match self {
            CityTier::Tier1 => "tier1",
            CityTier::Tier2 => "tier2",
            CityTier::Tier3 => "tier3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressType {
    Home,
    Office,
}

impl AddressType {
    pub fn as_str(self) -> &'static str {
        match self {
            AddressType::Home => "home",
            AddressType::Office => "office",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GeoRepr", into = "GeoRepr")]
pub struct GeoKey {
    pincode: String,
    city_tier: CityTier,
    address_type: AddressType,
}

#[derive(Serialize, Deserialize)]
struct GeoRepr {
    pincode: String,
    city_tier: CityTier,
    address_type: AddressType,
}

impl GeoKey {
    pub fn new(pincode: impl Into<String>, city_tier: CityTier, address_type: AddressType) -> Result<Self> {
        let pincode = pincode.into();
        if pincode.len() != 6 || !pincode.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::invalid(format!("pincode {pincode:?} is not 6 digits")));
        }
        Ok(GeoKey { pincode, city_tier, address_type })
    }

    pub fn pincode(&self) -> &str {
        &self.pincode
    }

    pub fn pincode_prefix(&self) -> &str {
        &self.pincode[..4]
    }

    pub fn city_tier(&self) -> CityTier {
        self.city_tier
    }

    pub fn address_type(&self) -> AddressType {
        self.address_type
    }
}

impl TryFrom<GeoRepr> for GeoKey {
    type Error = Error;
    fn try_from(r: GeoRepr) -> Result<Self> {
        GeoKey::new(r.pincode, r.city_tier, r.address_type)
    }
}

impl From<GeoKey> for GeoRepr {
    fn from(g: GeoKey) -> Self {
        GeoRepr { pincode: g.pincode, city_tier: g.city_tier, address_type: g.address_type }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Source {
    Warehouse(NodeId),
    Vendor(NodeId),
}

impl Source {
    pub fn node(self) -> NodeId {
        match self {
            Source::Warehouse(n) | Source::Vendor(n) => n,
        }
    }

    pub fn pre_ship_leg(self) -> Leg {
        match self {
            Source::Warehouse(_) => Leg::Warehouse,
            Source::Vendor(_) => Leg::Vendor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub order_id: u64,
    pub placed_at: Timestamp,
    pub source: Source,
    pub lane: Lane,
    pub geo: GeoKey,
    pub item_count: u32,
    pub is_multi_item: bool,
}

impl Order {
    pub fn new(order_id: u64, placed_at: Timestamp, source: Source, lane: Lane, geo: GeoKey, item_count: u32) -> Result<Self> {
        if item_count == 0 {
            return Err(Error::invalid("item_count must be at least 1"));
        }
        if source.node() != lane.origin() {
            return Err(Error::invalid(format!(
                "order {order_id}: source node {} is not the lane origin {}",
                source.node(),
                lane.origin()
            )));
        }
        Ok(Order { order_id, placed_at, source, lane, geo, item_count, is_multi_item: item_count > 1 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.item_count == 0 || self.is_multi_item != (self.item_count > 1) {
            return Err(Error::invalid(format!("order {}: inconsistent item count", self.order_id)));
        }
        if self.source.node() != self.lane.origin() {
            return Err(Error::invalid(format!(
                "order {}: source node {} is not the lane origin {}",
                self.order_id,
                self.source.node(),
                self.lane.origin()
            )));
        }
        Ok(())
    }
}

/// Order processing stages in route order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Vendor,
    Warehouse,
    DispatchWait,
    Linehaul,
    Lastmile,
}

impl Leg {
    pub const ALL: [Leg; 5] = [Leg::Vendor, Leg::Warehouse, Leg::DispatchWait, Leg::Linehaul, Leg::Lastmile];

    pub fn as_str(self) -> &'static str {
        match self {
            Leg::Vendor => "vendor",
            Leg::Warehouse => "warehouse",
            Leg::DispatchWait => "dispatch_wait",
            Leg::Linehaul => "linehaul",
            Leg::Lastmile => "lastmile",
        }
    }
}

/// One shipment's lifecycle. `shipped_at` is the dispatch departure from the
/// origin; shipping time is `delivered_at - shipped_at`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub order: Order,
    pub shipped_at: Timestamp,
    pub delivered_at: Timestamp,
    pub leg_durations: BTreeMap<Leg, f64>,
}

impl DeliveryRecord {
    pub fn validate(&self) -> Result<()> {
        self.order.validate()?;
        let id = self.order.order_id;
        if !(self.order.placed_at <= self.shipped_at && self.shipped_at <= self.delivered_at) {
            return Err(Error::invalid(format!("record {id}: timestamps out of order")));
        }
        if self.leg_durations.values().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid(format!("record {id}: negative or non-finite leg duration")));
        }
        let total: f64 = self.leg_durations.values().sum();
        let span = self.delivered_at.hours_since(self.order.placed_at);
        if (total - span).abs() > 1.0 / 60.0 + 1e-9 {
            return Err(Error::invalid(format!("record {id}: legs sum to {total:.4}h but lifecycle spans {span:.4}h")));
        }
        Ok(())
    }

    pub fn leg(&self, leg: Leg) -> Option<f64> {
        self.leg_durations.get(&leg).copied()
    }

    pub fn shipping_hours(&self) -> f64 {
        self.delivered_at.hours_since(self.shipped_at)
    }

    /// Vendor or warehouse processing time, excluding the dispatch wait.
    pub fn pre_ship_hours(&self) -> f64 {
        self.leg(self.order.source.pre_ship_leg()).unwrap_or(0.0)
    }

    /// When the shipment reached its last-mile center.
    pub fn center_arrival(&self) -> Timestamp {
        let lastmile = self.leg(Leg::Lastmile).unwrap_or(0.0);
        self.delivered_at.plus_hours(-lastmile)
    }

    /// When pre-ship processing finished (before the dispatch wait).
    pub fn ready_at(&self) -> Timestamp {
        self.order.placed_at.plus_hours(self.pre_ship_hours())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane() -> Lane {
        Lane::new(NodeId(1), NodeId(9), vec![NodeId(1), NodeId(4), NodeId(9)], Carrier::OwnLogistics).unwrap()
    }

    #[test]
    fn lane_invariants() {
        assert!(Lane::new(NodeId(1), NodeId(9), vec![NodeId(1)], Carrier::OwnLogistics).is_err());
        assert!(Lane::new(NodeId(1), NodeId(9), vec![NodeId(2), NodeId(9)], Carrier::OwnLogistics).is_err());
        assert!(Lane::new(NodeId(1), NodeId(9), vec![NodeId(1), NodeId(1), NodeId(9)], Carrier::ThirdParty).is_err());
        let l = lane();
        assert_eq!(l.hops().collect::<Vec<_>>(), vec![(NodeId(1), NodeId(4)), (NodeId(4), NodeId(9))]);
        assert_eq!(l.key(), "1-4-9:own_logistics");
    }

    #[test]
    fn geo_prefix_is_first_four_digits() {
        let g = GeoKey::new("560034", CityTier::Tier1, AddressType::Home).unwrap();
        assert_eq!(g.pincode_prefix(), "5600");
        assert!(GeoKey::new("56003", CityTier::Tier1, AddressType::Home).is_err());
        assert!(GeoKey::new("56003a", CityTier::Tier1, AddressType::Home).is_err());
    }

    #[test]
    fn multi_item_flag_follows_count() {
        let g = GeoKey::new("560034", CityTier::Tier1, AddressType::Home).unwrap();
        let t = Timestamp::from_minutes(0).unwrap();
        let o = Order::new(1, t, Source::Warehouse(NodeId(1)), lane(), g.clone(), 3).unwrap();
        assert!(o.is_multi_item);
        assert!(Order::new(2, t, Source::Warehouse(NodeId(1)), lane(), g.clone(), 0).is_err());
        assert!(Order::new(3, t, Source::Vendor(NodeId(2)), lane(), g, 1).is_err());
    }

    #[test]
    fn record_leg_sum_checked() {
        let g = GeoKey::new("560034", CityTier::Tier1, AddressType::Home).unwrap();
        let t0 = Timestamp::from_minutes(0).unwrap();
        let order = Order::new(1, t0, Source::Warehouse(NodeId(1)), lane(), g, 1).unwrap();
        let mut legs = BTreeMap::new();
        legs.insert(Leg::Warehouse, 2.0);
        legs.insert(Leg::Linehaul, 10.0);
        legs.insert(Leg::Lastmile, 12.0);
        let mut rec = DeliveryRecord { order, shipped_at: t0.plus_hours(2.0), delivered_at: t0.plus_hours(24.0), leg_durations: legs };
        rec.validate().unwrap();
        assert_eq!(rec.shipping_hours(), 22.0);
        assert_eq!(rec.center_arrival(), t0.plus_hours(12.0));
        rec.leg_durations.insert(Leg::Lastmile, 13.0);
        assert!(rec.validate().is_err());
    }

    #[test]
    fn order_serializes_source_tagged() {
        let json = serde_json::to_string(&Source::Vendor(NodeId(7))).unwrap();
        assert_eq!(json, r#"{"kind":"vendor","id":7}"#);
    }
}
