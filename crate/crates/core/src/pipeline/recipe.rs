//! Feature recipes: which features a model sees and how each is computed.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    HistoricalStats,
    Geo,
    Load,
    Manpower,
    LastmilePerf,
    HolidaySeasonal,
    Plan,
    Pendency,
    Vendor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sd,
    Median,
    Count,
}

impl Aggregation {
    /// NaN when there is nothing to aggregate, except for counts.
    pub fn apply(self, values: &[f64]) -> f64 {
        use crate::stats;
        match self {
            Aggregation::Mean => stats::mean(values),
            Aggregation::Sd => stats::sd(values),
            Aggregation::Median => stats::median(values),
            Aggregation::Count => Some(values.len() as f64),
        }
        .unwrap_or(f64::NAN)
    }
}

/// Geographic granularity, finest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoLevel {
    Pincode,
    Prefix,
    Tier,
    Global,
}

impl GeoLevel {
    /// Numeric code written next to a backed-off feature.
    pub fn code(self) -> f64 {
        match self {
            GeoLevel::Pincode => 0.0,
            GeoLevel::Prefix => 1.0,
            GeoLevel::Tier => 2.0,
            GeoLevel::Global => 3.0,
        }
    }
}

/// What a feature measures. Each quantity belongs to exactly one family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    // Route and address attributes of the order.
    Lane,
    Carrier,
    Origin,
    Center,
    CityTier,
    AddressType,
    PincodePrefix,
    /// Last-mile hours at the order's pincode, backed off to coarser levels.
    GeoLastmileHours,
    ItemCount,
    CenterArrivals,
    CenterShipped,
    LaneShippingHours,
    LaneLinehaulHours,
    /// Vendor or warehouse processing hours at the order's origin.
    OriginPreShipHours,
    OwnStaff,
    ContractStaff,
    CenterLastmileHours,
    /// Deliveries over capacity.
    CenterUtilization,
    StartHour,
    StartWeekday,
    StartDayKind,
    LandingWeekday,
    LandingDayKind,
    LandingHandlingHours,
    PlannedArrivals,
    PlannedCapacity,
    PlannedShipVolume,
    /// Shipping hours on the matching day of the previous sale.
    HrdProxyHours,
    /// Arrivals minus deliveries summed over the window.
    PendencyBalance,
    Backlog,
    ProjectedBacklog,
    ProjectedArrivals,
    VendorType,
    VendorColoader,
    VendorMaxHours,
    VendorPickupHour,
}

impl Quantity {
    pub fn family(self) -> Family {
        use Quantity::*;
        match self {
            Lane | Carrier | Origin | Center | CityTier | AddressType | PincodePrefix | GeoLastmileHours => Family::Geo,
            ItemCount | CenterArrivals | CenterShipped => Family::Load,
            LaneShippingHours | LaneLinehaulHours | OriginPreShipHours => Family::HistoricalStats,
            OwnStaff | ContractStaff => Family::Manpower,
            CenterLastmileHours | CenterUtilization => Family::LastmilePerf,
            StartHour | StartWeekday | StartDayKind | LandingWeekday | LandingDayKind | LandingHandlingHours => Family::HolidaySeasonal,
            PlannedArrivals | PlannedCapacity | PlannedShipVolume | HrdProxyHours => Family::Plan,
            PendencyBalance | Backlog | ProjectedBacklog | ProjectedArrivals => Family::Pendency,
            VendorType | VendorColoader | VendorMaxHours | VendorPickupHour => Family::Vendor,
        }
    }

    pub fn is_categorical(self) -> bool {
        use Quantity::*;
        matches!(
            self,
            Lane | Carrier | Origin | Center | CityTier | AddressType | PincodePrefix | StartDayKind | LandingDayKind | VendorType
        )
    }

    /// Aggregated over delivered records in a trailing window.
    pub fn from_records(self) -> bool {
        use Quantity::*;
        matches!(self, GeoLastmileHours | LaneShippingHours | LaneLinehaulHours | OriginPreShipHours | CenterLastmileHours)
    }

    /// Aggregated over the daily center log in a trailing window.
    pub fn from_center_days(self) -> bool {
        use Quantity::*;
        matches!(self, CenterArrivals | CenterShipped | OwnStaff | ContractStaff | CenterUtilization | PendencyBalance)
    }
}

fn default_window() -> u32 {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub family: Family,
    pub quantity: Quantity,
    #[serde(default = "default_window")]
    pub window_days: u32,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backoff: Vec<GeoLevel>,
}

impl FeatureDef {
    pub fn new(name: &str, quantity: Quantity) -> Self {
        FeatureDef {
            name: name.into(),
            family: quantity.family(),
            quantity,
            window_days: default_window(),
            aggregation: Aggregation::Mean,
            backoff: Vec::new(),
        }
    }

    pub fn window(mut self, days: u32, aggregation: Aggregation) -> Self {
        self.window_days = days;
        self.aggregation = aggregation;
        self
    }

    pub fn backoff(mut self, levels: &[GeoLevel]) -> Self {
        self.backoff = levels.to_vec();
        self
    }

    /// Name of the companion column holding the backoff level used.
    pub fn level_column(&self) -> String {
        format!("{}_level", self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub features: Vec<FeatureDef>,
}

impl FeatureRecipe {
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::config(format!("feature {:?} defined twice", f.name)));
            }
            if f.quantity.family() != f.family {
                return Err(Error::config(format!(
                    "feature {:?}: quantity {:?} belongs to family {:?}, not {:?}",
                    f.name,
                    f.quantity,
                    f.quantity.family(),
                    f.family
                )));
            }
            if f.window_days < 1 {
                return Err(Error::config(format!("feature {:?}: window must be at least one day", f.name)));
            }
            if f.quantity == Quantity::GeoLastmileHours {
                if f.backoff.last() != Some(&GeoLevel::Global) {
                    return Err(Error::config(format!("feature {:?}: backoff chain must end at the global level", f.name)));
                }
                if f.backoff.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config(format!("feature {:?}: backoff chain must go from fine to coarse", f.name)));
                }
            } else if !f.backoff.is_empty() {
                return Err(Error::config(format!("feature {:?}: only geo last-mile features back off", f.name)));
            }
        }
        Ok(())
    }

    /// TOML with a `[[features]]` array.
    pub fn from_toml(text: &str) -> Result<Self> {
        let r: FeatureRecipe = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsio::read(path)?).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn without_families(&self, families: &[Family]) -> Self {
        FeatureRecipe { features: self.features.iter().filter(|f| !families.contains(&f.family)).cloned().collect() }
    }

    pub fn uses(&self, family: Family) -> bool {
        self.features.iter().any(|f| f.family == family)
    }

    /// Route, load, lane statistics, calendar, plan and pendency features
    /// for the shipping leg.
    pub fn default_shipping() -> Self {
        use Aggregation::*;
        use Quantity::*;
        let chain = [GeoLevel::Pincode, GeoLevel::Prefix, GeoLevel::Tier, GeoLevel::Global];
        FeatureRecipe {
            features: vec![
                FeatureDef::new("lane", Lane),
                FeatureDef::new("carrier", Carrier),
                FeatureDef::new("center", Center),
                FeatureDef::new("city_tier", CityTier),
                FeatureDef::new("address_type", AddressType),
                FeatureDef::new("geo_lastmile_mean", GeoLastmileHours).window(28, Mean).backoff(&chain),
                FeatureDef::new("lane_ship_mean", LaneShippingHours).window(14, Mean),
                FeatureDef::new("lane_ship_sd", LaneShippingHours).window(14, Sd),
                FeatureDef::new("lane_ship_median", LaneShippingHours).window(14, Median),
                FeatureDef::new("lane_linehaul_mean", LaneLinehaulHours).window(14, Mean),
                FeatureDef::new("lane_linehaul_sd", LaneLinehaulHours).window(14, Sd),
                FeatureDef::new("center_arrivals_7d", CenterArrivals).window(7, Mean),
                FeatureDef::new("center_arrivals_1d", CenterArrivals).window(1, Mean),
                FeatureDef::new("center_shipped_1d", CenterShipped).window(1, Mean),
                FeatureDef::new("own_staff_7d", OwnStaff).window(7, Mean),
                FeatureDef::new("contract_staff_7d", ContractStaff).window(7, Mean),
                FeatureDef::new("center_lastmile_mean", CenterLastmileHours).window(7, Mean),
                FeatureDef::new("center_lastmile_sd", CenterLastmileHours).window(7, Sd),
                FeatureDef::new("center_utilization", CenterUtilization).window(7, Mean),
                FeatureDef::new("start_hour", StartHour),
                FeatureDef::new("start_weekday", StartWeekday),
                FeatureDef::new("start_day_kind", StartDayKind),
                FeatureDef::new("landing_weekday", LandingWeekday),
                FeatureDef::new("landing_day_kind", LandingDayKind),
                FeatureDef::new("landing_handling_hours", LandingHandlingHours),
                FeatureDef::new("planned_arrivals", PlannedArrivals),
                FeatureDef::new("planned_capacity", PlannedCapacity),
                FeatureDef::new("hrd_proxy_hours", HrdProxyHours),
                FeatureDef::new("pendency_balance_3d", PendencyBalance).window(3, Mean),
                FeatureDef::new("backlog", Backlog),
                FeatureDef::new("projected_backlog", ProjectedBacklog),
                FeatureDef::new("projected_arrivals", ProjectedArrivals),
            ],
        }
    }

    /// Origin, item mix and processing history for the warehouse leg.
    pub fn default_warehouse() -> Self {
        use Aggregation::*;
        use Quantity::*;
        FeatureRecipe {
            features: vec![
                FeatureDef::new("origin", Origin),
                FeatureDef::new("item_count", ItemCount),
                FeatureDef::new("start_hour", StartHour),
                FeatureDef::new("start_weekday", StartWeekday),
                FeatureDef::new("origin_pre_ship_mean", OriginPreShipHours).window(14, Mean),
                FeatureDef::new("origin_pre_ship_sd", OriginPreShipHours).window(14, Sd),
            ],
        }
    }

    /// Vendor metadata plus processing history for the vendor leg.
    pub fn default_vendor() -> Self {
        use Aggregation::*;
        use Quantity::*;
        FeatureRecipe {
            features: vec![
                FeatureDef::new("origin", Origin),
                FeatureDef::new("vendor_type", VendorType),
                FeatureDef::new("vendor_coloader", VendorColoader),
                FeatureDef::new("vendor_max_hours", VendorMaxHours),
                FeatureDef::new("vendor_pickup_hour", VendorPickupHour),
                FeatureDef::new("start_hour", StartHour),
                FeatureDef::new("start_weekday", StartWeekday),
                FeatureDef::new("origin_pre_ship_mean", OriginPreShipHours).window(14, Mean),
                FeatureDef::new("origin_pre_ship_sd", OriginPreShipHours).window(14, Sd),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for r in [FeatureRecipe::default_shipping(), FeatureRecipe::default_warehouse(), FeatureRecipe::default_vendor()] {
            r.validate().unwrap();
            assert_eq!(FeatureRecipe::from_toml(&r.to_toml().unwrap()).unwrap(), r);
        }
    }

    #[test]
    fn config_errors() {
        let unknown = "[[features]]\nname = \"x\"\nfamily = \"weather\"\nquantity = \"lane\"\n";
        assert!(matches!(FeatureRecipe::from_toml(unknown), Err(Error::Config(_))));
        let mismatch = "[[features]]\nname = \"x\"\nfamily = \"plan\"\nquantity = \"lane\"\n";
        assert!(matches!(FeatureRecipe::from_toml(mismatch), Err(Error::Config(_))));
        let zero = "[[features]]\nname = \"x\"\nfamily = \"load\"\nquantity = \"center_arrivals\"\nwindow_days = 0\n";
        assert!(FeatureRecipe::from_toml(zero).is_err());
        let no_global =
            "[[features]]\nname = \"g\"\nfamily = \"geo\"\nquantity = \"geo_lastmile_hours\"\nbackoff = [\"pincode\", \"tier\"]\n";
        assert!(FeatureRecipe::from_toml(no_global).is_err());
        let ok = "[[features]]\nname = \"g\"\nfamily = \"geo\"\nquantity = \"geo_lastmile_hours\"\nbackoff = [\"pincode\", \"global\"]\n";
        assert!(FeatureRecipe::from_toml(ok).is_ok());
    }

    #[test]
    fn ablation_drops_families() {
        let r = FeatureRecipe::default_shipping().without_families(&[Family::Plan, Family::Pendency]);
        assert!(!r.uses(Family::Plan) && !r.uses(Family::Pendency) && r.uses(Family::Load));
    }

    #[test]
    fn aggregations() {
        let v = [1.0, 2.0, 6.0];
        assert_eq!(Aggregation::Mean.apply(&v), 3.0);
        assert_eq!(Aggregation::Median.apply(&v), 2.0);
        assert_eq!(Aggregation::Count.apply(&v), 3.0);
        assert!((Aggregation::Sd.apply(&v) - 7.0f64.sqrt()).abs() < 1e-12);
        assert!(Aggregation::Mean.apply(&[]).is_nan());
        assert_eq!(Aggregation::Count.apply(&[]), 0.0);
    }
}
