//! Shared data model: time, network topology, orders, calendars, datasets.
//!
//! Everything here is immutable once constructed.

mod dataset;
mod holidays;
mod network;
mod time;

pub use dataset::{
    decay_weights, encode_categorical, sidecar_path, CategoricalColumn, ColumnRole, Dataset, Dictionary, NumericColumn, Sidecar,
    SidecarColumn, DEFAULT_HALF_LIFE_DAYS, MISSING_LEVEL,
};
pub use holidays::{CalendarEntry, DayKind, HolidayCalendar, HolidayKind};
pub use network::{AddressType, Carrier, CityTier, DeliveryRecord, GeoKey, Lane, Leg, NodeId, Order, Source};
pub use time::{Date, Timestamp, MINUTES_PER_DAY};
