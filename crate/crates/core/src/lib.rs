//! Delivery promise-date prediction.
//!
//! The crate models an order's journey as a sequence of legs (vendor or
//! warehouse processing, dispatch, linehaul, last mile) and predicts each leg
//! with one of several model families:
//!
//! - [`gbdt`]: histogram gradient-boosted trees with mse, asymmetric and
//!   quantile objectives ([`losses`]).
//! - [`stsf`]: an additive trend + seasonality + holiday forecaster.
//! - [`baseline`]: the static rule-based promise.
//!
//! [`breach`] adds a feedback corrector on top of a mean model, [`calendar`]
//! derives holiday and weekend handling times, [`pipeline`] builds features
//! and composes leg predictions into a [`pipeline::PromiseQuote`], and
//! [`evalkit`] scores promises at order-day level. [`simnet`] is a seeded
//! synthetic network used as the testbed for all of the above.

pub mod baseline;
pub mod breach;
pub mod calendar;
pub mod domain;
pub mod error;
pub mod evalkit;
pub mod fsio;
pub mod gbdt;
pub mod losses;
pub mod pipeline;
pub mod rng;
pub mod simnet;
pub mod stats;
pub mod stsf;

pub use domain::{
    Carrier, CategoricalColumn, CityTier, Dataset, Date, DeliveryRecord, Dictionary, GeoKey, HolidayCalendar, HolidayKind, Lane, Leg,
    NodeId, NumericColumn, Order, Source, Timestamp,
};
pub use error::{Error, Result};
pub use gbdt::{BoostedModel, BoosterParams};
pub use losses::LossSpec;
pub use pipeline::PromiseQuote;
pub use stsf::SeasonalModel;
