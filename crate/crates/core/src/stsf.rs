//! Additive trend + seasonality + holiday forecaster.
//!
//! `y(t) = g(t) + s(t) + h(t) + e`, where `g` is piecewise linear with
//! changepoints, `s` a sum of Fourier series and `h` per-day holiday
//! offsets. The fit is penalized least squares: squared residuals plus an L1
//! penalty of `1 / changepoint_prior_scale` on the changepoint slope
//! adjustments. Intervals come from empirical in-sample residual quantiles.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{ColumnRole, Date, HolidayCalendar, HolidayKind, NodeId, Sidecar, Timestamp};
use crate::error::{Error, Result};
use crate::stats;

pub const FORMAT_VERSION: u32 = 1;
const CONVERGENCE_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesObservation {
    pub t: Timestamp,
    /// Hours.
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seasonality {
    pub period_hours: f64,
    pub fourier_order: usize,
}

impl Seasonality {
    pub const WEEKLY: Seasonality = Seasonality { period_hours: 168.0, fourier_order: 3 };
    pub const DAILY: Seasonality = Seasonality { period_hours: 24.0, fourier_order: 4 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolidayConfig {
    pub calendar: HolidayCalendar,
    pub regions: Vec<NodeId>,
    #[serde(default = "default_holiday_kinds")]
    pub kinds: Vec<HolidayKind>,
    #[serde(default = "default_window")]
    pub window_days: u32,
}

fn default_holiday_kinds() -> Vec<HolidayKind> {
    vec![HolidayKind::Fixed, HolidayKind::Flexible]
}

fn default_window() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StsfConfig {
    pub n_changepoints: usize,
    pub changepoint_prior_scale: f64,
    pub seasonalities: Vec<Seasonality>,
    pub holidays: Option<HolidayConfig>,
    pub residual_levels: Vec<f64>,
    pub cap: f64,
    pub floor: f64,
}

impl Default for StsfConfig {
    fn default() -> Self {
        StsfConfig {
            n_changepoints: 25,
            changepoint_prior_scale: 0.05,
            seasonalities: vec![Seasonality::WEEKLY, Seasonality::DAILY],
            holidays: None,
            residual_levels: vec![0.5, 0.8, 0.9, 0.95],
            cap: f64::MAX,
            floor: 0.0,
        }
    }
}

impl StsfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cap < self.floor {
            return Err(Error::invalid(format!("cap {} is below floor {}", self.cap, self.floor)));
        }
        if !(self.changepoint_prior_scale > 0.0) {
            return Err(Error::invalid("changepoint_prior_scale must be positive"));
        }
        for s in &self.seasonalities {
            if !(s.period_hours > 0.0) || s.fourier_order == 0 {
                return Err(Error::invalid(format!("bad seasonality {s:?}")));
            }
        }
        if self.residual_levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::invalid("residual levels must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Base slope, hours per hour.
    pub k: f64,
    /// Value at the model origin.
    pub m: f64,
    pub changepoints: Vec<Timestamp>,
    /// Slope change at each changepoint, hours per hour.
    pub deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedSeasonality {
    pub period_hours: f64,
    pub fourier_order: usize,
    /// Sine coefficients, orders 1..=N.
    pub a: Vec<f64>,
    /// Cosine coefficients.
    pub b: Vec<f64>,
}

impl FittedSeasonality {
    pub fn amplitude(&self, order: usize) -> f64 {
        self.a[order - 1].hypot(self.b[order - 1])
    }

    fn value(&self, epoch_hours: f64) -> f64 {
        let mut s = 0.0;
        for n in 1..=self.fourier_order {
            let x = TAU * n as f64 * epoch_hours / self.period_hours;
            s += self.a[n - 1] * x.sin() + self.b[n - 1] * x.cos();
        }
        s
    }
}

/// Additive effect of one holiday (kind, region) on days `-w..=w` around
/// each of its dates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolidayEffect {
    pub kind: HolidayKind,
    pub region: NodeId,
    /// Index `w + offset` holds the effect `offset` days from the holiday.
    pub effects: Vec<f64>,
}

impl HolidayEffect {
    pub fn on_day(&self) -> f64 {
        self.effects[self.effects.len() / 2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolidayDate {
    pub region: NodeId,
    pub date: Date,
    pub kind: HolidayKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualQuantile {
    pub level: f64,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub point: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalModel {
    pub format_version: u32,
    pub origin: Timestamp,
    pub trend: Trend,
    pub seasonalities: Vec<FittedSeasonality>,
    pub holiday_window_days: u32,
    pub holiday_effects: Vec<HolidayEffect>,
    pub holiday_dates: Vec<HolidayDate>,
    /// Sorted by level.
    pub residual_quantiles: Vec<ResidualQuantile>,
    pub cap: f64,
    pub floor: f64,
}

type HolidayKey = (HolidayKind, NodeId, i32);

fn holiday_dates(cfg: &HolidayConfig) -> Vec<HolidayDate> {
    let mut out: Vec<HolidayDate> = cfg
        .calendar
        .entries()
        .filter(|e| cfg.regions.contains(&e.region) && cfg.kinds.contains(&e.kind))
        .map(|e| HolidayDate { region: e.region, date: e.date, kind: e.kind })
        .collect();
    out.sort_by_key(|h| (h.date, h.region, h.kind));
    out
}

/// Holiday keys touching `date`, given dates indexed by day.
fn holiday_keys_on(by_date: &BTreeMap<Date, Vec<(HolidayKind, NodeId)>>, date: Date, w: u32) -> Vec<HolidayKey> {
    let w = w as i32;
    let mut keys = Vec::new();
    for (&d, list) in by_date.range(date.offset(-w)..=date.offset(w)) {
        let offset = d.days_until(date);
        for &(kind, region) in list {
            keys.push((kind, region, offset));
        }
    }
    keys
}

fn index_by_date(dates: &[HolidayDate]) -> BTreeMap<Date, Vec<(HolidayKind, NodeId)>> {
    let mut by_date: BTreeMap<Date, Vec<(HolidayKind, NodeId)>> = BTreeMap::new();
    for h in dates {
        by_date.entry(h.date).or_default().push((h.kind, h.region));
    }
    by_date
}

fn epoch_hours(t: Timestamp) -> f64 {
    t.minutes() as f64 / 60.0
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Least-squares solution through the pseudo-inverse of `a`.
fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(0, b.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-10 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, eps.max(f64::MIN_POSITIVE)).expect("u and v were computed")
}

/// Minimizes `|y - H d|^2 + lambda * |d|_1` by cyclic coordinate descent.
fn lasso(h: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let q = h.ncols();
    let mut d = DVector::zeros(q);
    if q == 0 || !lambda.is_finite() {
        return d;
    }
    let gram = h.transpose() * h;
    let c = h.transpose() * y;
    let yy = y.dot(y);
    let objective = |d: &DVector<f64>| yy - 2.0 * c.dot(d) + d.dot(&(&gram * d)) + lambda * d.abs().sum();
    let mut prev = objective(&d);
    for _ in 0..MAX_SWEEPS {
        for j in 0..q {
            let gjj = gram[(j, j)];
            if gjj <= 1e-12 * yy.max(1.0) {
                d[j] = 0.0;
                continue;
            }
            let rho = c[j] - gram.row(j).dot(&d.transpose()) + gjj * d[j];
            d[j] = soft_threshold(rho, lambda / 2.0) / gjj;
        }
        let obj = objective(&d);
        if (prev - obj).abs() <= CONVERGENCE_TOL * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        prev = obj;
    }
    d
}

/// Fits the model. Every configured seasonality needs at least two full
/// periods of data.
pub fn fit(series: &[SeriesObservation], config: &StsfConfig) -> Result<SeasonalModel> {
    config.validate()?;
    if series.len() < 3 {
        return Err(Error::InsufficientData(format!("{} observations, need at least 3", series.len())));
    }
    if series.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::invalid("series timestamps must be strictly increasing"));
    }
    if series.iter().any(|o| !o.y.is_finite()) {
        return Err(Error::invalid("series values must be finite"));
    }
    let origin = series[0].t;
    let span = series[series.len() - 1].t.hours_since(origin);
    for s in &config.seasonalities {
        if span < 2.0 * s.period_hours {
            return Err(Error::InsufficientData(format!("series spans {span} h, need two full periods of {} h", s.period_hours)));
        }
    }

    let n = series.len();
    let ys: Vec<f64> = series.iter().map(|o| o.y).collect();
    let y_mean = stats::mean(&ys).expect("non-empty");
    let y_scale = match stats::sd(&ys).expect("non-empty") {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let hours: Vec<f64> = series.iter().map(|o| o.t.hours_since(origin)).collect();

    let changepoints: Vec<Timestamp> = (1..=config.n_changepoints)
        .map(|j| origin.plus_hours(0.8 * span * j as f64 / config.n_changepoints as f64))
        .filter(|&c| c > origin && c.hours_since(origin) < span)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let cp_hours: Vec<f64> = changepoints.iter().map(|c| c.hours_since(origin)).collect();

    let (window, hdates) = match &config.holidays {
        Some(h) => (h.window_days, holiday_dates(h)),
        None => (0, Vec::new()),
    };
    let by_date = index_by_date(&hdates);
    let obs_keys: Vec<Vec<HolidayKey>> = series.iter().map(|o| holiday_keys_on(&by_date, o.t.date(), window)).collect();
    let mut key_col: BTreeMap<HolidayKey, usize> = BTreeMap::new();
    for k in obs_keys.iter().flatten() {
        let next = key_col.len();
        key_col.entry(*k).or_insert(next);
    }
    // Re-number in key order so the column layout does not depend on data order.
    for (i, v) in key_col.values_mut().enumerate() {
        *v = i;
    }

    let n_fourier: usize = config.seasonalities.iter().map(|s| 2 * s.fourier_order).sum();
    let p = 2 + n_fourier + key_col.len();
    let mut a = DMatrix::zeros(n, p);
    for i in 0..n {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = hours[i] / span;
        let eh = epoch_hours(series[i].t);
        let mut col = 2;
        for s in &config.seasonalities {
            for order in 1..=s.fourier_order {
                let x = TAU * order as f64 * eh / s.period_hours;
                a[(i, col)] = x.sin();
                a[(i, col + 1)] = x.cos();
                col += 2;
            }
        }
        for k in &obs_keys[i] {
            a[(i, col + key_col[k])] += 1.0;
        }
    }
    let q = cp_hours.len();
    let mut h = DMatrix::zeros(n, q);
    for i in 0..n {
        for (j, &c) in cp_hours.iter().enumerate() {
            h[(i, j)] = ((hours[i] - c) / span).max(0.0);
        }
    }
    let y = DVector::from_iterator(n, ys.iter().map(|v| (v - y_mean) / y_scale));

    // Profile out the unpenalized block, then solve the lasso on what is left.
    let mut rhs = DMatrix::zeros(n, q + 1);
    rhs.columns_mut(0, q).copy_from(&h);
    rhs.set_column(q, &y);
    let proj = &a * lstsq(&a, &rhs);
    let resid = rhs - proj;
    let h_res = resid.columns(0, q).into_owned();
    let y_res: DVector<f64> = resid.column(q).into_owned();
    let deltas_s = lasso(&h_res, &y_res, 1.0 / config.changepoint_prior_scale);
    let y_rest = &y - &h * &deltas_s;
    let beta_m = lstsq(&a, &DMatrix::from_column_slice(n, 1, y_rest.as_slice()));
    let beta: Vec<f64> = beta_m.column(0).iter().copied().collect();

    let trend = Trend {
        k: y_scale * beta[1] / span,
        m: y_mean + y_scale * beta[0],
        changepoints,
        deltas: deltas_s.iter().map(|d| y_scale * d / span).collect(),
    };
    let mut col = 2;
    let seasonalities = config
        .seasonalities
        .iter()
        .map(|s| {
            let mut fs = FittedSeasonality { period_hours: s.period_hours, fourier_order: s.fourier_order, a: vec![], b: vec![] };
            for _ in 0..s.fourier_order {
                fs.a.push(y_scale * beta[col]);
                fs.b.push(y_scale * beta[col + 1]);
                col += 2;
            }
            fs
        })
        .collect();
    let mut effects: BTreeMap<(HolidayKind, NodeId), Vec<f64>> = BTreeMap::new();
    for (&(kind, region, offset), &c) in &key_col {
        let e = effects.entry((kind, region)).or_insert_with(|| vec![0.0; 2 * window as usize + 1]);
        e[(offset + window as i32) as usize] = y_scale * beta[col + c];
    }
    let holiday_effects = effects.into_iter().map(|((kind, region), effects)| HolidayEffect { kind, region, effects }).collect();

    let mut model = SeasonalModel {
        format_version: FORMAT_VERSION,
        origin,
        trend,
        seasonalities,
        holiday_window_days: window,
        holiday_effects,
        holiday_dates: hdates,
        residual_quantiles: Vec::new(),
        cap: config.cap,
        floor: config.floor,
    };
    let residuals: Vec<f64> = series.iter().map(|o| o.y - model.point(o.t)).collect();
    let mut levels = config.residual_levels.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    model.residual_quantiles = levels
        .into_iter()
        .map(|level| ResidualQuantile { level, offset: stats::quantile(&residuals, level).expect("non-empty") })
        .collect();
    Ok(model)
}

impl SeasonalModel {
    pub fn trend_at(&self, t: Timestamp) -> f64 {
        let x = t.hours_since(self.origin);
        let mut g = self.trend.m + self.trend.k * x;
        for (c, d) in self.trend.changepoints.iter().zip(&self.trend.deltas) {
            g += d * (x - c.hours_since(self.origin)).max(0.0);
        }
        g
    }

    pub fn seasonal_at(&self, t: Timestamp) -> f64 {
        let eh = epoch_hours(t);
        self.seasonalities.iter().map(|s| s.value(eh)).sum()
    }

    pub fn holiday_at(&self, t: Timestamp) -> f64 {
        if self.holiday_effects.is_empty() {
            return 0.0;
        }
        let w = self.holiday_window_days as i32;
        let date = t.date();
        let mut h = 0.0;
        for hd in &self.holiday_dates {
            let offset = hd.date.days_until(date);
            if offset.abs() > w {
                continue;
            }
            if let Some(e) = self.holiday_effects.iter().find(|e| e.kind == hd.kind && e.region == hd.region) {
                h += e.effects[(offset + w) as usize];
            }
        }
        h
    }

    /// Unclamped `g + s + h`.
    pub fn raw(&self, t: Timestamp) -> f64 {
        self.trend_at(t) + self.seasonal_at(t) + self.holiday_at(t)
    }

    pub fn point(&self, t: Timestamp) -> f64 {
        self.raw(t).clamp(self.floor, self.cap)
    }

    pub fn residual_quantile(&self, level: f64) -> Result<f64> {
        self.residual_quantiles
            .iter()
            .find(|r| (r.level - level).abs() < 1e-9)
            .map(|r| r.offset)
            .ok_or_else(|| Error::invalid(format!("level {level} was not fitted")))
    }

    pub fn forecast(&self, t: Timestamp, level: f64) -> Result<Forecast> {
        let offset = self.residual_quantile(level)?;
        let point = self.point(t);
        Ok(Forecast { point, upper: (point + offset).clamp(self.floor, self.cap) })
    }

    pub fn holiday_effect(&self, kind: HolidayKind, region: NodeId) -> Option<&HolidayEffect> {
        self.holiday_effects.iter().find(|e| e.kind == kind && e.region == region)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version > FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: header.format_version, supported: FORMAT_VERSION });
        }
        Ok(serde_json::from_str(text)?)
    }
}

/// Reads a series from a dataset CSV whose sidecar marks one `time` column
/// (minutes since epoch) and one `target` column. Rows are sorted by time.
pub fn read_series(csv_path: &Path) -> Result<Vec<SeriesObservation>> {
    let sidecar = Sidecar::read(csv_path)?;
    let time_col = sidecar.column_with_role(ColumnRole::Time).ok_or_else(|| Error::SchemaMismatch("no time column".into()))?.name.clone();
    let target_col =
        sidecar.column_with_role(ColumnRole::Target).ok_or_else(|| Error::SchemaMismatch("no target column".into()))?.name.clone();
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(csv_path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    let headers = rdr.headers()?.clone();
    let find =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::SchemaMismatch(format!("column {name:?} not in CSV")));
    let (ti, yi) = (find(&time_col)?, find(&target_col)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: i64 = rec[ti].parse().map_err(|_| Error::invalid(format!("bad time {:?}", &rec[ti])))?;
        let y: f64 = rec[yi].parse().map_err(|_| Error::invalid(format!("bad target {:?}", &rec[yi])))?;
        out.push(SeriesObservation { t: Timestamp::from_minutes(t)?, y });
    }
    out.sort_by_key(|o| o.t);
    Ok(out)
}
