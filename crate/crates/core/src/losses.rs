//! Training objectives: squared error, asymmetric squared error and pinball.
//!
//! All derivatives are with respect to the prediction `f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::weighted_quantile;

/// Objective selector. Serialized as `{"variant": "quantile", "tau": 0.9}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LossSpec {
    Mse,
    /// Residuals where the target exceeds the prediction are scaled by
    /// `alpha` before squaring. `alpha = 1` is plain mse.
    Asymmetric {
        alpha: f64,
    },
    /// Pinball loss; minimized by the `tau`-quantile.
    Quantile {
        tau: f64,
    },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Mse
    }
}

/// Penalization factor used when none is configured.
pub const DEFAULT_ALPHA: f64 = 2.0;

impl LossSpec {
    pub fn asymmetric(alpha: f64) -> Result<Self> {
        let s = LossSpec::Asymmetric { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn quantile(tau: f64) -> Result<Self> {
        let s = LossSpec::Quantile { tau };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Mse => Ok(()),
            LossSpec::Asymmetric { alpha } if alpha >= 1.0 && alpha.is_finite() => Ok(()),
            LossSpec::Asymmetric { alpha } => Err(Error::invalid(format!("asymmetric alpha must be >= 1, got {alpha}"))),
            LossSpec::Quantile { tau } if tau > 0.0 && tau < 1.0 => Ok(()),
            LossSpec::Quantile { tau } => Err(Error::invalid(format!("quantile tau must be in (0, 1), got {tau}"))),
        }
    }

    /// Parses `mse`, `asymmetric:2.5` or `quantile:0.95`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (text.trim(), None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::config(format!("loss {name:?} needs a parameter, e.g. {name}:0.9")))?
                .parse::<f64>()
                .map_err(|e| Error::config(format!("loss parameter in {text:?}: {e}")))
        };
        let spec = match name {
            "mse" => LossSpec::Mse,
            "asymmetric" => LossSpec::Asymmetric { alpha: arg.map_or(Ok(DEFAULT_ALPHA), |a| number(Some(a)))? },
            "quantile" => LossSpec::Quantile { tau: number(arg)? },
            other => return Err(Error::config(format!("unknown loss {other:?}"))),
        };
        // A bad parameter in configuration text is a config error.
        spec.validate().map_err(|e| Error::config(e.to_string().trim_start_matches("invalid input: ")))?;
        Ok(spec)
    }

    pub fn label(&self) -> String {
        match *self {
            LossSpec::Mse => "mse".into(),
            LossSpec::Asymmetric { alpha } => format!("asymmetric:{alpha}"),
            LossSpec::Quantile { tau } => format!("quantile:{tau}"),
        }
    }

    pub fn is_quantile(&self) -> bool {
        matches!(self, LossSpec::Quantile { .. })
    }
}

fn check_finite(y: f64, f: f64) -> Result<()> {
    if y.is_finite() && f.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite loss input (y = {y}, f = {f})")))
    }
}

pub fn loss_value(spec: LossSpec, y: f64, f: f64) -> Result<f64> {
    check_finite(y, f)?;
    Ok(value_unchecked(spec, y, f))
}

pub(crate) fn value_unchecked(spec: LossSpec, y: f64, f: f64) -> f64 {
    let u = y - f;
    match spec {
        LossSpec::Mse => u * u,
        LossSpec::Asymmetric { alpha } => {
            let e = if y > f { alpha * u } else { u };
            e * e
        }
        LossSpec::Quantile { tau } => {
            let indicator = if u < 0.0 { 1.0 } else { 0.0 };
            u * (tau - indicator)
        }
    }
}

/// Gradient and hessian of the loss at `f`. Pinball reports a unit hessian
/// (its true curvature is zero) and a zero subgradient at `y == f`.
pub fn gradient_hessian(spec: LossSpec, y: f64, f: f64) -> Result<(f64, f64)> {
    check_finite(y, f)?;
    Ok(grad_hess_unchecked(spec, y, f))
}

pub(crate) fn grad_hess_unchecked(spec: LossSpec, y: f64, f: f64) -> (f64, f64) {
    match spec {
        LossSpec::Mse => (2.0 * (f - y), 2.0),
        LossSpec::Asymmetric { alpha } => {
            if y > f {
                let scale = 2.0 * (alpha * alpha);
                (scale * (f - y), scale)
            } else {
                (2.0 * (f - y), 2.0)
            }
        }
        LossSpec::Quantile { tau } => {
            let g = if y > f {
                -tau
            } else if y < f {
                1.0 - tau
            } else {
                0.0
            };
            (g, 1.0)
        }
    }
}

/// Constant prediction minimizing the weighted total loss.
pub fn constant_minimizer(spec: LossSpec, targets: &[f64], weights: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("constant minimizer needs at least one target"));
    }
    if targets.len() != weights.len() {
        return Err(Error::invalid("targets and weights differ in length"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("weights sum to zero"));
    }
    Ok(match spec {
        LossSpec::Mse => weighted_mean(targets, weights, total),
        LossSpec::Asymmetric { alpha } if alpha == 1.0 => weighted_mean(targets, weights, total),
        LossSpec::Asymmetric { alpha } => asymmetric_minimizer(alpha, targets, weights),
        LossSpec::Quantile { tau } => weighted_quantile(targets, weights, tau).expect("positive total weight"),
    })
}

fn weighted_mean(targets: &[f64], weights: &[f64], total: f64) -> f64 {
    targets.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / total
}

/// Exact minimizer of sum w_i c_i (y_i - f)^2 with c_i = alpha^2 when y_i > f.
///
/// The objective is a convex piecewise quadratic with breakpoints at the
/// targets. For f in the gap between consecutive sorted targets the scale
/// factors are fixed, so the stationary point of each gap is a weighted mean;
/// the unique one that falls inside its own gap is the answer.
fn asymmetric_minimizer(alpha: f64, targets: &[f64], weights: &[f64]) -> f64 {
    let a2 = alpha * alpha;
    let mut idx: Vec<usize> = (0..targets.len()).filter(|&i| weights[i] > 0.0).collect();
    idx.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]));
    // Suffix sums over rows with y > f use scale a2; prefix rows use scale 1.
    let (mut below_w, mut below_wy) = (0.0, 0.0);
    let (mut above_w, mut above_wy) = idx.iter().fold((0.0, 0.0), |(w, wy), &i| (w + weights[i], wy + weights[i] * targets[i]));
    let mut k = 0;
    loop {
        // Candidate for f in [targets[idx[k-1]], targets[idx[k]]).
        let f = (below_wy + a2 * above_wy) / (below_w + a2 * above_w);
        let lo = if k == 0 { f64::NEG_INFINITY } else { targets[idx[k - 1]] };
        let hi = if k == idx.len() { f64::INFINITY } else { targets[idx[k]] };
        if f >= lo && f <= hi {
            return f.clamp(lo, hi);
        }
        if k == idx.len() {
            return f;
        }
        // Move every row tied at the next breakpoint below f.
        let v = targets[idx[k]];
        while k < idx.len() && targets[idx[k]] == v {
            let i = idx[k];
            below_w += weights[i];
            below_wy += weights[i] * targets[i];
            above_w -= weights[i];
            above_wy -= weights[i] * targets[i];
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_value_examples() {
        let a2 = LossSpec::Asymmetric { alpha: 2.0 };
        assert_eq!(loss_value(a2, 5.0, 3.0).unwrap(), 16.0);
        let q = LossSpec::Quantile { tau: 0.9 };
        assert!((loss_value(q, 0.0, 2.0).unwrap() - 0.2).abs() < 1e-12);
        assert!((loss_value(q, 2.0, 0.0).unwrap() - 1.8).abs() < 1e-12);
        for spec in [LossSpec::Mse, a2, q] {
            assert_eq!(loss_value(spec, 4.2, 4.2).unwrap(), 0.0);
        }
        assert!(loss_value(LossSpec::Mse, f64::NAN, 1.0).is_err());
        assert!(loss_value(LossSpec::Mse, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(gradient_hessian(LossSpec::Mse, 3.0, 5.0).unwrap(), (4.0, 2.0));
        assert_eq!(gradient_hessian(LossSpec::Asymmetric { alpha: 2.0 }, 5.0, 3.0).unwrap(), (-16.0, 8.0));
        let q = LossSpec::Quantile { tau: 0.95 };
        assert_eq!(gradient_hessian(q, 5.0, 3.0).unwrap().0, -0.95);
        assert!((gradient_hessian(q, 3.0, 5.0).unwrap().0 - 0.05).abs() < 1e-15);
        assert_eq!(gradient_hessian(q, 3.0, 3.0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn constant_minimizer_examples() {
        let ones = [1.0; 5];
        assert_eq!(constant_minimizer(LossSpec::Mse, &[1.0, 2.0, 3.0], &ones[..3]).unwrap(), 2.0);
        let q = LossSpec::Quantile { tau: 0.5 };
        assert_eq!(constant_minimizer(q, &[1.0, 2.0, 3.0, 4.0, 100.0], &ones).unwrap(), 3.0);
        let a = LossSpec::Asymmetric { alpha: 2.0 };
        assert!((constant_minimizer(a, &[0.0, 10.0], &ones[..2]).unwrap() - 8.0).abs() < 1e-12);
        assert!(constant_minimizer(LossSpec::Mse, &[1.0], &[0.0]).is_err());
        assert!(constant_minimizer(LossSpec::Mse, &[], &[]).is_err());
    }

    /// Grid-search oracle for the asymmetric constant minimizer.
    #[test]
    fn asymmetric_minimizer_matches_grid_search() {
        let a = LossSpec::Asymmetric { alpha: 2.0 };
        let ys = [0.0, 10.0];
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=100_000 {
            let f = 10.0 * i as f64 / 100_000.0;
            let total: f64 = ys.iter().map(|&y| value_unchecked(a, y, f)).sum();
            if total < best.0 {
                best = (total, f);
            }
        }
        assert!((best.1 - 8.0).abs() < 1e-3, "grid optimum {}", best.1);

        let ys = [3.0, 3.0, 7.5, -1.0, 12.0, 0.5];
        let ws = [1.0, 0.5, 2.0, 1.0, 0.25, 3.0];
        for alpha in [1.0, 1.3, 2.0, 5.0] {
            let spec = LossSpec::Asymmetric { alpha };
            let got = constant_minimizer(spec, &ys, &ws).unwrap();
            let obj = |f: f64| ys.iter().zip(&ws).map(|(&y, &w)| w * value_unchecked(spec, y, f)).sum::<f64>();
            let mut grid_best = (f64::INFINITY, 0.0);
            for i in 0..=200_000 {
                let f = -1.0 + 13.0 * i as f64 / 200_000.0;
                let v = obj(f);
                if v < grid_best.0 {
                    grid_best = (v, f);
                }
            }
            assert!((got - grid_best.1).abs() < 1e-3, "alpha {alpha}: {got} vs {}", grid_best.1);
        }
    }

    #[test]
    fn parse_and_serialize() {
        assert_eq!(LossSpec::parse("quantile:0.95").unwrap(), LossSpec::Quantile { tau: 0.95 });
        assert_eq!(LossSpec::parse("asymmetric:4").unwrap(), LossSpec::Asymmetric { alpha: 4.0 });
        assert_eq!(LossSpec::parse("asymmetric").unwrap(), LossSpec::Asymmetric { alpha: 2.0 });
        assert!(matches!(LossSpec::parse("quantile:1.5"), Err(Error::Config(_))));
        assert!(LossSpec::parse("huber").is_err());
        let json = serde_json::to_string(&LossSpec::Quantile { tau: 0.9 }).unwrap();
        assert_eq!(json, r#"{"variant":"quantile","tau":0.9}"#);
        assert_eq!(serde_json::to_string(&LossSpec::Mse).unwrap(), r#"{"variant":"mse"}"#);
    }
}
