//! Small order statistics shared by several modules.

/// Weighted quantile: the smallest value whose cumulative weight reaches
/// `q * total`. Zero-weight entries never satisfy the rule on their own.
///
/// Returns `None` for empty input or non-positive total weight.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Option<f64> {
    debug_assert_eq!(values.len(), weights.len());
    let total: f64 = weights.iter().sum();
    if values.is_empty() || total <= 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let threshold = q * total;
    let mut cumulative = 0.0;
    for &i in &order {
        if weights[i] <= 0.0 {
            continue;
        }
        cumulative += weights[i];
        if cumulative >= threshold {
            return Some(values[i]);
        }
    }
    // Rounding can leave the running sum a hair under `q * total` at q = 1.
    order.iter().rev().find(|&&i| weights[i] > 0.0).map(|&i| values[i])
}

/// Unweighted quantile with the same left-continuous convention.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let ones = vec![1.0; values.len()];
    weighted_quantile(values, &ones, q)
}

/// Conventional median (mean of the two middle values for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn sd(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}
