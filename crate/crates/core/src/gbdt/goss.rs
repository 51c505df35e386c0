use rand::seq::index::sample;
use rand::Rng;

use crate::rng;

/// Rows chosen by one-side sampling, ascending, with their weight multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct GossSample {
    pub rows: Vec<usize>,
    pub multipliers: Vec<f64>,
}

/// Keeps the `ceil(a * n)` rows with the largest absolute gradient and a
/// uniform sample of `ceil(b * n)` of the rest, whose weights are scaled by
/// `(1 - a) / b`. Ties in |gradient| are broken by a seeded random key.
pub fn goss_sample(gradients: &[f64], top_rate: f64, other_rate: f64, seed: u64) -> GossSample {
    let n = gradients.len();
    let n_top = ((top_rate * n as f64).ceil() as usize).min(n);
    let n_other = ((other_rate * n as f64).ceil() as usize).min(n - n_top);

    let mut rng = rng::stream(seed, "goss");
    let tiebreak: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| gradients[j].abs().total_cmp(&gradients[i].abs()).then(tiebreak[i].cmp(&tiebreak[j])).then(i.cmp(&j)));

    let amplify = (1.0 - top_rate) / other_rate;
    let mut chosen: Vec<(usize, f64)> = order[..n_top].iter().map(|&i| (i, 1.0)).collect();
    let rest = &order[n_top..];
    if n_other > 0 {
        for k in sample(&mut rng, rest.len(), n_other) {
            chosen.push((rest[k], amplify));
        }
    }
    chosen.sort_unstable_by_key(|&(i, _)| i);
    GossSample { rows: chosen.iter().map(|&(i, _)| i).collect(), multipliers: chosen.iter().map(|&(_, m)| m).collect() }
}
