use serde::{Deserialize, Serialize};

use super::binning::FeatureBins;
use super::histogram::{BinStat, FeatureHistogram};

/// Keeps the gain finite for bins whose hessian sums to zero.
pub const LAMBDA: f64 = 1e-3;

pub type NodeStats = BinStat;

/// Categorical features with at most this many levels present in a node are
/// split on the best of all level subsets. Larger ones scan prefixes of the
/// levels sorted by gradient-to-hessian ratio, which is exact only without
/// the `LAMBDA` regularizer.
pub const EXHAUSTIVE_LEVELS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `x <= value` goes left. `bin` is the same cut in bin space.
    Threshold { value: f64, bin: u32 },
    /// Listed levels go left, every other seen level goes right.
    Categories { left: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    pub default_left: bool,
    pub gain: f64,
    pub left: BinStat,
    pub right: BinStat,
}

fn score(s: BinStat) -> f64 {
    s.grad * s.grad / (s.hess + LAMBDA)
}

pub fn split_gain(left: BinStat, right: BinStat, parent: BinStat) -> f64 {
    score(left) + score(right) - score(parent)
}

struct Best {
    best: Option<SplitCandidate>,
}

impl Best {
    fn offer(
        &mut self,
        feature: usize,
        rule: impl FnOnce() -> SplitRule,
        default_left: bool,
        left: BinStat,
        node: BinStat,
        min_data: usize,
    ) {
        let right = node.sub(left);
        if (left.count as usize) < min_data || (right.count as usize) < min_data {
            return;
        }
        let gain = split_gain(left, right, node);
        if gain > 0.0 && self.best.as_ref().is_none_or(|b| gain > b.gain) {
            self.best = Some(SplitCandidate { feature, rule: rule(), default_left, gain, left, right });
        }
    }
}

/// Best split of a node given its per-feature histograms.
///
/// `features[i]` is the feature whose histogram is `histograms[i]`; features
/// must be ascending so that ties resolve to the lowest feature index, then
/// the lowest threshold (or first level subset). Returns `None` when the
/// node is too small or no split has positive gain.
pub fn best_split(
    features: &[usize],
    histograms: &[FeatureHistogram],
    bins: &[FeatureBins],
    node: NodeStats,
    min_data_in_leaf: usize,
) -> Option<SplitCandidate> {
    debug_assert_eq!(features.len(), histograms.len());
    debug_assert!(features.windows(2).all(|w| w[0] < w[1]));
    if (node.count as usize) < 2 * min_data_in_leaf {
        return None;
    }
    let mut best = Best { best: None };
    for (&f, hist) in features.iter().zip(histograms) {
        let layout = &bins[f];
        let nb = layout.n_bins();
        let missing = hist.missing();
        let directions: &[bool] = if missing.count > 0 { &[true, false] } else { &[true] };
        match layout {
            FeatureBins::Numeric { .. } => {
                let mut acc = BinStat::default();
                for t in 0..nb.saturating_sub(1) {
                    acc = acc.plus(hist.bins[t]);
                    for &dl in directions {
                        let left = if dl { acc.plus(missing) } else { acc };
                        let rule = || SplitRule::Threshold { value: layout.upper_edge(t as u32), bin: t as u32 };
                        best.offer(f, rule, dl, left, node, min_data_in_leaf);
                    }
                }
                // Every value left, missing right.
                if missing.count > 0 && nb >= 1 {
                    let all = node.sub(missing);
                    let t = nb - 1;
                    let rule = || SplitRule::Threshold { value: f64::MAX, bin: t as u32 };
                    best.offer(f, rule, false, all, node, min_data_in_leaf);
                }
            }
            FeatureBins::Categorical { .. } => {
                let mut levels: Vec<u32> = (0..nb as u32).filter(|&l| hist.bins[l as usize].count > 0).collect();
                if levels.len() <= EXHAUSTIVE_LEVELS {
                    // Every subset of the seen levels, in mask order.
                    for mask in 1u32..(1 << levels.len()) {
                        let chosen: Vec<u32> = levels.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &l)| l).collect();
                        let acc = chosen.iter().fold(BinStat::default(), |a, &l| a.plus(hist.bins[l as usize]));
                        for &dl in directions {
                            let left = if dl { acc.plus(missing) } else { acc };
                            let rule = || SplitRule::Categories { left: chosen.clone() };
                            best.offer(f, rule, dl, left, node, min_data_in_leaf);
                        }
                    }
                    continue;
                }
                let ratio = |l: u32| {
                    let b = hist.bins[l as usize];
                    if b.hess > 0.0 {
                        b.grad / b.hess
                    } else {
                        0.0
                    }
                };
                levels.sort_by(|&a, &b| ratio(a).total_cmp(&ratio(b)).then(a.cmp(&b)));
                let mut acc = BinStat::default();
                for k in 0..levels.len() {
                    acc = acc.plus(hist.bins[levels[k] as usize]);
                    for &dl in directions {
                        let left = if dl { acc.plus(missing) } else { acc };
                        let rule = || {
                            let mut chosen = levels[..=k].to_vec();
                            chosen.sort_unstable();
                            SplitRule::Categories { left: chosen }
                        };
                        best.offer(f, rule, dl, left, node, min_data_in_leaf);
                    }
                }
            }
        }
    }
    best.best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CategoricalColumn, Dataset, Date, NumericColumn};
    use crate::gbdt::binning::BinnedData;
    use crate::gbdt::histogram::build_histograms;

    fn mse_grads(y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| 2.0 * (mean - v)).collect(), vec![2.0; y.len()])
    }

    fn split_of(ds: &Dataset, min_data: usize) -> Option<SplitCandidate> {
        let (g, h) = mse_grads(&ds.target);
        let hist = build_histograms(ds, &g, &h, 255);
        let binned = BinnedData::from_dataset(ds, 255);
        let node = hist[0].total();
        let features: Vec<usize> = (0..hist.len()).collect();
        best_split(&features, &hist, &binned.bins, node, min_data)
    }

    #[test]
    fn splits_step_function_between_two_and_three() {
        let ds = Dataset::new(
            vec![NumericColumn { name: "x".into(), values: vec![1.0, 2.0, 3.0, 4.0] }],
            vec![],
            vec![1.0, 1.0, 10.0, 10.0],
            vec![Date(0); 4],
        )
        .unwrap();
        let s = split_of(&ds, 1).unwrap();
        assert_eq!(s.rule, SplitRule::Threshold { value: 2.5, bin: 1 });
        assert_eq!((s.left.count, s.right.count), (2, 2));
        // Exhaustive oracle: children pure, so gain = SSE reduction scaled by 2.
        let expected = split_gain(s.left, s.right, s.left.plus(s.right));
        assert!((s.gain - expected).abs() < 1e-12);
    }

    #[test]
    fn pure_node_has_no_split() {
        let ds = Dataset::new(
            vec![NumericColumn { name: "x".into(), values: vec![1.0, 2.0, 3.0, 4.0] }],
            vec![],
            vec![7.0; 4],
            vec![Date(0); 4],
        )
        .unwrap();
        assert!(split_of(&ds, 1).is_none());
    }

    #[test]
    fn categorical_separates_levels() {
        let mut raw = vec![Some("a"); 10];
        raw.extend(vec![Some("b"); 10]);
        let mut y = vec![0.0; 10];
        y.extend(vec![10.0; 10]);
        let ds = Dataset::new(vec![], vec![CategoricalColumn::from_levels("c", &raw)], y, vec![Date(0); 20]).unwrap();
        let s = split_of(&ds, 1).unwrap();
        // Both one-level subsets tie; the first in mask order wins.
        assert_eq!(s.rule, SplitRule::Categories { left: vec![0] });
        assert_eq!((s.left.count, s.right.count), (10, 10));
    }

    #[test]
    fn min_data_blocks_small_children() {
        let ds = Dataset::new(
            vec![NumericColumn { name: "x".into(), values: vec![1.0, 2.0, 3.0, 4.0] }],
            vec![],
            vec![1.0, 1.0, 1.0, 10.0],
            vec![Date(0); 4],
        )
        .unwrap();
        let s = split_of(&ds, 2).unwrap();
        assert_eq!((s.left.count, s.right.count), (2, 2));
        assert!(split_of(&ds, 3).is_none());
    }

    #[test]
    fn missing_values_pick_best_direction() {
        let ds = Dataset::new(
            vec![NumericColumn { name: "x".into(), values: vec![1.0, 2.0, f64::NAN, f64::NAN] }],
            vec![],
            vec![0.0, 0.0, 5.0, 5.0],
            vec![Date(0); 4],
        )
        .unwrap();
        let s = split_of(&ds, 1).unwrap();
        assert!(!s.default_left);
        assert_eq!((s.left.count, s.right.count), (2, 2));
    }

    /// Best gain over every level subset and missing direction, from raw rows.
    fn brute_force_categorical(codes: &[Option<usize>], g: &[f64], h: &[f64], k: usize) -> f64 {
        let stat = |pick: &dyn Fn(Option<usize>) -> bool| {
            codes
                .iter()
                .zip(g.iter().zip(h))
                .filter(|(c, _)| pick(**c))
                .fold(BinStat::default(), |a, (_, (&g, &h))| a.plus(BinStat { grad: g, hess: h, count: 1 }))
        };
        let node = stat(&|_| true);
        let mut best = 0.0f64;
        for mask in 0..(1usize << k) {
            for missing_left in [true, false] {
                let left = stat(&|c| c.map_or(missing_left, |l| mask >> l & 1 == 1));
                let right = node.sub(left);
                if left.count > 0 && right.count > 0 {
                    best = best.max(split_gain(left, right, node));
                }
            }
        }
        best
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn categorical_split_matches_brute_force(
                rows in proptest::collection::vec((proptest::option::weighted(0.85, 0usize..6), -3.0f64..3.0, 0.0f64..2.0), 2..40)
            ) {
                let raw: Vec<Option<String>> = rows.iter().map(|r| r.0.map(|l| format!("l{l}"))).collect();
                let col = CategoricalColumn::from_levels("c", &raw);
                let ds = Dataset::new(vec![], vec![col.clone()], vec![0.0; rows.len()], vec![Date(0); rows.len()]).unwrap();
                let g: Vec<f64> = rows.iter().map(|r| r.1).collect();
                let h: Vec<f64> = rows.iter().map(|r| r.2).collect();
                let hist = build_histograms(&ds, &g, &h, 255);
                let binned = BinnedData::from_dataset(&ds, 255);
                let found = best_split(&[0], &hist, &binned.bins, hist[0].total(), 1).map_or(0.0, |s| s.gain);
                let codes: Vec<Option<usize>> =
                    col.codes.iter().map(|&c| (c != crate::domain::MISSING_LEVEL).then_some(c as usize)).collect();
                let expected = brute_force_categorical(&codes, &g, &h, col.dictionary.len());
                prop_assert!((found - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "{found} vs {expected}");
            }
        }
    }
}
