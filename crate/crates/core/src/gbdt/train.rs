use rand::seq::index::sample;

use super::binning::BinnedData;
use super::goss::goss_sample;
use super::histogram::{histograms_for_rows, BinStat, FeatureHistogram};
use super::model::{BoostedModel, FeatureSchema};
use super::split::{best_split, SplitCandidate, SplitRule};
use super::tree::TreeNode;
use super::BoosterParams;
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::losses::{constant_minimizer, grad_hess_unchecked, value_unchecked, LossSpec};
use crate::rng;
use crate::stats::weighted_quantile;

pub fn train(dataset: &Dataset, params: &BoosterParams) -> Result<BoostedModel> {
    train_with_trace(dataset, params).map(|(m, _)| m)
}

/// Trains a model and returns the weighted mean training loss before the
/// first tree and after every iteration.
pub fn train_with_trace(dataset: &Dataset, params: &BoosterParams) -> Result<(BoostedModel, Vec<f64>)> {
    params.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if let Some(i) = dataset.target.iter().position(|y| !y.is_finite()) {
        return Err(Error::invalid(format!("non-finite target at row {i}")));
    }
    let n = dataset.n_rows();
    let y = &dataset.target;
    let w = &dataset.sample_weight;
    let loss = params.loss;

    let base_score = constant_minimizer(loss, y, w)?;
    let data = BinnedData::from_dataset(dataset, params.max_bins);
    let n_features = data.n_features();
    let mut pred = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.boosting_iterations);
    let total_weight: f64 = w.iter().sum();
    let mean_loss = |pred: &[f64]| -> f64 { (0..n).map(|i| w[i] * value_unchecked(loss, y[i], pred[i])).sum::<f64>() / total_weight };
    let mut trace = vec![mean_loss(&pred)];

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut row_weight = vec![0.0; n];
    for iter in 0..params.boosting_iterations {
        let it = iter as u64;
        let mut raw_grad = vec![0.0; n];
        for i in 0..n {
            let (g, h) = grad_hess_unchecked(loss, y[i], pred[i]);
            raw_grad[i] = g;
            grad[i] = g;
            hess[i] = h;
        }

        let rows: Vec<u32> = match params.goss {
            Some(g) => {
                let s = goss_sample(&raw_grad, g.top_rate, g.other_rate, rng::derive_indexed(params.seed, "gbdt.goss", it));
                row_weight.iter_mut().for_each(|x| *x = 0.0);
                for (&r, &m) in s.rows.iter().zip(&s.multipliers) {
                    row_weight[r] = w[r] * m;
                }
                s.rows.iter().map(|&r| r as u32).collect()
            }
            None => {
                row_weight.copy_from_slice(w);
                if params.data_fraction < 1.0 {
                    let k = ((params.data_fraction * n as f64).ceil() as usize).clamp(1, n);
                    let mut rng = rng::stream_indexed(params.seed, "gbdt.rows", it);
                    let mut picked: Vec<u32> = sample(&mut rng, n, k).into_iter().map(|r| r as u32).collect();
                    picked.sort_unstable();
                    picked
                } else {
                    (0..n as u32).collect()
                }
            }
        };
        for &r in &rows {
            let r = r as usize;
            grad[r] *= row_weight[r];
            hess[r] *= row_weight[r];
        }

        let features: Vec<usize> = if params.feature_fraction < 1.0 && n_features > 0 {
            let k = ((params.feature_fraction * n_features as f64).ceil() as usize).clamp(1, n_features);
            let mut rng = rng::stream_indexed(params.seed, "gbdt.features", it);
            let mut f: Vec<usize> = sample(&mut rng, n_features, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..n_features).collect()
        };

        let mut grown = grow_tree(&data, &features, rows, &grad, &hess, params);
        for leaf in &mut grown.leaves {
            let value = match loss {
                LossSpec::Quantile { tau } => {
                    let residuals: Vec<f64> = leaf.rows.iter().map(|&r| y[r as usize] - pred[r as usize]).collect();
                    let weights: Vec<f64> = leaf.rows.iter().map(|&r| row_weight[r as usize]).collect();
                    weighted_quantile(&residuals, &weights, tau).unwrap_or(0.0)
                }
                _ => newton_value(leaf.stats),
            };
            grown.nodes[leaf.node] = ArenaNode::Leaf { value };
        }
        let tree = grown.into_tree();
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_binned(&data.bins, &data.columns, i);
        }
        trees.push(tree);
        trace.push(mean_loss(&pred));
    }

    let model = BoostedModel::new(FeatureSchema::from_dataset(dataset), params.clone(), base_score, trees);
    Ok((model, trace))
}

fn newton_value(s: BinStat) -> f64 {
    if s.hess > 0.0 {
        -s.grad / s.hess
    } else {
        0.0
    }
}

enum ArenaNode {
    Leaf { value: f64 },
    Split { feature: usize, rule: SplitRule, default_left: bool, gain: f64, left: usize, right: usize },
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    stats: BinStat,
    depth: usize,
    hist: Vec<FeatureHistogram>,
    split: Option<SplitCandidate>,
}

struct Grown {
    nodes: Vec<ArenaNode>,
    leaves: Vec<Leaf>,
}

impl Grown {
    fn into_tree(self) -> TreeNode {
        let mut slots: Vec<Option<ArenaNode>> = self.nodes.into_iter().map(Some).collect();
        build_nested(&mut slots, 0)
    }
}

fn build_nested(slots: &mut [Option<ArenaNode>], i: usize) -> TreeNode {
    match slots[i].take().expect("each arena node is visited once") {
        ArenaNode::Leaf { value } => TreeNode::Leaf { value },
        ArenaNode::Split { feature, rule, default_left, gain, left, right } => TreeNode::Split {
            feature,
            rule,
            default_left,
            gain,
            left: Box::new(build_nested(slots, left)),
            right: Box::new(build_nested(slots, right)),
        },
    }
}

fn goes_left(data: &BinnedData, split: &SplitCandidate, row: usize) -> bool {
    let b = data.columns[split.feature][row];
    if b == data.bins[split.feature].missing_bin() {
        return split.default_left;
    }
    match &split.rule {
        SplitRule::Threshold { bin, .. } => b <= *bin,
        SplitRule::Categories { left } => left.binary_search(&b).is_ok(),
    }
}

/// Leaf-wise growth: repeatedly split the leaf whose best split has the
/// highest gain until `num_leaves` is reached or nothing splits.
fn grow_tree(data: &BinnedData, features: &[usize], rows: Vec<u32>, grad: &[f64], hess: &[f64], params: &BoosterParams) -> Grown {
    let splittable = |depth: usize| params.max_depth.is_none_or(|d| depth < d);
    let find = |hist: &[FeatureHistogram], stats: BinStat, depth: usize| {
        if splittable(depth) {
            best_split(features, hist, &data.bins, stats, params.min_data_in_leaf)
        } else {
            None
        }
    };

    let hist = histograms_for_rows(data, features, &rows, grad, hess);
    let stats = rows.iter().fold(BinStat::default(), |acc, &r| BinStat {
        grad: acc.grad + grad[r as usize],
        hess: acc.hess + hess[r as usize],
        count: acc.count + 1,
    });
    let split = find(&hist, stats, 0);
    let mut grown =
        Grown { nodes: vec![ArenaNode::Leaf { value: 0.0 }], leaves: vec![Leaf { node: 0, rows, stats, depth: 0, hist, split }] };

    while grown.leaves.len() < params.num_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in grown.leaves.iter().enumerate() {
            if let Some(s) = &leaf.split {
                if pick.is_none_or(|p| s.gain > grown.leaves[p].split.as_ref().map_or(f64::NEG_INFINITY, |b| b.gain)) {
                    pick = Some(i);
                }
            }
        }
        let Some(i) = pick else { break };
        let leaf = grown.leaves.remove(i);
        let split = leaf.split.expect("picked leaf has a split");

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| goes_left(data, &split, r as usize));
        let (small_rows, left_is_small) = if left_rows.len() <= right_rows.len() { (&left_rows, true) } else { (&right_rows, false) };
        let small_hist = histograms_for_rows(data, features, small_rows, grad, hess);
        let large_hist: Vec<FeatureHistogram> = leaf.hist.iter().zip(&small_hist).map(|(p, s)| p.minus(s)).collect();
        let (left_hist, right_hist) = if left_is_small { (small_hist, large_hist) } else { (large_hist, small_hist) };

        let depth = leaf.depth + 1;
        let left_node = grown.nodes.len();
        grown.nodes.push(ArenaNode::Leaf { value: 0.0 });
        grown.nodes.push(ArenaNode::Leaf { value: 0.0 });
        grown.nodes[leaf.node] = ArenaNode::Split {
            feature: split.feature,
            rule: split.rule.clone(),
            default_left: split.default_left,
            gain: split.gain,
            left: left_node,
            right: left_node + 1,
        };
        let left_split = find(&left_hist, split.left, depth);
        let right_split = find(&right_hist, split.right, depth);
        // Children go to the end so that ties resolve in creation order.
        grown.leaves.push(Leaf { node: left_node, rows: left_rows, stats: split.left, depth, hist: left_hist, split: left_split });
        grown.leaves.push(Leaf { node: left_node + 1, rows: right_rows, stats: split.right, depth, hist: right_hist, split: right_split });
    }
    grown
}
