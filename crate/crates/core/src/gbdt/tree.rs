use serde::{Deserialize, Serialize};

use super::binning::FeatureBins;
use super::split::SplitRule;
use crate::domain::MISSING_LEVEL;

/// A regression tree as nested nodes; every path ends at a leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, rule: SplitRule, default_left: bool, gain: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { value: f64 },
}

impl TreeNode {
    /// Output for one row. Features `0..numeric.len()` are numeric, the rest
    /// index `categorical`. NaN and [`MISSING_LEVEL`] take the default branch.
    pub fn predict(&self, numeric: &[f64], categorical: &[u32]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, rule, default_left, left, right, .. } => {
                    let go_left = match rule {
                        SplitRule::Threshold { value, .. } => {
                            let x = numeric[*feature];
                            if x.is_nan() {
                                *default_left
                            } else {
                                x <= *value
                            }
                        }
                        SplitRule::Categories { left: levels } => {
                            let l = categorical[*feature - numeric.len()];
                            if l == MISSING_LEVEL {
                                *default_left
                            } else {
                                levels.binary_search(&l).is_ok()
                            }
                        }
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    /// Output for a row of the training bin matrix.
    pub(crate) fn predict_binned(&self, bins: &[FeatureBins], columns: &[Vec<u32>], row: usize) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, rule, default_left, left, right, .. } => {
                    let b = columns[*feature][row];
                    let go_left = if b == bins[*feature].missing_bin() {
                        *default_left
                    } else {
                        match rule {
                            SplitRule::Threshold { bin, .. } => b <= *bin,
                            SplitRule::Categories { left: levels } => levels.binary_search(&b).is_ok(),
                        }
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Adds each split's gain to `acc[feature]`.
    pub fn accumulate_gain(&self, acc: &mut [f64]) {
        if let TreeNode::Split { feature, gain, left, right, .. } = self {
            acc[*feature] += gain;
            left.accumulate_gain(acc);
            right.accumulate_gain(acc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> TreeNode {
        TreeNode::Split {
            feature: 1,
            rule: SplitRule::Categories { left: vec![0, 2] },
            default_left: false,
            gain: 1.0,
            left: Box::new(TreeNode::Leaf { value: -1.0 }),
            right: Box::new(TreeNode::Leaf { value: 1.0 }),
        }
    }

    #[test]
    fn routes_categories_and_missing() {
        let t = stump();
        assert_eq!(t.predict(&[0.0], &[2]), -1.0);
        assert_eq!(t.predict(&[0.0], &[1]), 1.0);
        assert_eq!(t.predict(&[0.0], &[MISSING_LEVEL]), 1.0);
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn json_is_nested() {
        let json = serde_json::to_string(&stump()).unwrap();
        assert!(json.starts_with(r#"{"node":"split","feature":1,"rule":{"categories":{"left":[0,2]}}"#), "{json}");
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stump());
    }
}
