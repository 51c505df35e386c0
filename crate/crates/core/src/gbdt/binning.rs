use crate::domain::{Dataset, MISSING_LEVEL};

/// Bin layout of one feature. Every feature has `n_bins()` value bins plus a
/// trailing bin for missing values.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureBins {
    /// Bin `k` holds values in `(upper_edges[k-1], upper_edges[k]]`.
    Numeric { upper_edges: Vec<f64> },
    /// One bin per dictionary level.
    Categorical { cardinality: u32 },
}

impl FeatureBins {
    /// Quantile-spaced edges over the non-missing values of a column.
    pub fn numeric(values: &[f64], max_bins: usize) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        let mut distinct = v.clone();
        distinct.dedup();
        let mut upper_edges = Vec::new();
        if distinct.len() <= max_bins {
            for w in distinct.windows(2) {
                upper_edges.push(midpoint(w[0], w[1]));
            }
        } else {
            let n = v.len();
            for k in 1..max_bins {
                let idx = k * n / max_bins;
                if idx == 0 || idx >= n {
                    continue;
                }
                // Cut after the run of values equal to v[idx - 1].
                let a = v[idx - 1];
                let next = v.partition_point(|&x| x <= a);
                if next >= n {
                    continue;
                }
                let e = midpoint(a, v[next]);
                if upper_edges.last().is_none_or(|&last| e > last) {
                    upper_edges.push(e);
                }
            }
        }
        FeatureBins::Numeric { upper_edges }
    }

    pub fn n_bins(&self) -> usize {
        match self {
            FeatureBins::Numeric { upper_edges } => upper_edges.len() + 1,
            FeatureBins::Categorical { cardinality } => *cardinality as usize,
        }
    }

    pub fn missing_bin(&self) -> u32 {
        self.n_bins() as u32
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureBins::Categorical { .. })
    }

    pub fn bin_numeric(&self, x: f64) -> u32 {
        match self {
            FeatureBins::Numeric { upper_edges } => {
                if x.is_nan() {
                    self.missing_bin()
                } else {
                    upper_edges.partition_point(|&e| e < x) as u32
                }
            }
            FeatureBins::Categorical { .. } => unreachable!("numeric binning of a categorical feature"),
        }
    }

    pub fn bin_level(&self, level: u32) -> u32 {
        match self {
            FeatureBins::Categorical { cardinality } => {
                if level == MISSING_LEVEL || level >= *cardinality {
                    *cardinality
                } else {
                    level
                }
            }
            FeatureBins::Numeric { .. } => unreachable!("level binning of a numeric feature"),
        }
    }

    /// Raw threshold separating bin `bin` from `bin + 1`.
    pub fn upper_edge(&self, bin: u32) -> f64 {
        match self {
            FeatureBins::Numeric { upper_edges } => upper_edges[bin as usize],
            FeatureBins::Categorical { .. } => unreachable!("categorical features have no edges"),
        }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

/// Column-major bin indices for a dataset. Features are numeric columns first,
/// then categorical columns.
#[derive(Clone, Debug)]
pub struct BinnedData {
    pub bins: Vec<FeatureBins>,
    pub columns: Vec<Vec<u32>>,
}

impl BinnedData {
    pub fn from_dataset(ds: &Dataset, max_bins: usize) -> Self {
        let mut bins = Vec::new();
        let mut columns = Vec::new();
        for c in &ds.numeric {
            let b = FeatureBins::numeric(&c.values, max_bins);
            columns.push(c.values.iter().map(|&x| b.bin_numeric(x)).collect());
            bins.push(b);
        }
        for c in &ds.categorical {
            let b = FeatureBins::Categorical { cardinality: c.dictionary.len() as u32 };
            columns.push(c.codes.iter().map(|&l| b.bin_level(l)).collect());
            bins.push(b);
        }
        BinnedData { bins, columns }
    }

    pub fn n_features(&self) -> usize {
        self.bins.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}
