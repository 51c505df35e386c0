use rayon::prelude::*;

use super::binning::BinnedData;
use crate::domain::Dataset;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BinStat {
    pub grad: f64,
    pub hess: f64,
    pub count: u32,
}

impl BinStat {
    fn add(&mut self, g: f64, h: f64) {
        self.grad += g;
        self.hess += h;
        self.count += 1;
    }

    pub fn sub(self, other: BinStat) -> BinStat {
        BinStat { grad: self.grad - other.grad, hess: self.hess - other.hess, count: self.count - other.count }
    }

    pub fn plus(self, other: BinStat) -> BinStat {
        BinStat { grad: self.grad + other.grad, hess: self.hess + other.hess, count: self.count + other.count }
    }
}

/// Per-bin sums for one feature; the last entry is the missing bin.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureHistogram {
    pub bins: Vec<BinStat>,
}

impl FeatureHistogram {
    pub fn missing(&self) -> BinStat {
        self.bins[self.bins.len() - 1]
    }

    pub fn total(&self) -> BinStat {
        self.bins.iter().fold(BinStat::default(), |acc, b| acc.plus(*b))
    }

    /// `self - other`, bin by bin (histogram subtraction for siblings).
    pub fn minus(&self, other: &FeatureHistogram) -> FeatureHistogram {
        FeatureHistogram { bins: self.bins.iter().zip(&other.bins).map(|(a, b)| a.sub(*b)).collect() }
    }
}

/// Histograms of the given features over `rows`. `grad` and `hess` are already
/// weighted. Features are processed in parallel but each histogram is summed
/// in row order, so the result does not depend on the thread count.
pub(crate) fn histograms_for_rows(
    data: &BinnedData,
    features: &[usize],
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
) -> Vec<FeatureHistogram> {
    let build = |&f: &usize| {
        let col = &data.columns[f];
        let mut bins = vec![BinStat::default(); data.bins[f].n_bins() + 1];
        for &r in rows {
            let r = r as usize;
            bins[col[r] as usize].add(grad[r], hess[r]);
        }
        FeatureHistogram { bins }
    };
    if rows.len() * features.len() >= 20_000 {
        features.par_iter().map(build).collect()
    } else {
        features.iter().map(build).collect()
    }
}

/// Bins every feature of `dataset` (at most `max_bins` value bins each) and
/// accumulates sample-weighted gradient and hessian sums per bin.
pub fn build_histograms(dataset: &Dataset, gradients: &[f64], hessians: &[f64], max_bins: usize) -> Vec<FeatureHistogram> {
    assert_eq!(gradients.len(), dataset.n_rows(), "gradients must align with rows");
    assert_eq!(hessians.len(), dataset.n_rows(), "hessians must align with rows");
    let data = BinnedData::from_dataset(dataset, max_bins);
    let g: Vec<f64> = gradients.iter().zip(&dataset.sample_weight).map(|(g, w)| g * w).collect();
    let h: Vec<f64> = hessians.iter().zip(&dataset.sample_weight).map(|(h, w)| h * w).collect();
    let rows: Vec<u32> = (0..dataset.n_rows() as u32).collect();
    let features: Vec<usize> = (0..data.n_features()).collect();
    histograms_for_rows(&data, &features, &rows, &g, &h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Date, NumericColumn};

    fn ds(values: Vec<f64>) -> Dataset {
        let n = values.len();
        Dataset::new(vec![NumericColumn { name: "x".into(), values }], vec![], vec![0.0; n], vec![Date(0); n]).unwrap()
    }

    #[test]
    fn constant_column_single_bin() {
        let d = ds(vec![2.0; 6]);
        let h = build_histograms(&d, &[1.0; 6], &[2.0; 6], 255);
        assert_eq!(h[0].bins.len(), 2);
        assert_eq!(h[0].bins[0], BinStat { grad: 6.0, hess: 12.0, count: 6 });
        assert_eq!(h[0].missing().count, 0);
    }

    #[test]
    fn all_missing_only_missing_bin() {
        let d = ds(vec![f64::NAN; 4]);
        let h = build_histograms(&d, &[1.0; 4], &[1.0; 4], 255);
        assert_eq!(h[0].bins[0].count, 0);
        assert_eq!(h[0].missing().count, 4);
    }

    #[test]
    fn weights_scale_sums_and_subtraction_recovers_sibling() {
        let mut d = ds(vec![1.0, 2.0, 3.0, f64::NAN]);
        d.sample_weight = vec![1.0, 2.0, 0.5, 1.0];
        let h = build_histograms(&d, &[1.0, 1.0, 2.0, -1.0], &[1.0; 4], 255);
        assert_eq!(h[0].bins[1], BinStat { grad: 2.0, hess: 2.0, count: 1 });
        assert_eq!(h[0].missing(), BinStat { grad: -1.0, hess: 1.0, count: 1 });
        let total = h[0].total();
        assert_eq!(total.count, 4);
        let diff = h[0].minus(&h[0]);
        assert!(diff.bins.iter().all(|b| b.count == 0 && b.grad == 0.0));
    }

    #[test]
    fn thousand_rows_255_bins() {
        let d = ds((1..=1000).map(f64::from).collect());
        let h = build_histograms(&d, &vec![0.0; 1000], &vec![1.0; 1000], 255);
        assert_eq!(h[0].bins.len(), 256);
        assert!(h[0].bins[..255].iter().all(|b| b.count == 3 || b.count == 4));
    }
}
