use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::TreeNode;
use super::BoosterParams;
use crate::domain::{Dataset, Dictionary};
use crate::error::{Error, Result};
use crate::fsio;

pub const MODEL_FORMAT_MAJOR: u32 = 1;
const MODEL_FORMAT_MINOR: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVersion {
    pub major: u32,
    pub minor: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub dictionary: Dictionary,
}

/// Column names in model feature order: numeric first, then categorical.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub numeric: Vec<String>,
    pub categorical: Vec<CategoricalFeature>,
}

impl FeatureSchema {
    pub fn from_dataset(ds: &Dataset) -> Self {
        FeatureSchema {
            numeric: ds.numeric.iter().map(|c| c.name.clone()).collect(),
            categorical: ds
                .categorical
                .iter()
                .map(|c| CategoricalFeature { name: c.name.clone(), dictionary: c.dictionary.clone() })
                .collect(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.numeric.len() + self.categorical.len()
    }

    pub fn feature_name(&self, feature: usize) -> &str {
        if feature < self.numeric.len() {
            &self.numeric[feature]
        } else {
            &self.categorical[feature - self.numeric.len()].name
        }
    }
}

/// A trained ensemble. Prediction is `base_score + learning_rate * sum(trees)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    format_version: FormatVersion,
    schema: FeatureSchema,
    params: BoosterParams,
    base_score: f64,
    trees: Vec<TreeNode>,
}

impl BoostedModel {
    pub fn new(schema: FeatureSchema, params: BoosterParams, base_score: f64, trees: Vec<TreeNode>) -> Self {
        BoostedModel {
            format_version: FormatVersion { major: MODEL_FORMAT_MAJOR, minor: MODEL_FORMAT_MINOR },
            schema,
            params,
            base_score,
            trees,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn params(&self) -> &BoosterParams {
        &self.params
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn format_version(&self) -> FormatVersion {
        self.format_version
    }

    /// One prediction per row. Columns are matched by name; extra columns
    /// are ignored and categorical levels are re-encoded against the
    /// training dictionaries, unseen levels becoming missing.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let numeric: Vec<&[f64]> = self
            .schema
            .numeric
            .iter()
            .map(|name| {
                ds.numeric_column(name)
                    .map(|c| c.values.as_slice())
                    .ok_or_else(|| Error::SchemaMismatch(format!("missing numeric column {name:?}")))
            })
            .collect::<Result<_>>()?;
        let categorical: Vec<Vec<u32>> = self
            .schema
            .categorical
            .iter()
            .map(|f| {
                ds.categorical_column(&f.name)
                    .map(|c| c.recode(&f.dictionary))
                    .ok_or_else(|| Error::SchemaMismatch(format!("missing categorical column {:?}", f.name)))
            })
            .collect::<Result<_>>()?;

        let mut num_row = vec![0.0; numeric.len()];
        let mut cat_row = vec![0; categorical.len()];
        let mut out = Vec::with_capacity(ds.n_rows());
        for i in 0..ds.n_rows() {
            for (dst, col) in num_row.iter_mut().zip(&numeric) {
                *dst = col[i];
            }
            for (dst, col) in cat_row.iter_mut().zip(&categorical) {
                *dst = col[i];
            }
            out.push(self.predict_encoded(&num_row, &cat_row));
        }
        Ok(out)
    }

    /// Prediction for a row already in schema order and dictionary codes.
    pub fn predict_encoded(&self, numeric: &[f64], categorical: &[u32]) -> f64 {
        let mut p = self.base_score;
        for t in &self.trees {
            p += self.params.learning_rate * t.predict(numeric, categorical);
        }
        p
    }

    /// Total split gain per feature, in schema order.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.schema.n_features()];
        for t in &self.trees {
            t.accumulate_gain(&mut acc);
        }
        acc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: FormatVersion,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version.major > MODEL_FORMAT_MAJOR {
            return Err(Error::UnsupportedVersion { found: header.format_version.major, supported: MODEL_FORMAT_MAJOR });
        }
        let model: BoostedModel = serde_json::from_str(text)?;
        model.params.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsio::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::invalid(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CategoricalColumn, Date, NumericColumn};
    use crate::gbdt::train;
    use crate::losses::LossSpec;

    fn mixed() -> Dataset {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| if i % 17 == 0 { f64::NAN } else { (i % 23) as f64 }).collect();
        let lv: Vec<Option<&str>> = (0..n).map(|i| Some(["a", "b", "c"][i % 3])).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 23) as f64 + if i % 3 == 1 { 5.0 } else { 0.0 }).collect();
        Dataset::new(
            vec![NumericColumn { name: "x".into(), values: x }],
            vec![CategoricalColumn::from_levels("c", &lv)],
            y,
            vec![Date(0); n],
        )
        .unwrap()
    }

    fn params() -> BoosterParams {
        BoosterParams { boosting_iterations: 20, min_data_in_leaf: 5, seed: 9, ..Default::default() }
    }

    #[test]
    fn zero_trees_predicts_base_score() {
        let m = BoostedModel::new(FeatureSchema::default(), BoosterParams::default(), 4.5, vec![]);
        let ds = Dataset::new(vec![], vec![], vec![0.0; 3], vec![Date(0); 3]).unwrap();
        assert_eq!(m.predict(&ds).unwrap(), vec![4.5; 3]);
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let ds = mixed();
        let m = train(&ds, &params()).unwrap();
        let back = BoostedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.predict(&ds).unwrap(), back.predict(&ds).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = mixed();
        let a = train(&ds, &params()).unwrap().to_json().unwrap();
        let b = train(&ds, &params()).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn newer_major_version_is_rejected() {
        let m = BoostedModel::new(FeatureSchema::default(), BoosterParams::default(), 0.0, vec![]);
        let text = m.to_json().unwrap().replacen("\"major\": 1", "\"major\": 2", 1);
        assert!(matches!(BoostedModel::from_json(&text), Err(Error::UnsupportedVersion { .. })));
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let ds = mixed();
        let m = train(&ds, &params()).unwrap();
        let stripped = ds.without_columns(&["c"]);
        assert!(matches!(m.predict(&stripped), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn categorical_recoding_by_name() {
        let ds = mixed();
        let m = train(&ds, &params()).unwrap();
        // Same rows, dictionary built in a different order.
        let mut rev = ds.clone();
        let lv: Vec<Option<&str>> = ds.categorical[0].codes.iter().rev().map(|&c| ds.categorical[0].dictionary.decode(c)).collect();
        let mut col = CategoricalColumn::from_levels("c", &lv);
        col.codes.reverse();
        rev.categorical = vec![col];
        assert_eq!(m.predict(&ds).unwrap(), m.predict(&rev).unwrap());
    }

    #[test]
    fn constant_feature_changes_nothing() {
        let ds = mixed();
        let mut with = ds.clone();
        with.numeric.push(NumericColumn { name: "k".into(), values: vec![3.0; ds.n_rows()] });
        let p = BoosterParams { feature_fraction: 1.0, loss: LossSpec::Quantile { tau: 0.7 }, ..params() };
        let a = train(&ds, &p).unwrap().predict(&ds).unwrap();
        let b = train(&with, &p).unwrap().predict(&with).unwrap();
        assert_eq!(a, b);
    }
}
