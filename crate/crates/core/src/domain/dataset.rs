use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::time::Date;
use crate::error::{Error, Result};

/// Level id reserved for missing or never-seen categories.
pub const MISSING_LEVEL: u32 = u32::MAX;

pub const DEFAULT_HALF_LIFE_DAYS: f64 = 14.0;

const SIDECAR_VERSION: u32 = 1;

/// Level strings in first-appearance order; a level's id is its position.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Dictionary {
    levels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `level`, adding it if new.
    pub fn intern(&mut self, level: &str) -> u32 {
        if let Some(&id) = self.index.get(level) {
            return id;
        }
        let id = self.levels.len() as u32;
        self.levels.push(level.to_owned());
        self.index.insert(level.to_owned(), id);
        id
    }

    /// Id of a known level, or [`MISSING_LEVEL`].
    pub fn encode(&self, level: &str) -> u32 {
        self.index.get(level).copied().unwrap_or(MISSING_LEVEL)
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.levels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }
}

impl From<Vec<String>> for Dictionary {
    fn from(levels: Vec<String>) -> Self {
        let mut d = Dictionary::new();
        for l in &levels {
            d.intern(l);
        }
        d
    }
}

impl From<Dictionary> for Vec<String> {
    fn from(d: Dictionary) -> Self {
        d.levels
    }
}

/// Dictionary-encodes a string column by first appearance.
pub fn encode_categorical<S: AsRef<str>>(raw: &[S]) -> (Vec<u32>, Dictionary) {
    let mut dict = Dictionary::new();
    let codes = raw.iter().map(|s| dict.intern(s.as_ref())).collect();
    (codes, dict)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericColumn {
    pub name: String,
    /// NaN marks a missing value.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalColumn {
    pub name: String,
    pub codes: Vec<u32>,
    pub dictionary: Dictionary,
}

impl CategoricalColumn {
    /// Encodes optional level strings; `None` becomes [`MISSING_LEVEL`].
    pub fn from_levels<S: AsRef<str>>(name: impl Into<String>, raw: &[Option<S>]) -> Self {
        let mut dictionary = Dictionary::new();
        let codes = raw.iter().map(|v| v.as_ref().map_or(MISSING_LEVEL, |s| dictionary.intern(s.as_ref()))).collect();
        CategoricalColumn { name: name.into(), codes, dictionary }
    }

    /// Re-encodes this column against another dictionary; levels unknown to
    /// `target` become missing.
    pub fn recode(&self, target: &Dictionary) -> Vec<u32> {
        let map: Vec<u32> = self.dictionary.levels().iter().map(|l| target.encode(l)).collect();
        self.codes.iter().map(|&c| if c == MISSING_LEVEL { MISSING_LEVEL } else { map[c as usize] }).collect()
    }
}

/// Columnar training table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub numeric: Vec<NumericColumn>,
    pub categorical: Vec<CategoricalColumn>,
    /// Duration target in hours.
    pub target: Vec<f64>,
    pub sample_weight: Vec<f64>,
    pub order_date: Vec<Date>,
}

impl Dataset {
    /// Unit-weight dataset.
    pub fn new(numeric: Vec<NumericColumn>, categorical: Vec<CategoricalColumn>, target: Vec<f64>, order_date: Vec<Date>) -> Result<Self> {
        let n = target.len();
        let ds = Dataset { numeric, categorical, target, sample_weight: vec![1.0; n], order_date };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.target.len();
        if self.sample_weight.len() != n || self.order_date.len() != n {
            return Err(Error::invalid("weight and order-date columns must match the target length"));
        }
        for c in &self.numeric {
            if c.values.len() != n {
                return Err(Error::invalid(format!("numeric column {:?} has {} rows, expected {n}", c.name, c.values.len())));
            }
        }
        for c in &self.categorical {
            if c.codes.len() != n {
                return Err(Error::invalid(format!("categorical column {:?} has {} rows, expected {n}", c.name, c.codes.len())));
            }
            let card = c.dictionary.len() as u32;
            if c.codes.iter().any(|&id| id != MISSING_LEVEL && id >= card) {
                return Err(Error::invalid(format!("categorical column {:?} has ids outside its dictionary", c.name)));
            }
        }
        if self.sample_weight.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("sample weights must be finite and non-negative"));
        }
        let mut names: Vec<&str> = self.numeric.iter().map(|c| c.name.as_str()).collect();
        names.extend(self.categorical.iter().map(|c| c.name.as_str()));
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate column names"));
        }
        Ok(())
    }

    pub fn numeric_column(&self, name: &str) -> Option<&NumericColumn> {
        self.numeric.iter().find(|c| c.name == name)
    }

    pub fn categorical_column(&self, name: &str) -> Option<&CategoricalColumn> {
        self.categorical.iter().find(|c| c.name == name)
    }

    /// Row subset in the given order. Dictionaries are kept whole.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            numeric: self
                .numeric
                .iter()
                .map(|c| NumericColumn { name: c.name.clone(), values: rows.iter().map(|&r| c.values[r]).collect() })
                .collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalColumn {
                    name: c.name.clone(),
                    codes: rows.iter().map(|&r| c.codes[r]).collect(),
                    dictionary: c.dictionary.clone(),
                })
                .collect(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            sample_weight: rows.iter().map(|&r| self.sample_weight[r]).collect(),
            order_date: rows.iter().map(|&r| self.order_date[r]).collect(),
        }
    }

    /// Drops the named feature columns (numeric or categorical).
    pub fn without_columns(&self, names: &[&str]) -> Dataset {
        let mut out = self.clone();
        out.numeric.retain(|c| !names.contains(&c.name.as_str()));
        out.categorical.retain(|c| !names.contains(&c.name.as_str()));
        out
    }

    /// Appends `other`'s rows. Column sets must match by name; categorical
    /// levels of `other` are merged into this dataset's dictionaries.
    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        if self.numeric.is_empty() && self.categorical.is_empty() && self.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if self.numeric.len() != other.numeric.len() || self.categorical.len() != other.categorical.len() {
            return Err(Error::SchemaMismatch("appended dataset has a different column set".into()));
        }
        for c in &mut self.numeric {
            let o = other.numeric_column(&c.name).ok_or_else(|| Error::SchemaMismatch(format!("missing numeric column {:?}", c.name)))?;
            c.values.extend_from_slice(&o.values);
        }
        for c in &mut self.categorical {
            let o = other
                .categorical_column(&c.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing categorical column {:?}", c.name)))?;
            for &code in &o.codes {
                let id = match o.dictionary.decode(code) {
                    Some(level) => c.dictionary.intern(level),
                    None => MISSING_LEVEL,
                };
                c.codes.push(id);
            }
        }
        self.target.extend_from_slice(&other.target);
        self.sample_weight.extend_from_slice(&other.sample_weight);
        self.order_date.extend_from_slice(&other.order_date);
        Ok(())
    }

    /// Writes the table as CSV plus a JSON sidecar describing column roles.
    pub fn write_files(&self, csv_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        let sidecar = self.write_csv(&mut buf)?;
        fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
        let side = sidecar_path(csv_path);
        fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    pub fn read_files(csv_path: &Path) -> Result<Dataset> {
        let side = sidecar_path(csv_path);
        let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_slice(&text)?;
        let file = fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Dataset::read_csv(file, &sidecar)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<Sidecar> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = Vec::new();
        let mut columns = Vec::new();
        for c in &self.numeric {
            header.push(c.name.clone());
            columns.push(SidecarColumn { name: c.name.clone(), role: ColumnRole::Numeric, levels: None });
        }
        for c in &self.categorical {
            header.push(c.name.clone());
            columns.push(SidecarColumn {
                name: c.name.clone(),
                role: ColumnRole::Categorical,
                levels: Some(c.dictionary.levels().to_vec()),
            });
        }
        for (name, role) in [("target", ColumnRole::Target), ("weight", ColumnRole::Weight), ("order_date", ColumnRole::OrderDate)] {
            header.push(name.to_owned());
            columns.push(SidecarColumn { name: name.to_owned(), role, levels: None });
        }
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            for c in &self.numeric {
                let v = c.values[i];
                record.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            for c in &self.categorical {
                record.push(c.dictionary.decode(c.codes[i]).unwrap_or("").to_owned());
            }
            record.push(self.target[i].to_string());
            record.push(self.sample_weight[i].to_string());
            record.push(self.order_date[i].to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("dataset.csv", e))?;
        Ok(Sidecar { format_version: SIDECAR_VERSION, columns })
    }

    /// Reads a CSV whose columns are described by `sidecar`. Columns not named
    /// in the sidecar, or with role `ignore` or `time`, are skipped.
    pub fn read_csv<R: Read>(reader: R, sidecar: &Sidecar) -> Result<Dataset> {
        sidecar.check_version()?;
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let position = |name: &str| -> Result<usize> {
            header.iter().position(|h| h == name).ok_or_else(|| Error::SchemaMismatch(format!("sidecar column {name:?} not in CSV header")))
        };
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        let (mut target_col, mut weight_col, mut date_col) = (None, None, None);
        for col in &sidecar.columns {
            match col.role {
                ColumnRole::Numeric => numeric.push((position(&col.name)?, col.name.clone())),
                ColumnRole::Categorical => categorical.push((position(&col.name)?, col.name.clone(), col.levels.clone())),
                ColumnRole::Target => target_col = Some(position(&col.name)?),
                ColumnRole::Weight => weight_col = Some(position(&col.name)?),
                ColumnRole::OrderDate => date_col = Some(position(&col.name)?),
                ColumnRole::Time | ColumnRole::Ignore => {}
            }
        }
        let target_col = target_col.ok_or_else(|| Error::SchemaMismatch("sidecar names no target column".into()))?;
        let date_col = date_col.ok_or_else(|| Error::SchemaMismatch("sidecar names no order_date column".into()))?;

        let mut ds = Dataset {
            numeric: numeric.iter().map(|(_, n)| NumericColumn { name: n.clone(), values: Vec::new() }).collect(),
            categorical: categorical
                .iter()
                .map(|(_, n, levels)| CategoricalColumn {
                    name: n.clone(),
                    codes: Vec::new(),
                    dictionary: levels.clone().map(Dictionary::from).unwrap_or_default(),
                })
                .collect(),
            ..Dataset::default()
        };
        let fixed_dicts: Vec<bool> = categorical.iter().map(|(_, _, l)| l.is_some()).collect();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            for (k, (i, name)) in numeric.iter().enumerate() {
                let s = field(*i).trim();
                let v = if s.is_empty() {
                    f64::NAN
                } else {
                    s.parse::<f64>().map_err(|e| Error::invalid(format!("column {name:?}: {s:?}: {e}")))?
                };
                ds.numeric[k].values.push(v);
            }
            for (k, (i, _, _)) in categorical.iter().enumerate() {
                let s = field(*i);
                let col = &mut ds.categorical[k];
                let id = if s.is_empty() {
                    MISSING_LEVEL
                } else if fixed_dicts[k] {
                    col.dictionary.encode(s)
                } else {
                    col.dictionary.intern(s)
                };
                col.codes.push(id);
            }
            let t = field(target_col);
            ds.target.push(t.trim().parse::<f64>().map_err(|e| Error::invalid(format!("target {t:?}: {e}")))?);
            let w = match weight_col {
                Some(i) => {
                    let s = field(i);
                    s.trim().parse::<f64>().map_err(|e| Error::invalid(format!("weight {s:?}: {e}")))?
                }
                None => 1.0,
            };
            ds.sample_weight.push(w);
            ds.order_date.push(Date::parse(field(date_col))?);
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// `deliveries.csv` → `deliveries.schema.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("schema.json")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Numeric,
    Categorical,
    Target,
    Weight,
    OrderDate,
    /// Integer minutes since the epoch; used by series ingest.
    Time,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarColumn {
    pub name: String,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub columns: Vec<SidecarColumn>,
}

impl Sidecar {
    pub fn check_version(&self) -> Result<()> {
        if self.format_version > SIDECAR_VERSION {
            return Err(Error::UnsupportedVersion { found: self.format_version, supported: SIDECAR_VERSION });
        }
        Ok(())
    }

    pub fn read(csv_path: &Path) -> Result<Sidecar> {
        let side = sidecar_path(csv_path);
        let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let s: Sidecar = serde_json::from_slice(&text)?;
        s.check_version()?;
        Ok(s)
    }

    pub fn new(columns: Vec<SidecarColumn>) -> Self {
        Sidecar { format_version: SIDECAR_VERSION, columns }
    }

    pub fn column_with_role(&self, role: ColumnRole) -> Option<&SidecarColumn> {
        self.columns.iter().find(|c| c.role == role)
    }
}

/// Exponential recency weights: `0.5^(age_days / half_life_days)`.
pub fn decay_weights(mut rows: Dataset, reference_date: Date, half_life_days: f64) -> Result<Dataset> {
    if !(half_life_days > 0.0 && half_life_days.is_finite()) {
        return Err(Error::invalid(format!("half life must be positive, got {half_life_days}")));
    }
    for (w, d) in rows.sample_weight.iter_mut().zip(&rows.order_date) {
        let age = d.days_until(reference_date);
        if age < 0 {
            return Err(Error::invalid(format!("row dated {d} is after the reference date {reference_date}")));
        }
        *w = 0.5f64.powf(age as f64 / half_life_days);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let cat = CategoricalColumn::from_levels("lane", &[Some("a"), None, Some("b")]);
        Dataset::new(
            vec![NumericColumn { name: "x".into(), values: vec![1.5, f64::NAN, -2.0] }],
            vec![cat],
            vec![10.0, 20.0, 30.0],
            vec![Date(100), Date(86), Date(72)],
        )
        .unwrap()
    }

    #[test]
    fn decay_weight_examples() {
        let ds = decay_weights(small(), Date(100), 14.0).unwrap();
        assert_eq!(ds.sample_weight, vec![1.0, 0.5, 0.25]);
        assert!(decay_weights(small(), Date(99), 14.0).is_err());
        assert!(decay_weights(small(), Date(100), 0.0).is_err());
    }

    #[test]
    fn encode_examples() {
        let (codes, dict) = encode_categorical(&["a", "b", "a"]);
        assert_eq!(codes, vec![0, 1, 0]);
        assert_eq!(dict.encode("a"), 0);
        assert_eq!(dict.encode("b"), 1);
        assert_eq!(dict.encode("c"), MISSING_LEVEL);
        let (codes, dict) = encode_categorical::<&str>(&[]);
        assert!(codes.is_empty() && dict.is_empty());
        let restored: Vec<&str> = codes.iter().map(|&c| dict.decode(c).unwrap()).collect();
        assert!(restored.is_empty());
    }

    #[test]
    fn validation_rejects_ragged_and_bad_weights() {
        let mut ds = small();
        ds.sample_weight[0] = -1.0;
        assert!(ds.validate().is_err());
        let mut ds = small();
        ds.numeric[0].values.pop();
        assert!(ds.validate().is_err());
        let mut ds = small();
        ds.categorical[0].codes[0] = 7;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn csv_round_trip_keeps_missing_values() {
        let ds = small();
        let mut buf = Vec::new();
        let sidecar = ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&buf[..], &sidecar).unwrap();
        assert_eq!(back.categorical, ds.categorical);
        assert_eq!(back.target, ds.target);
        assert_eq!(back.order_date, ds.order_date);
        assert_eq!(back.numeric[0].values[0], 1.5);
        assert!(back.numeric[0].values[1].is_nan());
    }

    #[test]
    fn newer_sidecar_is_rejected() {
        let mut s = Sidecar::new(vec![]);
        s.format_version = 99;
        assert!(matches!(Dataset::read_csv(&b"target\n"[..], &s), Err(Error::UnsupportedVersion { .. })));
    }

    #[test]
    fn append_merges_dictionaries() {
        let mut a = small();
        let b = Dataset::new(
            vec![NumericColumn { name: "x".into(), values: vec![0.0] }],
            vec![CategoricalColumn::from_levels("lane", &[Some("c")])],
            vec![1.0],
            vec![Date(1)],
        )
        .unwrap();
        a.append(&b).unwrap();
        assert_eq!(a.n_rows(), 4);
        assert_eq!(a.categorical[0].dictionary.decode(a.categorical[0].codes[3]), Some("c"));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dictionary_is_a_bijection_on_seen_levels(raw in proptest::collection::vec("[a-e]{1,2}", 0..40)) {
            let (codes, dict) = encode_categorical(&raw);
            for (s, c) in raw.iter().zip(&codes) {
                prop_assert_eq!(dict.decode(*c), Some(s.as_str()));
                prop_assert_eq!(dict.encode(s), *c);
            }
            prop_assert!(codes.iter().all(|&c| (c as usize) < dict.len()));
        }

        #[test]
        fn decay_is_monotone_in_age(half_life in 0.5f64..60.0, ages in proptest::collection::vec(0i32..200, 1..30)) {
            let n = ages.len();
            let ds = Dataset::new(vec![], vec![], vec![0.0; n], ages.iter().map(|a| Date(500 - a)).collect()).unwrap();
            let ds = decay_weights(ds, Date(500), half_life).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if ages[i] <= ages[j] {
                        prop_assert!(ds.sample_weight[i] >= ds.sample_weight[j]);
                    }
                }
                if ages[i] == 0 {
                    prop_assert_eq!(ds.sample_weight[i], 1.0);
                }
            }
        }
    }
}
