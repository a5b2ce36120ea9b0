use crate::geodata::{PropertyTable, FEATURE_NAMES, PROP_TYPE_FEATURE};
use crate::{Error, Result};

/// How a feature column is split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// `x <= threshold` goes left.
    Numeric,
    /// Integer codes `0..levels`; a level subset goes left.
    Categorical { levels: u8 },
}

pub(crate) const MAX_LEVELS: u8 = 16;

/// Row-major feature matrix with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    x: Vec<f64>,
    y: Vec<bool>,
}

impl Dataset {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>, rows: &[Vec<f64>], labels: Vec<bool>) -> Result<Self> {
        if names.len() != kinds.len() || names.is_empty() {
            return Err(Error::invalid("one name and kind per feature, at least one feature"));
        }
        if rows.len() != labels.len() {
            return Err(Error::invalid("one label per row"));
        }
        let n_features = kinds.len();
        let mut x = Vec::with_capacity(rows.len() * n_features);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_features {
                return Err(Error::invalid(format!("row {i} has {} features, expected {n_features}", r.len())));
            }
            x.extend_from_slice(r);
        }
        let ds = Self { names, kinds, x, y: labels };
        ds.check_values()?;
        Ok(ds)
    }

    /// The seven parcel features; requires every row to be labeled.
    pub fn from_table(table: &PropertyTable) -> Result<Self> {
        let labels = table
            .labels()
            .ok_or_else(|| Error::invalid("every property needs an incident label for training"))?;
        let rows: Vec<Vec<f64>> = table.features().iter().map(|f| f.to_vec()).collect();
        Self::new(property_feature_names(), property_feature_kinds(), &rows, labels)
    }

    fn check_values(&self) -> Result<()> {
        for (i, v) in self.x.iter().enumerate() {
            let kind = self.kinds[i % self.kinds.len()];
            let ok = match kind {
                FeatureKind::Numeric => v.is_finite(),
                FeatureKind::Categorical { levels } => {
                    levels <= MAX_LEVELS && v.fract() == 0.0 && *v >= 0.0 && *v < levels as f64
                }
            };
            if !ok {
                return Err(Error::OutOfRange {
                    what: "feature value invalid for its kind",
                    value: *v,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.kinds.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.kinds.len();
        &self.x[i * n..(i + 1) * n]
    }

    #[inline]
    pub(crate) fn value(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.kinds.len() + f]
    }

    pub fn labels(&self) -> &[bool] {
        &self.y
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.n_features());
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Self {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

pub fn property_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn property_feature_kinds() -> Vec<FeatureKind> {
    (0..FEATURE_NAMES.len())
        .map(|i| {
            if i == PROP_TYPE_FEATURE {
                FeatureKind::Categorical { levels: 4 }
            } else {
                FeatureKind::Numeric
            }
        })
        .collect()
}
