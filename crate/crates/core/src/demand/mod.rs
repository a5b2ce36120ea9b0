//! Demand model: a random forest over parcel features producing the
//! probability that a property requests service, plus scaling and
//! demand-level categories.

mod dataset;
mod forest;
mod grid;
pub mod metrics;
mod model_io;
mod tree;

use std::path::Path;

use serde::Serialize;

pub use dataset::{property_feature_kinds, property_feature_names, Dataset, FeatureKind};
pub use forest::{fit_forest, Criterion, DemandForest, ForestConfig, OobScore};
pub use grid::{grid_search, stratified_folds, ForestGrid, GridCell, GridResult};
pub use tree::{DecisionTree, Split, TreeNode};

use crate::{Error, PropertyId, Result};

/// Rescales to `[0, 1]` by `(p − min)/(max − min)`.
pub fn minmax_scale(probs: &[f64]) -> Result<Vec<f64>> {
    if probs.len() < 2 {
        return Err(Error::Degenerate("min-max scaling needs at least two values".into()));
    }
    let (lo, hi) = probs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    if !(hi > lo) {
        return Err(Error::Degenerate("min-max scaling of a constant vector".into()));
    }
    Ok(probs.iter().map(|p| (p - lo) / (hi - lo)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DemandCategory {
    Low,
    Medium,
    High,
}

impl DemandCategory {
    pub fn label(self) -> &'static str {
        match self {
            DemandCategory::Low => "low",
            DemandCategory::Medium => "medium",
            DemandCategory::High => "high",
        }
    }
}

/// Low below 0.35, Medium below 0.65, High otherwise.
pub fn categorize_demand(p: f64) -> Result<DemandCategory> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange { what: "demand probability", value: p });
    }
    Ok(if p < 0.35 {
        DemandCategory::Low
    } else if p < 0.65 {
        DemandCategory::Medium
    } else {
        DemandCategory::High
    })
}

/// `property_id,demand_prob,demand_category`.
pub fn write_predictions(path: &Path, ids: &[PropertyId], probs: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    w.write_record(["property_id", "demand_prob", "demand_category"])?;
    for (id, &p) in ids.iter().zip(probs) {
        w.write_record([id.to_string(), p.to_string(), categorize_demand(p)?.label().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `write_predictions` output back as `(id, probability)` pairs.
pub fn read_predictions(path: &Path) -> Result<Vec<(PropertyId, f64)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        property_id: PropertyId,
        demand_prob: f64,
    }
    let rows: Vec<Row> = crate::geodata::read_csv_rows(path)?;
    Ok(rows.into_iter().map(|r| (r.property_id, r.demand_prob)).collect())
}
