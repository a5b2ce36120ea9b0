use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, PropertyId, Result};

pub const N_FEATURES: usize = 7;

/// Model feature columns in the order used by feature vectors.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "land_value",
    "land_size",
    "num_units",
    "prop_age",
    "resi_age",
    "population",
    "prop_type",
];

/// Position of the categorical property-type feature.
pub const PROP_TYPE_FEATURE: usize = 6;

/// Land-use class of a parcel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PropType {
    Residential = 0,
    Commercial = 1,
    Institution = 2,
    Park = 3,
}

impl PropType {
    pub const ALL: [PropType; 4] = [
        PropType::Residential,
        PropType::Commercial,
        PropType::Institution,
        PropType::Park,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub property_id: PropertyId,
    pub lon: f64,
    pub lat: f64,
    /// Estimated land value in units of $10,000.
    pub land_value: f64,
    /// Acres.
    pub land_size: f64,
    pub num_units: f64,
    /// Years.
    pub prop_age: f64,
    /// Median resident age of the census block, years.
    pub resi_age: f64,
    pub population: f64,
    pub prop_type: PropType,
    pub incident: Option<bool>,
    pub demand_prob: Option<f64>,
}

impl Property {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [
            self.land_value,
            self.land_size,
            self.num_units,
            self.prop_age,
            self.resi_age,
            self.population,
            self.prop_type.code() as f64,
        ]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lon.is_finite() && self.lat.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        for (name, v) in FEATURE_NAMES.iter().zip(self.features()) {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if let Some(p) = self.demand_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("demand_prob must lie in [0,1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Validated collection of parcels with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropertyTable {
    rows: Vec<Property>,
}

impl PropertyTable {
    pub fn new(rows: Vec<Property>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for r in &rows {
            r.validate()
                .map_err(|m| Error::invalid(format!("property {}: {m}", r.property_id)))?;
            if !seen.insert(r.property_id) {
                return Err(Error::invalid(format!("duplicate property id {}", r.property_id)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Property] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> Vec<PropertyId> {
        self.rows.iter().map(|r| r.property_id).collect()
    }

    pub fn features(&self) -> Vec<[f64; N_FEATURES]> {
        self.rows.iter().map(Property::features).collect()
    }

    /// Incident labels, or `None` if any row is unlabeled.
    pub fn labels(&self) -> Option<Vec<bool>> {
        self.rows.iter().map(|r| r.incident).collect()
    }

    /// Demand probabilities, or `None` if any row lacks one.
    pub fn demand_probs(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.demand_prob).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn with_demand_probs(mut self, probs: &[f64]) -> Result<Self> {
        if probs.len() != self.rows.len() {
            return Err(Error::invalid("one probability per property required"));
        }
        for (r, &p) in self.rows.iter_mut().zip(probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfRange { what: "demand_prob", value: p });
            }
            r.demand_prob = Some(p);
        }
        Ok(self)
    }

    /// Writes the documented property CSV header; `demand_prob` is emitted
    /// only when some row carries one.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let with_prob = self.rows.iter().any(|r| r.demand_prob.is_some());
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::invalid(format!("{other:?}")),
        })?;
        let mut header: Vec<&str> = vec!["property_id", "lon", "lat"];
        header.extend(FEATURE_NAMES);
        header.push("incident");
        if with_prob {
            header.push("demand_prob");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.property_id.to_string(), r.lon.to_string(), r.lat.to_string()];
            rec.extend(r.features()[..PROP_TYPE_FEATURE].iter().map(|v| v.to_string()));
            rec.push(r.prop_type.code().to_string());
            rec.push(r.incident.map_or(String::new(), |b| u8::from(b).to_string()));
            if with_prob {
                rec.push(r.demand_prob.map_or(String::new(), |p| p.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Which optional columns must be present and filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestConfig {
    pub require_incident: bool,
    pub require_demand_prob: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectRecord {
    pub line: u64,
    pub property_id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub table: PropertyTable,
    pub rejects: Vec<RejectRecord>,
}

/// Reads a property CSV. Rows that fail validation are returned in
/// `rejects` with their line number; a missing required column fails the
/// whole load.
pub fn load_properties(path: &Path, config: &IngestConfig) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Schema {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        })?;
    let header = rdr.headers()?.clone();
    let cols: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let mut required: Vec<&str> = vec!["property_id", "lon", "lat"];
    required.extend(FEATURE_NAMES);
    if config.require_incident {
        required.push("incident");
    }
    if config.require_demand_prob {
        required.push("demand_prob");
    }
    let missing: Vec<&str> = required.iter().copied().filter(|c| !cols.contains_key(c)).collect();
    if !missing.is_empty() {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing required column(s): {}", missing.join(", ")),
        });
    }
    let col = |name: &str| cols[name];
    let incident_col = cols.get("incident").copied();
    let prob_col = cols.get("demand_prob").copied();

    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parsed = (|| -> std::result::Result<Property, String> {
            let num = |name: &str| -> std::result::Result<f64, String> {
                let s = field(col(name));
                s.parse::<f64>()
                    .map_err(|_| format!("{name}: non-numeric value {s:?}"))
            };
            let id_s = field(col("property_id"));
            let property_id = id_s
                .parse::<u64>()
                .map_err(|_| format!("property_id: not an unsigned integer {id_s:?}"))?;
            let type_s = field(col("prop_type"));
            let prop_type = type_s
                .parse::<u8>()
                .ok()
                .and_then(PropType::from_code)
                .ok_or_else(|| format!("prop_type: expected 0-3, got {type_s:?}"))?;
            let incident = match incident_col.map(field).unwrap_or("") {
                "" if config.require_incident => return Err("incident: missing label".into()),
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                s => return Err(format!("incident: expected 0 or 1, got {s:?}")),
            };
            let demand_prob = match prob_col.map(field).unwrap_or("") {
                "" if config.require_demand_prob => return Err("demand_prob: missing".into()),
                "" => None,
                s => Some(
                    s.parse::<f64>()
                        .map_err(|_| format!("demand_prob: non-numeric value {s:?}"))?,
                ),
            };
            let p = Property {
                property_id,
                lon: num("lon")?,
                lat: num("lat")?,
                land_value: num("land_value")?,
                land_size: num("land_size")?,
                num_units: num("num_units")?,
                prop_age: num("prop_age")?,
                resi_age: num("resi_age")?,
                population: num("population")?,
                prop_type,
                incident,
                demand_prob,
            };
            p.validate()?;
            Ok(p)
        })();
        match parsed {
            Ok(p) if !seen.insert(p.property_id) => rejects.push(RejectRecord {
                line,
                property_id: p.property_id.to_string(),
                reason: "duplicate property_id".into(),
            }),
            Ok(p) => rows.push(p),
            Err(reason) => rejects.push(RejectRecord {
                line,
                property_id: field(col("property_id")).to_string(),
                reason,
            }),
        }
    }
    Ok(IngestReport {
        table: PropertyTable { rows },
        rejects,
    })
}
