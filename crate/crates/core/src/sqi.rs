//! Service Quality Index: demand probability times normalized travel time
//! from the nearest-in-SQI station, and its three-way categorization.
//!
//! Lower SQI means better service.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodata::TravelTimeMatrix;
use crate::{Error, PropertyId, Result};

/// Travel-time normalization (`t_norm`) and the service bound (`t_max`),
/// both in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelNorm {
    t_norm: f64,
    t_max: f64,
}

impl TravelNorm {
    pub fn new(t_norm: f64, t_max: f64) -> Result<Self> {
        if !(t_norm.is_finite() && t_norm > 0.0 && t_max.is_finite() && t_max > 0.0) {
            return Err(Error::invalid("t_norm and t_max must be positive and finite"));
        }
        if t_max > t_norm {
            return Err(Error::invalid(format!("t_max ({t_max}s) must not exceed t_norm ({t_norm}s)")));
        }
        Ok(Self { t_norm, t_max })
    }

    pub fn t_norm(&self) -> f64 {
        self.t_norm
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// `t_max / t_norm`.
    pub fn t_hat_max(&self) -> f64 {
        self.t_max / self.t_norm
    }
}

impl Default for TravelNorm {
    /// 20 minute normalization, 4 minute service bound.
    fn default() -> Self {
        Self { t_norm: 1200.0, t_max: 240.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedTime {
    pub value: f64,
    /// The raw ratio exceeded 1 (including unreachable pairs).
    pub clamped: bool,
}

pub fn normalized_travel_time(t_actual: f64, norm: &TravelNorm) -> Result<NormalizedTime> {
    if t_actual.is_nan() || t_actual < 0.0 {
        return Err(Error::OutOfRange { what: "travel time must be nonnegative", value: t_actual });
    }
    let ratio = t_actual / norm.t_norm;
    Ok(if ratio > 1.0 {
        NormalizedTime { value: 1.0, clamped: true }
    } else {
        NormalizedTime { value: ratio, clamped: false }
    })
}

fn unit(what: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, value: v })
    }
}

pub fn sqi_per_station(p_demand: f64, t_hat: f64) -> Result<f64> {
    unit("demand probability", p_demand)?;
    unit("normalized travel time", t_hat)?;
    Ok(p_demand * t_hat)
}

/// Minimum over stations; with no station the demand probability itself.
pub fn sqi_min(per_station: &[f64], p_demand: f64) -> f64 {
    per_station.iter().copied().reduce(f64::min).unwrap_or(p_demand)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqiThresholds {
    tau_l: f64,
    tau_h: f64,
}

impl SqiThresholds {
    pub fn new(tau_l: f64, tau_h: f64) -> Result<Self> {
        if !(0.0 < tau_l && tau_l < tau_h && tau_h <= 1.0) {
            return Err(Error::invalid(format!("need 0 < tau_l < tau_h <= 1, got {tau_l}, {tau_h}")));
        }
        Ok(Self { tau_l, tau_h })
    }

    pub fn tau_l(&self) -> f64 {
        self.tau_l
    }

    pub fn tau_h(&self) -> f64 {
        self.tau_h
    }
}

impl Default for SqiThresholds {
    fn default() -> Self {
        Self { tau_l: 0.05, tau_h: 0.16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceQuality {
    Low,
    Medium,
    High,
}

impl ServiceQuality {
    pub const ALL: [ServiceQuality; 3] = [ServiceQuality::Low, ServiceQuality::Medium, ServiceQuality::High];

    pub fn label(self) -> &'static str {
        match self {
            ServiceQuality::Low => "low",
            ServiceQuality::Medium => "medium",
            ServiceQuality::High => "high",
        }
    }
}

/// High on `[0, tau_l)`, Medium on `[tau_l, tau_h)`, Low on `[tau_h, 1]`.
pub fn categorize_sqi(sqi: f64, thresholds: &SqiThresholds) -> Result<ServiceQuality> {
    unit("SQI", sqi)?;
    Ok(if sqi < thresholds.tau_l {
        ServiceQuality::High
    } else if sqi < thresholds.tau_h {
        ServiceQuality::Medium
    } else {
        ServiceQuality::Low
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SqiRecord {
    pub property_id: PropertyId,
    pub per_station: Vec<(u64, f64)>,
    pub sqi_min: f64,
    pub category: ServiceQuality,
    /// Station attaining the minimum; the lowest id on ties.
    pub best_station: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SqiReport {
    pub records: Vec<SqiRecord>,
    /// Property-station pairs whose travel time exceeded `t_norm`.
    pub clamped_pairs: usize,
}

/// Scores every property against every station.
///
/// `matrix` rows are station ids and columns are property ids. Each
/// property is given as `(id, demand probability)`.
pub fn score_all(
    properties: &[(PropertyId, f64)],
    stations: &[u64],
    matrix: &TravelTimeMatrix,
    norm: &TravelNorm,
    thresholds: &SqiThresholds,
) -> Result<SqiReport> {
    let scored: Vec<(SqiRecord, usize)> = properties
        .par_iter()
        .map(|&(pid, p)| {
            unit("demand probability", p)?;
            let mut clamped = 0;
            let mut per_station = Vec::with_capacity(stations.len());
            for &s in stations {
                let t = normalized_travel_time(matrix.try_get(s, pid)?, norm)?;
                clamped += t.clamped as usize;
                per_station.push((s, sqi_per_station(p, t.value)?));
            }
            let values: Vec<f64> = per_station.iter().map(|&(_, v)| v).collect();
            let min = sqi_min(&values, p);
            let best_station = per_station
                .iter()
                .filter(|&&(_, v)| v == min)
                .map(|&(s, _)| s)
                .min();
            Ok((
                SqiRecord {
                    property_id: pid,
                    per_station,
                    sqi_min: min,
                    category: categorize_sqi(min, thresholds)?,
                    best_station,
                },
                clamped,
            ))
        })
        .collect::<Result<_>>()?;
    let clamped_pairs = scored.iter().map(|(_, c)| c).sum();
    Ok(SqiReport {
        records: scored.into_iter().map(|(r, _)| r).collect(),
        clamped_pairs,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CategoryCount {
    pub count: usize,
    pub percent: f64,
}

/// Category shares of a scored population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CategoryShares {
    pub total: usize,
    pub low: CategoryCount,
    pub medium: CategoryCount,
    pub high: CategoryCount,
}

impl CategoryShares {
    pub fn from_categories(cats: impl IntoIterator<Item = ServiceQuality>) -> Self {
        let mut s = Self::default();
        for c in cats {
            s.total += 1;
            match c {
                ServiceQuality::Low => s.low.count += 1,
                ServiceQuality::Medium => s.medium.count += 1,
                ServiceQuality::High => s.high.count += 1,
            }
        }
        let pct = |n: usize| if s.total == 0 { 0.0 } else { 100.0 * n as f64 / s.total as f64 };
        s.low.percent = pct(s.low.count);
        s.medium.percent = pct(s.medium.count);
        s.high.percent = pct(s.high.count);
        s
    }

    pub fn of(records: &[SqiRecord]) -> Self {
        Self::from_categories(records.iter().map(|r| r.category))
    }

    pub fn get(&self, q: ServiceQuality) -> CategoryCount {
        match q {
            ServiceQuality::Low => self.low,
            ServiceQuality::Medium => self.medium,
            ServiceQuality::High => self.high,
        }
    }
}

/// One row of the SQI report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqiRow {
    pub property_id: PropertyId,
    pub sqi_min: f64,
    pub category: ServiceQuality,
    pub best_station_id: Option<u64>,
}

/// `property_id,sqi_min,category,best_station_id`.
pub fn write_sqi_csv(path: &Path, records: &[SqiRecord]) -> Result<()> {
    let rows: Vec<SqiRow> = records
        .iter()
        .map(|r| SqiRow {
            property_id: r.property_id,
            sqi_min: r.sqi_min,
            category: r.category,
            best_station_id: r.best_station,
        })
        .collect();
    crate::geodata::write_csv_rows(path, &rows)
}

pub fn read_sqi_csv(path: &Path) -> Result<Vec<SqiRow>> {
    crate::geodata::read_csv_rows(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn th() -> SqiThresholds {
        SqiThresholds::default()
    }

    #[test]
    fn normalization() {
        let n = TravelNorm::default();
        assert_eq!(normalized_travel_time(240.0, &n).unwrap(), NormalizedTime { value: 0.2, clamped: false });
        assert_eq!(normalized_travel_time(0.0, &n).unwrap().value, 0.0);
        assert_eq!(normalized_travel_time(1500.0, &n).unwrap(), NormalizedTime { value: 1.0, clamped: true });
        assert_eq!(normalized_travel_time(f64::INFINITY, &n).unwrap(), NormalizedTime { value: 1.0, clamped: true });
        assert!(normalized_travel_time(-1.0, &n).is_err());
        assert!(TravelNorm::new(100.0, 240.0).is_err());
    }

    #[test]
    fn per_station_product() {
        assert!((sqi_per_station(0.5, 0.2).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(sqi_per_station(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(sqi_per_station(1.0, 1.0).unwrap(), 1.0);
        assert!(sqi_per_station(1.2, 0.5).is_err());
        assert!(sqi_per_station(0.5, -0.1).is_err());
    }

    #[test]
    fn minimum_and_empty_rule() {
        assert_eq!(sqi_min(&[0.3, 0.1, 0.2], 0.9), 0.1);
        assert_eq!(sqi_min(&[], 0.7), 0.7);
        assert_eq!(sqi_min(&[0.42], 0.9), 0.42);
    }

    #[test]
    fn category_boundaries_are_half_open() {
        assert_eq!(categorize_sqi(0.05, &th()).unwrap(), ServiceQuality::Medium);
        assert_eq!(categorize_sqi(0.16, &th()).unwrap(), ServiceQuality::Low);
        assert_eq!(categorize_sqi(0.0, &th()).unwrap(), ServiceQuality::High);
        assert_eq!(categorize_sqi(1.0, &th()).unwrap(), ServiceQuality::Low);
        assert!(categorize_sqi(1.5, &th()).is_err());
        assert!(SqiThresholds::new(0.2, 0.1).is_err());
        assert!(SqiThresholds::new(0.0, 0.1).is_err());
    }

    #[test]
    fn score_all_edge_cases() {
        let props = [(1, 0.7), (2, 0.2)];
        let empty = TravelTimeMatrix::new(vec![], vec![1, 2], vec![]).unwrap();
        let r = score_all(&props, &[], &empty, &TravelNorm::default(), &th()).unwrap();
        assert_eq!(r.records[0].sqi_min, 0.7);
        assert_eq!(r.records[1].sqi_min, 0.2);
        assert_eq!(r.records[0].best_station, None);

        let zero = TravelTimeMatrix::new(vec![9], vec![1, 2], vec![0.0, 0.0]).unwrap();
        let r = score_all(&props, &[9], &zero, &TravelNorm::default(), &th()).unwrap();
        assert!(r.records.iter().all(|x| x.sqi_min == 0.0 && x.category == ServiceQuality::High));

        let partial = TravelTimeMatrix::new(vec![9], vec![1], vec![0.0]).unwrap();
        let err = score_all(&props, &[9], &partial, &TravelNorm::default(), &th()).unwrap_err();
        assert!(matches!(err, Error::MissingTravelTime { source_id: 9, target_id: 2 }));
    }

    #[test]
    fn shares_sum_to_total() {
        use ServiceQuality::*;
        let s = CategoryShares::from_categories([Low, Low, Medium, High, High, High]);
        assert_eq!((s.low.count, s.medium.count, s.high.count, s.total), (2, 1, 3, 6));
        assert!((s.low.percent + s.medium.percent + s.high.percent - 100.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn order_invariance_and_monotone_demand(
            times in proptest::collection::vec(0.0f64..2000.0, 1..6),
            p in 0.0f64..1.0, dp in 0.0f64..0.5,
        ) {
            let n = TravelNorm::default();
            let vals = |p: f64, ts: &[f64]| -> Vec<f64> {
                ts.iter().map(|&t| sqi_per_station(p, normalized_travel_time(t, &n).unwrap().value).unwrap()).collect()
            };
            let mut rev = times.clone();
            rev.reverse();
            prop_assert_eq!(sqi_min(&vals(p, &times), p), sqi_min(&vals(p, &rev), p));
            let q = (p + dp).min(1.0);
            prop_assert!(sqi_min(&vals(q, &times), q) >= sqi_min(&vals(p, &times), p));
        }
    }
}
