//! Seeded synthetic city: a jittered grid road network, clustered parcels
//! with drawn features, existing stations, and incident labels sampled from
//! a known per-row probability.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::Serialize;

use super::network::{snap_to_network, write_csv_rows, write_stations};
use super::{Edge, Node, PropType, Property, PropertyTable, RoadNetwork, Station, N_FEATURES};
use crate::{Error, PropertyId, Result};

const KM_PER_DEG_LAT: f64 = 111.32;

/// Feature distributions for one group of parcels.
///
/// Continuous features are Gamma distributed with the given mean and shape;
/// `num_units` is `1 + Poisson`; `prop_age` is uniform on `0..=age_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureParams {
    pub land_value_mean: f64,
    pub land_value_shape: f64,
    pub land_size_mean: f64,
    pub land_size_shape: f64,
    pub extra_units_mean: f64,
    pub age_max: u32,
    pub resi_age_mean: f64,
    pub resi_age_shape: f64,
    pub population_mean: f64,
    pub population_shape: f64,
    pub type_weights: [f64; 4],
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            land_value_mean: 30.0,
            land_value_shape: 3.0,
            land_size_mean: 0.5,
            land_size_shape: 3.0,
            extra_units_mean: 1.5,
            age_max: 60,
            resi_age_mean: 38.0,
            resi_age_shape: 25.0,
            population_mean: 60.0,
            population_shape: 4.0,
            type_weights: [0.7, 0.15, 0.05, 0.1],
        }
    }
}

impl FeatureParams {
    /// Expected value of each feature column (prop_type as its mean code).
    pub fn means(&self) -> [f64; N_FEATURES] {
        let total: f64 = self.type_weights.iter().sum();
        let type_mean = self
            .type_weights
            .iter()
            .enumerate()
            .map(|(k, w)| k as f64 * w / total)
            .sum();
        [
            self.land_value_mean,
            self.land_size_mean,
            1.0 + self.extra_units_mean,
            self.age_max as f64 / 2.0,
            self.resi_age_mean,
            self.population_mean,
            type_mean,
        ]
    }

    fn validate(&self) -> Result<()> {
        let pos = [
            self.land_value_mean,
            self.land_value_shape,
            self.land_size_mean,
            self.land_size_shape,
            self.resi_age_mean,
            self.resi_age_shape,
            self.population_mean,
            self.population_shape,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("feature means and shapes must be positive"));
        }
        if !(self.extra_units_mean >= 0.0) {
            return Err(Error::invalid("extra_units_mean must be nonnegative"));
        }
        if self.type_weights.iter().any(|w| !(*w >= 0.0)) || self.type_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("type weights must be nonnegative with a positive sum"));
        }
        Ok(())
    }
}

struct FeatureSampler {
    land_value: Gamma<f64>,
    land_size: Gamma<f64>,
    extra_units: Option<Poisson<f64>>,
    age_max: u32,
    resi_age: Gamma<f64>,
    population: Gamma<f64>,
    type_cdf: [f64; 4],
}

fn gamma(mean: f64, shape: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, mean / shape).map_err(|e| Error::invalid(format!("gamma: {e}")))
}

impl FeatureSampler {
    fn new(p: &FeatureParams) -> Result<Self> {
        p.validate()?;
        let total: f64 = p.type_weights.iter().sum();
        let mut type_cdf = [0.0; 4];
        let mut acc = 0.0;
        for (k, w) in p.type_weights.iter().enumerate() {
            acc += w / total;
            type_cdf[k] = acc;
        }
        Ok(Self {
            land_value: gamma(p.land_value_mean, p.land_value_shape)?,
            land_size: gamma(p.land_size_mean, p.land_size_shape)?,
            extra_units: if p.extra_units_mean > 0.0 {
                Some(Poisson::new(p.extra_units_mean).map_err(|e| Error::invalid(format!("poisson: {e}")))?)
            } else {
                None
            },
            age_max: p.age_max,
            resi_age: gamma(p.resi_age_mean, p.resi_age_shape)?,
            population: gamma(p.population_mean, p.population_shape)?,
            type_cdf,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> ([f64; 6], PropType) {
        let units = 1.0 + self.extra_units.as_ref().map_or(0.0, |d| d.sample(rng));
        let age = rng.random_range(0..=self.age_max) as f64;
        let numeric = [
            self.land_value.sample(rng),
            self.land_size.sample(rng),
            units,
            age,
            self.resi_age.sample(rng),
            self.population.sample(rng),
        ];
        let u: f64 = rng.random();
        let code = self.type_cdf.iter().position(|&c| u < c).unwrap_or(3);
        (numeric, PropType::ALL[code])
    }
}

/// A group of parcels scattered around a center given in km east/north of
/// the grid origin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterSpec {
    pub east_km: f64,
    pub north_km: f64,
    /// Standard deviation of the isotropic offset; `None` scatters parcels
    /// uniformly over the whole grid.
    pub spread_km: Option<f64>,
    pub count: usize,
    pub features: FeatureParams,
}

/// Incident probability as a function of the feature vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RateModel {
    Constant(f64),
    /// `sigmoid(intercept + Σ coef·(x − center)/scale + type_offset)` over
    /// the six numeric features.
    Logistic {
        intercept: f64,
        coefficients: [f64; 6],
        centers: [f64; 6],
        scales: [f64; 6],
        type_offsets: [f64; 4],
    },
}

impl RateModel {
    pub fn probability(&self, features: &[f64; N_FEATURES]) -> f64 {
        match self {
            RateModel::Constant(p) => *p,
            RateModel::Logistic {
                intercept,
                coefficients,
                centers,
                scales,
                type_offsets,
            } => {
                let mut z = *intercept + type_offsets[features[6] as usize];
                for k in 0..6 {
                    z += coefficients[k] * (features[k] - centers[k]) / scales[k];
                }
                1.0 / (1.0 + (-z).exp())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RateModel::Constant(p) if !(0.0..=1.0).contains(p) => {
                Err(Error::invalid(format!("constant rate {p} outside [0,1]")))
            }
            RateModel::Logistic { scales, .. } if scales.iter().any(|s| !(*s > 0.0)) => {
                Err(Error::invalid("logistic scales must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl Default for RateModel {
    /// Demand driven by property age, resident age, size, population,
    /// units and type. Land value carries no signal.
    fn default() -> Self {
        RateModel::Logistic {
            intercept: -0.2,
            coefficients: [0.0, 0.9, 0.9, 1.9, 1.4, 0.9],
            centers: [30.0, 0.5, 2.5, 30.0, 38.0, 60.0],
            scales: [17.0, 0.29, 1.2, 17.6, 7.6, 30.0],
            type_offsets: [0.0, 1.2, 0.6, -2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthParams {
    /// Longitude/latitude of the south-west grid corner.
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub block_km: f64,
    pub speed_kmh: f64,
    /// Each edge time is scaled by `1 + U(0, speed_jitter)`.
    pub speed_jitter: f64,
    pub clusters: Vec<ClusterSpec>,
    /// Existing stations, km east/north of the origin.
    pub stations: Vec<(f64, f64)>,
    pub rate: RateModel,
}

impl Default for SynthParams {
    /// A 6 km town: one station downtown, a dense low-risk core, an old
    /// neighborhood in the far north-east, and scattered rural parcels.
    fn default() -> Self {
        let old = FeatureParams {
            age_max: 110,
            resi_age_mean: 46.0,
            land_size_mean: 0.8,
            population_mean: 90.0,
            type_weights: [0.9, 0.1, 0.0, 0.0],
            ..Default::default()
        };
        let young = FeatureParams {
            age_max: 20,
            resi_age_mean: 33.0,
            type_weights: [0.75, 0.1, 0.05, 0.1],
            ..Default::default()
        };
        Self {
            origin_lon: -93.66,
            origin_lat: 44.85,
            grid_cols: 25,
            grid_rows: 25,
            block_km: 0.25,
            speed_kmh: 40.0,
            speed_jitter: 0.2,
            clusters: vec![
                ClusterSpec {
                    east_km: 1.5,
                    north_km: 1.5,
                    spread_km: Some(0.6),
                    count: 1200,
                    features: young,
                },
                ClusterSpec {
                    east_km: 5.0,
                    north_km: 4.8,
                    spread_km: Some(0.25),
                    count: 250,
                    features: old,
                },
                ClusterSpec {
                    east_km: 0.0,
                    north_km: 0.0,
                    spread_km: None,
                    count: 300,
                    features: FeatureParams::default(),
                },
            ],
            stations: vec![(1.5, 1.5)],
            rate: RateModel::default(),
        }
    }
}

impl SynthParams {
    /// `count` parcels spread uniformly over the default grid with a
    /// balanced property-type mix and a steeper incident-rate surface.
    /// `land_value` carries no signal, so it is a planted noise feature.
    pub fn forest_benchmark(count: usize) -> Self {
        let mut rate = RateModel::default();
        if let RateModel::Logistic { coefficients, type_offsets, .. } = &mut rate {
            *coefficients = coefficients.map(|c| 1.5 * c);
            *type_offsets = [0.0, 2.25, 1.2, -3.75];
        }
        Self {
            clusters: vec![ClusterSpec {
                east_km: 0.0,
                north_km: 0.0,
                spread_km: None,
                count,
                features: FeatureParams { type_weights: [0.4, 0.25, 0.15, 0.2], ..Default::default() },
            }],
            rate,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCity {
    pub network: RoadNetwork,
    pub properties: PropertyTable,
    pub stations: Vec<Station>,
    /// Probability each label was drawn from, aligned with `properties`.
    pub truth: Vec<f64>,
}

#[derive(Serialize)]
struct TruthRow {
    property_id: PropertyId,
    true_prob: f64,
}

impl SynthCity {
    /// Writes `nodes.csv`, `edges.csv`, `properties.csv`, `stations.csv`
    /// and `truth.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.network.write(&dir.join("nodes.csv"), &dir.join("edges.csv"))?;
        self.properties.write_csv(&dir.join("properties.csv"))?;
        write_stations(&dir.join("stations.csv"), &self.stations)?;
        let truth: Vec<TruthRow> = self
            .properties
            .rows()
            .iter()
            .zip(&self.truth)
            .map(|(r, &p)| TruthRow {
                property_id: r.property_id,
                true_prob: p,
            })
            .collect();
        write_csv_rows(&dir.join("truth.csv"), &truth)
    }
}

pub fn synth_city(seed: u64, params: &SynthParams) -> Result<SynthCity> {
    if params.grid_cols == 0 || params.grid_rows == 0 {
        return Err(Error::invalid("grid must have at least one row and column"));
    }
    if !(params.block_km > 0.0 && params.speed_kmh > 0.0 && params.speed_jitter >= 0.0) {
        return Err(Error::invalid("block size and speed must be positive"));
    }
    let total: usize = params.clusters.iter().map(|c| c.count).sum();
    if total == 0 {
        return Err(Error::Degenerate("synthetic city needs at least one property".into()));
    }
    params.rate.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km_per_deg_lon = KM_PER_DEG_LAT * params.origin_lat.to_radians().cos();
    let to_lonlat = |east: f64, north: f64| {
        (
            params.origin_lon + east / km_per_deg_lon,
            params.origin_lat + north / KM_PER_DEG_LAT,
        )
    };

    let (cols, rows) = (params.grid_cols, params.grid_rows);
    let mut nodes = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let (lon, lat) = to_lonlat(c as f64 * params.block_km, r as f64 * params.block_km);
            nodes.push(Node {
                node_id: (r * cols + c) as u64,
                lon,
                lat,
            });
        }
    }
    let base = params.block_km / params.speed_kmh * 3600.0;
    let edge_time = |rng: &mut ChaCha8Rng| base * (1.0 + params.speed_jitter * rng.random::<f64>());
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = (r * cols + c) as u64;
            if c + 1 < cols {
                edges.push(Edge { from: id, to: id + 1, seconds: edge_time(&mut rng) });
            }
            if r + 1 < rows {
                edges.push(Edge { from: id, to: id + cols as u64, seconds: edge_time(&mut rng) });
            }
        }
    }
    let network = RoadNetwork::new(nodes, edges, true)?;

    let width = (cols - 1) as f64 * params.block_km;
    let height = (rows - 1) as f64 * params.block_km;
    let mut props = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for cluster in &params.clusters {
        let sampler = FeatureSampler::new(&cluster.features)?;
        let offset = match cluster.spread_km {
            Some(s) if s > 0.0 => Some(Normal::new(0.0, s).map_err(|e| Error::invalid(format!("spread: {e}")))?),
            Some(_) => None,
            None => None,
        };
        for _ in 0..cluster.count {
            let (east, north) = match (cluster.spread_km, &offset) {
                (None, _) => (rng.random::<f64>() * width, rng.random::<f64>() * height),
                (Some(_), Some(d)) => (cluster.east_km + d.sample(&mut rng), cluster.north_km + d.sample(&mut rng)),
                (Some(_), None) => (cluster.east_km, cluster.north_km),
            };
            let (lon, lat) = to_lonlat(east.clamp(0.0, width), north.clamp(0.0, height));
            let (x, prop_type) = sampler.sample(&mut rng);
            let mut row = Property {
                property_id: props.len() as u64 + 1,
                lon,
                lat,
                land_value: x[0],
                land_size: x[1],
                num_units: x[2],
                prop_age: x[3],
                resi_age: x[4],
                population: x[5],
                prop_type,
                incident: None,
                demand_prob: None,
            };
            let p = params.rate.probability(&row.features());
            row.incident = Some(rng.random::<f64>() < p);
            truth.push(p);
            props.push(row);
        }
    }

    let stations = params
        .stations
        .iter()
        .enumerate()
        .map(|(i, &(e, n))| {
            let (lon, lat) = to_lonlat(e, n);
            Ok(Station {
                station_id: i as u64 + 1,
                node_id: snap_to_network(lon, lat, &network)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthCity {
        network,
        properties: PropertyTable::new(props)?,
        stations,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            grid_cols: 6,
            grid_rows: 5,
            clusters: vec![ClusterSpec {
                east_km: 0.5,
                north_km: 0.5,
                spread_km: Some(0.2),
                count: 50,
                features: FeatureParams::default(),
            }],
            ..Default::default()
        }
    }

    #[test]
    fn grid_shape() {
        let city = synth_city(3, &small()).unwrap();
        assert_eq!(city.network.len(), 30);
        // 5 rows of 5 horizontal edges + 4 rows of 6 vertical edges.
        assert_eq!(city.network.edges().len(), 25 + 24);
        assert_eq!(city.properties.len(), 50);
        assert_eq!(city.stations.len(), 1);
    }

    #[test]
    fn zero_rate_means_no_incidents() {
        let params = SynthParams {
            rate: RateModel::Constant(0.0),
            ..small()
        };
        let city = synth_city(1, &params).unwrap();
        assert!(city.properties.rows().iter().all(|r| r.incident == Some(false)));
        assert!(city.truth.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn degenerate_params() {
        let mut p = small();
        p.clusters[0].count = 0;
        assert!(matches!(synth_city(1, &p), Err(Error::Degenerate(_))));
        let p = SynthParams { rate: RateModel::Constant(1.5), ..small() };
        assert!(synth_city(1, &p).is_err());
    }

    #[test]
    fn seeds_differ() {
        let a = synth_city(1, &small()).unwrap();
        let b = synth_city(2, &small()).unwrap();
        assert_ne!(a.properties, b.properties);
    }
}
