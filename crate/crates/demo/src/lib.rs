//! Browser demo over an in-memory synthetic city: an SQI map, travel-time
//! clustering of poorly served properties, and reward histograms from the
//! stochastic campaign.
//!
//! [`Session`] does the work and is usable natively; [`Demo`] wraps it for
//! JavaScript and exchanges JSON strings.

use firesite::clustering::{centroids, propose_candidates, tt_dbscan, Candidate, DbscanParams, Label};
use firesite::coverage::{catchments, solve_exact, Catchment, CatchmentMode, MaxCoverInstance};
use firesite::demand::{fit_forest, minmax_scale, Dataset, ForestConfig};
use firesite::geodata::{snap_to_network, synth_city, travel_time_matrix, SynthCity, SynthParams, TravelTimeMatrix};
use firesite::sqi::{score_all, CategoryShares, ServiceQuality, SqiThresholds, TravelNorm};
use firesite::stochastic::{Bandit, BernoulliField, CandidateSummary, Histogram, StochConfig};
use firesite::{NodeId, PropertyId, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct MapPoint {
    pub id: PropertyId,
    pub lon: f64,
    pub lat: f64,
    pub demand: f64,
    pub sqi: f64,
    pub quality: ServiceQuality,
}

#[derive(Serialize)]
pub struct StationPoint {
    pub id: u64,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Serialize)]
pub struct SqiView {
    pub points: Vec<MapPoint>,
    pub stations: Vec<StationPoint>,
    pub shares: CategoryShares,
    pub bounds: [f64; 4],
}

#[derive(Serialize)]
pub struct ClusterView {
    /// `(property id, cluster id or -1)` for each low-quality property.
    pub labels: Vec<(PropertyId, i64)>,
    pub candidates: Vec<Candidate>,
    pub n_clusters: u32,
    /// Candidate ids picked by the exact coverage solver with p = 1.
    pub exact_choice: Vec<u64>,
}

#[derive(Serialize)]
pub struct CampaignView {
    pub summary: Vec<CandidateSummary>,
    pub histograms: Vec<Histogram>,
}

/// Demo state: the city, its demand estimates, the latest scoring and the
/// latest candidate set.
pub struct Session {
    city: SynthCity,
    nodes: Vec<(PropertyId, NodeId)>,
    demand: Vec<f64>,
    norm: TravelNorm,
    sqi: Vec<(PropertyId, f64, ServiceQuality)>,
    candidates: Vec<Candidate>,
    catchments: Vec<Catchment>,
}

/// Times from `sources` (node, label) to every property, labelled by
/// property id.
fn to_properties(city: &SynthCity, sources: &[(NodeId, u64)], nodes: &[(PropertyId, NodeId)]) -> Result<TravelTimeMatrix> {
    let src: Vec<NodeId> = sources.iter().map(|s| s.0).collect();
    let tgt: Vec<NodeId> = nodes.iter().map(|n| n.1).collect();
    let m = travel_time_matrix(&city.network, &src, &tgt)?;
    let values = (0..src.len()).flat_map(|r| (0..tgt.len()).map(move |c| (r, c))).map(|(r, c)| m.at(r, c)).collect();
    TravelTimeMatrix::new(sources.iter().map(|s| s.1).collect(), nodes.iter().map(|n| n.0).collect(), values)
}

impl Session {
    /// Generates the default city and trains a small forest on it.
    pub fn new(seed: u64) -> Result<Self> {
        let city = synth_city(seed, &SynthParams::default())?;
        let data = Dataset::from_table(&city.properties)?;
        let forest = fit_forest(&data, &ForestConfig { n_trees: 60, seed, ..ForestConfig::default() })?;
        let demand = minmax_scale(&forest.predict_dataset(&data)?)?;
        let nodes = city
            .properties
            .rows()
            .iter()
            .map(|r| Ok((r.property_id, snap_to_network(r.lon, r.lat, &city.network)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            city,
            nodes,
            demand,
            norm: TravelNorm::default(),
            sqi: Vec::new(),
            candidates: Vec::new(),
            catchments: Vec::new(),
        })
    }

    /// Scores every property against the existing stations.
    pub fn sqi_map(&mut self, t_max_s: f64, tau_l: f64, tau_h: f64) -> Result<SqiView> {
        self.norm = TravelNorm::new(TravelNorm::default().t_norm(), t_max_s)?;
        let th = SqiThresholds::new(tau_l, tau_h)?;
        let stations: Vec<(NodeId, u64)> = self.city.stations.iter().map(|s| (s.node_id, s.station_id)).collect();
        let m = to_properties(&self.city, &stations, &self.nodes)?;
        let probs: Vec<(PropertyId, f64)> = self.nodes.iter().map(|n| n.0).zip(self.demand.iter().copied()).collect();
        let ids: Vec<u64> = stations.iter().map(|s| s.1).collect();
        let report = score_all(&probs, &ids, &m, &self.norm, &th)?;
        self.sqi = report.records.iter().map(|r| (r.property_id, r.sqi_min, r.category)).collect();
        self.candidates.clear();
        self.catchments.clear();

        let rows = self.city.properties.rows();
        let points = rows
            .iter()
            .zip(&report.records)
            .zip(&self.demand)
            .map(|((p, r), &d)| MapPoint { id: p.property_id, lon: p.lon, lat: p.lat, demand: d, sqi: r.sqi_min, quality: r.category })
            .collect();
        let stations = self
            .city
            .stations
            .iter()
            .map(|s| {
                let n = self.city.network.node(s.node_id).expect("stations sit on network nodes");
                StationPoint { id: s.station_id, lon: n.lon, lat: n.lat }
            })
            .collect();
        let nodes = self.city.network.nodes();
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&firesite::geodata::Node) -> f64| {
            nodes.iter().map(pick).fold(init, f)
        };
        let bounds = [
            fold(f64::min, f64::INFINITY, |n| n.lon),
            fold(f64::min, f64::INFINITY, |n| n.lat),
            fold(f64::max, f64::NEG_INFINITY, |n| n.lon),
            fold(f64::max, f64::NEG_INFINITY, |n| n.lat),
        ];
        Ok(SqiView { points, stations, shares: CategoryShares::of(&report.records), bounds })
    }

    /// Clusters the low-quality properties of the latest scoring.
    pub fn cluster(&mut self, eps_s: f64, delta: usize) -> Result<ClusterView> {
        if self.sqi.is_empty() {
            self.sqi_map(self.norm.t_max(), 0.05, 0.16)?;
        }
        let rows = self.city.properties.rows();
        let low: Vec<usize> = (0..rows.len()).filter(|&i| self.sqi[i].2 == ServiceQuality::Low).collect();
        let nodes: Vec<(PropertyId, NodeId)> = low.iter().map(|&i| self.nodes[i]).collect();
        let sources: Vec<(NodeId, u64)> = nodes.iter().map(|&(id, n)| (n, id)).collect();
        let m = to_properties(&self.city, &sources, &nodes)?;
        let labeling = tt_dbscan(&m, &DbscanParams::new(eps_s, delta)?)?;
        let points: Vec<(PropertyId, f64, f64)> =
            low.iter().map(|&i| (rows[i].property_id, rows[i].lon, rows[i].lat)).collect();
        let sites = centroids(&labeling, &points)?;
        self.candidates = propose_candidates(&sites, &self.city.network)?;

        let mut rows_src: Vec<(NodeId, u64)> = self.city.stations.iter().map(|s| (s.node_id, s.node_id)).collect();
        rows_src.extend(self.candidates.iter().map(|c| (c.node_id, c.node_id)));
        let m = to_properties(&self.city, &rows_src, &self.nodes)?;
        let existing: Vec<NodeId> = self.city.stations.iter().map(|s| s.node_id).collect();
        let cand_nodes: Vec<NodeId> = self.candidates.iter().map(|c| c.node_id).collect();
        let props: Vec<PropertyId> = self.nodes.iter().map(|n| n.0).collect();
        self.catchments = catchments(&cand_nodes, &existing, &props, &m, &self.norm, CatchmentMode::Exclusive)?;
        for (c, cand) in self.catchments.iter_mut().zip(&self.candidates) {
            c.candidate_id = cand.candidate_id;
        }
        let exact_choice = if self.candidates.is_empty() {
            Vec::new()
        } else {
            let weights: Vec<(PropertyId, f64)> = self.sqi.iter().map(|s| (s.0, s.1)).collect();
            solve_exact(&MaxCoverInstance::new(&weights, &self.catchments, 1)?)?.selected
        };
        Ok(ClusterView {
            labels: points.iter().zip(&labeling.labels).map(|(p, l): (_, &Label)| (p.0, l.code())).collect(),
            candidates: self.candidates.clone(),
            n_clusters: labeling.n_clusters,
            exact_choice,
        })
    }

    /// Runs the epsilon-greedy campaign over the latest candidates.
    pub fn campaign(&self, epsilon: f64, iterations: usize, episodes: usize, seed: u64) -> Result<CampaignView> {
        if self.catchments.is_empty() {
            return Ok(CampaignView { summary: Vec::new(), histograms: Vec::new() });
        }
        let probs: Vec<(PropertyId, f64)> = self.nodes.iter().map(|n| n.0).zip(self.demand.iter().copied()).collect();
        let field = BernoulliField::new(&probs)?;
        let config = StochConfig { epsilon, t_max: iterations, episodes, seed, ..StochConfig::default() };
        let result = Bandit::new(&self.catchments, &field)?.run_campaign(&config)?;
        Ok(CampaignView { summary: result.summary, histograms: result.histograms })
    }
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Session::new(u64::from(seed)).map(|session| Demo { session }).map_err(|e| JsError::new(&e.to_string()))
    }

    /// JSON [`SqiView`]; `t_max` in minutes.
    #[wasm_bindgen(js_name = sqiMap)]
    pub fn sqi_map(&mut self, t_max: f64, tau_l: f64, tau_h: f64) -> std::result::Result<String, JsError> {
        js(self.session.sqi_map(t_max * 60.0, tau_l, tau_h))
    }

    /// JSON [`ClusterView`]; `eps` in minutes.
    pub fn cluster(&mut self, eps: f64, delta: u32) -> std::result::Result<String, JsError> {
        js(self.session.cluster(eps * 60.0, delta as usize))
    }

    /// JSON [`CampaignView`].
    pub fn campaign(&self, epsilon: f64, iterations: u32, episodes: u32, seed: u32) -> std::result::Result<String, JsError> {
        js(self.session.campaign(epsilon, iterations as usize, episodes as usize, u64::from(seed)))
    }
}
