//! Stage orchestration: synth, train, score, cluster, cover, campaign and
//! plan. Each stage reads its inputs from files and writes its outputs to
//! the output directory, so stages can be run one at a time or chained.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clustering::{
    centroids, propose_candidates, read_candidates_csv, tt_dbscan, write_candidates_csv, write_cluster_csv,
    Candidate, DbscanParams,
};
use crate::coverage::{
    catchments, improvement_report, solve_exact, solve_greedy, write_comparison_csv, Catchment, CatchmentMode,
    CoverSolution, MaxCoverInstance, EXACT_CANDIDATE_LIMIT,
};
use crate::demand::metrics::ClassificationReport;
use crate::demand::{
    fit_forest, grid_search, minmax_scale, read_predictions, write_predictions, Criterion, Dataset, DemandForest,
    ForestConfig, ForestGrid,
};
use crate::geodata::{
    load_properties, load_stations, snap_to_network, synth_city, travel_time_matrix, IngestConfig, PropertyTable,
    RejectRecord, RoadNetwork, Station, SynthParams, TravelTimeMatrix, FEATURE_NAMES,
};
use crate::sqi::{
    read_sqi_csv, score_all, write_sqi_csv, CategoryShares, ServiceQuality, SqiReport, SqiThresholds, TravelNorm,
};
use crate::stochastic::{write_campaign_csv, write_histogram_csv, Bandit, BernoulliField, CandidateSummary, StochConfig};
use crate::{Error, NodeId, PropertyId};

/// Pipeline failure, split by whether any stage ran.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Error,
    },
}

impl PipelineError {
    /// 2 for configuration errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Train,
    Score,
    Cluster,
    Cover,
    Campaign,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Cluster => "cluster",
            Stage::Cover => "cover",
            Stage::Campaign => "campaign",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn at(stage: Stage) -> impl Fn(Error) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

/// Every pipeline setting. Paths left unset resolve inside `out_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub properties: Option<PathBuf>,
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub directed: bool,
    pub t_norm: f64,
    pub t_max: f64,
    pub tau_l: f64,
    pub tau_h: f64,
    pub eps: f64,
    pub delta: usize,
    pub p: usize,
    pub catchment: CatchmentMode,
    pub epsilon: f64,
    pub iterations: usize,
    pub episodes: usize,
    pub q_init: f64,
    pub bins: usize,
    pub forest: ForestConfig,
    pub test_fraction: f64,
    pub grid_search: bool,
    pub folds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let stoch = StochConfig::default();
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            properties: None,
            nodes: None,
            edges: None,
            stations: None,
            model: None,
            directed: false,
            t_norm: 1200.0,
            t_max: 240.0,
            tau_l: 0.05,
            tau_h: 0.16,
            eps: 120.0,
            delta: 80,
            p: 1,
            catchment: CatchmentMode::Exclusive,
            epsilon: stoch.epsilon,
            iterations: stoch.t_max,
            episodes: stoch.episodes,
            q_init: stoch.q_init,
            bins: stoch.bins,
            forest: ForestConfig::default(),
            test_fraction: 0.2,
            grid_search: false,
            folds: 5,
        }
    }
}

/// Keys accepted by [`PipelineConfig::set`], in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "out_dir",
    "seed",
    "properties",
    "nodes",
    "edges",
    "stations",
    "model",
    "directed",
    "t_norm",
    "t_max",
    "tau_l",
    "tau_h",
    "eps",
    "delta",
    "p",
    "catchment",
    "epsilon",
    "iterations",
    "episodes",
    "q_init",
    "bins",
    "n_trees",
    "max_depth",
    "min_samples_leaf",
    "min_samples_split",
    "mtry",
    "criterion",
    "bootstrap",
    "test_fraction",
    "grid_search",
    "folds",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> PipelineResult<T> {
    value
        .parse()
        .map_err(|_| PipelineError::Validation(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> PipelineResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Validation(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl PipelineConfig {
    /// Reads `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> PipelineResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> PipelineResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Validation(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| PipelineError::Validation(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> PipelineResult<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "properties" => self.properties = path(),
            "nodes" => self.nodes = path(),
            "edges" => self.edges = path(),
            "stations" => self.stations = path(),
            "model" => self.model = path(),
            "directed" => self.directed = parse_bool(key, value)?,
            "t_norm" => self.t_norm = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "tau_l" => self.tau_l = parse(key, value)?,
            "tau_h" => self.tau_h = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "catchment" => {
                self.catchment = CatchmentMode::parse(value).map_err(|e| PipelineError::Validation(e.to_string()))?
            }
            "epsilon" => self.epsilon = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "q_init" => self.q_init = parse(key, value)?,
            "bins" => self.bins = parse(key, value)?,
            "n_trees" => self.forest.n_trees = parse(key, value)?,
            "max_depth" => self.forest.max_depth = parse(key, value)?,
            "min_samples_leaf" => self.forest.min_samples_leaf = parse(key, value)?,
            "min_samples_split" => self.forest.min_samples_split = parse(key, value)?,
            "mtry" => self.forest.mtry = parse(key, value)?,
            "criterion" => {
                self.forest.criterion = Criterion::parse(value)
                    .ok_or_else(|| PipelineError::Validation(format!("criterion: unknown {value:?}")))?
            }
            "bootstrap" => self.forest.bootstrap = parse_bool(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "grid_search" => self.grid_search = parse_bool(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            other => return Err(PipelineError::Validation(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Checks parameter invariants without touching the filesystem.
    pub fn validate(&self) -> PipelineResult<()> {
        let v = |e: Error| PipelineError::Validation(e.to_string());
        self.norm().map_err(v)?;
        self.thresholds().map_err(v)?;
        self.dbscan().map_err(v)?;
        if self.p < 1 {
            return Err(PipelineError::Validation("budget p must be at least 1".into()));
        }
        self.stoch().validate().map_err(v)?;
        self.forest_config().validate(FEATURE_NAMES.len()).map_err(v)?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PipelineError::Validation("test_fraction must lie strictly between 0 and 1".into()));
        }
        if self.grid_search && self.folds < 2 {
            return Err(PipelineError::Validation("folds must be at least 2".into()));
        }
        Ok(())
    }

    fn require(&self, paths: &[PathBuf]) -> PipelineResult<()> {
        self.validate()?;
        for p in paths {
            if !p.is_file() {
                return Err(PipelineError::Validation(format!("input file {} not found", p.display())));
            }
        }
        Ok(())
    }

    fn resolve(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(default))
    }

    pub fn properties_path(&self) -> PathBuf {
        self.resolve(&self.properties, "properties.csv")
    }

    pub fn nodes_path(&self) -> PathBuf {
        self.resolve(&self.nodes, "nodes.csv")
    }

    pub fn edges_path(&self) -> PathBuf {
        self.resolve(&self.edges, "edges.csv")
    }

    pub fn stations_path(&self) -> PathBuf {
        self.resolve(&self.stations, "stations.csv")
    }

    pub fn model_path(&self) -> PathBuf {
        self.resolve(&self.model, "model.txt")
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn norm(&self) -> crate::Result<TravelNorm> {
        TravelNorm::new(self.t_norm, self.t_max)
    }

    pub fn thresholds(&self) -> crate::Result<SqiThresholds> {
        SqiThresholds::new(self.tau_l, self.tau_h)
    }

    pub fn dbscan(&self) -> crate::Result<DbscanParams> {
        DbscanParams::new(self.eps, self.delta)
    }

    pub fn stoch(&self) -> StochConfig {
        StochConfig {
            epsilon: self.epsilon,
            t_max: self.iterations,
            episodes: self.episodes,
            p: self.p,
            seed: self.seed,
            q_init: self.q_init,
            bins: self.bins,
        }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig { seed: self.seed, ..self.forest.clone() }
    }

    fn network_inputs(&self) -> Vec<PathBuf> {
        vec![self.nodes_path(), self.edges_path(), self.stations_path(), self.properties_path()]
    }
}

/// What a stage wrote, plus anything worth telling the user.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReport {
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl StageReport {
    fn merge(&mut self, other: StageReport) {
        self.outputs.extend(other.outputs);
        self.notes.extend(other.notes);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_out_dir(config: &PipelineConfig, stage: Stage) -> PipelineResult<()> {
    fs::create_dir_all(&config.out_dir).map_err(|e| at(stage)(Error::io(&config.out_dir, e)))
}

fn load_table(config: &PipelineConfig, ingest: IngestConfig, stage: Stage) -> PipelineResult<(PropertyTable, StageReport)> {
    let report = load_properties(&config.properties_path(), &ingest).map_err(at(stage))?;
    let mut out = StageReport::default();
    if !report.rejects.is_empty() {
        let path = config.output("rejects.csv");
        write_rejects(&path, &report.rejects).map_err(at(stage))?;
        let first = &report.rejects[0];
        out.notes.push(format!(
            "{} property rows rejected, first at line {}: {}",
            report.rejects.len(),
            first.line,
            first.reason
        ));
        out.outputs.push(path);
    }
    if report.table.is_empty() {
        return Err(at(stage)(Error::Degenerate("no valid property rows".into())));
    }
    Ok((report.table, out))
}

fn write_rejects(path: &Path, rejects: &[RejectRecord]) -> crate::Result<()> {
    crate::geodata::write_csv_rows(path, rejects)
}

/// Writes a synthetic city into the output directory.
pub fn cmd_synth(config: &PipelineConfig) -> PipelineResult<StageReport> {
    config.validate()?;
    ensure_out_dir(config, Stage::Synth)?;
    let city = synth_city(config.seed, &SynthParams::default()).map_err(at(Stage::Synth))?;
    city.write(&config.out_dir).map_err(at(Stage::Synth))?;
    Ok(StageReport {
        outputs: ["nodes.csv", "edges.csv", "properties.csv", "stations.csv", "truth.csv"]
            .iter()
            .map(|f| config.output(f))
            .collect(),
        notes: vec![format!("{} properties, {} nodes", city.properties.len(), city.network.len())],
    })
}

#[derive(Serialize)]
struct TrainMetrics {
    n_train: usize,
    n_test: usize,
    test: ClassificationReport,
    oob_accuracy: f64,
    oob_scored: usize,
    n_trees: usize,
    max_depth: usize,
    min_samples_leaf: usize,
    min_samples_split: usize,
    mtry: usize,
    criterion: &'static str,
    bootstrap: bool,
    seed: u64,
}

#[derive(Serialize)]
struct ImportanceRow<'a> {
    rank: usize,
    feature: &'a str,
    importance: f64,
}

/// Seeded shuffle of row indices, split into `(train, test)` with
/// `round(n · fraction)` test rows.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    idx.shuffle(&mut rng);
    let n_test = ((n as f64) * fraction).round() as usize;
    let test = idx.split_off(n - n_test.min(n));
    let mut train = idx;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    (train, test)
}

/// Trains the demand forest on a seeded 80/20 split and writes the model,
/// held-out metrics and the importance ranking.
pub fn cmd_train(config: &PipelineConfig) -> PipelineResult<StageReport> {
    config.require(&[config.properties_path()])?;
    ensure_out_dir(config, Stage::Train)?;
    let stage = at(Stage::Train);
    let (table, mut report) = load_table(config, IngestConfig { require_incident: true, ..Default::default() }, Stage::Train)?;
    let data = Dataset::from_table(&table).map_err(&stage)?;
    let (train_idx, test_idx) = train_test_split(data.len(), config.test_fraction, config.seed);
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);

    let forest_config = if config.grid_search {
        let grid = ForestGrid::standard(config.forest_config());
        let result = grid_search(&train, &grid, config.folds, config.seed).map_err(&stage)?;
        let best = result.cells.iter().find(|c| c.config == result.best).map_or(0.0, |c| c.mean_accuracy);
        report.notes.push(format!("grid search picked mean fold accuracy {best:.4}"));
        result.best
    } else {
        config.forest_config()
    };
    let forest = fit_forest(&train, &forest_config).map_err(&stage)?;
    let probs = forest.predict_dataset(&test).map_err(&stage)?;
    let oob = forest.oob_score(&train).map_err(&stage)?;
    let c = forest.config();
    let metrics = TrainMetrics {
        n_train: train.len(),
        n_test: test.len(),
        test: ClassificationReport::compute(&probs, test.labels()),
        oob_accuracy: oob.accuracy,
        oob_scored: oob.scored,
        n_trees: c.n_trees,
        max_depth: c.max_depth,
        min_samples_leaf: c.min_samples_leaf,
        min_samples_split: c.min_samples_split,
        mtry: c.mtry,
        criterion: c.criterion.name(),
        bootstrap: c.bootstrap,
        seed: c.seed,
    };

    let model = config.model_path();
    forest.save(&model).map_err(&stage)?;
    let metrics_path = config.output("metrics.json");
    write_json(&metrics_path, &metrics).map_err(&stage)?;

    let importance = forest.feature_importance();
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    let rows: Vec<ImportanceRow> = order
        .iter()
        .enumerate()
        .map(|(rank, &f)| ImportanceRow { rank: rank + 1, feature: &forest.feature_names()[f], importance: importance[f] })
        .collect();
    let importance_path = config.output("importance.csv");
    crate::geodata::write_csv_rows(&importance_path, &rows).map_err(&stage)?;

    report.outputs.extend([model, metrics_path, importance_path]);
    report.notes.push(format!(
        "held-out accuracy {:.4}, AUC {:.4}, OOB accuracy {:.4}",
        metrics.test.accuracy, metrics.test.auc, metrics.oob_accuracy
    ));
    Ok(report)
}

struct Inputs {
    network: RoadNetwork,
    stations: Vec<Station>,
    table: PropertyTable,
    notes: StageReport,
}

fn load_inputs(config: &PipelineConfig, stage: Stage) -> PipelineResult<Inputs> {
    let e = at(stage);
    let network = RoadNetwork::load(&config.nodes_path(), &config.edges_path(), !config.directed).map_err(&e)?;
    let stations = load_stations(&config.stations_path()).map_err(&e)?;
    for s in &stations {
        if network.node(s.node_id).is_none() {
            return Err(e(Error::UnknownNode(s.node_id)));
        }
    }
    let (table, notes) = load_table(config, IngestConfig::default(), stage)?;
    Ok(Inputs { network, stations, table, notes })
}

/// Travel times from `sources` (node, label) to every property, labelled
/// by the source labels and property ids.
fn times_to_properties(
    network: &RoadNetwork,
    sources: &[(NodeId, u64)],
    properties: &[(PropertyId, NodeId)],
) -> crate::Result<TravelTimeMatrix> {
    let source_nodes: Vec<NodeId> = sources.iter().map(|s| s.0).collect();
    let mut targets: Vec<NodeId> = properties.iter().map(|p| p.1).collect();
    targets.sort_unstable();
    targets.dedup();
    let m = travel_time_matrix(network, &source_nodes, &targets)?;
    let mut values = Vec::with_capacity(sources.len() * properties.len());
    for &(node, _) in sources {
        for &(_, pn) in properties {
            values.push(m.try_get(node, pn)?);
        }
    }
    TravelTimeMatrix::new(
        sources.iter().map(|s| s.1).collect(),
        properties.iter().map(|p| p.0).collect(),
        values,
    )
}

fn snap_properties(table: &PropertyTable, network: &RoadNetwork) -> crate::Result<Vec<(PropertyId, NodeId)>> {
    use rayon::prelude::*;
    table
        .rows()
        .par_iter()
        .map(|r| Ok((r.property_id, snap_to_network(r.lon, r.lat, network)?)))
        .collect()
}

/// Demand probabilities for every property: the table's own
/// `demand_prob` column when present, otherwise the trained model's
/// min-max scaled scores.
fn demand_probabilities(config: &PipelineConfig, table: &PropertyTable, stage: Stage) -> PipelineResult<(Vec<f64>, String)> {
    if let Some(p) = table.demand_probs() {
        return Ok((p, "demand_prob column".to_string()));
    }
    let e = at(stage);
    let model = config.model_path();
    if !model.is_file() {
        return Err(e(Error::invalid(format!(
            "properties have no demand_prob column and no model exists at {}",
            model.display()
        ))));
    }
    let forest = DemandForest::load(&model).map_err(&e)?;
    let raw: Vec<f64> = table
        .rows()
        .iter()
        .map(|r| forest.predict_proba(&r.features()))
        .collect::<crate::Result<_>>()
        .map_err(&e)?;
    let name = model.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Ok((minmax_scale(&raw).map_err(&e)?, format!("model {name}")))
}

fn score(
    config: &PipelineConfig,
    network: &RoadNetwork,
    stations: &[(NodeId, u64)],
    probs: &[(PropertyId, f64)],
    nodes: &[(PropertyId, NodeId)],
) -> crate::Result<SqiReport> {
    let matrix = times_to_properties(network, stations, nodes)?;
    let ids: Vec<u64> = stations.iter().map(|s| s.1).collect();
    score_all(probs, &ids, &matrix, &config.norm()?, &config.thresholds()?)
}

#[derive(Serialize)]
struct SqiSummary {
    demand_source: String,
    shares: CategoryShares,
    clamped_pairs: usize,
}

/// Predicts demand, computes SQI against the existing stations and
/// writes `predictions.csv`, `sqi.csv` and `sqi_summary.json`.
pub fn cmd_score(config: &PipelineConfig) -> PipelineResult<StageReport> {
    config.require(&config.network_inputs())?;
    ensure_out_dir(config, Stage::Score)?;
    let e = at(Stage::Score);
    let Inputs { network, stations, table, notes: mut report } = load_inputs(config, Stage::Score)?;
    let (probs, source) = demand_probabilities(config, &table, Stage::Score)?;
    let ids = table.ids();
    let predictions = config.output("predictions.csv");
    write_predictions(&predictions, &ids, &probs).map_err(&e)?;

    let nodes = snap_properties(&table, &network).map_err(&e)?;
    let pairs: Vec<(PropertyId, f64)> = ids.iter().copied().zip(probs.iter().copied()).collect();
    let station_sources: Vec<(NodeId, u64)> = stations.iter().map(|s| (s.node_id, s.station_id)).collect();
    let sqi = score(config, &network, &station_sources, &pairs, &nodes).map_err(&e)?;
    let sqi_path = config.output("sqi.csv");
    write_sqi_csv(&sqi_path, &sqi.records).map_err(&e)?;
    let shares = CategoryShares::of(&sqi.records);
    let summary_path = config.output("sqi_summary.json");
    write_json(&summary_path, &SqiSummary { demand_source: source, shares, clamped_pairs: sqi.clamped_pairs })
        .map_err(&e)?;

    report.outputs.extend([predictions, sqi_path, summary_path]);
    report.notes.push(format!(
        "SQI low {:.1}%, medium {:.1}%, high {:.1}%",
        shares.low.percent, shares.medium.percent, shares.high.percent
    ));
    Ok(report)
}

/// Clusters the low-quality properties by travel time and writes
/// `clusters.csv` and `candidates.csv`.
pub fn cmd_cluster(config: &PipelineConfig) -> PipelineResult<StageReport> {
    let sqi_path = config.output("sqi.csv");
    let mut inputs = config.network_inputs();
    inputs.push(sqi_path.clone());
    config.require(&inputs)?;
    let e = at(Stage::Cluster);
    let Inputs { network, table, notes: mut report, .. } = load_inputs(config, Stage::Cluster)?;
    let low: std::collections::HashSet<PropertyId> = read_sqi_csv(&sqi_path)
        .map_err(&e)?
        .into_iter()
        .filter(|r| r.category == ServiceQuality::Low)
        .map(|r| r.property_id)
        .collect();
    let rows: Vec<_> = table.rows().iter().filter(|r| low.contains(&r.property_id)).collect();
    let ids: Vec<PropertyId> = rows.iter().map(|r| r.property_id).collect();
    let points: Vec<(PropertyId, f64, f64)> = rows.iter().map(|r| (r.property_id, r.lon, r.lat)).collect();
    let nodes: Vec<(PropertyId, NodeId)> = rows
        .iter()
        .map(|r| Ok((r.property_id, snap_to_network(r.lon, r.lat, &network)?)))
        .collect::<crate::Result<_>>()
        .map_err(&e)?;
    let sources: Vec<(NodeId, u64)> = nodes.iter().map(|&(id, n)| (n, id)).collect();
    let matrix = times_to_properties(&network, &sources, &nodes).map_err(&e)?;
    let labeling = tt_dbscan(&matrix, &config.dbscan().map_err(&e)?).map_err(&e)?;
    let sites = centroids(&labeling, &points).map_err(&e)?;
    let candidates = propose_candidates(&sites, &network).map_err(&e)?;

    let clusters_path = config.output("clusters.csv");
    write_cluster_csv(&clusters_path, &ids, &labeling).map_err(&e)?;
    let candidates_path = config.output("candidates.csv");
    write_candidates_csv(&candidates_path, &candidates).map_err(&e)?;
    report.outputs.extend([clusters_path, candidates_path]);
    report.notes.push(format!(
        "{} low-quality properties, {} clusters, {} candidates",
        ids.len(),
        labeling.n_clusters,
        candidates.len()
    ));
    Ok(report)
}

struct CoverInputs {
    network: RoadNetwork,
    stations: Vec<Station>,
    candidates: Vec<Candidate>,
    nodes: Vec<(PropertyId, NodeId)>,
    catchments: Vec<Catchment>,
    notes: StageReport,
}

fn cover_inputs(config: &PipelineConfig, stage: Stage) -> PipelineResult<CoverInputs> {
    let candidates_path = config.output("candidates.csv");
    let mut inputs = config.network_inputs();
    inputs.push(candidates_path.clone());
    config.require(&inputs)?;
    let e = at(stage);
    let Inputs { network, stations, table, notes } = load_inputs(config, stage)?;
    let candidates = read_candidates_csv(&candidates_path).map_err(&e)?;
    let nodes = snap_properties(&table, &network).map_err(&e)?;
    // Rows are labelled by node so candidates and stations share one matrix.
    let mut sources: Vec<(NodeId, u64)> = stations.iter().map(|s| (s.node_id, s.node_id)).collect();
    sources.extend(candidates.iter().map(|c| (c.node_id, c.node_id)));
    let matrix = times_to_properties(&network, &sources, &nodes).map_err(&e)?;
    let existing: Vec<NodeId> = stations.iter().map(|s| s.node_id).collect();
    let cand_nodes: Vec<NodeId> = candidates.iter().map(|c| c.node_id).collect();
    let props: Vec<PropertyId> = nodes.iter().map(|n| n.0).collect();
    let mut catchments = catchments(&cand_nodes, &existing, &props, &matrix, &config.norm().map_err(&e)?, config.catchment)
        .map_err(&e)?;
    for (c, cand) in catchments.iter_mut().zip(&candidates) {
        c.candidate_id = cand.candidate_id;
    }
    Ok(CoverInputs { network, stations, candidates, nodes, catchments, notes })
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    method: &'a str,
    budget: usize,
    catchment: &'a str,
    #[serde(flatten)]
    solution: &'a CoverSolution,
}

#[derive(Serialize)]
struct CatchmentRow {
    candidate_id: u64,
    property_id: PropertyId,
}

/// Solves the coverage problem over the proposed candidates with both
/// solvers, then rescores SQI with the exact selection added.
pub fn cmd_cover(config: &PipelineConfig) -> PipelineResult<StageReport> {
    let sqi_path = config.output("sqi.csv");
    let predictions_path = config.output("predictions.csv");
    let CoverInputs { network, stations, candidates, nodes, catchments, notes: mut report } =
        cover_inputs(config, Stage::Cover)?;
    config.require(&[sqi_path.clone(), predictions_path.clone()])?;
    let e = at(Stage::Cover);
    let sqi_rows = read_sqi_csv(&sqi_path).map_err(&e)?;
    let weights: HashMap<PropertyId, f64> = sqi_rows.iter().map(|r| (r.property_id, r.sqi_min)).collect();
    let weighted: Vec<(PropertyId, f64)> = nodes
        .iter()
        .map(|&(id, _)| {
            weights
                .get(&id)
                .map(|&w| (id, w))
                .ok_or_else(|| Error::invalid(format!("property {id} missing from sqi.csv")))
        })
        .collect::<crate::Result<_>>()
        .map_err(&e)?;

    let catchment_rows: Vec<CatchmentRow> = catchments
        .iter()
        .flat_map(|c| c.covered.iter().map(move |&j| CatchmentRow { candidate_id: c.candidate_id, property_id: j }))
        .collect();
    let catchment_path = config.output("catchments.csv");
    crate::geodata::write_csv_rows(&catchment_path, &catchment_rows).map_err(&e)?;
    report.outputs.push(catchment_path);

    if candidates.is_empty() {
        report.notes.push("no candidates to select from".into());
        return Ok(report);
    }
    let instance = MaxCoverInstance::new(&weighted, &catchments, config.p).map_err(&e)?;
    let greedy = solve_greedy(&instance);
    let exact = if instance.candidate_ids().len() <= EXACT_CANDIDATE_LIMIT {
        Some(solve_exact(&instance).map_err(&e)?)
    } else {
        report.notes.push(format!(
            "{} candidates exceed the exact solver limit; only greedy was run",
            instance.candidate_ids().len()
        ));
        None
    };
    let mode = config.catchment.name();
    let greedy_path = config.output("cover_greedy.json");
    write_json(&greedy_path, &SolutionFile { method: "greedy", budget: config.p, catchment: mode, solution: &greedy })
        .map_err(&e)?;
    report.outputs.push(greedy_path);
    if let Some(exact) = &exact {
        let exact_path = config.output("cover_exact.json");
        write_json(&exact_path, &SolutionFile { method: "exact", budget: config.p, catchment: mode, solution: exact })
            .map_err(&e)?;
        report.outputs.push(exact_path);
    }

    // Rescore with each candidate alone and with the chosen selection.
    let probs: HashMap<PropertyId, f64> = read_predictions(&predictions_path).map_err(&e)?.into_iter().collect();
    let pairs: Vec<(PropertyId, f64)> = nodes
        .iter()
        .map(|&(id, _)| {
            probs
                .get(&id)
                .map(|&p| (id, p))
                .ok_or_else(|| Error::invalid(format!("property {id} missing from predictions.csv")))
        })
        .collect::<crate::Result<_>>()
        .map_err(&e)?;
    let base: Vec<(NodeId, u64)> = stations.iter().map(|s| (s.node_id, s.station_id)).collect();
    let next_id = stations.iter().map(|s| s.station_id).max().map_or(1, |m| m + 1);
    let with = |ids: &[u64]| -> crate::Result<SqiReport> {
        let mut sources = base.clone();
        for (k, id) in ids.iter().enumerate() {
            let cand = candidates.iter().find(|c| c.candidate_id == *id).expect("selected ids come from candidates");
            sources.push((cand.node_id, next_id + k as u64));
        }
        score(config, &network, &sources, &pairs, &nodes)
    };
    let before = with(&[]).map_err(&e)?;
    let mut scenarios = vec![("existing".to_string(), CategoryShares::of(&before.records))];
    for c in &candidates {
        let r = with(&[c.candidate_id]).map_err(&e)?;
        scenarios.push((format!("existing+{}", c.candidate_id), CategoryShares::of(&r.records)));
    }
    let chosen = exact.as_ref().unwrap_or(&greedy);
    let mut selected = chosen.selected.clone();
    selected.sort_unstable();
    let after = with(&selected).map_err(&e)?;
    if selected.len() > 1 {
        let label = selected.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
        scenarios.push((format!("existing+{label}"), CategoryShares::of(&after.records)));
    }
    let improvement = improvement_report(&before.records, &after.records).map_err(&e)?;

    let after_path = config.output("sqi_after.csv");
    write_sqi_csv(&after_path, &after.records).map_err(&e)?;
    let improvement_path = config.output("improvement.json");
    write_json(&improvement_path, &improvement).map_err(&e)?;
    let comparison_path = config.output("comparison.csv");
    write_comparison_csv(&comparison_path, &scenarios).map_err(&e)?;
    report.outputs.extend([after_path, improvement_path, comparison_path]);
    report.notes.push(format!(
        "exact selection {:?}, greedy selection {:?}",
        exact.as_ref().map(|s| &s.selected),
        greedy.selected
    ));
    Ok(report)
}

#[derive(Serialize)]
struct CampaignSummary<'a> {
    config: StochConfig,
    catchment: &'a str,
    candidates: &'a [CandidateSummary],
    winner: Option<u64>,
}

/// Runs the stochastic campaign over the proposed candidates.
pub fn cmd_campaign(config: &PipelineConfig) -> PipelineResult<StageReport> {
    let predictions_path = config.output("predictions.csv");
    let CoverInputs { catchments, notes: mut report, .. } = cover_inputs(config, Stage::Campaign)?;
    config.require(&[predictions_path.clone()])?;
    let e = at(Stage::Campaign);
    if catchments.is_empty() {
        report.notes.push("no candidates to simulate".into());
        return Ok(report);
    }
    let probs = read_predictions(&predictions_path).map_err(&e)?;
    let field = BernoulliField::new(&probs).map_err(&e)?;
    let stoch = config.stoch();
    let result = Bandit::new(&catchments, &field).and_then(|b| b.run_campaign(&stoch)).map_err(&e)?;

    let campaign_path = config.output("campaign.csv");
    write_campaign_csv(&campaign_path, &result).map_err(&e)?;
    let histogram_path = config.output("histogram.csv");
    write_histogram_csv(&histogram_path, &result).map_err(&e)?;
    let winner = result.winner().map(|w| w.candidate_id);
    let summary_path = config.output("campaign_summary.json");
    write_json(
        &summary_path,
        &CampaignSummary { config: stoch, catchment: config.catchment.name(), candidates: &result.summary, winner },
    )
    .map_err(&e)?;
    report.outputs.extend([campaign_path, histogram_path, summary_path]);
    if let Some(w) = result.winner() {
        report.notes.push(format!("candidate {} wins {:.1}% of episodes", w.candidate_id, 100.0 * w.win_rate));
    }
    Ok(report)
}

/// Runs score, cluster, cover and campaign in order, training first when
/// the properties carry labels but neither a demand column nor a model.
pub fn cmd_plan(config: &PipelineConfig) -> PipelineResult<StageReport> {
    config.require(&config.network_inputs())?;
    let mut report = StageReport::default();
    let (table, _) = load_table(config, IngestConfig::default(), Stage::Score)?;
    if table.demand_probs().is_none() && !config.model_path().is_file() {
        report.merge(cmd_train(config)?);
    }
    report.merge(cmd_score(config)?);
    report.merge(cmd_cluster(config)?);
    report.merge(cmd_cover(config)?);
    report.merge(cmd_campaign(config)?);
    report.outputs.dedup();
    Ok(report)
}
