use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, NodeId, Result};

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const MICROS: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub seconds: f64,
}

/// An existing or proposed fire station sitting on a network node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: u64,
    pub node_id: NodeId,
}

/// Road graph with positive edge travel times.
///
/// When `undirected` is set every edge is traversable both ways with the
/// same travel time.
#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    undirected: bool,
    index: HashMap<NodeId, usize>,
    /// Edge costs in whole microseconds, so path sums are exact.
    adjacency: Vec<Vec<(usize, u64)>>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, undirected: bool) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.lon.is_finite() && n.lat.is_finite()) {
                return Err(Error::invalid(format!("node {} has non-finite coordinates", n.node_id)));
            }
            if index.insert(n.node_id, i).is_some() {
                return Err(Error::invalid(format!("duplicate node id {}", n.node_id)));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for e in &edges {
            let from = *index.get(&e.from).ok_or(Error::UnknownNode(e.from))?;
            let to = *index.get(&e.to).ok_or(Error::UnknownNode(e.to))?;
            if !(e.seconds.is_finite() && e.seconds > 0.0) {
                return Err(Error::OutOfRange {
                    what: "edge travel time must be positive and finite",
                    value: e.seconds,
                });
            }
            let micros = ((e.seconds * MICROS).round() as u64).max(1);
            adjacency[from].push((to, micros));
            if undirected {
                adjacency[to].push((from, micros));
            }
        }
        Ok(Self {
            nodes,
            edges,
            undirected,
            index,
            adjacency,
        })
    }

    /// Reads `node_id,lon,lat` and `from,to,seconds` CSV files.
    pub fn load(nodes_path: &Path, edges_path: &Path, undirected: bool) -> Result<Self> {
        let nodes: Vec<Node> = read_csv_rows(nodes_path)?;
        let edges: Vec<Edge> = read_csv_rows(edges_path)?;
        Self::new(nodes, edges, undirected)
    }

    pub fn write(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        write_csv_rows(nodes_path, &self.nodes)?;
        write_csv_rows(edges_path, &self.edges)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn position(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    /// Single-source shortest travel times in seconds to every node,
    /// indexed by node position. Unreachable nodes stay at `+inf`.
    pub(crate) fn shortest_times(&self, source: usize) -> Vec<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let mut dist = vec![u64::MAX; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0;
        heap.push(Reverse((0u64, source)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d.saturating_add(w);
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        dist.into_iter()
            .map(|d| if d == u64::MAX { f64::INFINITY } else { d as f64 / MICROS })
            .collect()
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dlat = p2 - p1;
    let dlon = (lon2 - lon1).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Nearest node by great-circle distance; ties go to the lowest node id.
pub fn snap_to_network(lon: f64, lat: f64, network: &RoadNetwork) -> Result<NodeId> {
    network
        .nodes
        .iter()
        .map(|n| (haversine_m(lon, lat, n.lon, n.lat), n.node_id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or(Error::EmptyNetwork)
}

pub fn load_stations(path: &Path) -> Result<Vec<Station>> {
    read_csv_rows(path)
}

pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    write_csv_rows(path, stations)
}

pub(crate) fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: T = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
