use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use super::RoadNetwork;
use crate::{Error, NodeId, Result};

/// Dense row-major travel times in seconds.
///
/// Rows are sources, columns are targets. Labels are free-form ids (node
/// ids straight out of [`travel_time_matrix`], property or station ids after
/// [`TravelTimeMatrix::relabel`]). Unreachable pairs hold `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct TravelTimeMatrix {
    sources: Vec<u64>,
    targets: Vec<u64>,
    values: Vec<f64>,
    source_index: HashMap<u64, usize>,
    target_index: HashMap<u64, usize>,
}

fn first_index(labels: &[u64]) -> HashMap<u64, usize> {
    let mut m = HashMap::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_insert(i);
    }
    m
}

impl TravelTimeMatrix {
    pub fn new(sources: Vec<u64>, targets: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != sources.len() * targets.len() {
            return Err(Error::invalid(format!(
                "matrix has {} values for {}x{} labels",
                values.len(),
                sources.len(),
                targets.len()
            )));
        }
        if let Some(&v) = values.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::OutOfRange {
                what: "travel times must be nonnegative",
                value: v,
            });
        }
        Ok(Self {
            source_index: first_index(&sources),
            target_index: first_index(&targets),
            sources,
            targets,
            values,
        })
    }

    pub fn sources(&self) -> &[u64] {
        &self.sources
    }

    pub fn targets(&self) -> &[u64] {
        &self.targets
    }

    pub fn n_rows(&self) -> usize {
        self.sources.len()
    }

    pub fn n_cols(&self) -> usize {
        self.targets.len()
    }

    pub fn is_square(&self) -> bool {
        self.sources.len() == self.targets.len()
    }

    /// Value by row and column position.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.targets.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.targets.len();
        &self.values[row * n..(row + 1) * n]
    }

    /// Value by labels; the first occurrence wins when labels repeat.
    pub fn get(&self, source: u64, target: u64) -> Option<f64> {
        let r = *self.source_index.get(&source)?;
        let c = *self.target_index.get(&target)?;
        Some(self.at(r, c))
    }

    pub fn try_get(&self, source: u64, target: u64) -> Result<f64> {
        self.get(source, target).ok_or(Error::MissingTravelTime {
            source_id: source,
            target_id: target,
        })
    }

    /// Same values under new labels.
    pub fn relabel(self, sources: Vec<u64>, targets: Vec<u64>) -> Result<Self> {
        if sources.len() != self.sources.len() || targets.len() != self.targets.len() {
            return Err(Error::invalid("relabel must keep the matrix shape"));
        }
        Self::new(sources, targets, self.values)
    }

    /// Transposed copy: targets become sources.
    pub fn transpose(&self) -> Self {
        let (r, c) = (self.n_rows(), self.n_cols());
        let mut values = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                values.push(self.at(i, j));
            }
        }
        Self {
            source_index: self.target_index.clone(),
            target_index: self.source_index.clone(),
            sources: self.targets.clone(),
            targets: self.sources.clone(),
            values,
        }
    }

    /// CSV with a `source` header column followed by target ids; `inf`
    /// marks unreachable pairs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "source")?;
        for t in &self.targets {
            write!(w, ",{t}")?;
        }
        writeln!(w)?;
        for (i, s) in self.sources.iter().enumerate() {
            write!(w, "{s}")?;
            for v in self.row(i) {
                if v.is_infinite() {
                    write!(w, ",inf")?;
                } else {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let mut cols = header.split(',');
        if cols.next() != Some("source") {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                message: "first header column must be `source`".into(),
            });
        }
        let parse_id = |s: &str, line: u64| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| parse_err(line, format!("bad id {s:?}: {e}")))
        };
        let targets = cols.map(|c| parse_id(c, 1)).collect::<Result<Vec<_>>>()?;
        let mut sources = Vec::new();
        let mut values = Vec::new();
        for (k, line) in lines.enumerate() {
            let lineno = k as u64 + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            sources.push(parse_id(fields.next().unwrap_or(""), lineno)?);
            let before = values.len();
            for f in fields {
                let v = match f.trim() {
                    "inf" => f64::INFINITY,
                    s => s
                        .parse::<f64>()
                        .map_err(|e| parse_err(lineno, format!("bad value {s:?}: {e}")))?,
                };
                values.push(v);
            }
            if values.len() - before != targets.len() {
                return Err(parse_err(lineno, "row width does not match header".into()));
            }
        }
        Self::new(sources, targets, values)
    }
}

/// Shortest-path travel times from every source node to every target node.
///
/// One Dijkstra run per distinct source, evaluated in parallel; the output
/// does not depend on scheduling.
pub fn travel_time_matrix(
    network: &RoadNetwork,
    sources: &[NodeId],
    targets: &[NodeId],
) -> Result<TravelTimeMatrix> {
    let src_pos = sources
        .iter()
        .map(|&s| network.position(s))
        .collect::<Result<Vec<_>>>()?;
    let tgt_pos = targets
        .iter()
        .map(|&t| network.position(t))
        .collect::<Result<Vec<_>>>()?;

    let mut distinct = src_pos.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let runs: Vec<Vec<f64>> = distinct
        .par_iter()
        .map(|&s| network.shortest_times(s))
        .collect();

    let mut values = Vec::with_capacity(sources.len() * targets.len());
    for s in &src_pos {
        let k = distinct.binary_search(s).expect("source was indexed");
        let dist = &runs[k];
        values.extend(tgt_pos.iter().map(|&t| dist[t]));
    }
    TravelTimeMatrix::new(sources.to_vec(), targets.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{Edge, Node};

    fn net(nodes: &[(u64, f64)], edges: &[(u64, u64, f64)]) -> RoadNetwork {
        RoadNetwork::new(
            nodes
                .iter()
                .map(|&(id, lon)| Node { node_id: id, lon, lat: 0.0 })
                .collect(),
            edges
                .iter()
                .map(|&(from, to, seconds)| Edge { from, to, seconds })
                .collect(),
            true,
        )
        .unwrap()
    }

    #[test]
    fn single_node() {
        let n = net(&[(4, 0.0)], &[]);
        let m = travel_time_matrix(&n, &[4], &[4]).unwrap();
        assert_eq!(m.row(0), &[0.0]);
    }

    #[test]
    fn path_graph_hand_dijkstra() {
        // a-b 60s, b-c 120s, plus a slow direct a-c road that must lose.
        let n = net(&[(1, 0.0), (2, 0.1), (3, 0.2)], &[(1, 2, 60.0), (2, 3, 120.0), (1, 3, 500.0)]);
        let m = travel_time_matrix(&n, &[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(m.get(1, 3), Some(180.0));
        assert_eq!(m.get(3, 1), Some(180.0));
        assert_eq!(m.get(2, 2), Some(0.0));
    }

    #[test]
    fn disconnected_is_infinite() {
        let n = net(&[(1, 0.0), (2, 0.1)], &[]);
        let m = travel_time_matrix(&n, &[1], &[2]).unwrap();
        assert_eq!(m.at(0, 0), f64::INFINITY);
    }

    #[test]
    fn unknown_node_errors() {
        let n = net(&[(1, 0.0)], &[]);
        assert!(matches!(travel_time_matrix(&n, &[1], &[2]), Err(Error::UnknownNode(2))));
    }

    #[test]
    fn csv_round_trip_with_inf() {
        let m = TravelTimeMatrix::new(vec![1, 2], vec![5, 6, 7], vec![0.0, 1.5, f64::INFINITY, 2.0, 0.1, 3.0]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "source,5,6,7\n1,0,1.5,inf\n2,2,0.1,3\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.save(&p).unwrap();
        assert_eq!(TravelTimeMatrix::load(&p).unwrap(), m);
    }

    #[test]
    fn transpose_swaps_lookup() {
        let m = TravelTimeMatrix::new(vec![1, 2], vec![9], vec![3.0, 4.0]).unwrap();
        let t = m.transpose();
        assert_eq!(t.get(9, 2), Some(4.0));
        assert_eq!(t.n_rows(), 1);
    }
}
