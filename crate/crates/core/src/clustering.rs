//! Travel-time DBSCAN over poorly served properties; cluster centroids
//! become candidate station sites.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodata::{snap_to_network, RoadNetwork, TravelTimeMatrix};
use crate::{Error, NodeId, PropertyId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius in seconds.
    eps: f64,
    /// Minimum neighborhood size (the point itself included) for a core point.
    delta: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, delta: usize) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        if delta == 0 {
            return Err(Error::invalid("delta must be at least 1"));
        }
        Ok(Self { eps, delta })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> usize {
        self.delta
    }
}

impl Default for DbscanParams {
    /// Two minutes, 80 properties.
    fn default() -> Self {
        Self { eps: 120.0, delta: 80 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Cluster ids start at 1.
    Cluster(u32),
    Outlier,
}

impl Label {
    pub fn cluster(self) -> Option<u32> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Outlier => None,
        }
    }

    /// Cluster id, or −1 for outliers.
    pub fn code(self) -> i64 {
        self.cluster().map_or(-1, i64::from)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Core,
    Border,
    Outlier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLabeling {
    pub labels: Vec<Label>,
    pub roles: Vec<Role>,
    pub n_clusters: u32,
}

/// Neighborhood of point `j`: every `k` with `T[k, j] <= eps`, ascending.
fn neighborhood(matrix: &TravelTimeMatrix, j: usize, eps: f64) -> Vec<usize> {
    (0..matrix.n_rows()).filter(|&k| matrix.at(k, j) <= eps).collect()
}

/// DBSCAN with travel time as the distance.
///
/// Points are visited in index order. A core point with no label opens a
/// new cluster, which grows through a FIFO frontier seeded with its
/// neighborhood in ascending order. Border points keep the first cluster
/// that reaches them; points previously marked outlier are reclaimed as
/// border points. A border point's own neighborhood is never expanded.
pub fn tt_dbscan(matrix: &TravelTimeMatrix, params: &DbscanParams) -> Result<ClusterLabeling> {
    if !matrix.is_square() {
        return Err(Error::invalid(format!(
            "clustering needs a square matrix, got {}x{}",
            matrix.n_rows(),
            matrix.n_cols()
        )));
    }
    let n = matrix.n_rows();
    let eps = params.eps;
    let neighborhoods: Vec<Vec<usize>> = (0..n).into_par_iter().map(|j| neighborhood(matrix, j, eps)).collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= params.delta).collect();

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut queued = vec![false; n];
    let mut cluster = 0u32;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        if !is_core[i] {
            labels[i] = Some(Label::Outlier);
            continue;
        }
        cluster += 1;
        labels[i] = Some(Label::Cluster(cluster));
        queued.iter_mut().for_each(|q| *q = false);
        queued[i] = true;
        let mut frontier: VecDeque<usize> = VecDeque::new();
        for &s in &neighborhoods[i] {
            if !queued[s] {
                queued[s] = true;
                frontier.push_back(s);
            }
        }
        while let Some(j) = frontier.pop_front() {
            match labels[j] {
                Some(Label::Outlier) => {
                    labels[j] = Some(Label::Cluster(cluster));
                    continue;
                }
                Some(Label::Cluster(_)) => continue,
                None => {}
            }
            labels[j] = Some(Label::Cluster(cluster));
            if !is_core[j] {
                continue;
            }
            for &k in &neighborhoods[j] {
                if !queued[k] {
                    queued[k] = true;
                    frontier.push_back(k);
                }
            }
        }
    }
    let labels: Vec<Label> = labels.into_iter().map(|l| l.expect("every point visited")).collect();
    let roles = labels
        .iter()
        .zip(&is_core)
        .map(|(l, &core)| match (l, core) {
            (_, true) => Role::Core,
            (Label::Cluster(_), false) => Role::Border,
            (Label::Outlier, false) => Role::Outlier,
        })
        .collect();
    Ok(ClusterLabeling { labels, roles, n_clusters: cluster })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateSite {
    pub candidate_id: u32,
    pub lon: f64,
    pub lat: f64,
    pub members: Vec<PropertyId>,
}

impl CandidateSite {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

/// Arithmetic-mean centroid of every cluster; `points` are
/// `(property id, lon, lat)` aligned with the labeling.
pub fn centroids(labeling: &ClusterLabeling, points: &[(PropertyId, f64, f64)]) -> Result<Vec<CandidateSite>> {
    if labeling.labels.len() != points.len() {
        return Err(Error::invalid("labeling and coordinates must be aligned"));
    }
    let k = labeling.n_clusters as usize;
    let mut sums = vec![(0.0f64, 0.0f64); k];
    let mut members: Vec<Vec<PropertyId>> = vec![Vec::new(); k];
    for (label, &(id, lon, lat)) in labeling.labels.iter().zip(points) {
        if let Label::Cluster(c) = *label {
            let c = c as usize;
            if c == 0 || c > k {
                return Err(Error::invalid(format!("label references cluster {c} of {k}")));
            }
            sums[c - 1].0 += lon;
            sums[c - 1].1 += lat;
            members[c - 1].push(id);
        }
    }
    members
        .into_iter()
        .zip(sums)
        .enumerate()
        .map(|(c, (members, (slon, slat)))| {
            if members.is_empty() {
                return Err(Error::invalid(format!("cluster {} has no members", c + 1)));
            }
            let m = members.len() as f64;
            Ok(CandidateSite {
                candidate_id: c as u32 + 1,
                lon: slon / m,
                lat: slat / m,
                members,
            })
        })
        .collect()
}

/// A candidate station: a snapped site on the road network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: u64,
    pub lon: f64,
    pub lat: f64,
    pub node_id: NodeId,
    pub member_count: usize,
}

/// Snaps each site to its nearest node; sites sharing a node collapse into
/// the first one, which absorbs the others' member counts.
pub fn propose_candidates(sites: &[CandidateSite], network: &RoadNetwork) -> Result<Vec<Candidate>> {
    let mut out: Vec<Candidate> = Vec::new();
    for s in sites {
        let node_id = snap_to_network(s.lon, s.lat, network)?;
        if let Some(existing) = out.iter_mut().find(|c| c.node_id == node_id) {
            existing.member_count += s.member_count();
            continue;
        }
        out.push(Candidate {
            candidate_id: u64::from(s.candidate_id),
            lon: s.lon,
            lat: s.lat,
            node_id,
            member_count: s.member_count(),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct ClusterRow {
    property_id: PropertyId,
    cluster_id: i64,
    role: Role,
}

/// `property_id,cluster_id,role` with −1 for outliers.
pub fn write_cluster_csv(path: &Path, ids: &[PropertyId], labeling: &ClusterLabeling) -> Result<()> {
    let rows: Vec<ClusterRow> = ids
        .iter()
        .zip(labeling.labels.iter().zip(&labeling.roles))
        .map(|(&property_id, (l, &role))| ClusterRow { property_id, cluster_id: l.code(), role })
        .collect();
    crate::geodata::write_csv_rows(path, &rows)
}

/// `candidate_id,lon,lat,node_id,member_count`.
pub fn write_candidates_csv(path: &Path, candidates: &[Candidate]) -> Result<()> {
    crate::geodata::write_csv_rows(path, candidates)
}

pub fn read_candidates_csv(path: &Path) -> Result<Vec<Candidate>> {
    crate::geodata::read_csv_rows(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{Edge, Node};

    fn euclidean(points: &[(f64, f64)]) -> TravelTimeMatrix {
        let n = points.len();
        let mut v = Vec::with_capacity(n * n);
        for a in points {
            for b in points {
                v.push(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
            }
        }
        let ids: Vec<u64> = (0..n as u64).collect();
        TravelTimeMatrix::new(ids.clone(), ids, v).unwrap()
    }

    #[test]
    fn all_far_apart_are_outliers() {
        let m = euclidean(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        let l = tt_dbscan(&m, &DbscanParams::new(5.0, 2).unwrap()).unwrap();
        assert!(l.labels.iter().all(|&x| x == Label::Outlier));
        assert_eq!(l.n_clusters, 0);
    }

    #[test]
    fn delta_one_makes_everyone_core() {
        let m = euclidean(&[(0.0, 0.0), (10.0, 0.0), (0.5, 0.0)]);
        let l = tt_dbscan(&m, &DbscanParams::new(1.0, 1).unwrap()).unwrap();
        assert!(l.roles.iter().all(|&r| r == Role::Core));
        assert_eq!(l.labels, vec![Label::Cluster(1), Label::Cluster(2), Label::Cluster(1)]);
    }

    #[test]
    fn outlier_reclaimed_as_border() {
        // Point 0 sits at the edge of the dense group that starts at index 1.
        let m = euclidean(&[(-1.0, 0.0), (0.0, 0.0), (0.1, 0.0), (0.2, 0.0)]);
        let l = tt_dbscan(&m, &DbscanParams::new(1.05, 3).unwrap()).unwrap();
        assert_eq!(l.labels, vec![Label::Cluster(1); 4]);
        assert_eq!(l.roles[0], Role::Border);
        assert_eq!(l.roles[1], Role::Core);
    }

    #[test]
    fn non_square_rejected() {
        let m = TravelTimeMatrix::new(vec![1], vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert!(tt_dbscan(&m, &DbscanParams::default()).is_err());
        assert!(DbscanParams::new(0.0, 3).is_err());
        assert!(DbscanParams::new(1.0, 0).is_err());
    }

    #[test]
    fn centroid_is_mean() {
        let labeling = ClusterLabeling {
            labels: vec![Label::Cluster(1), Label::Cluster(1), Label::Outlier],
            roles: vec![Role::Core, Role::Core, Role::Outlier],
            n_clusters: 1,
        };
        let sites = centroids(&labeling, &[(1, 0.0, 0.0), (2, 2.0, 0.0), (3, 9.0, 9.0)]).unwrap();
        assert_eq!(sites.len(), 1);
        assert_eq!((sites[0].lon, sites[0].lat), (1.0, 0.0));
        assert_eq!(sites[0].members, vec![1, 2]);

        let gap = ClusterLabeling { n_clusters: 2, ..labeling };
        assert!(centroids(&gap, &[(1, 0.0, 0.0), (2, 2.0, 0.0), (3, 9.0, 9.0)]).is_err());
    }

    #[test]
    fn candidates_snap_and_dedup() {
        let nodes = vec![
            Node { node_id: 10, lon: 0.0, lat: 0.0 },
            Node { node_id: 11, lon: 1.0, lat: 0.0 },
        ];
        let net = RoadNetwork::new(nodes, vec![Edge { from: 10, to: 11, seconds: 5.0 }], true).unwrap();
        let site = |id, lon, lat, n| CandidateSite { candidate_id: id, lon, lat, members: (0..n).collect() };
        let c = propose_candidates(&[site(1, 1.0, 0.0, 4)], &net).unwrap();
        assert_eq!(c[0].node_id, 11);
        let c = propose_candidates(&[site(1, 0.9, 0.0, 4), site(2, 1.1, 0.0, 3)], &net).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].candidate_id, c[0].member_count), (1, 7));
    }

    /// Union-find over core points; each border point joins the reachable
    /// cluster whose smallest core index is lowest.
    fn reference(m: &TravelTimeMatrix, eps: f64, delta: usize) -> Vec<Option<usize>> {
        let n = m.n_rows();
        let within = |a: usize, b: usize| m.at(a, b) <= eps;
        let core: Vec<bool> = (0..n).map(|j| (0..n).filter(|&k| within(k, j)).count() >= delta).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        // A core point j pulls in each k of its neighborhood (T[k, j] <= eps).
        for j in 0..n {
            for k in 0..n {
                if core[j] && core[k] && within(k, j) {
                    let (a, b) = (find(&mut parent, j), find(&mut parent, k));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut root: Vec<Option<usize>> = (0..n).map(|j| core[j].then(|| find(&mut parent, j))).collect();
        for j in 0..n {
            if !core[j] {
                root[j] = (0..n).filter(|&c| core[c] && within(j, c)).map(|c| find(&mut parent, c)).min();
            }
        }
        root
    }

    proptest::proptest! {
        #[test]
        fn matches_reference(
            pts in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..40),
            eps in 0.5f64..3.0,
            delta in 1usize..6,
        ) {
            let m = euclidean(&pts);
            let l = tt_dbscan(&m, &DbscanParams::new(eps, delta).unwrap()).unwrap();
            let r = reference(&m, eps, delta);
            // Same partition up to renaming: map reference roots to cluster ids.
            let mut map = std::collections::HashMap::new();
            for (j, (got, want)) in l.labels.iter().zip(&r).enumerate() {
                match (got.cluster(), want) {
                    (None, None) => {}
                    (Some(c), Some(root)) => {
                        let prev = map.insert(*root, c);
                        proptest::prop_assert!(prev.is_none_or(|p| p == c), "point {j}");
                    }
                    _ => proptest::prop_assert!(false, "point {j}: {got:?} vs {want:?}"),
                }
            }
            let mut ids: Vec<u32> = map.values().copied().collect();
            ids.sort_unstable();
            ids.dedup();
            proptest::prop_assert_eq!(ids.len(), map.len());
            proptest::prop_assert_eq!(l.n_clusters as usize, map.len());
        }
    }
}
