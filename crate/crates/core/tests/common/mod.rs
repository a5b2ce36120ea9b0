//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use firesite::coverage::MaxCoverInstance;
use firesite::geodata::TravelTimeMatrix;

/// Dense Euclidean distance matrix over planar points, labelled 0..n.
pub fn euclidean(points: &[(f64, f64)]) -> TravelTimeMatrix {
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

/// Result of the reference clustering: core flags and, per point, the
/// smallest core index of its cluster (None for noise).
pub struct Reference {
    pub core: Vec<bool>,
    pub cluster_key: Vec<Option<usize>>,
}

/// DBSCAN by connected components over core points. Two cores are linked
/// when either lies in the other's neighborhood; a non-core point joins
/// the cluster with the smallest key among cores whose neighborhood holds
/// it. Intended for symmetric matrices.
pub fn reference_dbscan(m: &TravelTimeMatrix, eps: f64, delta: usize) -> Reference {
    let n = m.n_rows();
    let near = |k: usize, j: usize| m.at(k, j) <= eps;
    let core: Vec<bool> = (0..n).map(|j| (0..n).filter(|&k| near(k, j)).count() >= delta).collect();
    let mut key: Vec<Option<usize>> = vec![None; n];
    for start in 0..n {
        if !core[start] || key[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        key[start] = Some(start);
        while let Some(j) = stack.pop() {
            for k in 0..n {
                if core[k] && key[k].is_none() && (near(k, j) || near(j, k)) {
                    key[k] = Some(start);
                    stack.push(k);
                }
            }
        }
    }
    for j in 0..n {
        if !core[j] {
            key[j] = (0..n).filter(|&c| core[c] && near(j, c)).filter_map(|c| key[c]).min();
        }
    }
    Reference { core, cluster_key: key }
}

/// Every selection of `min(p, n)` candidates in lexicographic order; the
/// first one reaching the maximum objective is returned.
pub fn enumerate_cover(instance: &MaxCoverInstance) -> (f64, Vec<u64>) {
    let ids = instance.candidate_ids().to_vec();
    let k = instance.selection_size();
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let sel: Vec<u64> = combo.iter().map(|&i| ids[i]).collect();
        let v = instance.objective(&sel).unwrap();
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, sel));
        }
        let mut i = k;
        loop {
            if i == 0 {
                return best.unwrap();
            }
            i -= 1;
            if combo[i] < ids.len() - k + i {
                combo[i] += 1;
                for m in i + 1..k {
                    combo[m] = combo[m - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Byte contents of every file in a directory, sorted by name.
pub fn dir_contents(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}
