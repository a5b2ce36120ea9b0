//! Catchment areas and the SQI-weighted maximum coverage problem.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodata::TravelTimeMatrix;
use crate::sqi::{CategoryShares, ServiceQuality, SqiRecord, TravelNorm};
use crate::{Error, PropertyId, Result};

/// Largest candidate set `solve_exact` accepts.
pub const EXACT_CANDIDATE_LIMIT: usize = 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatchmentMode {
    /// Properties already within reach of an existing station are left out.
    #[default]
    Exclusive,
    Inclusive,
}

impl CatchmentMode {
    pub fn name(self) -> &'static str {
        match self {
            CatchmentMode::Exclusive => "exclusive",
            CatchmentMode::Inclusive => "inclusive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exclusive" => Ok(CatchmentMode::Exclusive),
            "inclusive" => Ok(CatchmentMode::Inclusive),
            other => Err(Error::invalid(format!("unknown catchment mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catchment {
    pub candidate_id: u64,
    /// Covered properties, in input property order.
    pub covered: Vec<PropertyId>,
}

impl Catchment {
    pub fn len(&self) -> usize {
        self.covered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covered.is_empty()
    }
}

/// Properties reachable from `candidate` within `t_max`.
///
/// `matrix` rows are station and candidate ids, columns property ids. In
/// exclusive mode a property qualifies only if no existing station reaches
/// it within `t_max` either.
pub fn catchment(
    candidate: u64,
    existing: &[u64],
    properties: &[PropertyId],
    matrix: &TravelTimeMatrix,
    norm: &TravelNorm,
    mode: CatchmentMode,
) -> Result<Catchment> {
    let t_max = norm.t_max();
    let mut covered = Vec::new();
    for &j in properties {
        if matrix.try_get(candidate, j)? > t_max {
            continue;
        }
        if mode == CatchmentMode::Exclusive {
            let mut reached = false;
            for &s in existing {
                if matrix.try_get(s, j)? <= t_max {
                    reached = true;
                    break;
                }
            }
            if reached {
                continue;
            }
        }
        covered.push(j);
    }
    Ok(Catchment { candidate_id: candidate, covered })
}

/// [`catchment`] for every candidate, in candidate order.
pub fn catchments(
    candidates: &[u64],
    existing: &[u64],
    properties: &[PropertyId],
    matrix: &TravelTimeMatrix,
    norm: &TravelNorm,
    mode: CatchmentMode,
) -> Result<Vec<Catchment>> {
    candidates
        .par_iter()
        .map(|&c| catchment(c, existing, properties, matrix, norm, mode))
        .collect()
}

/// A weighted maximum coverage instance. Candidates are held in ascending
/// id order.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxCoverInstance {
    property_ids: Vec<PropertyId>,
    weights: Vec<f64>,
    candidate_ids: Vec<u64>,
    /// Property indices covered by each candidate, ascending.
    cover: Vec<Vec<usize>>,
    budget: usize,
}

impl MaxCoverInstance {
    pub fn new(properties: &[(PropertyId, f64)], catchments: &[Catchment], budget: usize) -> Result<Self> {
        if budget < 1 {
            return Err(Error::invalid("budget p must be at least 1"));
        }
        let mut index = HashMap::with_capacity(properties.len());
        for (i, &(id, w)) in properties.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::OutOfRange { what: "coverage weight", value: w });
            }
            if index.insert(id, i).is_some() {
                return Err(Error::invalid(format!("duplicate property id {id}")));
            }
        }
        let mut sorted: Vec<&Catchment> = catchments.iter().collect();
        sorted.sort_by_key(|c| c.candidate_id);
        let mut cover = Vec::with_capacity(sorted.len());
        for (k, c) in sorted.iter().enumerate() {
            if k > 0 && sorted[k - 1].candidate_id == c.candidate_id {
                return Err(Error::invalid(format!("duplicate candidate id {}", c.candidate_id)));
            }
            let mut idx: Vec<usize> = c
                .covered
                .iter()
                .map(|j| {
                    index
                        .get(j)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("catchment of {} names unknown property {j}", c.candidate_id)))
                })
                .collect::<Result<_>>()?;
            idx.sort_unstable();
            idx.dedup();
            cover.push(idx);
        }
        Ok(Self {
            property_ids: properties.iter().map(|&(id, _)| id).collect(),
            weights: properties.iter().map(|&(_, w)| w).collect(),
            candidate_ids: sorted.iter().map(|c| c.candidate_id).collect(),
            cover,
            budget,
        })
    }

    pub fn candidate_ids(&self) -> &[u64] {
        &self.candidate_ids
    }

    pub fn property_ids(&self) -> &[PropertyId] {
        &self.property_ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Number of candidates a solution selects.
    pub fn selection_size(&self) -> usize {
        self.budget.min(self.candidate_ids.len())
    }

    /// Properties covered by the given candidates, by index.
    fn covered_mask(&self, selected: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.weights.len()];
        for &c in selected {
            for &j in &self.cover[c] {
                mask[j] = true;
            }
        }
        mask
    }

    fn objective_of_indices(&self, selected: &[usize]) -> f64 {
        let mask = self.covered_mask(selected);
        self.weights.iter().zip(&mask).filter(|(_, &m)| m).map(|(w, _)| w).sum()
    }

    /// Σ SQI(j)·y_j for a selection given by candidate id, summed in
    /// property order.
    pub fn objective(&self, selected: &[u64]) -> Result<f64> {
        Ok(self.objective_of_indices(&self.indices_of(selected)?))
    }

    fn indices_of(&self, ids: &[u64]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.candidate_ids
                    .binary_search(id)
                    .map_err(|_| Error::invalid(format!("unknown candidate {id}")))
            })
            .collect()
    }

    /// Builds the solution for a selection, listed in the given order.
    pub fn solution(&self, selected: &[u64]) -> Result<CoverSolution> {
        let idx = self.indices_of(selected)?;
        Ok(self.solution_of(&idx))
    }

    fn solution_of(&self, selected: &[usize]) -> CoverSolution {
        let mut mask = vec![false; self.weights.len()];
        let mut marginal = Vec::with_capacity(selected.len());
        for &c in selected {
            let mut gain = 0.0;
            for &j in &self.cover[c] {
                if !mask[j] {
                    mask[j] = true;
                    gain += self.weights[j];
                }
            }
            marginal.push(Marginal { candidate_id: self.candidate_ids[c], gain });
        }
        CoverSolution {
            selected: selected.iter().map(|&c| self.candidate_ids[c]).collect(),
            covered: self.property_ids.iter().zip(&mask).filter(|(_, &m)| m).map(|(&id, _)| id).collect(),
            objective: self.objective_of_indices(selected),
            marginal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Marginal {
    pub candidate_id: u64,
    /// Weight newly covered when this candidate joins the ones before it.
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverSolution {
    pub selected: Vec<u64>,
    /// Covered properties, in instance property order.
    pub covered: Vec<PropertyId>,
    pub objective: f64,
    pub marginal: Vec<Marginal>,
}

/// Optimal selection of `min(p, n)` candidates by branch and bound.
///
/// Subsets are explored in lexicographic order of candidate id and only a
/// strictly better objective replaces the incumbent, so among optimal sets
/// the lexicographically smallest is returned.
pub fn solve_exact(instance: &MaxCoverInstance) -> Result<CoverSolution> {
    let n = instance.candidate_ids.len();
    if n > EXACT_CANDIDATE_LIMIT {
        return Err(Error::invalid(format!(
            "{n} candidates exceed the exact solver limit of {EXACT_CANDIDATE_LIMIT}; use the greedy solver"
        )));
    }
    let k = instance.selection_size();
    let mut search = Search {
        inst: instance,
        k,
        counts: vec![0u32; instance.weights.len()],
        stack: Vec::with_capacity(k),
        best: None,
    };
    search.descend(0, 0.0);
    let best = search.best.map(|(_, sel)| sel).unwrap_or_default();
    Ok(instance.solution_of(&best))
}

struct Search<'a> {
    inst: &'a MaxCoverInstance,
    k: usize,
    counts: Vec<u32>,
    stack: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn gain(&self, c: usize) -> f64 {
        self.inst.cover[c].iter().filter(|&&j| self.counts[j] == 0).map(|&j| self.inst.weights[j]).sum()
    }

    fn descend(&mut self, start: usize, current: f64) {
        let n = self.inst.candidate_ids.len();
        if self.stack.len() == self.k {
            let value = self.inst.objective_of_indices(&self.stack);
            if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                self.best = Some((value, self.stack.clone()));
            }
            return;
        }
        let need = self.k - self.stack.len();
        if n - start < need {
            return;
        }
        if let Some((best, _)) = &self.best {
            let mut gains: Vec<f64> = (start..n).map(|c| self.gain(c)).collect();
            gains.sort_by(|a, b| b.total_cmp(a));
            let bound = current + gains.iter().take(need).sum::<f64>();
            if bound < *best - 1e-9 * (1.0 + best.abs()) {
                return;
            }
        }
        for c in start..=(n - need) {
            let gain = self.gain(c);
            for &j in &self.inst.cover[c] {
                self.counts[j] += 1;
            }
            self.stack.push(c);
            self.descend(c + 1, current + gain);
            self.stack.pop();
            for &j in &self.inst.cover[c] {
                self.counts[j] -= 1;
            }
        }
    }
}

/// Greedy selection of `min(p, n)` candidates by largest marginal gain,
/// ties to the lowest id. Selection order is preserved in the result.
pub fn solve_greedy(instance: &MaxCoverInstance) -> CoverSolution {
    let n = instance.candidate_ids.len();
    let mut taken = vec![false; n];
    let mut mask = vec![false; instance.weights.len()];
    let mut order = Vec::with_capacity(instance.selection_size());
    for _ in 0..instance.selection_size() {
        let mut pick: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| !taken[c]) {
            let g: f64 = instance.cover[c].iter().filter(|&&j| !mask[j]).map(|&j| instance.weights[j]).sum();
            if pick.is_none_or(|(_, best)| g > best) {
                pick = Some((c, g));
            }
        }
        let (c, _) = pick.expect("selection size never exceeds candidates");
        taken[c] = true;
        for &j in &instance.cover[c] {
            mask[j] = true;
        }
        order.push(c);
    }
    instance.solution_of(&order)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryDelta {
    pub category: ServiceQuality,
    pub before_count: usize,
    pub after_count: usize,
    pub count_change: i64,
    pub before_percent: f64,
    pub after_percent: f64,
    pub point_change: f64,
    /// Percent change of the count; absent when the category was empty before.
    pub relative_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementReport {
    pub before: CategoryShares,
    pub after: CategoryShares,
    pub deltas: Vec<CategoryDelta>,
}

/// Category-share changes between two scorings of the same population.
pub fn improvement_report(before: &[SqiRecord], after: &[SqiRecord]) -> Result<ImprovementReport> {
    let a: HashSet<PropertyId> = before.iter().map(|r| r.property_id).collect();
    let b: HashSet<PropertyId> = after.iter().map(|r| r.property_id).collect();
    if a != b || a.len() != before.len() || b.len() != after.len() {
        return Err(Error::invalid("before and after scorings cover different properties"));
    }
    let sb = CategoryShares::of(before);
    let sa = CategoryShares::of(after);
    let deltas = ServiceQuality::ALL
        .iter()
        .map(|&q| {
            let (x, y) = (sb.get(q), sa.get(q));
            CategoryDelta {
                category: q,
                before_count: x.count,
                after_count: y.count,
                count_change: y.count as i64 - x.count as i64,
                before_percent: x.percent,
                after_percent: y.percent,
                point_change: y.percent - x.percent,
                relative_change: (x.count > 0)
                    .then(|| 100.0 * (y.count as f64 - x.count as f64) / x.count as f64),
            }
        })
        .collect();
    Ok(ImprovementReport { before: sb, after: sa, deltas })
}

/// Category percentages per scenario: one row per category, one column
/// per scenario label.
pub fn write_comparison_csv(path: &Path, scenarios: &[(String, CategoryShares)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["category".to_string()];
    header.extend(scenarios.iter().map(|(l, _)| l.clone()));
    w.write_record(&header)?;
    for q in ServiceQuality::ALL {
        let mut row = vec![q.label().to_string()];
        row.extend(scenarios.iter().map(|(_, s)| format!("{}", s.get(q).percent)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
