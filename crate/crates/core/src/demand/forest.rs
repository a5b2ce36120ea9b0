use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::dataset::{Dataset, FeatureKind};
use super::tree::{DecisionTree, GrowParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Criterion {
    #[default]
    Gini,
    Entropy,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Gini => "gini",
            Criterion::Entropy => "entropy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gini" => Some(Criterion::Gini),
            "entropy" => Some(Criterion::Entropy),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Features sampled per split.
    pub mtry: usize,
    pub criterion: Criterion,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    /// 300 trees of depth 8, 3 features per split, leaves of at least 30.
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 8,
            min_samples_leaf: 30,
            min_samples_split: 2,
            mtry: 3,
            criterion: Criterion::Gini,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::invalid(format!(
                "mtry must lie in 1..={n_features}, got {}",
                self.mtry
            )));
        }
        Ok(())
    }
}

/// Trained random forest with per-tree out-of-bag rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandForest {
    pub(crate) config: ForestConfig,
    pub(crate) names: Vec<String>,
    pub(crate) kinds: Vec<FeatureKind>,
    pub(crate) trees: Vec<DecisionTree>,
    /// Sorted training-row indices left out of each tree's bootstrap sample.
    pub(crate) oob: Vec<Vec<usize>>,
    pub(crate) n_train: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OobScore {
    pub accuracy: f64,
    pub scored: usize,
    /// Rows that every tree trained on.
    pub excluded: usize,
}

/// Trains one CART tree per RNG stream derived from `config.seed`.
pub fn fit_forest(data: &Dataset, config: &ForestConfig) -> Result<DemandForest> {
    config.validate(data.n_features())?;
    let pos = data.labels().iter().filter(|&&y| y).count();
    let neg = data.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::Degenerate(format!(
            "training needs at least 2 rows of each class (got {pos} positive, {neg} negative)"
        )));
    }
    let params = GrowParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        min_samples_split: config.min_samples_split,
        mtry: config.mtry,
        criterion: config.criterion,
    };
    let n = data.len();
    let grown: Vec<(DecisionTree, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let (rows, oob) = if config.bootstrap {
                let mut hit = vec![false; n];
                let rows: Vec<usize> = (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        hit[i] = true;
                        i
                    })
                    .collect();
                let oob = (0..n).filter(|&i| !hit[i]).collect();
                (rows, oob)
            } else {
                ((0..n).collect(), Vec::new())
            };
            (DecisionTree::grow(data, rows, &params, &mut rng), oob)
        })
        .collect();
    let (trees, oob) = grown.into_iter().unzip();
    Ok(DemandForest {
        config: config.clone(),
        names: data.names().to_vec(),
        kinds: data.kinds().to_vec(),
        trees,
        oob,
        n_train: n,
    })
}

impl DemandForest {
    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn oob_rows(&self) -> &[Vec<usize>] {
        &self.oob
    }

    /// Mean positive-leaf fraction over all trees.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.kinds.len() {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, model expects {}",
                row.len(),
                self.kinds.len()
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.len())
            .into_par_iter()
            .map(|i| self.predict_proba(data.row(i)))
            .collect()
    }

    /// Majority vote of the trees that did not see each row; a tree votes
    /// positive when its leaf fraction exceeds one half, and a tied vote
    /// counts as negative.
    pub fn oob_score(&self, data: &Dataset) -> Result<OobScore> {
        if !self.config.bootstrap {
            return Err(Error::invalid("out-of-bag score requires bootstrap sampling"));
        }
        if data.len() != self.n_train {
            return Err(Error::invalid(format!(
                "forest was trained on {} rows, got {}",
                self.n_train,
                data.len()
            )));
        }
        let mut votes = vec![(0usize, 0usize); data.len()];
        for (tree, oob) in self.trees.iter().zip(&self.oob) {
            for &i in oob {
                let v = &mut votes[i];
                v.0 += 1;
                v.1 += (tree.predict(data.row(i)) > 0.5) as usize;
            }
        }
        let (mut scored, mut correct) = (0, 0);
        for (i, &(total, positive)) in votes.iter().enumerate() {
            if total == 0 {
                continue;
            }
            scored += 1;
            correct += ((2 * positive > total) == data.labels()[i]) as usize;
        }
        if scored == 0 {
            return Err(Error::Degenerate("no row is out-of-bag for any tree".into()));
        }
        Ok(OobScore {
            accuracy: correct as f64 / scored as f64,
            scored,
            excluded: data.len() - scored,
        })
    }

    /// Mean weighted impurity decrease per feature, normalized to sum 1.
    /// A forest without a single split spreads weight uniformly.
    pub fn feature_importance(&self) -> Vec<f64> {
        let k = self.kinds.len();
        let mut total = vec![0.0; k];
        for t in &self.trees {
            for (acc, v) in total.iter_mut().zip(t.importances(k)) {
                *acc += v;
            }
        }
        let s: f64 = total.iter().sum();
        if s <= 0.0 {
            return vec![1.0 / k as f64; k];
        }
        total.iter().map(|v| v / s).collect()
    }
}
