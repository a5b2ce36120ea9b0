use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::dataset::Dataset;
use super::forest::{fit_forest, Criterion, ForestConfig};
use super::metrics::accuracy;
use crate::{Error, Result};

/// Cartesian lattice of forest settings; fields not swept come from `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForestGrid {
    pub base: ForestConfig,
    pub criterion: Vec<Criterion>,
    pub max_depth: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub mtry: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl ForestGrid {
    /// Criterion {entropy, gini}, depth {2..10 step 2}, trees
    /// {100..400 step 100}, mtry 3, leaf {30, 40, 50}.
    pub fn standard(base: ForestConfig) -> Self {
        Self {
            base,
            criterion: vec![Criterion::Entropy, Criterion::Gini],
            max_depth: vec![2, 4, 6, 8, 10],
            n_trees: vec![100, 200, 300, 400],
            mtry: vec![3],
            min_samples_leaf: vec![30, 40, 50],
        }
    }

    pub fn single(config: ForestConfig) -> Self {
        Self {
            criterion: vec![config.criterion],
            max_depth: vec![config.max_depth],
            n_trees: vec![config.n_trees],
            mtry: vec![config.mtry],
            min_samples_leaf: vec![config.min_samples_leaf],
            base: config,
        }
    }

    pub fn cells(&self) -> Vec<ForestConfig> {
        let mut out = Vec::new();
        for &criterion in &self.criterion {
            for &max_depth in &self.max_depth {
                for &n_trees in &self.n_trees {
                    for &mtry in &self.mtry {
                        for &min_samples_leaf in &self.min_samples_leaf {
                            out.push(ForestConfig {
                                criterion,
                                max_depth,
                                n_trees,
                                mtry,
                                min_samples_leaf,
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub config: ForestConfig,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub best: ForestConfig,
    pub cells: Vec<GridCell>,
}

/// Fold index per row; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold[i] = r % k;
        }
    }
    fold
}

/// k-fold cross-validated accuracy for every cell. The winner has the
/// highest mean accuracy; ties prefer fewer trees, then shallower trees,
/// then grid order.
pub fn grid_search(data: &Dataset, grid: &ForestGrid, k_folds: usize, seed: u64) -> Result<GridResult> {
    if k_folds < 2 {
        return Err(Error::invalid("k_folds must be at least 2"));
    }
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::invalid("empty parameter grid"));
    }
    let fold = stratified_folds(data.labels(), k_folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..k_folds)
        .map(|k| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != k).collect();
            let valid: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == k).collect();
            (data.subset(&train), data.subset(&valid))
        })
        .collect();

    let mut scored = Vec::with_capacity(cells.len());
    for config in cells {
        let mut fold_accuracy = Vec::with_capacity(k_folds);
        for (train, valid) in &splits {
            let forest = fit_forest(train, &config)?;
            fold_accuracy.push(accuracy(&forest.predict_dataset(valid)?, valid.labels()));
        }
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k_folds as f64;
        scored.push(GridCell { config, fold_accuracy, mean_accuracy });
    }
    let best = scored
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.mean_accuracy
                .total_cmp(&a.mean_accuracy)
                .then(a.config.n_trees.cmp(&b.config.n_trees))
                .then(a.config.max_depth.cmp(&b.config.max_depth))
                .then(ia.cmp(ib))
        })
        .map(|(_, c)| c.config.clone())
        .expect("grid is nonempty");
    Ok(GridResult { best, cells: scored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::FeatureKind;

    fn xor(n: usize) -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let a = ((i * 7919) % 1000) as f64 / 1000.0;
            let b = ((i * 104729) % 997) as f64 / 997.0;
            labels.push((a > 0.5) != (b > 0.5));
            rows.push(vec![a, b]);
        }
        Dataset::new(vec!["a".into(), "b".into()], vec![FeatureKind::Numeric; 2], &rows, labels).unwrap()
    }

    fn small(depth: usize) -> ForestConfig {
        ForestConfig { n_trees: 10, max_depth: depth, min_samples_leaf: 3, mtry: 2, ..Default::default() }
    }

    #[test]
    fn single_cell_returned() {
        let ds = xor(120);
        let r = grid_search(&ds, &ForestGrid::single(small(3)), 3, 1).unwrap();
        assert_eq!(r.best, small(3));
        assert_eq!(r.cells.len(), 1);
    }

    #[test]
    fn deeper_wins_on_xor() {
        let ds = xor(300);
        let grid = ForestGrid { max_depth: vec![1, 4], ..ForestGrid::single(small(1)) };
        let r = grid_search(&ds, &grid, 4, 9).unwrap();
        assert_eq!(r.best.max_depth, 4);
        let shallow = r.cells[0].mean_accuracy;
        let deep = r.cells[1].mean_accuracy;
        assert!(deep > shallow + 0.2, "deep {deep} shallow {shallow}");
    }

    #[test]
    fn deterministic_and_validating() {
        let ds = xor(100);
        let grid = ForestGrid { n_trees: vec![5, 10], ..ForestGrid::single(small(2)) };
        assert_eq!(grid_search(&ds, &grid, 3, 5).unwrap(), grid_search(&ds, &grid, 3, 5).unwrap());
        let empty = ForestGrid { mtry: vec![], ..grid.clone() };
        assert!(grid_search(&ds, &empty, 3, 5).is_err());
        assert!(grid_search(&ds, &grid, 1, 5).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<bool> = (0..103).map(|i| i % 3 == 0).collect();
        let fold = stratified_folds(&labels, 5, 2);
        for k in 0..5 {
            let pos = (0..103).filter(|&i| fold[i] == k && labels[i]).count();
            assert!((6..=7).contains(&pos), "fold {k} has {pos} positives");
        }
    }

    #[test]
    fn standard_grid_size() {
        assert_eq!(ForestGrid::standard(ForestConfig::default()).cells().len(), 2 * 5 * 4 * 3);
    }
}
