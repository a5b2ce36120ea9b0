//! Versioned text format for trained forests.
//!
//! ```text
//! firesite-forest 1
//! config n_trees=2 max_depth=8 min_samples_leaf=30 min_samples_split=2 mtry=3 criterion=gini bootstrap=true seed=0
//! n_train 4000
//! feature land_value numeric
//! feature prop_type categorical 4
//! columns tree node kind feature split left right fraction count gain
//! node 0 0 num 3 12.5 1 2 - 120 31.2
//! node 0 1 leaf - - - - 0.25 40 -
//! node 0 2 cat 6 0|2 3 4 - 80 4.1
//! oob 0 3 17 21
//! ```
//!
//! Floats are written in shortest round-trip form, so a saved forest loads
//! back bit-identical.

use std::fmt::Write as _;
use std::path::Path;

use super::dataset::FeatureKind;
use super::forest::{Criterion, DemandForest, ForestConfig};
use super::tree::{DecisionTree, Split, TreeNode};
use crate::{Error, Result};

const MAGIC: &str = "firesite-forest";
const VERSION: u32 = 1;
const COLUMNS: &str = "columns tree node kind feature split left right fraction count gain";

impl DemandForest {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(
            s,
            "config n_trees={} max_depth={} min_samples_leaf={} min_samples_split={} mtry={} criterion={} bootstrap={} seed={}",
            c.n_trees, c.max_depth, c.min_samples_leaf, c.min_samples_split, c.mtry, c.criterion.name(), c.bootstrap, c.seed
        );
        let _ = writeln!(s, "n_train {}", self.n_train);
        for (name, kind) in self.names.iter().zip(&self.kinds) {
            match kind {
                FeatureKind::Numeric => {
                    let _ = writeln!(s, "feature {name} numeric");
                }
                FeatureKind::Categorical { levels } => {
                    let _ = writeln!(s, "feature {name} categorical {levels}");
                }
            }
        }
        let _ = writeln!(s, "{COLUMNS}");
        for (t, tree) in self.trees.iter().enumerate() {
            for (i, node) in tree.nodes().iter().enumerate() {
                match node {
                    TreeNode::Leaf { fraction, count } => {
                        let _ = writeln!(s, "node {t} {i} leaf - - - - {fraction} {count} -");
                    }
                    TreeNode::Internal { feature, split, left, right, count, weighted_gain } => {
                        let (kind, split) = match split {
                            Split::Numeric { threshold } => ("num", threshold.to_string()),
                            Split::Categorical { left_mask } => {
                                let levels: Vec<String> = (0..32)
                                    .filter(|l| left_mask >> l & 1 == 1)
                                    .map(|l| l.to_string())
                                    .collect();
                                ("cat", levels.join("|"))
                            }
                        };
                        let _ = writeln!(s, "node {t} {i} {kind} {feature} {split} {left} {right} - {count} {weighted_gain}");
                    }
                }
            }
        }
        for (t, rows) in self.oob.iter().enumerate() {
            let _ = write!(s, "oob {t}");
            for r in rows {
                let _ = write!(s, " {r}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = None;
        let mut n_train = None;
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut nodes: Vec<Vec<TreeNode>> = Vec::new();
        let mut oob: Vec<Vec<usize>> = Vec::new();

        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<model>".into(),
            line: line as u64 + 1,
            message: msg.to_string(),
        };
        match lines.next() {
            Some((_, l)) if l == format!("{MAGIC} {VERSION}") => {}
            Some((i, l)) => return Err(bad(i, &format!("unsupported model header {l:?}"))),
            None => return Err(bad(0, "empty model file")),
        }
        for (i, line) in lines {
            let mut f = line.split_whitespace();
            let Some(tag) = f.next() else { continue };
            let fields: Vec<&str> = f.collect();
            let num = |k: usize| -> Result<usize> {
                fields
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(i, &format!("expected integer in field {}", k + 1)))
            };
            let float = |k: usize| -> Result<f64> {
                fields
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(i, &format!("expected number in field {}", k + 1)))
            };
            match tag {
                "config" => config = Some(parse_config(&fields).map_err(|m| bad(i, &m))?),
                "n_train" => n_train = Some(num(0)?),
                "feature" => {
                    let name = fields.first().ok_or_else(|| bad(i, "feature needs a name"))?;
                    let kind = match fields.get(1).copied() {
                        Some("numeric") => FeatureKind::Numeric,
                        Some("categorical") => FeatureKind::Categorical { levels: num(2)? as u8 },
                        _ => return Err(bad(i, "feature kind must be numeric or categorical")),
                    };
                    names.push(name.to_string());
                    kinds.push(kind);
                }
                "columns" => {}
                "node" => {
                    let (t, n) = (num(0)?, num(1)?);
                    if t > nodes.len() || (t == nodes.len()) != (n == 0) {
                        return Err(bad(i, "nodes must be listed tree by tree in order"));
                    }
                    if t == nodes.len() {
                        nodes.push(Vec::new());
                    }
                    if nodes[t].len() != n {
                        return Err(bad(i, "node ids must be consecutive"));
                    }
                    let node = match fields.get(2).copied() {
                        Some("leaf") => TreeNode::Leaf { fraction: float(7)?, count: num(8)? },
                        Some(kind @ ("num" | "cat")) => {
                            let split = if kind == "num" {
                                Split::Numeric { threshold: float(4)? }
                            } else {
                                let mut left_mask = 0u32;
                                for l in fields.get(4).copied().unwrap_or("").split('|') {
                                    let l: u32 = l.parse().map_err(|_| bad(i, "bad category subset"))?;
                                    left_mask |= 1 << l;
                                }
                                Split::Categorical { left_mask }
                            };
                            TreeNode::Internal {
                                feature: num(3)?,
                                split,
                                left: num(5)?,
                                right: num(6)?,
                                count: num(8)?,
                                weighted_gain: float(9)?,
                            }
                        }
                        _ => return Err(bad(i, "node kind must be leaf, num or cat")),
                    };
                    nodes[t].push(node);
                }
                "oob" => {
                    let t = num(0)?;
                    if t != oob.len() {
                        return Err(bad(i, "oob rows must be listed in tree order"));
                    }
                    oob.push((1..fields.len()).map(num).collect::<Result<_>>()?);
                }
                other => return Err(bad(i, &format!("unknown record {other:?}"))),
            }
        }
        let config = config.ok_or_else(|| bad(0, "missing config line"))?;
        let n_train = n_train.ok_or_else(|| bad(0, "missing n_train line"))?;
        if nodes.len() != config.n_trees || oob.len() != config.n_trees {
            return Err(bad(0, "tree count does not match config"));
        }
        let trees: Vec<DecisionTree> = nodes.into_iter().map(DecisionTree::from_nodes).collect();
        for (t, tree) in trees.iter().enumerate() {
            for n in tree.nodes() {
                if let TreeNode::Internal { feature, left, right, .. } = n {
                    if *feature >= kinds.len() || *left >= tree.nodes().len() || *right >= tree.nodes().len() {
                        return Err(bad(0, &format!("tree {t} references a missing feature or node")));
                    }
                }
            }
        }
        Ok(DemandForest { config, names, kinds, trees, oob, n_train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse { path: path.to_path_buf(), line, message },
            e => e,
        })
    }
}

fn parse_config(fields: &[&str]) -> std::result::Result<ForestConfig, String> {
    let mut c = ForestConfig::default();
    for kv in fields {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad config entry {kv:?}"))?;
        let uint = || v.parse::<usize>().map_err(|_| format!("bad value for {k}: {v:?}"));
        match k {
            "n_trees" => c.n_trees = uint()?,
            "max_depth" => c.max_depth = uint()?,
            "min_samples_leaf" => c.min_samples_leaf = uint()?,
            "min_samples_split" => c.min_samples_split = uint()?,
            "mtry" => c.mtry = uint()?,
            "criterion" => c.criterion = Criterion::parse(v).ok_or_else(|| format!("bad criterion {v:?}"))?,
            "bootstrap" => c.bootstrap = v.parse().map_err(|_| format!("bad bootstrap flag {v:?}"))?,
            "seed" => c.seed = v.parse().map_err(|_| format!("bad seed {v:?}"))?,
            _ => return Err(format!("unknown config key {k:?}")),
        }
    }
    Ok(c)
}
