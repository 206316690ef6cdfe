//! One-vs-all depth-limited boosted trees and leaf-index features.
//!
//! Each label gets a single regression tree grown with the second-order
//! logistic objective from a base probability of 0.5 (one boosting round).
//! Only the identity of the leaf an admission lands in is consumed
//! downstream; leaf weights are kept so tree quality can be checked.
//!
//! Split finding is exact greedy: candidate thresholds are midpoints between
//! consecutive distinct values, a row goes left when `value < threshold`, and
//! MISSING cells follow the default direction that maximizes the gain.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Cell, FeatureTable};

pub const ENSEMBLE_VERSION: u32 = 1;

/// Base probability every tree boosts from.
pub const BASE_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_child_weight: f64,
    /// Labels with fewer positives get a single-leaf tree.
    pub min_positives: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            learning_rate: 0.99,
            l2_lambda: 1.0,
            min_child_weight: 1.0,
            min_positives: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        column: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_id: usize,
        weight: f64,
    },
}

/// Nodes are stored in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub label_index: usize,
    pub leaf_count: usize,
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf_node(&self, row: &[Cell]) -> &Node {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    column,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let go_left = match row[*column] {
                        Some(v) => v < *threshold,
                        None => *default_left,
                    };
                    idx = if go_left { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    /// Local id of the leaf `row` is routed to. The row must already have the
    /// schema width; use [`TreeEnsemble::assign_leaves`] for checked access.
    pub fn leaf_of(&self, row: &[Cell]) -> usize {
        match self.leaf_node(row) {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Activated leaf weight (a logit offset from the base score).
    pub fn predict_margin(&self, row: &[Cell]) -> f64 {
        match self.leaf_node(row) {
            Node::Leaf { weight, .. } => *weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict_probability(&self, row: &[Cell]) -> f64 {
        let base_logit = (BASE_PROBABILITY / (1.0 - BASE_PROBABILITY)).ln();
        sigmoid(base_logit + self.predict_margin(row))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn max_column(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { column, .. } => Some(*column),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A chosen split and its gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub column: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
}

/// Gradient and hessian of the logistic loss at the base probability.
fn base_gradients(targets: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = BASE_PROBABILITY;
    let grad = targets.iter().map(|&y| p - y).collect();
    let hess = vec![p * (1.0 - p); targets.len()];
    (grad, hess)
}

/// Split gain of the second-order objective.
pub fn split_gain(g_left: f64, h_left: f64, g_right: f64, h_right: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(g_left, h_left) + score(g_right, h_right)
        - score(g_left + g_right, h_left + h_right))
}

fn leaf_weight(g: f64, h: f64, config: &TreeConfig) -> f64 {
    -config.learning_rate * g / (h + config.l2_lambda)
}

struct Grower<'a> {
    table: &'a FeatureTable,
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a TreeConfig,
    nodes: Vec<Node>,
    leaf_count: usize,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[usize]) -> Option<SplitCandidate> {
        let lambda = self.config.l2_lambda;
        let mcw = self.config.min_child_weight;
        let g_node: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h_node: f64 = rows.iter().map(|&r| self.hess[r]).sum();

        let mut best: Option<SplitCandidate> = None;
        let mut best_gain = 0.0;
        let mut present: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for column in 0..self.table.width {
            present.clear();
            let (mut g_miss, mut h_miss) = (0.0, 0.0);
            for &r in rows {
                match self.table.rows[r].cells[column] {
                    Some(v) => present.push((v, r)),
                    None => {
                        g_miss += self.grad[r];
                        h_miss += self.hess[r];
                    }
                }
            }
            if present.len() < 2 {
                continue;
            }
            present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let (mut g_prefix, mut h_prefix) = (0.0, 0.0);
            for k in 0..present.len() - 1 {
                let (v, r) = present[k];
                g_prefix += self.grad[r];
                h_prefix += self.hess[r];
                let next = present[k + 1].0;
                if next == v {
                    continue;
                }
                let mut threshold = v + (next - v) / 2.0;
                if threshold <= v {
                    threshold = next;
                }
                for default_left in [true, false] {
                    let (g_left, h_left) = if default_left {
                        (g_prefix + g_miss, h_prefix + h_miss)
                    } else {
                        (g_prefix, h_prefix)
                    };
                    let (g_right, h_right) = (g_node - g_left, h_node - h_left);
                    if h_left < mcw || h_right < mcw {
                        continue;
                    }
                    let gain = split_gain(g_left, h_left, g_right, h_right, lambda);
                    if gain > best_gain {
                        best_gain = gain;
                        best = Some(SplitCandidate {
                            column,
                            threshold,
                            default_left,
                            gain,
                        });
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let idx = self.nodes.len();
        let split = if depth < self.config.max_depth {
            self.best_split(rows)
        } else {
            None
        };
        match split {
            None => {
                let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
                let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
                self.nodes.push(Node::Leaf {
                    leaf_id: self.leaf_count,
                    weight: leaf_weight(g, h, self.config),
                });
                self.leaf_count += 1;
            }
            Some(split) => {
                self.nodes.push(Node::Split {
                    column: split.column,
                    threshold: split.threshold,
                    default_left: split.default_left,
                    left: 0,
                    right: 0,
                });
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| {
                        match self.table.rows[r].cells[split.column] {
                            Some(v) => v < split.threshold,
                            None => split.default_left,
                        }
                    });
                let left = self.grow(&left_rows, depth + 1);
                let right = self.grow(&right_rows, depth + 1);
                if let Node::Split {
                    left: l, right: r, ..
                } = &mut self.nodes[idx]
                {
                    *l = left;
                    *r = right;
                }
            }
        }
        idx
    }
}

fn check_targets(table: &FeatureTable, targets: &[f64]) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Invalid("cannot train a tree on an empty table".into()));
    }
    if targets.len() != table.len() {
        return Err(Error::shape("train_tree", &[targets.len()], &[table.len()]));
    }
    if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Invalid(format!("tree target {bad} is not binary")));
    }
    Ok(())
}

/// Best root split for `targets`, or `None` when no split has positive gain.
pub fn find_best_split(
    table: &FeatureTable,
    targets: &[f64],
    config: &TreeConfig,
) -> Result<Option<SplitCandidate>> {
    check_targets(table, targets)?;
    let (grad, hess) = base_gradients(targets);
    let grower = Grower {
        table,
        grad: &grad,
        hess: &hess,
        config,
        nodes: Vec::new(),
        leaf_count: 0,
    };
    let rows: Vec<usize> = (0..table.len()).collect();
    Ok(grower.best_split(&rows))
}

/// Grows one tree for a binary target column.
pub fn train_tree(
    table: &FeatureTable,
    targets: &[f64],
    config: &TreeConfig,
    label_index: usize,
) -> Result<DecisionTree> {
    check_targets(table, targets)?;
    let (grad, hess) = base_gradients(targets);
    let positives = targets.iter().filter(|&&y| y == 1.0).count();
    let mut effective = config.clone();
    if positives < config.min_positives {
        effective.max_depth = 0;
    }
    let mut grower = Grower {
        table,
        grad: &grad,
        hess: &hess,
        config: &effective,
        nodes: Vec::new(),
        leaf_count: 0,
    };
    let rows: Vec<usize> = (0..table.len()).collect();
    grower.grow(&rows, 0);
    Ok(DecisionTree {
        label_index,
        leaf_count: grower.leaf_count,
        nodes: grower.nodes,
    })
}

/// One tree per label, in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub version: u32,
    pub config: TreeConfig,
    pub width: usize,
    pub trees: Vec<DecisionTree>,
}

/// Activated local leaf per tree; the multi-hot `q` in compact form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeafAssignment(pub Vec<usize>);

impl LeafAssignment {
    /// Global leaf ids given [`TreeEnsemble::leaf_offsets`].
    pub fn global_ids(&self, offsets: &[usize]) -> Vec<usize> {
        self.0.iter().zip(offsets).map(|(l, o)| l + o).collect()
    }

    /// Concatenation of one one-hot vector per tree.
    pub fn multi_hot(&self, offsets: &[usize], total_leaves: usize) -> Vec<u8> {
        let mut q = vec![0; total_leaves];
        for id in self.global_ids(offsets) {
            q[id] = 1;
        }
        q
    }
}

/// Trains tree `t` on column `t` of `labels` (rows x labels).
pub fn train_ensemble(
    table: &FeatureTable,
    labels: &[Vec<f64>],
    config: &TreeConfig,
) -> Result<TreeEnsemble> {
    if labels.len() != table.len() {
        return Err(Error::shape("train_ensemble", &[labels.len()], &[table.len()]));
    }
    let n_labels = labels.first().map_or(0, Vec::len);
    if labels.iter().any(|r| r.len() != n_labels) {
        return Err(Error::Invalid("ragged label matrix".into()));
    }
    let trees = (0..n_labels)
        .map(|t| {
            let column: Vec<f64> = labels.iter().map(|r| r[t]).collect();
            train_tree(table, &column, config, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeEnsemble {
        version: ENSEMBLE_VERSION,
        config: config.clone(),
        width: table.width,
        trees,
    })
}

impl TreeEnsemble {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn assign_leaves(&self, row: &[Cell]) -> Result<LeafAssignment> {
        if row.len() != self.width {
            return Err(Error::shape("assign_leaves", &[row.len()], &[self.width]));
        }
        Ok(LeafAssignment(self.trees.iter().map(|t| t.leaf_of(row)).collect()))
    }

    /// Prefix sums of leaf counts.
    pub fn leaf_offsets(&self) -> Result<Vec<usize>> {
        if self.trees.is_empty() {
            return Err(Error::Invalid("empty ensemble has no leaf offsets".into()));
        }
        let mut acc = 0;
        Ok(self
            .trees
            .iter()
            .map(|t| {
                let o = acc;
                acc += t.leaf_count;
                o
            })
            .collect())
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(|t| t.leaf_count).sum()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.leaf_count).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ensemble: TreeEnsemble = serde_json::from_str(text)?;
        if ensemble.version != ENSEMBLE_VERSION {
            return Err(Error::Version {
                what: "tree ensemble",
                expected: ENSEMBLE_VERSION,
                found: ensemble.version,
            });
        }
        for tree in &ensemble.trees {
            if tree.max_column().is_some_and(|c| c >= ensemble.width) {
                return Err(Error::Invalid(format!(
                    "tree {} references a column beyond width {}",
                    tree.label_index, ensemble.width
                )));
            }
        }
        Ok(ensemble)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
