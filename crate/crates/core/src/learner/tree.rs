//! CART classification tree grown best-first under a leaf budget.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::{Label, NUM_CLASSES};

pub type ClassCounts = [u32; NUM_CLASSES];

/// Row-major feature matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<f64>,
    pub labels: Vec<Label>,
    pub n_features: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    fn value(&self, i: usize, feature: usize) -> f64 {
        self.features[i * self.n_features + feature]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: ClassCounts },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

/// Most frequent class; ties go to the smaller label.
pub fn argmax_class(counts: &ClassCounts) -> Label {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Label::from_index(best)
}

impl DecisionTree {
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn leaf_for(&self, x: &[f64]) -> &ClassCounts {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        argmax_class(self.leaf_for(x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_leaf_nodes: usize,
    pub feature_subset_size: usize,
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    improvement: f64,
}

/// Frontier entry; the heap pops the largest improvement, then the oldest node.
struct Frontier {
    improvement: f64,
    node: usize,
    split: SplitCandidate,
    start: usize,
    end: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.improvement
            .total_cmp(&other.improvement)
            .then_with(|| other.node.cmp(&self.node))
    }
}

fn counts_of(data: &TrainingSet, idx: &[usize]) -> ClassCounts {
    let mut c = [0u32; NUM_CLASSES];
    for &i in idx {
        c[data.labels[i].index()] += 1;
    }
    c
}

/// `n * gini = n - sum(c^2) / n`.
fn weighted_gini(counts: &ClassCounts, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    n - counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>() / n
}

fn best_split<R: Rng>(
    data: &TrainingSet,
    idx: &[usize],
    params: &TreeParams,
    rng: &mut R,
    scratch: &mut Vec<(f64, usize)>,
) -> Option<SplitCandidate> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let parent = counts_of(data, idx);
    let parent_impurity = weighted_gini(&parent, n as f64);
    if parent_impurity <= 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..data.n_features).collect();
    order.shuffle(rng);

    let mut best: Option<SplitCandidate> = None;
    let mut visited = 0;
    for &feature in &order {
        // keep drawing past the subset size only while no valid split exists
        if visited >= params.feature_subset_size && best.is_some() {
            break;
        }
        visited += 1;
        scratch.clear();
        scratch.extend(idx.iter().map(|&i| (data.value(i, feature), data.labels[i].index())));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[n - 1].0 {
            continue;
        }
        let mut left = [0u32; NUM_CLASSES];
        for pos in 0..n - 1 {
            left[scratch[pos].1] += 1;
            let (v, next) = (scratch[pos].0, scratch[pos + 1].0);
            if v == next {
                continue;
            }
            let nl = (pos + 1) as f64;
            let nr = (n - pos - 1) as f64;
            let mut right = parent;
            for c in 0..NUM_CLASSES {
                right[c] -= left[c];
            }
            let improvement = parent_impurity - weighted_gini(&left, nl) - weighted_gini(&right, nr);
            if best.map_or(true, |b| improvement > b.improvement) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    improvement,
                });
            }
        }
    }
    best.filter(|b| b.improvement > 1e-12)
}

/// Grows one tree over `sample_idx` (which may repeat indices, e.g. a bootstrap draw).
pub fn grow_tree<R: Rng>(data: &TrainingSet, mut sample_idx: Vec<usize>, params: &TreeParams, rng: &mut R) -> DecisionTree {
    let mut nodes = vec![Node::Leaf {
        counts: counts_of(data, &sample_idx),
    }];
    let mut scratch = Vec::with_capacity(sample_idx.len());
    let mut heap = BinaryHeap::new();
    let n = sample_idx.len();
    if params.max_leaf_nodes >= 2 {
        if let Some(split) = best_split(data, &sample_idx, params, rng, &mut scratch) {
            heap.push(Frontier {
                improvement: split.improvement,
                node: 0,
                split,
                start: 0,
                end: n,
            });
        }
    }
    let mut leaves = 1;
    while leaves < params.max_leaf_nodes {
        let Some(entry) = heap.pop() else { break };
        let slice = &mut sample_idx[entry.start..entry.end];
        // stable partition: left block first
        let (mut lefts, rights): (Vec<usize>, Vec<usize>) = slice
            .iter()
            .partition(|&&i| data.value(i, entry.split.feature) <= entry.split.threshold);
        let mid = entry.start + lefts.len();
        lefts.extend(rights);
        slice.copy_from_slice(&lefts);

        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(Node::Leaf {
            counts: counts_of(data, &sample_idx[entry.start..mid]),
        });
        nodes.push(Node::Leaf {
            counts: counts_of(data, &sample_idx[mid..entry.end]),
        });
        nodes[entry.node] = Node::Split {
            feature: entry.split.feature,
            threshold: entry.split.threshold,
            left: left_id,
            right: right_id,
        };
        leaves += 1;
        for (id, start, end) in [(left_id, entry.start, mid), (right_id, mid, entry.end)] {
            if let Some(split) = best_split(data, &sample_idx[start..end], params, rng, &mut scratch) {
                heap.push(Frontier {
                    improvement: split.improvement,
                    node: id,
                    split,
                    start,
                    end,
                });
            }
        }
    }
    DecisionTree { nodes }
}
