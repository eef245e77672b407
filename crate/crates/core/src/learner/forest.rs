//! Random forest of best-first CART trees with hard majority voting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{Label, NUM_CLASSES};
use super::tree::{argmax_class, grow_tree, DecisionTree, TrainingSet, TreeParams};
use crate::datagen::{LabeledSample, MeasurementWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_leaf_nodes: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub feature_subset_size: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_leaf_nodes: 500,
            feature_subset_size: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("learner.forest.n_trees must be >= 1".into()));
        }
        if self.max_leaf_nodes < 2 {
            return Err(Error::Config("learner.forest.max_leaf_nodes must be >= 2".into()));
        }
        if self.feature_subset_size == Some(0) {
            return Err(Error::Config("learner.forest.feature_subset_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn subset_size(&self, n_features: usize) -> usize {
        self.feature_subset_size
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

/// Stacks sample windows into a training matrix.
pub fn training_set(samples: &[LabeledSample]) -> Result<TrainingSet> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Learner("training data is empty".into()))?;
    let d = first.window.len();
    let mut features = Vec::with_capacity(samples.len() * d);
    for s in samples {
        if s.window.len() != d {
            return Err(Error::Learner(format!(
                "window length {} differs from {d} (q = {}, k = {})",
                s.window.len(),
                s.q_index,
                s.k
            )));
        }
        features.extend_from_slice(s.window.values());
    }
    Ok(TrainingSet {
        features,
        labels: samples.iter().map(|s| s.label).collect(),
        n_features: d,
    })
}

/// Trains one tree per derived seed `(cfg.seed, tree index)`.
pub fn train_forest(samples: &[LabeledSample], cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate()?;
    let data = training_set(samples)?;
    let params = TreeParams {
        max_leaf_nodes: cfg.max_leaf_nodes,
        feature_subset_size: cfg.subset_size(data.n_features),
    };
    let n = data.len();
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(&data, idx, &params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        config: cfg.clone(),
        n_features: data.n_features,
        trees,
    })
}

impl ForestModel {
    /// Per-class tree votes.
    pub fn votes(&self, x: &[f64]) -> Result<[usize; NUM_CLASSES]> {
        if x.len() != self.n_features {
            return Err(Error::Learner(format!(
                "window has {} values, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut votes = [0usize; NUM_CLASSES];
        for tree in &self.trees {
            votes[tree.predict(x).index()] += 1;
        }
        Ok(votes)
    }

    /// Majority vote; ties go to the smaller label.
    pub fn predict_values(&self, x: &[f64]) -> Result<Label> {
        let votes = self.votes(x)?;
        let counts = votes.map(|v| v as u32);
        Ok(argmax_class(&counts))
    }

    pub fn predict(&self, window: &MeasurementWindow) -> Result<Label> {
        self.predict_values(window.values())
    }

    pub fn max_leaves(&self) -> usize {
        self.trees.iter().map(|t| t.leaf_count()).max().unwrap_or(0)
    }
}
