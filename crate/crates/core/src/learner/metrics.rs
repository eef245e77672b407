//! Train/test splitting and confusion matrices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::ForestModel;
use super::labels::NUM_CLASSES;
use crate::datagen::LabeledSample;
use crate::error::{Error, Result};

/// Uniform random partition; the test part holds `floor(n * test_ratio)` samples.
/// Both parts keep the original sample order.
pub fn train_test_split(
    samples: &[LabeledSample],
    test_ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::Config(format!("test ratio must lie in (0, 1), got {test_ratio}")));
    }
    if samples.is_empty() {
        return Err(Error::Learner("cannot split an empty dataset".into()));
    }
    let n = samples.len();
    let n_test = (n as f64 * test_ratio).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (s, t) in samples.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, test))
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|r| r.iter().sum())
    }
}

pub fn confusion(model: &ForestModel, data: &[LabeledSample]) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::default();
    for s in data {
        let p = model.predict(&s.window)?;
        m.counts[s.label.index()][p.index()] += 1;
    }
    Ok(m)
}
