//! Three-level quantization of optimal controls into class labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Class label in `{1, 2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Label(u8);

impl Label {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=NUM_CLASSES as u8).contains(&value) {
            Ok(Label(value))
        } else {
            Err(Error::Learner(format!("invalid label {value}, expected 1..=3")))
        }
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_CLASSES, "class index {index} out of range");
        Label(index as u8 + 1)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-based class index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Label::new(value)
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.0
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelScheme {
    /// Upper edges of classes 1 and 2 (inclusive).
    pub thresholds: [f64; 2],
    /// Control applied for each class.
    pub control_levels: [f64; 3],
    /// Admissible control box.
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self {
            thresholds: [0.075, 0.14],
            control_levels: [0.049, 0.11, 0.449],
            u_min: 0.049,
            u_max: 0.449,
        }
    }
}

impl LabelScheme {
    pub fn validate(&self) -> Result<()> {
        let [t1, t2] = self.thresholds;
        let [c1, c2, c3] = self.control_levels;
        if !(t1 < t2 && c1 <= t1 && t1 < c2 && c2 <= t2 && t2 < c3) {
            return Err(Error::Config(format!(
                "learner.labels: need levels[0] <= t1 < levels[1] <= t2 < levels[2], got thresholds {:?} levels {:?}",
                self.thresholds, self.control_levels
            )));
        }
        if !(self.u_min <= c1 && c3 <= self.u_max) {
            return Err(Error::Config("learner.labels: control levels must lie in the box".into()));
        }
        Ok(())
    }

    /// Label 1 if `u <= t1`, 2 if `t1 < u <= t2`, 3 otherwise.
    pub fn quantize(&self, u: f64) -> Result<Label> {
        if !(u >= self.u_min && u <= self.u_max) {
            return Err(Error::Domain(format!(
                "control {u} outside [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        Ok(if u <= self.thresholds[0] {
            Label(1)
        } else if u <= self.thresholds[1] {
            Label(2)
        } else {
            Label(3)
        })
    }

    pub fn control(&self, label: Label) -> f64 {
        self.control_levels[label.index()]
    }
}

/// [`LabelScheme::quantize`] with the default scheme.
pub fn quantize_label(u: f64) -> Result<Label> {
    LabelScheme::default().quantize(u)
}

/// Control level of a raw label value under the default scheme.
pub fn label_to_control(label: u8) -> Result<f64> {
    Ok(LabelScheme::default().control(Label::new(label)?))
}
