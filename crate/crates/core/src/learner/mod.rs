//! Control quantization and the random-forest output feedback classifier.

pub mod forest;
pub mod labels;
pub mod metrics;
pub mod tree;

pub use forest::{train_forest, ForestConfig, ForestModel};
pub use labels::{label_to_control, quantize_label, Label, LabelScheme};
pub use metrics::{confusion, train_test_split, ConfusionMatrix};
