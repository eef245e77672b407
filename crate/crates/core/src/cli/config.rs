//! Single-file run configuration (TOML) with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{ScenarioSpec, WindowLayout};
use crate::dynamics::ModelConfig;
use crate::error::{Error, Result};
use crate::learner::{ForestConfig, LabelScheme};
use crate::ocp::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Window memory `M`.
    pub window: usize,
    /// Windows-per-solution variants; data is generated once with the largest.
    pub m_variants: Vec<usize>,
    pub n_scenarios: usize,
    pub x0_box: [[f64; 2]; 3],
    pub sigma: [f64; 3],
    pub nu_bound: f64,
    pub seed: u64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let spec = ScenarioSpec::default();
        Self {
            horizon: 250,
            window: 10,
            m_variants: vec![10, 50, 100, 150, 200],
            n_scenarios: 500,
            x0_box: spec.x0_box,
            sigma: spec.sigma,
            nu_bound: spec.nu_bound,
            seed: spec.seed,
        }
    }
}

impl GenerationSection {
    pub fn max_m(&self) -> usize {
        self.m_variants.iter().copied().max().unwrap_or(0)
    }

    pub fn layout(&self) -> WindowLayout {
        WindowLayout {
            horizon: self.horizon,
            window: self.window,
            m: self.max_m(),
        }
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            x0_box: self.x0_box,
            sigma: self.sigma,
            nu_bound: self.nu_bound,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub test_ratio: f64,
    pub split_seed: u64,
    pub forest: ForestConfig,
    pub labels: LabelScheme,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            test_ratio: 0.33,
            split_seed: 0,
            forest: ForestConfig::default(),
            labels: LabelScheme::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_scenarios: usize,
    pub seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_scenarios: 100,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub generation: GenerationSection,
    pub solver: SolverOptions,
    pub learner: LearnerSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            generation: GenerationSection::default(),
            solver: SolverOptions::default(),
            learner: LearnerSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets every seed (generation, split, forest, evaluation) to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.generation.seed = seed;
        self.learner.split_seed = seed;
        self.learner.forest.seed = seed;
        self.evaluation.seed = seed;
    }

    /// Cross-section consistency checks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.solver.validate()?;
        self.learner.forest.validate()?;
        self.learner.labels.validate()?;
        self.generation.scenario_spec().validate()?;
        let g = &self.generation;
        if g.m_variants.is_empty() || g.m_variants.contains(&0) {
            return Err(Error::Config("generation.m_variants must be non-empty and positive".into()));
        }
        if g.window + g.max_m() > g.horizon {
            return Err(Error::Config(format!(
                "generation: window + max(m_variants) - 1 = {} exceeds horizon - 1 = {}",
                g.window + g.max_m() - 1,
                g.horizon.saturating_sub(1)
            )));
        }
        if g.n_scenarios == 0 {
            return Err(Error::Config("generation.n_scenarios must be >= 1".into()));
        }
        let l = &self.learner;
        if !(l.test_ratio > 0.0 && l.test_ratio < 1.0) {
            return Err(Error::Config(format!(
                "learner.test_ratio must lie in (0, 1), got {}",
                l.test_ratio
            )));
        }
        if l.labels.u_min != self.model.u_min || l.labels.u_max != self.model.u_max {
            return Err(Error::Config(
                "learner.labels.u_min/u_max must equal model.u_min/u_max".into(),
            ));
        }
        if self.evaluation.n_scenarios == 0 {
            return Err(Error::Config("evaluation.n_scenarios must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("[generation]\nhorizon = 40\nm_variants = [5]\n").unwrap();
        assert_eq!(cfg.generation.horizon, 40);
        assert_eq!(cfg.generation.window, 10);
        assert_eq!(cfg.learner.forest.max_leaf_nodes, 500);
    }

    #[test]
    fn layout_violation_is_reported() {
        let err = RunConfig::from_toml("[generation]\nhorizon = 20\nm_variants = [11]\n").unwrap_err();
        assert!(err.to_string().contains("generation"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nbogus = 1\n").is_err());
    }

    #[test]
    fn seed_override_touches_all_sections() {
        let mut cfg = RunConfig::default();
        cfg.override_seed(42);
        assert_eq!(cfg.generation.seed, 42);
        assert_eq!(cfg.learner.forest.seed, 42);
        assert_eq!(cfg.learner.split_seed, 42);
        assert_eq!(cfg.evaluation.seed, 42);
    }
}
