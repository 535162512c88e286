use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_estimation::SplitMode;
use crate::estimation::EstimatorConfig;
use crate::model::{MatrixSpec, NoiseModel, DEFAULT_BOUND};
use crate::strategy::{PNorm, RunConfig, Schedule, StrategyKind};

/// Band scale used by the presets, calibrated on desk-scale runs. Compare
/// [`DEFAULT_BAND_SCALE`](crate::error_estimation::DEFAULT_BAND_SCALE).
pub const PRESET_BAND_SCALE: f64 = 0.1;

/// Regularization multiplier used by the presets.
pub const PRESET_LAMBDA_SCALE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub noise: NoiseModel,
    #[serde(default = "default_bound")]
    pub bound: f64,
    pub budget: usize,
    pub strategies: Vec<StrategyKind>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub split: SplitMode,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub confidence_scale: f64,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clip_truth_to_bound: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_bound() -> f64 {
    DEFAULT_BOUND
}

impl ExperimentConfig {
    pub fn arms(&self) -> usize {
        self.dims.len()
    }

    pub fn specs(&self) -> Result<Vec<MatrixSpec>> {
        self.dims
            .iter()
            .zip(&self.ranks)
            .enumerate()
            .map(|(k, (&d, &r))| MatrixSpec::new(k, d, r, self.bound))
            .collect()
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            noise: self.noise,
            budget: self.budget,
            schedule: self.schedule,
            split: self.split,
            band_scale: self.confidence_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidConfig("dims must list at least one matrix".into()));
        }
        if self.ranks.len() != self.dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} ranks for {} dims",
                self.ranks.len(),
                self.dims.len()
            )));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d < 2) {
            return Err(Error::DimensionTooSmall(d));
        }
        self.specs()?;
        self.noise.validate()?;
        self.schedule.validate()?;
        self.estimator.validate()?;
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategies configured".into()));
        }
        let mut labels: Vec<String> = self.strategies.iter().map(StrategyKind::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("strategy labels must be unique".into()));
        }
        for s in &self.strategies {
            s.validate(self.arms())?;
        }
        if !(self.confidence_scale >= 0.0 && self.confidence_scale.is_finite()) {
            return Err(Error::InvalidConfig("confidence_scale must be >= 0".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        let required: usize = self.dims.iter().map(|&d| self.schedule.initial_size(d)).sum();
        if self.budget < required {
            return Err(Error::BudgetTooSmall {
                budget: self.budget,
                required,
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Shrinks dimensions by `factor`, scaling ranks proportionally and keeping
    /// the budget at the same fraction of `sum_k d_k^2`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale factor {factor} must be >= 1")));
        }
        if factor == 1.0 {
            return Ok(self.clone());
        }
        let cells: usize = self.dims.iter().map(|d| d * d).sum();
        let fraction = self.budget as f64 / cells as f64;
        let dims: Vec<usize> = self
            .dims
            .iter()
            .map(|&d| ((d as f64 / factor).round() as usize).max(2))
            .collect();
        let ranks: Vec<usize> = self
            .ranks
            .iter()
            .zip(&dims)
            .map(|(&r, &d)| ((r as f64 / factor).round() as usize).clamp(1, d))
            .collect();
        let cells: usize = dims.iter().map(|d| d * d).sum();
        let mut out = Self {
            id: format!("{}-scale{}", self.id, factor),
            dims,
            ranks,
            budget: (fraction * cells as f64).round() as usize,
            ..self.clone()
        };
        let required: usize = out.dims.iter().map(|&d| out.schedule.initial_size(d)).sum();
        out.budget = out.budget.max(required);
        Ok(out)
    }
}

fn preset_strategies() -> Vec<StrategyKind> {
    vec![
        StrategyKind::malocate(PNorm::Finite(1.0)),
        StrategyKind::malocate(PNorm::Infinite),
        StrategyKind::Uniform { weights: None },
        StrategyKind::Oracle { weights: None },
    ]
}

fn preset(id: &str, ranks: Vec<usize>) -> ExperimentConfig {
    let d = 200;
    let k = ranks.len();
    ExperimentConfig {
        id: id.into(),
        dims: vec![d; k],
        ranks,
        noise: NoiseModel::Gaussian { sigma: 0.1 },
        bound: DEFAULT_BOUND,
        budget: k * d * d / 2,
        strategies: preset_strategies(),
        schedule: Schedule::Discretized {
            init_multiplier: 8,
            num_batches: 100,
            reuse_samples: true,
        },
        split: SplitMode::ByMultiplicity,
        estimator: EstimatorConfig {
            lambda_scale: PRESET_LAMBDA_SCALE,
            ..EstimatorConfig::default()
        },
        confidence_scale: PRESET_BAND_SCALE,
        reps: 15,
        seed: 0,
        clip_truth_to_bound: false,
        output_dir: None,
    }
}

/// Ten 200x200 matrices, one of rank 40 and nine of rank 10.
pub fn preset_experiment_1() -> ExperimentConfig {
    let mut ranks = vec![10; 10];
    ranks[0] = 40;
    preset("exp1", ranks)
}

/// Fifteen 200x200 matrices with ranks `round(18 + 0.0015 (k - 1)^4)`.
pub fn preset_experiment_2() -> ExperimentConfig {
    let ranks = (1..=15).map(experiment_2_rank).collect();
    preset("exp2", ranks)
}

/// Rank of matrix `k` (one-based) in the second preset.
pub fn experiment_2_rank(k: usize) -> usize {
    let shifted = (k - 1) as f64;
    (18.0 + 0.0015 * shifted.powi(4)).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_1_parameters() {
        let cfg = preset_experiment_1();
        assert_eq!(cfg.ranks, vec![40, 10, 10, 10, 10, 10, 10, 10, 10, 10]);
        assert_eq!(cfg.dims, vec![200; 10]);
        assert_eq!(cfg.budget, 200_000);
        assert_eq!(cfg.reps, 15);
        assert_eq!(cfg.noise, NoiseModel::Gaussian { sigma: 0.1 });
        assert_eq!(cfg.bound, 4.0);
        assert_eq!(
            cfg.schedule,
            Schedule::Discretized {
                init_multiplier: 8,
                num_batches: 100,
                reuse_samples: true
            }
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn experiment_2_parameters() {
        let cfg = preset_experiment_2();
        assert_eq!(cfg.ranks.len(), 15);
        assert_eq!(cfg.ranks[0], 18);
        assert_eq!(cfg.ranks[14], 76);
        assert_eq!(cfg.ranks.iter().filter(|&&r| r <= 22).count(), 8);
        assert_eq!(cfg.budget, 15 * 200 * 200 / 2);
        assert_eq!(cfg.reps, 15);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = preset_experiment_1();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let text = r#"{
            "id": "tiny",
            "dims": [10, 12],
            "ranks": [1, 2],
            "noise": {"kind": "gaussian", "sigma": 0.1},
            "budget": 200,
            "strategies": [{"kind": "malocate", "loss": {"p": "inf"}}, {"kind": "uniform"}],
            "confidence_scale": 1.0,
            "reps": 2
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.bound, 4.0);
        assert_eq!(cfg.schedule, Schedule::default());
        assert_eq!(cfg.split, SplitMode::Halves);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = preset_experiment_1();
        cfg.ranks.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = preset_experiment_1();
        cfg.reps = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = preset_experiment_1();
        cfg.budget = 100;
        assert!(matches!(cfg.validate(), Err(Error::BudgetTooSmall { .. })));

        let mut cfg = preset_experiment_1();
        cfg.strategies.push(StrategyKind::Uniform { weights: None });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scaling_keeps_rank_ratios_and_budget_fraction() {
        let cfg = preset_experiment_1().scaled(5.0).unwrap();
        assert_eq!(cfg.dims, vec![40; 10]);
        assert_eq!(cfg.ranks, vec![8, 2, 2, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(cfg.budget, 10 * 40 * 40 / 2);
        cfg.validate().unwrap();
        assert!(preset_experiment_1().scaled(0.5).is_err());
    }
}
