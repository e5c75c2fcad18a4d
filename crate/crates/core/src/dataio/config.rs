//! Experiment configuration (TOML). Unknown keys are errors; every field has
//! a default so a config only needs to name what it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::BenefitSign;
use crate::error::{Error, Result};
use crate::explain::CeOptions;
use crate::numkit::{Expr, OptimizerKind};
use crate::theory::ProbeDomain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Noharm,
    SyntheticRrm,
    CreditRrm,
    TheoryCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Noharm => "noharm",
            ExperimentKind::SyntheticRrm => "synthetic-rrm",
            ExperimentKind::CreditRrm => "credit-rrm",
            ExperimentKind::TheoryCheck => "theory-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub noharm: NoharmConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub credit: CreditConfig,
    #[serde(default)]
    pub rrm: RrmConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoharmConfig {
    pub agents: usize,
    pub model: Expr,
    pub base_sd: f64,
    pub alpha_range: [f64; 2],
    pub search_box: [f64; 2],
    pub grid_points: usize,
    pub taylor_order: u8,
    pub arex_center: f64,
    pub arex_variance: f64,
}

impl Default for NoharmConfig {
    fn default() -> Self {
        Self {
            agents: 100,
            model: Expr::parse("x^4 - x^2 + 1").expect("valid default model"),
            base_sd: 0.4,
            alpha_range: [1.0, 1.2],
            search_box: [-3.0, 3.0],
            grid_points: 4001,
            taylor_order: 2,
            arex_center: 0.0,
            arex_variance: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub z_levels: usize,
    pub mean_offset: f64,
    pub base_variance: f64,
    pub alpha_intercept: f64,
    pub alpha_slope: f64,
    pub alpha_sd: f64,
    /// Cost coefficients are floored here so every move stays costly.
    pub alpha_floor: f64,
    pub coefficient_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            z_levels: 4,
            mean_offset: 10.0,
            base_variance: 2.0,
            alpha_intercept: 0.02,
            alpha_slope: 0.1,
            alpha_sd: 0.01,
            alpha_floor: 1e-3,
            coefficient_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreditConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub augment: usize,
    pub test: usize,
    pub jitter: f64,
    pub cost_scale: f64,
    pub simulator_steps: usize,
    pub simulator_lr: f64,
}

impl Default for CreditConfig {
    fn default() -> Self {
        Self {
            data: None,
            augment: 9000,
            test: 1000,
            jitter: 0.05,
            cost_scale: 0.01,
            simulator_steps: 2000,
            simulator_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmKind {
    JointOpt,
    Ce,
}

/// What joint training scores the simulated response against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointTarget {
    /// Outcomes observed in the previous deployment, held fixed.
    Observed,
    /// The expected outcome at the simulated response.
    Expected,
}

/// How a predicted adoption probability turns into a training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseBlend {
    /// Loss at the blended point `w * rec + (1 - w) * base`.
    Soft,
    /// `w * loss(rec) + (1 - w) * loss(base)`.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrmConfig {
    pub iterations: usize,
    /// Agents per RRM iteration; a single value repeats for every iteration.
    pub batch_sizes: Vec<usize>,
    pub pretrain: usize,
    pub compliance: usize,
    pub test: usize,
    pub hidden: usize,
    pub inner_steps: usize,
    pub minibatch: usize,
    pub pretrain_steps: usize,
    pub compliance_steps: usize,
    pub optimizer: OptimizerKind,
    pub lambdas: Vec<f64>,
    pub sampler_variance: f64,
    pub arms: Vec<ArmKind>,
    pub joint_target: JointTarget,
    pub blend: ResponseBlend,
    pub ce: CeOptions,
}

impl Default for RrmConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            batch_sizes: vec![2000],
            pretrain: 2000,
            compliance: 20_000,
            test: 100_000,
            hidden: 32,
            inner_steps: 200,
            minibatch: 128,
            pretrain_steps: 2000,
            compliance_steps: 2000,
            optimizer: OptimizerKind::default(),
            lambdas: vec![0.1, 1.0, 4.0],
            sampler_variance: 4.0,
            arms: vec![ArmKind::JointOpt, ArmKind::Ce],
            joint_target: JointTarget::Expected,
            blend: ResponseBlend::Mixture,
            ce: CeOptions::default(),
        }
    }
}

impl RrmConfig {
    pub fn batch_size(&self, iteration: usize) -> usize {
        match self.batch_sizes.as_slice() {
            [only] => *only,
            sizes => sizes[iteration.min(sizes.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("rrm.iterations", "must be at least 1"));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(Error::config("rrm.batch_sizes", "sizes must be positive"));
        }
        if self.batch_sizes.len() > 1 && self.batch_sizes.len() != self.iterations {
            return Err(Error::config("rrm.batch_sizes", "give one size or one per iteration"));
        }
        for (name, v) in [
            ("rrm.pretrain", self.pretrain),
            ("rrm.compliance", self.compliance),
            ("rrm.test", self.test),
            ("rrm.hidden", self.hidden),
            ("rrm.minibatch", self.minibatch),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::config("rrm.lambdas", format!("lambda {l} is not positive")));
        }
        if !(self.sampler_variance >= 0.0) {
            return Err(Error::config("rrm.sampler_variance", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurrogateSpec {
    /// Expansion of the model around the base point.
    Taylor { order: u8 },
    Expr { expr: Expr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub model: Expr,
    pub surrogate: SurrogateSpec,
    pub base: Vec<f64>,
    pub benefit: BenefitSign,
    pub domain: ProbeDomain,
    pub tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            model: Expr::parse("x^2").expect("valid default model"),
            surrogate: SurrogateSpec::Taylor { order: 1 },
            base: vec![5.0],
            benefit: BenefitSign::Lower,
            domain: ProbeDomain::grid(0.0, 10.0, 2001),
            tolerance: crate::theory::DEFAULT_TOLERANCE,
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            output_dir: None,
            noharm: NoharmConfig::default(),
            synthetic: SyntheticConfig::default(),
            credit: CreditConfig::default(),
            rrm: RrmConfig::default(),
            check: CheckConfig::default(),
        }
    }

    /// Parse TOML; errors carry the dotted path of the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `credit.data` is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(data), Some(dir)) = (&cfg.credit.data, path.parent()) {
            if data.is_relative() {
                cfg.credit.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    /// The fully resolved plan, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::Noharm => {
                let n = &self.noharm;
                if n.agents == 0 {
                    return Err(Error::config("noharm.agents", "must be at least 1"));
                }
                if !(n.alpha_range[0] > 0.0 && n.alpha_range[0] <= n.alpha_range[1]) {
                    return Err(Error::config("noharm.alpha_range", "need 0 < lo <= hi"));
                }
                if !matches!(n.taylor_order, 1 | 2) {
                    return Err(Error::config("noharm.taylor_order", "must be 1 or 2"));
                }
                if !(n.search_box[0] < n.search_box[1]) {
                    return Err(Error::config("noharm.search_box", "need lo < hi"));
                }
                if n.model.dim() > 1 {
                    return Err(Error::config("noharm.model", "model must be one-dimensional"));
                }
                Ok(())
            }
            ExperimentKind::SyntheticRrm | ExperimentKind::CreditRrm => self.rrm.validate(),
            ExperimentKind::TheoryCheck => {
                let c = &self.check;
                if c.base.is_empty() {
                    return Err(Error::config("check.base", "base point required"));
                }
                if c.model.dim() > c.base.len() {
                    return Err(Error::config("check.model", "model uses more variables than the base point has"));
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for kind in [
            ExperimentKind::Noharm,
            ExperimentKind::SyntheticRrm,
            ExperimentKind::CreditRrm,
            ExperimentKind::TheoryCheck,
        ] {
            let cfg = ExperimentConfig::new(kind);
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn minimal_config() {
        let cfg = ExperimentConfig::from_toml("kind = \"noharm\"\nseed = 3\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.noharm.agents, 100);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = ExperimentConfig::from_toml("kind = \"synthetic-rrm\"\n[rrm]\niteratons = 3\n").unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "rrm.iteratons");
                assert!(message.contains("iteratons"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = ExperimentConfig::from_toml("kind = \"noharm\"\n[noharm]\nagents = \"many\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "noharm.agents"), "{err:?}");
    }

    #[test]
    fn relative_data_follows_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "kind = \"credit-rrm\"\n[credit]\ndata = \"../german.data\"\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.credit.data, Some(dir.path().join("../german.data")));
        std::fs::write(&path, "kind = \"credit-rrm\"\n[credit]\ndata = \"/abs/german.data\"\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.credit.data, Some(PathBuf::from("/abs/german.data")));
    }

    #[test]
    fn semantic_validation() {
        let err = ExperimentConfig::from_toml("kind = \"synthetic-rrm\"\n[rrm]\nlambdas = [0.0]\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "rrm.lambdas"));
        let err = ExperimentConfig::from_toml("kind = \"noharm\"\n[noharm]\ntaylor_order = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "noharm.taylor_order"));
    }
}
