//! Run configuration: one strict JSON document per experiment.
//!
//! Every field has a default, so `{}` is a valid config; unknown keys are
//! rejected with the offending key named, keeping experiment files
//! auditable. The CLI may override a handful of fields (seed, budget,
//! oracle, output directory, ablation toggles) after loading.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentKind;
use crate::client::RemoteConfig;
use crate::data::{DataLayout, DatasetSpec};
use crate::extraction::ExtractionConfig;
use crate::losses::{LossWeights, PairingMode};
use crate::nets::{Activation, NetRole, NetworkSpec, OutputMap, TrainConfig};
use crate::optim::OptimizerKind;
use crate::oracle::OracleKind;
use crate::rng::{self, stream};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse failed at {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// The seven executable tasks; configs may pin the one they are meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TrainTarget,
    Attack,
    Evaluate,
    ServeTarget,
    TheoryBound,
    TheoryValidate,
    Report,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::TrainTarget => "train-target",
            TaskKind::Attack => "attack",
            TaskKind::Evaluate => "evaluate",
            TaskKind::ServeTarget => "serve-target",
            TaskKind::TheoryBound => "theory-bound",
            TaskKind::TheoryValidate => "theory-validate",
            TaskKind::Report => "report",
        }
    }
}

/// Classifier topology (target or substitute); width language shared with
/// [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSettings {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Relu,
        }
    }
}

/// Conditional generator topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSettings {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Output domain box overrides; when absent the data layout picks the
    /// box ([-3, 3] per standardized vector axis, [0, 1] per pixel).
    pub output_center: Option<f32>,
    pub output_scale: Option<f32>,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            latent_dim: 8,
            output_center: None,
            output_scale: None,
        }
    }
}

/// Target supervised-training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetTrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
}

impl Default for TargetTrainSettings {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
        }
    }
}

/// Attack-loop settings; mirrors [`ExtractionConfig`] in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSettings {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub generator_steps: usize,
    pub batch_size: usize,
    pub query_budget: u64,
    pub replay_cap: usize,
    pub pairing: PairingMode,
    pub enable_query_free_augmentation: bool,
    pub enable_harmony: bool,
    pub enable_diversity: bool,
    /// Overrides the layout-derived default set when present.
    pub augmentations: Option<Vec<AugmentKind>>,
    pub generator_learning_rate: f32,
    pub substitute_learning_rate: f32,
    pub substitute_momentum: f32,
    /// Global-norm cap on substitute gradient updates; `null` disables.
    pub substitute_grad_clip: Option<f32>,
}

impl Default for AttackSettings {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            generator_steps: 5,
            batch_size: 64,
            query_budget: 2000,
            replay_cap: 8192,
            pairing: PairingMode::SameClass,
            enable_query_free_augmentation: true,
            enable_harmony: true,
            enable_diversity: true,
            augmentations: None,
            generator_learning_rate: 0.001,
            substitute_learning_rate: 0.01,
            substitute_momentum: 0.9,
            substitute_grad_clip: Some(1.0),
        }
    }
}

/// Which oracle answers queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSettings {
    /// In-process target network (requires a trained target checkpoint or
    /// a train step beforehand).
    Local,
    /// Local target behind a label-flipping channel.
    Noisy { flip_probability: f64 },
    /// HTTP endpoint speaking the predict wire protocol.
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retry_limit")]
        retry_limit: u32,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retry_limit() -> u32 {
    2
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings::Local
    }
}

/// Adversarial-evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// L-infinity radii evaluated for each attack.
    pub epsilons: Vec<f32>,
    pub step_size: f32,
    /// Probe grid resolution per axis for planar consistency.
    pub probe_per_axis: usize,
    pub targeted: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.1, 0.2, 0.3],
            step_size: 0.01,
            probe_per_axis: 50,
            targeted: false,
        }
    }
}

/// serve-target settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSettings {
    pub bind: String,
    /// Server-side query cap; absent means unlimited.
    pub budget: Option<u64>,
    pub model_id: String,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            budget: None,
            model_id: "qedg-target".into(),
        }
    }
}

/// Theorem-harness settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySettings {
    pub phi: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    /// Clean query complexity for the bare bound calculators; the harness
    /// derives its own q from epsilon.
    pub q: u64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        Self {
            phi: 0.1,
            epsilon: 0.05,
            delta: 0.1,
            trials: 500,
            q: 100,
        }
    }
}

/// The whole experiment file. `{}` parses to the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Optional task pin; when present the CLI refuses a mismatched
    /// subcommand.
    pub task: Option<TaskKind>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: Option<DatasetSpec>,
    pub target: ClassifierSettings,
    pub substitute: ClassifierSettings,
    pub generator: GeneratorSettings,
    pub target_training: TargetTrainSettings,
    pub attack: AttackSettings,
    pub oracle: OracleSettings,
    pub evaluation: EvalSettings,
    pub serve: ServeSettings,
    pub theory: TheorySettings,
}

impl RunConfig {
    /// Default dataset when the config names none.
    pub fn dataset_spec(&self) -> DatasetSpec {
        self.dataset.clone().unwrap_or(DatasetSpec::TwoMoons {
            n_train: 1000,
            n_test: 500,
            noise: 0.1,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| "qedg-out".into())
    }

    pub fn target_spec(&self, input_dim: usize, num_classes: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::classifier(
            NetRole::Target,
            input_dim,
            self.target.hidden.clone(),
            num_classes,
            self.seed,
        );
        spec.activation = self.target.activation;
        spec
    }

    pub fn substitute_spec(&self, input_dim: usize, num_classes: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::classifier(
            NetRole::Substitute,
            input_dim,
            self.substitute.hidden.clone(),
            num_classes,
            self.seed,
        );
        spec.activation = self.substitute.activation;
        spec
    }

    pub fn generator_spec(&self, layout: DataLayout, num_classes: usize) -> NetworkSpec {
        let default_map = match layout {
            DataLayout::Vector { .. } => OutputMap::standardized_vector(),
            DataLayout::Image { .. } => OutputMap::unit_pixels(),
        };
        let map = OutputMap {
            center: self.generator.output_center.unwrap_or(default_map.center),
            scale: self.generator.output_scale.unwrap_or(default_map.scale),
        };
        NetworkSpec::generator(
            layout.dim(),
            self.generator.hidden.clone(),
            num_classes,
            self.generator.latent_dim,
            self.seed,
        )
        .with_output_map(map)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.target_training.epochs,
            batch_size: self.target_training.batch_size,
            optimizer: OptimizerKind::sgd(
                self.target_training.learning_rate,
                self.target_training.momentum,
            ),
            shuffle_seed: self.seed,
        }
    }

    /// Materializes the attack settings against a concrete data layout.
    pub fn extraction_config(&self, layout: DataLayout) -> ExtractionConfig {
        let mut cfg = ExtractionConfig::new(layout, self.attack.query_budget, self.seed);
        cfg.weights = LossWeights {
            alpha: self.attack.alpha,
            beta: self.attack.beta,
            gamma: self.attack.gamma,
        };
        cfg.generator_steps = self.attack.generator_steps;
        cfg.batch_size = self.attack.batch_size;
        cfg.replay_cap = self.attack.replay_cap;
        cfg.pairing = self.attack.pairing;
        cfg.enable_qa = self.attack.enable_query_free_augmentation;
        cfg.enable_harmony = self.attack.enable_harmony;
        cfg.enable_diversity = self.attack.enable_diversity;
        if let Some(ops) = &self.attack.augmentations {
            cfg.augmentations = ops.clone();
        }
        cfg.generator_opt = OptimizerKind::adam(self.attack.generator_learning_rate);
        cfg.substitute_opt = OptimizerKind::sgd(
            self.attack.substitute_learning_rate,
            self.attack.substitute_momentum,
        );
        cfg.substitute_grad_clip = self.attack.substitute_grad_clip;
        cfg
    }

    /// Builds the oracle; `target` supplies the local model when the
    /// settings need one.
    pub fn build_oracle(
        &self,
        target: Option<crate::nets::Network>,
        num_classes: usize,
    ) -> Result<OracleKind> {
        match &self.oracle {
            OracleSettings::Local => target.map(OracleKind::local).ok_or_else(|| {
                ConfigError::Invalid("local oracle needs a target checkpoint".into())
            }),
            OracleSettings::Noisy { flip_probability } => {
                let inner = target.map(OracleKind::local).ok_or_else(|| {
                    ConfigError::Invalid("noisy oracle needs a target checkpoint".into())
                })?;
                OracleKind::noisy(
                    inner,
                    *flip_probability,
                    rng::stream_rng(self.seed, stream::ORACLE_NOISE),
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            OracleSettings::Remote {
                url,
                timeout_ms,
                retry_limit,
            } => {
                let mut remote = RemoteConfig::new(url.clone(), num_classes);
                remote.timeout = Duration::from_millis(*timeout_ms);
                remote.retry_limit = *retry_limit;
                Ok(OracleKind::remote(remote))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = LossWeights {
            alpha: self.attack.alpha,
            beta: self.attack.beta,
            gamma: self.attack.gamma,
        };
        weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.attack.batch_size == 0 || self.attack.generator_steps == 0 {
            return Err(ConfigError::Invalid(
                "attack batch_size and generator_steps must be >= 1".into(),
            ));
        }
        if let OracleSettings::Noisy { flip_probability } = self.oracle {
            if !(0.0..0.5).contains(&flip_probability) {
                return Err(ConfigError::Invalid(format!(
                    "flip_probability {flip_probability} must lie in [0, 0.5)"
                )));
            }
        }
        for &e in &self.evaluation.epsilons {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(ConfigError::Invalid(format!("bad epsilon {e}")));
            }
        }
        if self.evaluation.step_size <= 0.0 {
            return Err(ConfigError::Invalid("step_size must be positive".into()));
        }
        if self.evaluation.probe_per_axis < 2 {
            return Err(ConfigError::Invalid("probe_per_axis must be >= 2".into()));
        }
        if !(self.theory.phi >= 0.0 && self.theory.phi < 0.5) {
            return Err(ConfigError::Invalid(format!(
                "theory phi {} must lie in [0, 0.5)",
                self.theory.phi
            )));
        }
        Ok(())
    }
}

/// Parses a strict-JSON config file; unknown keys fail with the key named.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    config.validate()?;
    Ok(config)
}
