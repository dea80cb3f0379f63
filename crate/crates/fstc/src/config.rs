//! Structured run configuration, loaded from TOML.
//!
//! Every key has a default, so an empty file (or no file at all) is a
//! valid configuration; unknown keys are hard errors naming the key.
//! `--seed` on the command line overrides every stage seed at once.

use std::path::{Path, PathBuf};

use fstc_core::eval::{CellConfig, MetaAlgorithm};
use fstc_core::meta::{MetaConfig, MetaOrder};
use fstc_core::model::ModelConfig;
use fstc_core::train::TrainConfig;
use fstc_core::tsne::TsneConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable consulted for the corpus root when `data.root`
/// is not set in the config file.
pub const DATA_DIR_ENV: &str = "FSTC_DATA_DIR";

/// Corpus location and split protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Corpus root directory (bydate layout). Default: empty, falling
    /// back to the `FSTC_DATA_DIR` environment variable.
    pub root: String,
    /// Explicit target class names. Default: empty, meaning the
    /// lexicographically last `target_class_count` classes are the target
    /// split and the rest are the source/meta split.
    pub target_classes: Vec<String>,
    /// Number of target classes when `target_classes` is empty. Default 5.
    pub target_class_count: usize,
    /// Stratified train fraction of the target split, drawn once per
    /// experiment. Default 0.7.
    pub train_fraction: f64,
    /// Seed for the train/test split. Default 7.
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: String::new(),
            target_classes: Vec::new(),
            target_class_count: 5,
            train_fraction: 0.7,
            split_seed: 7,
        }
    }
}

/// Vocabulary construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    /// Minimum document frequency for a term to enter the vocabulary.
    /// Default 2.
    pub min_df: usize,
    /// Maximum vocabulary size; highest-df terms kept. Default 2000.
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { min_df: 2, max_size: 2000 }
    }
}

/// Encoder architecture and regularizers. Input width comes from the
/// vocabulary and class count from the split, so neither is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden layer widths; the last is the embedding dimension. Empty
    /// means logistic regression on raw features. Default [64, 32].
    pub hidden_dims: Vec<usize>,
    /// L2 penalty on weight matrices. Default 0.
    pub weight_decay: f64,
    /// Label smoothing ε. Default 0.
    pub label_smoothing: f64,
    /// Training-time Gaussian feature noise. Default 0.
    pub noise_std: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dims: vec![64, 32],
            weight_decay: 0.0,
            label_smoothing: 0.0,
            noise_std: 0.0,
        }
    }
}

/// One gradient-descent stage (pretrain, finetune, or scratch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    /// Learning rate. Default 0.1.
    pub lr: f64,
    /// Epochs over the stage's data. Default 30.
    pub epochs: usize,
    /// Minibatch size. Default 16.
    pub batch_size: usize,
    /// Heavy-ball momentum in [0, 1). Default 0.
    pub momentum: f64,
    /// Update only the head, freezing the encoder. Default false.
    pub freeze_encoder: bool,
    /// Stage seed (initialization, shuffling, noise). Default 0.
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            lr: 0.1,
            epochs: 30,
            batch_size: 16,
            momentum: 0.0,
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl StageConfig {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            freeze_encoder: self.freeze_encoder,
            seed: self.seed,
        }
    }
}

/// Differentiation order for the meta-gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderName {
    First,
    Second,
}

/// Episodic training algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Maml,
    Protonet,
}

/// Episodic meta-learning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSection {
    /// Classes per episode. Default 5.
    pub way: usize,
    /// Support examples per class. Default 5.
    pub shot: usize,
    /// Query examples per class. Default 5.
    pub queries: usize,
    /// Inner-loop (adaptation) learning rate. Default 0.05.
    pub inner_lr: f64,
    /// Inner-loop gradient steps. Default 1.
    pub inner_steps: usize,
    /// Outer (meta) learning rate. Default 0.1.
    pub outer_lr: f64,
    /// Episodes averaged per meta-update. Default 4.
    pub meta_batch: usize,
    /// Total episodes consumed over the run. Default 200.
    pub episodes_total: usize,
    /// Meta-gradient order: "second" (exact) or "first" (FOMAML).
    /// Default "second".
    pub order: OrderName,
    /// "maml" or "protonet". Default "maml".
    pub algorithm: AlgorithmName,
    /// Episode-sampling and initialization seed. Default 0.
    pub seed: u64,
}

impl Default for MetaSection {
    fn default() -> Self {
        MetaSection {
            way: 5,
            shot: 5,
            queries: 5,
            inner_lr: 0.05,
            inner_steps: 1,
            outer_lr: 0.1,
            meta_batch: 4,
            episodes_total: 200,
            order: OrderName::Second,
            algorithm: AlgorithmName::Maml,
            seed: 0,
        }
    }
}

impl MetaSection {
    pub fn to_meta_config(&self) -> MetaConfig {
        MetaConfig {
            way: self.way,
            shot: self.shot,
            queries: self.queries,
            inner_lr: self.inner_lr,
            inner_steps: self.inner_steps,
            outer_lr: self.outer_lr,
            meta_batch: self.meta_batch,
            episodes_total: self.episodes_total,
            order: match self.order {
                OrderName::First => MetaOrder::First,
                OrderName::Second => MetaOrder::Second,
            },
            seed: self.seed,
        }
    }

    pub fn to_algorithm(&self) -> MetaAlgorithm {
        match self.algorithm {
            AlgorithmName::Maml => MetaAlgorithm::Maml,
            AlgorithmName::Protonet => MetaAlgorithm::Protonet,
        }
    }
}

/// Experiment grid settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Seeds for the (model, regime) grid; one cell per seed.
    /// Default [0, 1, 2, 3, 4].
    pub seeds: Vec<u64>,
    /// L2 coefficient of the hinge-loss baseline. Default 1e-4.
    pub svm_lambda: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seeds: vec![0, 1, 2, 3, 4], svm_lambda: 1e-4 }
    }
}

/// 2-D projection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneSection {
    /// Target perplexity. Default 20.
    pub perplexity: f64,
    /// Gradient iterations. Default 500.
    pub iters: usize,
    /// Learning rate. Default 100.
    pub learning_rate: f64,
    /// Initialization seed. Default 0.
    pub seed: u64,
}

impl Default for TsneSection {
    fn default() -> Self {
        TsneSection { perplexity: 20.0, iters: 500, learning_rate: 100.0, seed: 0 }
    }
}

impl TsneSection {
    pub fn to_tsne_config(&self) -> TsneConfig {
        TsneConfig::new(self.perplexity, self.iters, self.learning_rate, self.seed)
    }
}

/// The whole run configuration. Field names double as TOML section names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub vocab: VocabConfig,
    pub model: ModelSection,
    pub pretrain: StageConfig,
    pub finetune: StageConfig,
    pub scratch: StageConfig,
    pub meta: MetaSection,
    pub eval: EvalConfig,
    pub tsne: TsneSection,
}

impl RunConfig {
    /// Parses a TOML string; unknown keys are named in the error.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads the config file. An explicit path must exist; with no path,
    /// `fstc.toml` in the working directory is used when present, and the
    /// built-in defaults otherwise.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let resolved = match path {
            Some(p) => Some(p.to_path_buf()),
            None => {
                let fallback = PathBuf::from("fstc.toml");
                fallback.exists().then_some(fallback)
            }
        };
        match resolved {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| {
                    CliError::Config(format!("reading config {}: {e}", p.display()))
                })?;
                RunConfig::from_toml(&text)
            }
            None => {
                let config = RunConfig::default();
                config.validate()?;
                Ok(config)
            }
        }
    }

    /// Cross-field validation beyond what TOML parsing enforces; every
    /// message names the offending key.
    pub fn validate(&self) -> Result<()> {
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "data.train_fraction: must lie in (0, 1), got {}",
                self.data.train_fraction
            )));
        }
        if self.data.target_classes.is_empty() && self.data.target_class_count < 2 {
            return Err(CliError::Config(
                "data.target_class_count: need at least 2 target classes".into(),
            ));
        }
        if !self.data.target_classes.is_empty() && self.data.target_classes.len() < 2 {
            return Err(CliError::Config(
                "data.target_classes: need at least 2 target classes".into(),
            ));
        }
        if self.vocab.min_df < 1 {
            return Err(CliError::Config("vocab.min_df: must be at least 1".into()));
        }
        if self.vocab.max_size < 1 {
            return Err(CliError::Config("vocab.max_size: must be at least 1".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds: must not be empty".into()));
        }
        if !(self.eval.svm_lambda >= 0.0 && self.eval.svm_lambda.is_finite()) {
            return Err(CliError::Config(format!(
                "eval.svm_lambda: must be finite and non-negative, got {}",
                self.eval.svm_lambda
            )));
        }
        for (key, stage) in
            [("pretrain", &self.pretrain), ("finetune", &self.finetune), ("scratch", &self.scratch)]
        {
            stage
                .to_train_config()
                .validate()
                .map_err(|e| CliError::Config(format!("{key}: {e}")))?;
        }
        self.meta
            .to_meta_config()
            .validate()
            .map_err(|e| CliError::Config(format!("meta: {e}")))?;
        self.tsne
            .to_tsne_config()
            .validate()
            .map_err(|e| CliError::Config(format!("tsne: {e}")))?;
        // Architecture fields are validated with placeholder data-derived
        // dims, which are always ≥ 1 at use sites.
        self.model_config(1, 2).validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// The corpus root: `data.root` when set, else `FSTC_DATA_DIR`.
    pub fn data_root(&self) -> Result<PathBuf> {
        if !self.data.root.is_empty() {
            return Ok(PathBuf::from(&self.data.root));
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Ok(PathBuf::from(dir)),
            _ => Err(CliError::Config(format!(
                "data.root: not set and {DATA_DIR_ENV} is unset"
            ))),
        }
    }

    /// Architecture for data-derived dimensions.
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            num_classes,
            weight_decay: self.model.weight_decay,
            label_smoothing: self.model.label_smoothing,
            noise_std: self.model.noise_std,
        }
    }

    /// Bundle of per-cell stage configurations for the experiment grids.
    pub fn cell_config(&self, input_dim: usize, num_classes: usize) -> CellConfig {
        CellConfig {
            model: self.model_config(input_dim, num_classes),
            pretrain: self.pretrain.to_train_config(),
            finetune: self.finetune.to_train_config(),
            scratch: self.scratch.to_train_config(),
            meta: self.meta.to_meta_config(),
            algorithm: self.meta.to_algorithm(),
        }
    }

    /// Replaces every stage seed and collapses the grid to a single seed:
    /// the `--seed` flag's semantics.
    pub fn override_seed(&mut self, seed: u64) {
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.scratch.seed = seed;
        self.meta.seed = seed;
        self.tsne.seed = seed;
        self.eval.seeds = vec![seed];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_yields_the_documented_defaults() {
        let config = RunConfig::from_toml("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.data.train_fraction, 0.7);
        assert_eq!(config.vocab.max_size, 2000);
        assert_eq!(config.model.hidden_dims, vec![64, 32]);
        assert_eq!(config.meta.way, 5);
        assert_eq!(config.eval.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(config.tsne.perplexity, 20.0);
    }

    #[test]
    fn unknown_keys_are_errors_naming_the_key() {
        let err = RunConfig::from_toml("[vocab]\nmin_fd = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("min_fd"), "{err}");
    }

    #[test]
    fn unknown_sections_are_errors() {
        assert!(RunConfig::from_toml("[vocabulary]\n").is_err());
    }

    #[test]
    fn partial_sections_keep_remaining_defaults() {
        let config = RunConfig::from_toml("[meta]\nway = 3\norder = \"first\"\n").unwrap();
        assert_eq!(config.meta.way, 3);
        assert_eq!(config.meta.order, OrderName::First);
        assert_eq!(config.meta.shot, 5);
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = RunConfig::from_toml("[data]\ntrain_fraction = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("data.train_fraction"), "{err}");
        let err = RunConfig::from_toml("[eval]\nseeds = []\n").unwrap_err();
        assert!(err.to_string().contains("eval.seeds"), "{err}");
        let err = RunConfig::from_toml("[meta]\nway = 1\n").unwrap_err();
        assert!(err.to_string().contains("meta"), "{err}");
    }

    #[test]
    fn seed_override_touches_every_stage() {
        let mut config = RunConfig::default();
        config.override_seed(99);
        assert_eq!(config.pretrain.seed, 99);
        assert_eq!(config.finetune.seed, 99);
        assert_eq!(config.scratch.seed, 99);
        assert_eq!(config.meta.seed, 99);
        assert_eq!(config.tsne.seed, 99);
        assert_eq!(config.eval.seeds, vec![99]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut config = RunConfig::default();
        config.meta.algorithm = AlgorithmName::Protonet;
        config.data.target_classes = vec!["sci.space".into()];
        let text = toml::to_string(&config).unwrap();
        // target_classes length 1 fails validation, so parse without it.
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn data_root_falls_back_to_the_environment() {
        let config = RunConfig::default();
        // The variable may or may not be set in the test environment;
        // an explicit root always wins and never consults it.
        let mut explicit = config.clone();
        explicit.data.root = "/tmp/corpus".into();
        assert_eq!(explicit.data_root().unwrap(), PathBuf::from("/tmp/corpus"));
    }

    #[test]
    fn stage_conversion_preserves_fields() {
        let stage = StageConfig { lr: 0.2, epochs: 3, batch_size: 8, momentum: 0.5, freeze_encoder: true, seed: 4 };
        let train = stage.to_train_config();
        assert_eq!(train.lr, 0.2);
        assert_eq!(train.epochs, 3);
        assert_eq!(train.batch_size, 8);
        assert_eq!(train.momentum, 0.5);
        assert!(train.freeze_encoder);
        assert_eq!(train.seed, 4);
    }
}
