//! Experiment building blocks: accuracy, the linear baselines (multinomial
//! logistic regression and a one-vs-rest hinge classifier), data-regime and
//! ablation-arm definitions, and the per-cell pipelines the comparison and
//! ablation grids are assembled from.
//!
//! Everything here is pure and deterministic; the companion crate's harness
//! owns featurization, timing, and report files.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::meta::{self, MetaConfig};
use crate::model::{self, Model, ModelConfig};
use crate::rng;
use crate::tensor::Tensor;
use crate::text::FeatureMatrix;
use crate::train::{self, TrainConfig};

/// Fraction of correct predictions. Ties in the underlying argmax go to the
/// lowest class index (that is the predictors' convention, not enforced
/// here).
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(CoreError::Contract("accuracy over an empty test set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(CoreError::Contract(alloc::format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// A named training-data fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub name: &'static str,
    pub fraction: f64,
}

/// The three regimes every experiment sweeps: 5%, 50%, and 100% of the
/// training split.
pub fn standard_regimes() -> [RegimeSpec; 3] {
    [
        RegimeSpec { name: "few", fraction: 0.05 },
        RegimeSpec { name: "medium", fraction: 0.50 },
        RegimeSpec { name: "full", fraction: 1.00 },
    ]
}

/// One cell of the {±transfer, ±meta} grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationArm {
    pub name: &'static str,
    pub use_transfer: bool,
    pub use_meta: bool,
}

/// All four arms in report order: neither technique, transfer only, meta
/// only, both.
pub fn ablation_arms() -> [AblationArm; 4] {
    [
        AblationArm { name: "base", use_transfer: false, use_meta: false },
        AblationArm { name: "transfer", use_transfer: true, use_meta: false },
        AblationArm { name: "meta", use_transfer: false, use_meta: true },
        AblationArm { name: "ours", use_transfer: true, use_meta: true },
    ]
}

// ── linear baselines ────────────────────────────────────────────────────

/// Multinomial logistic regression: the usual model with zero hidden
/// layers (head directly on the features), trained by the standard loop.
pub fn baseline_logreg(train_data: &FeatureMatrix, cfg: &TrainConfig) -> Result<Model> {
    let model_cfg = ModelConfig {
        input_dim: train_data.features.cols(),
        hidden_dims: Vec::new(),
        num_classes: train_data.num_classes(),
        weight_decay: 0.0,
        label_smoothing: 0.0,
        noise_std: 0.0,
    };
    Ok(train::scratch_train(&model_cfg, cfg, train_data)?.model)
}

/// One-vs-rest linear scorers trained by subgradient descent on the hinge
/// objective `mean max(0, 1 − y·f(x)) + λ‖w‖²`; prediction is the argmax
/// score (ties to the lowest class index).
#[derive(Debug, Clone, PartialEq)]
pub struct SvmClassifier {
    /// One scorer per row: (num_classes × input_dim).
    pub weights: Tensor,
    /// One intercept per class.
    pub bias: Tensor,
}

impl SvmClassifier {
    /// Raw scores, one row per input, one column per class.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weights.transpose())?.add(&self.bias.broadcast_row(x.rows())?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.scores(x)?.argmax_rows())
    }
}

/// Trains [`SvmClassifier`] from zero-initialized scorers: per epoch, a
/// seeded shuffle is split into batches and every class scorer takes one
/// subgradient step per batch (margin violations contribute `−y·x`, plus
/// the regularizer gradient `2λw`). `lambda` is the explicit L2 strength.
pub fn baseline_svm(
    train_data: &FeatureMatrix,
    cfg: &TrainConfig,
    lambda: f64,
) -> Result<SvmClassifier> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CoreError::Config(alloc::format!(
            "hinge regularizer strength must be finite and non-negative, got {lambda}"
        )));
    }
    if train_data.is_empty() {
        return Err(CoreError::Config("training set is empty".into()));
    }
    let n = train_data.len();
    let dim = train_data.features.cols();
    let classes = train_data.num_classes();
    let mut weights = alloc::vec![0.0f64; classes * dim];
    let mut bias = alloc::vec![0.0f64; classes];

    let mut shuffle_rng = rng::stream(cfg.seed, 0);
    for _ in 0..cfg.epochs {
        let order = rng::shuffled_indices(&mut shuffle_rng, n);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut w_grad = alloc::vec![0.0f64; classes * dim];
            let mut b_grad = alloc::vec![0.0f64; classes];
            for &i in batch {
                let x = train_data.features.row(i);
                for c in 0..classes {
                    let y = if train_data.labels[i] == c { 1.0 } else { -1.0 };
                    let w = &weights[c * dim..(c + 1) * dim];
                    let score: f64 =
                        x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias[c];
                    if y * score < 1.0 {
                        for (g, &xi) in w_grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                            *g -= y * xi * scale;
                        }
                        b_grad[c] -= y * scale;
                    }
                }
            }
            // Regularizer applies per update, independent of batch size.
            for (g, &w) in w_grad.iter_mut().zip(&weights) {
                *g += 2.0 * lambda * w;
            }
            for (w, g) in weights.iter_mut().zip(&w_grad) {
                *w -= cfg.lr * g;
            }
            for (b, g) in bias.iter_mut().zip(&b_grad) {
                *b -= cfg.lr * g;
            }
        }
    }
    Ok(SvmClassifier {
        weights: Tensor::new(classes, dim, weights)?,
        bias: Tensor::new(1, classes, bias)?,
    })
}

// ── evaluation-time adaptation for meta-trained models ─────────────────

/// Which episodic algorithm trained the model (and hence how it adapts to
/// new data at evaluation time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaAlgorithm {
    Maml,
    Protonet,
}

impl MetaAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            MetaAlgorithm::Maml => "maml",
            MetaAlgorithm::Protonet => "protonet",
        }
    }
}

/// Adapts a meta-trained model on labeled data and classifies `test_x`.
///
/// MAML: gradient steps on the adaptation set (a fresh head is drawn first
/// if the class count differs from the meta-training way), then ordinary
/// prediction. Prototypes: class means of the adaptation embeddings,
/// nearest-prototype classification; the head is unused.
pub fn adapt_and_predict(
    model: &Model,
    algorithm: MetaAlgorithm,
    adapt: &FeatureMatrix,
    test_x: &Tensor,
    meta: &MetaConfig,
) -> Result<Vec<usize>> {
    if adapt.is_empty() {
        return Err(CoreError::Config("adaptation set is empty".into()));
    }
    let classes = adapt.num_classes();
    match algorithm {
        MetaAlgorithm::Maml => {
            let base = if model.config.num_classes == classes {
                model.clone()
            } else {
                model::reinit_head(model, classes, meta.seed)?
            };
            let adapted = meta::inner_adapt(
                &base,
                &adapt.features,
                &adapt.labels,
                meta.inner_lr,
                meta.inner_steps,
            )?;
            Model::with_params(base.config.clone(), adapted)?.predict(test_x)
        }
        MetaAlgorithm::Protonet => {
            let support_emb = model.embed(&adapt.features)?;
            let protos = meta::protonet_prototypes(&support_emb, &adapt.labels, classes)?;
            let query_emb = model.embed(test_x)?;
            Ok(meta::protonet_classify(&query_emb, &protos)?.argmax_rows())
        }
    }
}

// ── per-cell pipelines ──────────────────────────────────────────────────

/// Everything one grid cell needs: model shape, stage-specific optimizer
/// settings, and the episodic configuration. Seeds inside are treated as
/// base values; [`CellConfig::reseeded`] derives a per-cell variant.
#[derive(Debug, Clone, PartialEq)]
pub struct CellConfig {
    /// Architecture + regularizers; `num_classes` must match the target
    /// split (source-stage class counts are derived from the data).
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub scratch: TrainConfig,
    pub meta: MetaConfig,
    pub algorithm: MetaAlgorithm,
}

impl CellConfig {
    /// The same configuration with every stage seed replaced, so one seed
    /// value drives an entire cell.
    pub fn reseeded(&self, seed: u64) -> CellConfig {
        let mut out = self.clone();
        out.pretrain.seed = seed;
        out.finetune.seed = seed;
        out.scratch.seed = seed;
        out.meta.seed = seed;
        out
    }
}

/// Accuracy of one trained-and-evaluated cell, plus the pipeline stages
/// that ran (in order) so grid-level invariants can be asserted.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub accuracy: f64,
    pub n_test: usize,
    pub stages: Vec<&'static str>,
}

fn outcome(predictions: Vec<usize>, test: &FeatureMatrix, stages: Vec<&'static str>) -> Result<CellOutcome> {
    Ok(CellOutcome {
        accuracy: accuracy(&predictions, &test.labels)?,
        n_test: test.len(),
        stages,
    })
}

/// base arm: from-scratch training on the (regime-subsampled) target data.
pub fn cell_base(
    cfg: &CellConfig,
    train_data: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<CellOutcome> {
    let run = train::scratch_train(&cfg.model, &cfg.scratch, train_data)?;
    outcome(run.model.predict(&test.features)?, test, alloc::vec!["scratch_train", "accuracy"])
}

/// transfer arm: pretrain on the source split, replace the head, fine-tune
/// on the target data.
pub fn cell_transfer(
    cfg: &CellConfig,
    source: &FeatureMatrix,
    train_data: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<CellOutcome> {
    let source_cfg = ModelConfig { num_classes: source.num_classes(), ..cfg.model.clone() };
    let pre = train::pretrain(&source_cfg, &cfg.pretrain, source)?;
    let run = train::finetune(&pre.model, &cfg.finetune, train_data, cfg.model.num_classes)?;
    outcome(
        run.model.predict(&test.features)?,
        test,
        alloc::vec!["pretrain", "finetune", "accuracy"],
    )
}

/// meta arm: episodic training from a fresh initialization on the source
/// episodes, then evaluation-time adaptation on the target data.
pub fn cell_meta(
    cfg: &CellConfig,
    source: &FeatureMatrix,
    train_data: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<CellOutcome> {
    let run = match cfg.algorithm {
        MetaAlgorithm::Maml => meta::meta_train(&cfg.model, &cfg.meta, source, None)?,
        MetaAlgorithm::Protonet => meta::protonet_train(&cfg.model, &cfg.meta, source, None)?,
    };
    let predictions =
        adapt_and_predict(&run.model, cfg.algorithm, train_data, &test.features, &cfg.meta)?;
    outcome(predictions, test, alloc::vec!["meta_train", "adapt", "accuracy"])
}

/// ours arm: pretrain on the source split, meta-train episodically from the
/// pretrained encoder, adapt on the target data.
pub fn cell_ours(
    cfg: &CellConfig,
    source: &FeatureMatrix,
    train_data: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<CellOutcome> {
    let source_cfg = ModelConfig { num_classes: source.num_classes(), ..cfg.model.clone() };
    let pre = train::pretrain(&source_cfg, &cfg.pretrain, source)?;
    let run = match cfg.algorithm {
        MetaAlgorithm::Maml => meta::meta_train(&cfg.model, &cfg.meta, source, Some(&pre.model))?,
        MetaAlgorithm::Protonet => {
            meta::protonet_train(&cfg.model, &cfg.meta, source, Some(&pre.model))?
        }
    };
    let predictions =
        adapt_and_predict(&run.model, cfg.algorithm, train_data, &test.features, &cfg.meta)?;
    outcome(predictions, test, alloc::vec!["pretrain", "meta_train", "adapt", "accuracy"])
}

/// Runs one named arm; the dispatch table for the ablation grid.
pub fn run_arm(
    arm: &AblationArm,
    cfg: &CellConfig,
    source: &FeatureMatrix,
    train_data: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<CellOutcome> {
    match (arm.use_transfer, arm.use_meta) {
        (false, false) => cell_base(cfg, train_data, test),
        (true, false) => cell_transfer(cfg, source, train_data, test),
        (false, true) => cell_meta(cfg, source, train_data, test),
        (true, true) => cell_ours(cfg, source, train_data, test),
    }
}

/// String form used in report rows for the comparison models.
pub fn comparison_models() -> [&'static str; 3] {
    ["logreg", "svm", "ours"]
}
