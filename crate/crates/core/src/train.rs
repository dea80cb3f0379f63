//! Mini-batch SGD training: source pretraining, target fine-tuning (with
//! optional encoder freezing), and from-scratch training.
//!
//! All three entry points share one loop: seeded shuffle each epoch, build
//! the regularized loss on a fresh graph per batch, take one (momentum) SGD
//! step. With zero momentum and a full-set batch each step is exactly
//! `θ ← θ - η·∇L(θ)`. The per-epoch mean training loss is always recorded.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::model::{self, BoundParams, Model, ModelConfig};
use crate::params::sgd_step_momentum;
use crate::rng;
use crate::text::FeatureMatrix;

/// Optimization settings for the epoch-based loops.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Learning rate η. Zero is allowed and leaves parameters bit-exactly
    /// unchanged (useful for pipeline tests).
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Heavy-ball momentum in [0, 1); 0 is plain SGD.
    pub momentum: f64,
    /// When fine-tuning: discard encoder gradients, update only the head.
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(alloc::format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size < 1 {
            return Err(CoreError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::Config(alloc::format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// A trained model plus its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub loss_trace: Vec<f64>,
}

fn check_data(config: &ModelConfig, data: &FeatureMatrix, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(CoreError::Config(alloc::format!("{what} set is empty")));
    }
    if data.features.cols() != config.input_dim {
        return Err(CoreError::ShapeMismatch {
            op: "training data",
            lhs: data.features.shape(),
            rhs: (data.len(), config.input_dim),
        });
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= config.num_classes) {
        return Err(CoreError::Index(alloc::format!(
            "label {bad} out of range for {} classes",
            config.num_classes
        )));
    }
    Ok(())
}

/// The shared epoch loop. Shuffling and feature noise draw from separate
/// streams of `train.seed` so their consumption never interleaves.
fn run_epochs(mut model: Model, train: &TrainConfig, data: &FeatureMatrix) -> Result<TrainRun> {
    train.validate()?;
    let n = data.len();
    let mut shuffle_rng = rng::stream(train.seed, 0);
    let mut noise_rng = rng::stream(train.seed, 1);
    let mut velocity = model.params.zeros_like();
    let mut loss_trace = Vec::with_capacity(train.epochs);

    for _ in 0..train.epochs {
        let order = rng::shuffled_indices(&mut shuffle_rng, n);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let xb = data.select_rows(batch)?;
            let x_in = model::maybe_noised(
                &xb.features,
                model.config.noise_std,
                Some(&mut noise_rng),
            )?;
            let mut graph = Graph::new();
            let bound = BoundParams::bind(&mut graph, &model.params);
            let x = graph.constant(x_in);
            let loss = model::task_loss_on(
                &mut graph,
                &model.config,
                &bound,
                x,
                &xb.labels,
                model.config.weight_decay,
                model.config.label_smoothing,
            )?;
            epoch_loss += graph.value(loss).item()? * batch.len() as f64;

            let mut grads = model::grad_params(&mut graph, loss, &bound)?;
            if train.freeze_encoder {
                for name in model.params.names() {
                    if !name.starts_with("head.") {
                        let zero = grads.tensor(name)?.affine(0.0, 0.0)?;
                        grads.set(name, zero)?;
                    }
                }
            }
            let (updated, new_velocity) =
                sgd_step_momentum(&model.params, &grads, train.lr, train.momentum, &velocity)?;
            model.params = updated;
            velocity = new_velocity;
        }
        loss_trace.push(epoch_loss / n as f64);
    }
    Ok(TrainRun { model, loss_trace })
}

/// Trains a freshly initialized model on the source set: the pretraining
/// stage whose parameters later seed fine-tuning.
pub fn pretrain(
    config: &ModelConfig,
    train: &TrainConfig,
    source: &FeatureMatrix,
) -> Result<TrainRun> {
    check_data(config, source, "source")?;
    if source.num_classes() != config.num_classes {
        return Err(CoreError::Config(alloc::format!(
            "model expects {} classes but the source set has {}",
            config.num_classes,
            source.num_classes()
        )));
    }
    let model = model::init_model(config, train.seed)?;
    run_epochs(model, train, source)
}

/// Replaces the head for the target label set, then trains on the target
/// data starting from the pretrained encoder. With `freeze_encoder` only
/// head parameters change.
pub fn finetune(
    pretrained: &Model,
    train: &TrainConfig,
    target_train: &FeatureMatrix,
    target_num_classes: usize,
) -> Result<TrainRun> {
    let model = model::reinit_head(pretrained, target_num_classes, train.seed)?;
    check_data(&model.config, target_train, "target")?;
    run_epochs(model, train, target_train)
}

/// No transfer: fresh initialization trained on the target data only.
/// Identical to [`pretrain`] applied to the target set.
pub fn scratch_train(
    config: &ModelConfig,
    train: &TrainConfig,
    target_train: &FeatureMatrix,
) -> Result<TrainRun> {
    check_data(config, target_train, "target")?;
    if target_train.num_classes() != config.num_classes {
        return Err(CoreError::Config(alloc::format!(
            "model expects {} classes but the target set has {}",
            config.num_classes,
            target_train.num_classes()
        )));
    }
    let model = model::init_model(config, train.seed)?;
    run_epochs(model, train, target_train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::accuracy;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn toy_config(input_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dims: vec![],
            num_classes: classes,
            weight_decay: 0.0,
            label_smoothing: 0.0,
            noise_std: 0.0,
        }
    }

    fn quick(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig { lr, epochs, batch_size: 8, momentum: 0.0, freeze_encoder: false, seed: 5 }
    }

    /// Eight 2-D points in two classes, linearly separable by x0 - x1.
    fn separable_toy() -> FeatureMatrix {
        let pts = [
            (1.0, 0.1, 0),
            (0.9, 0.0, 0),
            (0.8, 0.2, 0),
            (1.1, 0.3, 0),
            (0.1, 1.0, 1),
            (0.0, 0.9, 1),
            (0.2, 0.8, 1),
            (0.3, 1.1, 1),
        ];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for &(a, b, y) in &pts {
            data.extend_from_slice(&[a, b]);
            labels.push(y);
        }
        FeatureMatrix::new(Tensor::new(8, 2, data).unwrap(), labels).unwrap()
    }

    /// Perceptron oracle: verifies a dataset is linearly separable by
    /// finding a separating hyperplane with the classic update rule.
    fn perceptron_separates(data: &FeatureMatrix) -> bool {
        let d = data.features.cols();
        let mut w = vec![0.0; d + 1];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for i in 0..data.len() {
                let row = data.features.row(i);
                let y = if data.labels[i] == 0 { 1.0 } else { -1.0 };
                let score: f64 =
                    row.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() + w[d];
                if y * score <= 0.0 {
                    for (wi, x) in w.iter_mut().zip(row) {
                        *wi += y * x;
                    }
                    w[d] += y;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn zero_epochs_returns_fresh_init() {
        let cfg = toy_config(2, 2);
        let data = separable_toy();
        let run = scratch_train(&cfg, &quick(0, 0.1), &data).unwrap();
        let fresh = model::init_model(&cfg, 5).unwrap();
        assert!(run.model.params.bit_eq(&fresh.params));
        assert!(run.loss_trace.is_empty());
    }

    #[test]
    fn separable_toy_reaches_perfect_training_accuracy() {
        let data = separable_toy();
        assert!(perceptron_separates(&data), "oracle: toy set must be separable");
        let cfg = toy_config(2, 2);
        let run = scratch_train(&cfg, &quick(200, 0.5), &data).unwrap();
        let acc = accuracy(&run.model.predict(&data.features).unwrap(), &data.labels).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn loss_trend_is_downward_with_small_lr() {
        let data = separable_toy();
        let cfg = toy_config(2, 2);
        let run = scratch_train(&cfg, &quick(30, 1e-2), &data).unwrap();
        assert!(
            run.loss_trace.last().unwrap() <= run.loss_trace.first().unwrap(),
            "trace {:?}",
            run.loss_trace
        );
    }

    #[test]
    fn single_full_batch_step_is_exactly_one_sgd_update() {
        let data = separable_toy();
        let cfg = toy_config(2, 2);
        let train = TrainConfig {
            lr: 0.3,
            epochs: 1,
            batch_size: 8,
            momentum: 0.0,
            freeze_encoder: false,
            seed: 21,
        };
        let run = scratch_train(&cfg, &train, &data).unwrap();

        // Replicate: same init, same shuffled batch order, one gradient.
        let m0 = model::init_model(&cfg, 21).unwrap();
        let order = rng::shuffled_indices(&mut rng::stream(21, 0), 8);
        let xb = data.select_rows(&order).unwrap();
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &m0.params);
        let x = graph.constant(xb.features.clone());
        let loss =
            model::task_loss_on(&mut graph, &cfg, &bound, x, &xb.labels, 0.0, 0.0).unwrap();
        let grads = model::grad_params(&mut graph, loss, &bound).unwrap();
        let expected = crate::params::sgd_step(&m0.params, &grads, 0.3).unwrap();
        assert!(run.model.params.bit_eq(&expected));
    }

    #[test]
    fn finetune_with_zero_lr_keeps_fresh_head_and_encoder_bits() {
        let cfg = ModelConfig { hidden_dims: vec![3], ..toy_config(2, 2) };
        let pre = pretrain(&cfg, &quick(3, 0.1), &separable_toy()).unwrap().model;
        let ft_cfg = TrainConfig { lr: 0.0, ..quick(4, 0.0) };
        let ft = finetune(&pre, &ft_cfg, &separable_toy(), 2).unwrap().model;
        let fresh = model::reinit_head(&pre, 2, ft_cfg.seed).unwrap();
        assert!(ft.params.bit_eq(&fresh.params));
    }

    #[test]
    fn frozen_encoder_is_bit_invariant_under_training() {
        let cfg = ModelConfig { hidden_dims: vec![3], ..toy_config(2, 2) };
        let pre = pretrain(&cfg, &quick(2, 0.1), &separable_toy()).unwrap().model;
        let ft_cfg = TrainConfig { freeze_encoder: true, ..quick(5, 0.2) };
        let ft = finetune(&pre, &ft_cfg, &separable_toy(), 2).unwrap().model;
        for (name, value) in model::encoder_params(&pre).iter() {
            assert!(value.bit_eq(ft.params.tensor(name).unwrap()), "{name} changed");
        }
        // The head did move.
        let fresh = model::reinit_head(&pre, 2, ft_cfg.seed).unwrap();
        assert!(!ft.params.tensor("head.W").unwrap().bit_eq(fresh.params.tensor("head.W").unwrap()));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = separable_toy();
        let cfg = ModelConfig {
            hidden_dims: vec![3],
            noise_std: 0.05,
            ..toy_config(2, 2)
        };
        let cfg_train = TrainConfig { batch_size: 3, ..quick(4, 0.1) };
        let a = scratch_train(&cfg, &cfg_train, &data).unwrap();
        let b = scratch_train(&cfg, &cfg_train, &data).unwrap();
        assert!(a.model.params.bit_eq(&b.model.params));
        assert_eq!(a.loss_trace, b.loss_trace);
        let other = TrainConfig { seed: 6, ..cfg_train };
        let c = scratch_train(&cfg, &other, &data).unwrap();
        assert!(!a.model.params.bit_eq(&c.model.params));
    }

    #[test]
    fn momentum_changes_the_trajectory() {
        let data = separable_toy();
        let cfg = toy_config(2, 2);
        let plain = scratch_train(&cfg, &quick(5, 0.1), &data).unwrap();
        let heavy_cfg = TrainConfig { momentum: 0.9, ..quick(5, 0.1) };
        let heavy = scratch_train(&cfg, &heavy_cfg, &data).unwrap();
        assert!(!plain.model.params.bit_eq(&heavy.model.params));
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        let cfg = toy_config(2, 2);
        let empty = FeatureMatrix::new(Tensor::zeros(0, 2), vec![]).unwrap();
        assert!(matches!(
            scratch_train(&cfg, &quick(1, 0.1), &empty),
            Err(CoreError::Config(_))
        ));
    }
}
