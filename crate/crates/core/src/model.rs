//! The classifier: a tanh MLP encoder with a linear-softmax head, its
//! initialization, and the regularized training loss.
//!
//! The same architecture serves every pipeline: source pretraining, target
//! fine-tuning, episodic meta-training (which adapts all parameters), and
//! prototype-based classification (which uses the encoder only). Forward
//! passes exist in two forms that compute bit-identical values: plain tensor
//! evaluation for inference, and graph construction for training.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;
use crate::rng;
use crate::tensor::{smoothed_targets, Tensor};

/// Architecture and regularization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden layer widths; the last entry is the embedding dimension.
    /// Empty means the head acts on raw features (multinomial logistic
    /// regression).
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    /// L2 penalty λ on weight matrices (biases excluded): `λ·½‖W‖²`.
    pub weight_decay: f64,
    /// Label smoothing ε for the cross-entropy targets.
    pub label_smoothing: f64,
    /// Standard deviation of training-time Gaussian feature noise.
    pub noise_std: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.hidden_dims.iter().any(|&d| d < 1) {
            return Err(CoreError::Config("all layer dimensions must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(CoreError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(CoreError::Config("weight decay must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(CoreError::Config(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(CoreError::Config("noise std must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Output dimension of [`Model::embed`].
    pub fn embed_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Layer dimensions from input to embedding.
    fn dims(&self) -> Vec<usize> {
        let mut d = alloc::vec![self.input_dim];
        d.extend_from_slice(&self.hidden_dims);
        d
    }
}

/// A configured parameter collection. Parameter names, in order:
/// `layer0.W, layer0.b, …, head.W, head.b`, with each `W` shaped
/// (out_dim × in_dim) and each `b` a 1×out_dim row.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Expected (name, shape) layout for a configuration.
fn layout(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let dims = config.dims();
    let mut out = Vec::new();
    for i in 0..config.hidden_dims.len() {
        out.push((format!("layer{i}.W"), (dims[i + 1], dims[i])));
        out.push((format!("layer{i}.b"), (1, dims[i + 1])));
    }
    out.push(("head.W".into(), (config.num_classes, config.embed_dim())));
    out.push(("head.b".into(), (1, config.num_classes)));
    out
}

/// True for parameters the weight-decay penalty applies to.
pub fn is_weight(name: &str) -> bool {
    name.ends_with(".W")
}

/// He-style seeded initialization: weights uniform within `±√(6/fan_in)`,
/// biases exactly zero.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut gen = rng::seeded(seed);
    let mut params = ParamSet::new();
    for (name, (rows, cols)) in layout(config) {
        let value = if is_weight(&name) {
            rng::he_uniform(&mut gen, rows, cols, cols)?
        } else {
            Tensor::zeros(rows, cols)
        };
        params.insert(name, value)?;
    }
    Ok(Model { config: config.clone(), params })
}

impl Model {
    /// Wraps an existing parameter collection, validating its layout.
    pub fn with_params(config: ModelConfig, params: ParamSet) -> Result<Model> {
        config.validate()?;
        let expected = layout(&config);
        if params.len() != expected.len() {
            return Err(CoreError::Contract(format!(
                "expected {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(params.iter()) {
            if name != got_name {
                return Err(CoreError::Contract(format!(
                    "expected parameter {name:?}, got {got_name:?}"
                )));
            }
            if *shape != got.shape() {
                return Err(CoreError::ShapeMismatch { op: "model layout", lhs: *shape, rhs: got.shape() });
            }
        }
        Ok(Model { config, params })
    }

    /// The encoder output: tanh between hidden layers, the last hidden
    /// output returned unactivated. With no hidden layers this is `x`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let m = x.rows();
        let mut h = x.clone();
        let n_hidden = self.config.hidden_dims.len();
        for i in 0..n_hidden {
            let w = self.params.tensor(&format!("layer{i}.W"))?;
            let b = self.params.tensor(&format!("layer{i}.b"))?;
            let z = h.matmul(&w.transpose())?.add(&b.broadcast_row(m)?)?;
            h = if i + 1 < n_hidden { z.tanh()? } else { z };
        }
        Ok(h)
    }

    /// Class probabilities: embed, linear head, row softmax.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let e = self.embed(x)?;
        let w = self.params.tensor("head.W")?;
        let b = self.params.tensor("head.b")?;
        let logits = e.matmul(&w.transpose())?.add(&b.broadcast_row(e.rows())?)?;
        logits.softmax_rows()
    }

    /// Argmax class predictions (ties to the lowest index).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward(x)?.argmax_rows())
    }

    /// The training loss: smoothed cross-entropy plus `λ·½‖W‖²` over weight
    /// matrices. When a generator is passed and `noise_std > 0`, Gaussian
    /// feature noise is added to `x` first (training-time augmentation).
    pub fn task_loss(
        &self,
        x: &Tensor,
        labels: &[usize],
        noise_rng: Option<&mut impl Rng>,
    ) -> Result<f64> {
        self.check_input(x)?;
        let x = maybe_noised(x, self.config.noise_std, noise_rng)?;
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &self.params);
        let x_id = graph.constant(x);
        let loss = task_loss_on(
            &mut graph,
            &self.config,
            &bound,
            x_id,
            labels,
            self.config.weight_decay,
            self.config.label_smoothing,
        )?;
        graph.value(loss).item()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(CoreError::ShapeMismatch {
                op: "model input",
                lhs: x.shape(),
                rhs: (x.rows(), self.config.input_dim),
            });
        }
        Ok(())
    }
}

/// Adds seeded Gaussian noise with the given standard deviation, or returns
/// the input unchanged when `std` is zero or no generator is supplied.
pub fn maybe_noised(x: &Tensor, std: f64, noise_rng: Option<&mut impl Rng>) -> Result<Tensor> {
    match noise_rng {
        Some(r) if std > 0.0 => {
            let noise = rng::gaussian_tensor(r, x.rows(), x.cols(), std)?;
            x.add(&noise)
        }
        _ => Ok(x.clone()),
    }
}

/// Fresh head for a new label set; encoder parameters copied bit-exactly.
pub fn reinit_head(model: &Model, new_num_classes: usize, seed: u64) -> Result<Model> {
    if new_num_classes < 2 {
        return Err(CoreError::Config(format!(
            "need at least 2 classes, got {new_num_classes}"
        )));
    }
    let config = ModelConfig { num_classes: new_num_classes, ..model.config.clone() };
    let mut gen = rng::seeded(seed);
    let mut params = ParamSet::new();
    for (name, value) in model.params.iter() {
        if name.starts_with("head.") {
            continue;
        }
        params.insert(name, value.clone())?;
    }
    let e = config.embed_dim();
    params.insert("head.W", rng::he_uniform(&mut gen, new_num_classes, e, e)?)?;
    params.insert("head.b", Tensor::zeros(1, new_num_classes))?;
    Model::with_params(config, params)
}

/// The encoder subset of a model's parameters (everything but the head).
pub fn encoder_params(model: &Model) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, value) in model.params.iter() {
        if !name.starts_with("head.") {
            out.insert(name, value.clone()).expect("unique names");
        }
    }
    out
}

// ── graph-side forward passes ───────────────────────────────────────────

/// A parameter collection entered onto a graph, preserving name order.
/// The nodes may be trainable leaves (fresh binding) or arbitrary derived
/// nodes (adapted parameters mid-meta-step).
#[derive(Debug, Clone)]
pub struct BoundParams {
    entries: Vec<(String, NodeId)>,
}

impl BoundParams {
    /// Binds every tensor as a trainable leaf.
    pub fn bind(graph: &mut Graph, params: &ParamSet) -> BoundParams {
        let entries = params
            .iter()
            .map(|(name, t)| (String::from(name), graph.leaf(t.clone())))
            .collect();
        BoundParams { entries }
    }

    /// The bound node for a parameter name.
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .ok_or_else(|| CoreError::Index(format!("unknown parameter {name:?}")))
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.entries.iter().map(|&(_, id)| id).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names bound to replacement nodes (adapted parameters).
    pub fn with_ids(&self, ids: &[NodeId]) -> Result<BoundParams> {
        if ids.len() != self.entries.len() {
            return Err(CoreError::Contract(format!(
                "{} replacement nodes for {} parameters",
                ids.len(),
                self.entries.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(ids)
            .map(|((n, _), &id)| (n.clone(), id))
            .collect();
        Ok(BoundParams { entries })
    }

    /// Extracts current node values as a plain collection.
    pub fn values(&self, graph: &Graph) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, id) in &self.entries {
            out.insert(name.clone(), graph.value(*id).clone())?;
        }
        Ok(out)
    }
}

/// Gradients of a scalar loss with respect to every bound parameter,
/// returned with identical names, order, and shapes.
pub fn grad_params(graph: &mut Graph, loss: NodeId, params: &BoundParams) -> Result<ParamSet> {
    let grads = graph.grad(loss, &params.ids())?;
    let mut out = ParamSet::new();
    for ((name, _), grad) in params.entries.iter().zip(grads) {
        out.insert(name.clone(), grad)?;
    }
    Ok(out)
}

/// Encoder forward pass on a graph; same computation as [`Model::embed`].
pub fn embed_on(
    graph: &mut Graph,
    config: &ModelConfig,
    params: &BoundParams,
    x: NodeId,
) -> Result<NodeId> {
    let m = graph.shape(x).0;
    let mut h = x;
    let n_hidden = config.hidden_dims.len();
    for i in 0..n_hidden {
        let w = params.node(&format!("layer{i}.W"))?;
        let b = params.node(&format!("layer{i}.b"))?;
        let wt = graph.transpose(w)?;
        let z0 = graph.matmul(h, wt)?;
        let bb = graph.broadcast_row(b, m)?;
        let z = graph.add(z0, bb)?;
        h = if i + 1 < n_hidden { graph.tanh(z)? } else { z };
    }
    Ok(h)
}

/// Full forward pass to probabilities on a graph.
pub fn forward_on(
    graph: &mut Graph,
    config: &ModelConfig,
    params: &BoundParams,
    x: NodeId,
) -> Result<NodeId> {
    let e = embed_on(graph, config, params, x)?;
    let m = graph.shape(e).0;
    let w = params.node("head.W")?;
    let b = params.node("head.b")?;
    let wt = graph.transpose(w)?;
    let z0 = graph.matmul(e, wt)?;
    let bb = graph.broadcast_row(b, m)?;
    let logits = graph.add(z0, bb)?;
    graph.softmax_rows(logits)
}

/// Mean smoothed cross-entropy between probability rows and integer labels,
/// built from graph ops so it stays differentiable.
pub fn cross_entropy_on(
    graph: &mut Graph,
    probs: NodeId,
    labels: &[usize],
    smoothing: f64,
) -> Result<NodeId> {
    let (m, c) = graph.shape(probs);
    if m != labels.len() {
        return Err(CoreError::Contract(format!(
            "{m} probability rows but {} labels",
            labels.len()
        )));
    }
    let targets = graph.constant(smoothed_targets(labels, c, smoothing)?);
    let lp = graph.ln_clamp(probs)?;
    let weighted = graph.mul(targets, lp)?;
    let total = graph.sum_all(weighted)?;
    graph.affine(total, -1.0 / m as f64, 0.0)
}

/// The full training loss on a graph: smoothed cross-entropy of the forward
/// pass plus `weight_decay·½‖W‖²` over weight matrices (biases excluded).
pub fn task_loss_on(
    graph: &mut Graph,
    config: &ModelConfig,
    params: &BoundParams,
    x: NodeId,
    labels: &[usize],
    weight_decay: f64,
    smoothing: f64,
) -> Result<NodeId> {
    let probs = forward_on(graph, config, params, x)?;
    let ce = cross_entropy_on(graph, probs, labels, smoothing)?;
    if weight_decay == 0.0 {
        return Ok(ce);
    }
    let mut sq_sum: Option<NodeId> = None;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        if !is_weight(&name) {
            continue;
        }
        let w = params.node(&name)?;
        let sq = graph.mul(w, w)?;
        let s = graph.sum_all(sq)?;
        sq_sum = Some(match sq_sum {
            None => s,
            Some(acc) => graph.add(acc, s)?,
        });
    }
    match sq_sum {
        None => Ok(ce),
        Some(s) => {
            let reg = graph.affine(s, weight_decay * 0.5, 0.0)?;
            graph.add(ce, reg)
        }
    }
}
