//! Episodic meta-learning: N-way-K-shot task sampling, MAML meta-updates
//! (exact second-order and first-order), and prototypical networks.
//!
//! The second-order path builds every inner adaptation step as recorded
//! graph nodes, so the meta-gradient differentiates through them exactly.
//! The first-order path (FOMAML) adapts off-graph and applies the query
//! gradient at the adapted parameters directly; its gap to the exact
//! meta-gradient is O(inner_lr). With zero inner steps both collapse,
//! bit-exactly, to plain SGD on the mean query loss.
//!
//! Inside episodes the loss is always the bare cross-entropy: weight decay,
//! label smoothing, and feature noise are pipeline-level regularizers and
//! stay out of the bilevel structure.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{
    self, cross_entropy_on, embed_on, grad_params, task_loss_on, BoundParams, Model, ModelConfig,
};
use crate::params::{sgd_step, ParamSet};
use crate::rng;
use crate::tensor::Tensor;
use crate::text::FeatureMatrix;

/// One N-way-K-shot task: a support set for adaptation and a disjoint query
/// set for evaluation, with episode-local labels dense in `[0, way)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub support_x: Tensor,
    pub support_y: Vec<usize>,
    pub query_x: Tensor,
    pub query_y: Vec<usize>,
    /// Original class index behind each episode-local label.
    pub class_origin: Vec<usize>,
}

/// Whether the meta-gradient differentiates through the inner updates
/// (`Second`) or approximates their Jacobian as identity (`First`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaOrder {
    First,
    Second,
}

/// Settings for episodic training.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    /// Inner adaptation step size α.
    pub inner_lr: f64,
    /// Inner adaptation step count s (0 collapses to pooled SGD).
    pub inner_steps: usize,
    /// Outer (meta) step size β.
    pub outer_lr: f64,
    /// Episodes per meta-update.
    pub meta_batch: usize,
    pub episodes_total: usize,
    pub order: MetaOrder,
    pub seed: u64,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(CoreError::Config(alloc::format!("way must be at least 2, got {}", self.way)));
        }
        if self.shot < 1 || self.queries < 1 {
            return Err(CoreError::Config("shot and queries must be at least 1".into()));
        }
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(CoreError::Config(alloc::format!(
                "inner learning rate must be positive, got {}",
                self.inner_lr
            )));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return Err(CoreError::Config(alloc::format!(
                "outer learning rate must be positive, got {}",
                self.outer_lr
            )));
        }
        if self.meta_batch < 1 {
            return Err(CoreError::Config("meta batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws the episode for `(meta.seed, episode_index)`: `way` classes chosen
/// uniformly without replacement among classes with at least `shot+queries`
/// documents, then `shot+queries` documents per class without replacement,
/// the first `shot` forming the support set. Reproducible per (seed, index).
pub fn sample_episode(
    features: &FeatureMatrix,
    meta: &MetaConfig,
    episode_index: u64,
) -> Result<Episode> {
    let need = meta.shot + meta.queries;
    let by_class = features.indices_by_class();
    let qualifying: Vec<usize> = (0..by_class.len())
        .filter(|&c| by_class[c].len() >= need)
        .collect();
    if qualifying.len() < meta.way {
        return Err(CoreError::Sampling(alloc::format!(
            "episode needs {} classes with at least {need} documents each, \
             but only {} of {} classes qualify",
            meta.way,
            qualifying.len(),
            by_class.len()
        )));
    }

    let mut gen = rng::stream(meta.seed, episode_index);
    let class_order = rng::shuffled_indices(&mut gen, qualifying.len());
    let chosen: Vec<usize> = class_order[..meta.way].iter().map(|&i| qualifying[i]).collect();

    let mut support_rows = Vec::with_capacity(meta.way * meta.shot);
    let mut query_rows = Vec::with_capacity(meta.way * meta.queries);
    for &class in &chosen {
        let pool = &by_class[class];
        let order = rng::shuffled_indices(&mut gen, pool.len());
        let picked: Vec<usize> = order[..need].iter().map(|&i| pool[i]).collect();
        support_rows.extend_from_slice(&picked[..meta.shot]);
        query_rows.extend_from_slice(&picked[meta.shot..]);
    }

    let gather = |rows: &[usize], per_class: usize| -> Result<(Tensor, Vec<usize>)> {
        let labels = (0..meta.way).flat_map(|c| core::iter::repeat_n(c, per_class)).collect();
        Ok((features.select_rows(rows)?.features, labels))
    };
    let (support_x, support_y) = gather(&support_rows, meta.shot)?;
    let (query_x, query_y) = gather(&query_rows, meta.queries)?;
    Ok(Episode {
        way: meta.way,
        shot: meta.shot,
        queries_per_class: meta.queries,
        support_x,
        support_y,
        query_x,
        query_y,
        class_origin: chosen,
    })
}

fn check_episode(config: &ModelConfig, ep: &Episode) -> Result<()> {
    if ep.way != config.num_classes {
        return Err(CoreError::Config(alloc::format!(
            "episode is {}-way but the model head has {} classes",
            ep.way, config.num_classes
        )));
    }
    if ep.support_x.cols() != config.input_dim {
        return Err(CoreError::ShapeMismatch {
            op: "episode features",
            lhs: ep.support_x.shape(),
            rhs: (ep.support_x.rows(), config.input_dim),
        });
    }
    Ok(())
}

/// `s` full-batch gradient steps on the support loss, off-graph. This is
/// FOMAML's inner loop and the evaluation-time adaptation; the returned
/// values are bit-identical to what the recorded second-order inner loop
/// computes for the same inputs.
pub fn inner_adapt(
    model: &Model,
    support_x: &Tensor,
    support_y: &[usize],
    inner_lr: f64,
    steps: usize,
) -> Result<ParamSet> {
    let mut params = model.params.clone();
    for _ in 0..steps {
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &params);
        let x = graph.constant(support_x.clone());
        let loss = task_loss_on(&mut graph, &model.config, &bound, x, support_y, 0.0, 0.0)?;
        let grads = grad_params(&mut graph, loss, &bound)?;
        params = sgd_step(&params, &grads, inner_lr)?;
    }
    Ok(params)
}

/// The recorded twin of [`inner_adapt`]: every step's gradient and update
/// become graph nodes, so the result stays differentiable w.r.t. the
/// original parameters.
fn inner_adapt_on(
    graph: &mut Graph,
    config: &ModelConfig,
    bound: &BoundParams,
    support_x: NodeId,
    support_y: &[usize],
    inner_lr: f64,
    steps: usize,
) -> Result<BoundParams> {
    let mut cur = bound.clone();
    for _ in 0..steps {
        let loss = task_loss_on(graph, config, &cur, support_x, support_y, 0.0, 0.0)?;
        let grads = graph.grad_recorded(loss, &cur.ids())?;
        let mut next = Vec::with_capacity(grads.len());
        for (theta, g) in cur.ids().into_iter().zip(grads) {
            let step = graph.affine(g, inner_lr, 0.0)?;
            next.push(graph.sub(theta, step)?);
        }
        cur = cur.with_ids(&next)?;
    }
    Ok(cur)
}

/// `(episode losses sum) / n` built as graph nodes; the single shared
/// scaling node keeps per-episode adjoints bit-identical across the
/// second-order, first-order, and pooled code paths.
fn mean_chain(graph: &mut Graph, losses: &[NodeId]) -> Result<NodeId> {
    let mut acc = losses[0];
    for &l in &losses[1..] {
        acc = graph.add(acc, l)?;
    }
    graph.affine(acc, 1.0 / losses.len() as f64, 0.0)
}

/// Result of one meta-update: the stepped model plus the query loss of each
/// episode (measured at the adapted parameters, before the outer step).
#[derive(Debug, Clone)]
pub struct MetaStep {
    pub model: Model,
    pub episode_losses: Vec<f64>,
}

/// One outer MAML update over a batch of episodes: adapt on each support
/// set, average the query losses, and step the initial parameters against
/// the meta-gradient — exact (differentiated through the recorded inner
/// steps) for [`MetaOrder::Second`], or the query gradient at the adapted
/// parameters for [`MetaOrder::First`].
pub fn maml_meta_step(model: &Model, episodes: &[Episode], meta: &MetaConfig) -> Result<MetaStep> {
    if episodes.is_empty() {
        return Err(CoreError::Contract("meta step needs at least one episode".into()));
    }
    for ep in episodes {
        check_episode(&model.config, ep)?;
    }
    let (grads, episode_losses) = match meta.order {
        MetaOrder::Second => {
            let mut graph = Graph::new();
            let bound = BoundParams::bind(&mut graph, &model.params);
            let mut q_losses = Vec::with_capacity(episodes.len());
            for ep in episodes {
                let sx = graph.constant(ep.support_x.clone());
                let adapted = inner_adapt_on(
                    &mut graph,
                    &model.config,
                    &bound,
                    sx,
                    &ep.support_y,
                    meta.inner_lr,
                    meta.inner_steps,
                )?;
                let qx = graph.constant(ep.query_x.clone());
                let ql =
                    task_loss_on(&mut graph, &model.config, &adapted, qx, &ep.query_y, 0.0, 0.0)?;
                q_losses.push(ql);
            }
            let losses = q_losses
                .iter()
                .map(|&l| graph.value(l).item())
                .collect::<Result<Vec<_>>>()?;
            let meta_loss = mean_chain(&mut graph, &q_losses)?;
            let grad_tensors = graph.grad_through_grad(meta_loss, &bound.ids())?;
            let mut grads = ParamSet::new();
            for (name, g) in bound.names().zip(grad_tensors) {
                grads.insert(name, g)?;
            }
            (grads, losses)
        }
        MetaOrder::First => {
            let scale = 1.0 / episodes.len() as f64;
            let mut total: Option<ParamSet> = None;
            let mut losses = Vec::with_capacity(episodes.len());
            for ep in episodes {
                let adapted = inner_adapt(
                    model,
                    &ep.support_x,
                    &ep.support_y,
                    meta.inner_lr,
                    meta.inner_steps,
                )?;
                let mut graph = Graph::new();
                let bound = BoundParams::bind(&mut graph, &adapted);
                let qx = graph.constant(ep.query_x.clone());
                let ql =
                    task_loss_on(&mut graph, &model.config, &bound, qx, &ep.query_y, 0.0, 0.0)?;
                losses.push(graph.value(ql).item()?);
                let scaled = graph.affine(ql, scale, 0.0)?;
                let g = grad_params(&mut graph, scaled, &bound)?;
                total = Some(match total {
                    None => g,
                    Some(acc) => acc.add(&g)?,
                });
            }
            (total.expect("episodes checked non-empty"), losses)
        }
    };
    let params = sgd_step(&model.params, &grads, meta.outer_lr)?;
    Ok(MetaStep {
        model: Model { config: model.config.clone(), params },
        episode_losses,
    })
}

/// The degenerate comparator: one SGD step on the mean query loss at the
/// unadapted parameters. With `inner_steps = 0` both MAML orders produce
/// exactly this update, bit for bit.
pub fn pooled_query_step(
    model: &Model,
    episodes: &[Episode],
    meta: &MetaConfig,
) -> Result<MetaStep> {
    if episodes.is_empty() {
        return Err(CoreError::Contract("meta step needs at least one episode".into()));
    }
    for ep in episodes {
        check_episode(&model.config, ep)?;
    }
    let mut graph = Graph::new();
    let bound = BoundParams::bind(&mut graph, &model.params);
    let mut q_losses = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let qx = graph.constant(ep.query_x.clone());
        let ql = task_loss_on(&mut graph, &model.config, &bound, qx, &ep.query_y, 0.0, 0.0)?;
        q_losses.push(ql);
    }
    let losses = q_losses.iter().map(|&l| graph.value(l).item()).collect::<Result<Vec<_>>>()?;
    let pooled = mean_chain(&mut graph, &q_losses)?;
    let grads = grad_params(&mut graph, pooled, &bound)?;
    let params = sgd_step(&model.params, &grads, meta.outer_lr)?;
    Ok(MetaStep {
        model: Model { config: model.config.clone(), params },
        episode_losses: losses,
    })
}

/// A meta-trained model plus the query loss of every consumed episode, in
/// consumption order.
#[derive(Debug, Clone)]
pub struct MetaRun {
    pub model: Model,
    pub loss_trace: Vec<f64>,
}

fn starting_model(config: &ModelConfig, meta: &MetaConfig, init: Option<&Model>) -> Result<Model> {
    match init {
        // Transfer + meta: keep the pretrained encoder, fresh way-sized head.
        Some(m) => model::reinit_head(m, meta.way, meta.seed),
        None => model::init_model(&ModelConfig { num_classes: meta.way, ..config.clone() }, meta.seed),
    }
}

/// MAML training: `episodes_total` episodes consumed in `meta_batch`
/// groups, one outer update per group. `init` seeds the encoder from a
/// pretrained model (its head is replaced to match `way`).
pub fn meta_train(
    config: &ModelConfig,
    meta: &MetaConfig,
    features: &FeatureMatrix,
    init: Option<&Model>,
) -> Result<MetaRun> {
    meta.validate()?;
    let mut model = starting_model(config, meta, init)?;
    let mut loss_trace = Vec::with_capacity(meta.episodes_total);
    let mut next = 0u64;
    while (next as usize) < meta.episodes_total {
        let end = (next + meta.meta_batch as u64).min(meta.episodes_total as u64);
        let episodes = (next..end)
            .map(|i| sample_episode(features, meta, i))
            .collect::<Result<Vec<_>>>()?;
        let step = maml_meta_step(&model, &episodes, meta)?;
        model = step.model;
        loss_trace.extend(step.episode_losses);
        next = end;
    }
    Ok(MetaRun { model, loss_trace })
}

// ── prototypical networks ───────────────────────────────────────────────

/// The (way × n) matrix averaging rows by label: entry (c, i) is
/// `1/count_c` when `labels[i] == c`. Multiplying it onto an embedding
/// matrix yields per-class mean rows.
fn averaging_matrix(labels: &[usize], way: usize) -> Result<Tensor> {
    let mut counts = vec![0usize; way];
    for &l in labels {
        if l >= way {
            return Err(CoreError::Index(alloc::format!(
                "label {l} out of range for {way} classes"
            )));
        }
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(CoreError::Contract(alloc::format!(
            "class {empty} has no support embeddings"
        )));
    }
    Tensor::from_fn(way, labels.len(), |c, i| {
        if labels[i] == c {
            1.0 / counts[c] as f64
        } else {
            0.0
        }
    })
}

/// Per-class means of the embedding rows. Every class in `[0, way)` must
/// have at least one member.
pub fn protonet_prototypes(embeddings: &Tensor, labels: &[usize], way: usize) -> Result<Tensor> {
    if embeddings.rows() != labels.len() {
        return Err(CoreError::Contract(alloc::format!(
            "{} embeddings but {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    averaging_matrix(labels, way)?.matmul(embeddings)
}

/// Softmax over negative squared Euclidean distances to the prototypes:
/// row i, column c is the probability of class c for query i.
pub fn protonet_classify(query_emb: &Tensor, prototypes: &Tensor) -> Result<Tensor> {
    let d2 = squared_distances(query_emb, prototypes)?;
    d2.affine(-1.0, 0.0)?.softmax_rows()
}

/// Pairwise squared distances via `‖q‖² + ‖p‖² - 2q·p`.
fn squared_distances(query: &Tensor, protos: &Tensor) -> Result<Tensor> {
    if query.cols() != protos.cols() {
        return Err(CoreError::ShapeMismatch {
            op: "squared_distances",
            lhs: query.shape(),
            rhs: protos.shape(),
        });
    }
    let q2 = query.mul(query)?.row_sums().broadcast_col(protos.rows())?;
    let p2 = protos.mul(protos)?.row_sums().transpose().broadcast_row(query.rows())?;
    let cross = query.matmul(&protos.transpose())?.affine(-2.0, 0.0)?;
    q2.add(&p2)?.add(&cross)
}

/// Graph twin of [`protonet_classify`] composed of the same primitives in
/// the same order.
fn protonet_classify_on(graph: &mut Graph, query: NodeId, protos: NodeId) -> Result<NodeId> {
    let (m, _) = graph.shape(query);
    let n = graph.shape(protos).0;
    let qq = graph.mul(query, query)?;
    let q2 = graph.row_sums(qq)?;
    let q2b = graph.broadcast_col(q2, n)?;
    let pp = graph.mul(protos, protos)?;
    let p2 = graph.row_sums(pp)?;
    let p2t = graph.transpose(p2)?;
    let p2b = graph.broadcast_row(p2t, m)?;
    let pt = graph.transpose(protos)?;
    let qp = graph.matmul(query, pt)?;
    let cross = graph.affine(qp, -2.0, 0.0)?;
    let sum = graph.add(q2b, p2b)?;
    let d2 = graph.add(sum, cross)?;
    let neg = graph.affine(d2, -1.0, 0.0)?;
    graph.softmax_rows(neg)
}

/// Query cross-entropy of one episode under prototype classification,
/// differentiable w.r.t. the bound encoder parameters.
fn protonet_episode_loss_on(
    graph: &mut Graph,
    config: &ModelConfig,
    encoder: &BoundParams,
    ep: &Episode,
) -> Result<NodeId> {
    let sx = graph.constant(ep.support_x.clone());
    let qx = graph.constant(ep.query_x.clone());
    let s_emb = embed_on(graph, config, encoder, sx)?;
    let q_emb = embed_on(graph, config, encoder, qx)?;
    let avg = graph.constant(averaging_matrix(&ep.support_y, ep.way)?);
    let protos = graph.matmul(avg, s_emb)?;
    let probs = protonet_classify_on(graph, q_emb, protos)?;
    cross_entropy_on(graph, probs, &ep.query_y, 0.0)
}

/// Episodic prototype training of the encoder: per meta-batch, the mean
/// episode loss is minimized by one SGD step of size `outer_lr` on the
/// encoder parameters only (the model head is carried along untouched;
/// `inner_lr`/`inner_steps`/`order` are MAML-specific and ignored here).
pub fn protonet_train(
    config: &ModelConfig,
    meta: &MetaConfig,
    features: &FeatureMatrix,
    init: Option<&Model>,
) -> Result<MetaRun> {
    meta.validate()?;
    let mut model = starting_model(config, meta, init)?;
    let mut loss_trace = Vec::with_capacity(meta.episodes_total);
    let mut next = 0u64;
    while (next as usize) < meta.episodes_total {
        let end = (next + meta.meta_batch as u64).min(meta.episodes_total as u64);
        let episodes = (next..end)
            .map(|i| sample_episode(features, meta, i))
            .collect::<Result<Vec<_>>>()?;
        for ep in &episodes {
            check_episode(&model.config, ep)?;
        }

        let encoder = model::encoder_params(&model);
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &encoder);
        let mut losses = Vec::with_capacity(episodes.len());
        for ep in &episodes {
            losses.push(protonet_episode_loss_on(&mut graph, &model.config, &bound, ep)?);
        }
        for &l in &losses {
            loss_trace.push(graph.value(l).item()?);
        }
        let pooled = mean_chain(&mut graph, &losses)?;
        let grads = grad_params(&mut graph, pooled, &bound)?;
        let updated = sgd_step(&encoder, &grads, meta.outer_lr)?;
        for (name, value) in updated.iter() {
            model.params.set(name, value.clone())?;
        }
        next = end;
    }
    Ok(MetaRun { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden_dims: vec![2],
            num_classes: 2,
            weight_decay: 0.0,
            label_smoothing: 0.0,
            noise_std: 0.0,
        }
    }

    fn meta_config() -> MetaConfig {
        MetaConfig {
            way: 2,
            shot: 3,
            queries: 4,
            inner_lr: 0.05,
            inner_steps: 1,
            outer_lr: 0.1,
            meta_batch: 2,
            episodes_total: 4,
            order: MetaOrder::Second,
            seed: 42,
        }
    }

    /// Gaussian class blobs: `classes` clusters of `per_class` points in
    /// `dim` dimensions around seeded centers, with within-cluster spread
    /// `std` (small = nearly separable, large = overlapping).
    fn blob_features(
        classes: usize,
        per_class: usize,
        dim: usize,
        seed: u64,
        std: f64,
    ) -> FeatureMatrix {
        let mut gen = rng::seeded(seed);
        let centers = rng::uniform_tensor(&mut gen, classes, dim, -3.0, 3.0).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            let noise = rng::gaussian_tensor(&mut gen, per_class, dim, std).unwrap();
            for i in 0..per_class {
                for j in 0..dim {
                    data.push(centers.get(c, j) + noise.get(i, j));
                }
                labels.push(c);
            }
        }
        FeatureMatrix::new(
            Tensor::new(classes * per_class, dim, data).unwrap(),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn episode_counts_and_disjointness() {
        let features = blob_features(6, 25, 3, 1, 0.4);
        let meta = MetaConfig { way: 5, shot: 5, queries: 15, ..meta_config() };
        let ep = sample_episode(&features, &meta, 0).unwrap();
        assert_eq!(ep.support_x.shape(), (25, 3));
        assert_eq!(ep.query_x.shape(), (75, 3));
        assert_eq!(ep.support_y.len(), 25);
        assert_eq!(ep.query_y.len(), 75);
        // Labels dense and correctly grouped.
        for c in 0..5 {
            assert_eq!(ep.support_y.iter().filter(|&&l| l == c).count(), 5);
            assert_eq!(ep.query_y.iter().filter(|&&l| l == c).count(), 15);
        }
        // Same (seed, index) reproduces bit-exactly; other indices differ.
        let again = sample_episode(&features, &meta, 0).unwrap();
        assert_eq!(ep, again);
        let other = sample_episode(&features, &meta, 1).unwrap();
        assert_ne!(ep, other);
    }

    #[test]
    fn episode_uses_all_classes_when_way_is_total() {
        let features = blob_features(4, 10, 3, 2, 0.4);
        let meta = MetaConfig { way: 4, shot: 2, queries: 2, ..meta_config() };
        let ep = sample_episode(&features, &meta, 3).unwrap();
        let mut origin = ep.class_origin.clone();
        origin.sort_unstable();
        assert_eq!(origin, vec![0, 1, 2, 3]);
    }

    #[test]
    fn episode_sampler_names_the_deficit() {
        let features = blob_features(3, 4, 3, 3, 0.4);
        let meta = MetaConfig { way: 3, shot: 3, queries: 3, ..meta_config() };
        let err = sample_episode(&features, &meta, 0).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("at least 6"), "message: {msg}");
        assert!(msg.contains("0 of 3"), "message: {msg}");
    }

    #[test]
    fn episode_invariants_hold_across_many_draws() {
        let features = blob_features(7, 12, 3, 4, 0.4);
        let meta = MetaConfig { way: 4, shot: 3, queries: 5, ..meta_config() };
        for index in 0..200 {
            let ep = sample_episode(&features, &meta, index).unwrap();
            // Support/query rows must come from disjoint documents. Rows are
            // unique per document here, so compare feature rows directly.
            let mut seen: Vec<&[f64]> = Vec::new();
            for i in 0..ep.support_x.rows() {
                seen.push(ep.support_x.row(i));
            }
            for i in 0..ep.query_x.rows() {
                assert!(
                    !seen.contains(&ep.query_x.row(i)),
                    "episode {index}: query row duplicated in support"
                );
            }
            // Dense episode-local labels with exact counts.
            for c in 0..meta.way {
                assert_eq!(ep.support_y.iter().filter(|&&l| l == c).count(), meta.shot);
                assert_eq!(ep.query_y.iter().filter(|&&l| l == c).count(), meta.queries);
            }
            // class_origin has no repeats.
            let mut origin = ep.class_origin.clone();
            origin.sort_unstable();
            origin.dedup();
            assert_eq!(origin.len(), meta.way);
        }
    }

    #[test]
    fn inner_adapt_zero_steps_or_zero_lr_is_identity() {
        let features = blob_features(2, 8, 3, 5, 0.4);
        let meta = MetaConfig { shot: 3, queries: 3, ..meta_config() };
        let ep = sample_episode(&features, &meta, 0).unwrap();
        let m = model::init_model(&tiny_config(), 7).unwrap();
        let zero_steps = inner_adapt(&m, &ep.support_x, &ep.support_y, 0.05, 0).unwrap();
        assert!(zero_steps.bit_eq(&m.params));
        let zero_lr = inner_adapt(&m, &ep.support_x, &ep.support_y, 0.0, 3).unwrap();
        assert!(zero_lr.bit_eq(&m.params));
    }

    #[test]
    fn inner_adapt_single_step_matches_manual_sgd() {
        let features = blob_features(2, 8, 3, 6, 0.4);
        let meta = MetaConfig { shot: 3, queries: 3, ..meta_config() };
        let ep = sample_episode(&features, &meta, 1).unwrap();
        let m = model::init_model(&tiny_config(), 11).unwrap();

        let adapted = inner_adapt(&m, &ep.support_x, &ep.support_y, 0.07, 1).unwrap();

        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &m.params);
        let x = graph.constant(ep.support_x.clone());
        let loss =
            task_loss_on(&mut graph, &m.config, &bound, x, &ep.support_y, 0.0, 0.0).unwrap();
        let grads = grad_params(&mut graph, loss, &bound).unwrap();
        let expected = sgd_step(&m.params, &grads, 0.07).unwrap();
        assert!(adapted.bit_eq(&expected));
    }

    #[test]
    fn second_order_meta_gradient_matches_finite_differences() {
        let features = blob_features(3, 10, 3, 8, 0.4);
        for steps in [1usize, 2] {
            let meta = MetaConfig {
                shot: 3,
                queries: 3,
                inner_steps: steps,
                meta_batch: 1,
                ..meta_config()
            };
            let cfg = tiny_config();
            let m = model::init_model(&cfg, 19).unwrap();
            let ep = sample_episode(&features, &meta, 0).unwrap();

            // Analytic meta-gradient, recovered from the outer step.
            let stepped = maml_meta_step(&m, core::slice::from_ref(&ep), &meta).unwrap();
            let mut analytic = ParamSet::new();
            for ((name, before), (_, after)) in m.params.iter().zip(stepped.model.params.iter()) {
                let g = before.sub(after).unwrap().affine(1.0 / meta.outer_lr, 0.0).unwrap();
                analytic.insert(name, g).unwrap();
            }

            // The meta-loss as a plain function of θ for the oracle.
            let objective = |p: &ParamSet| -> crate::error::Result<f64> {
                let trial = Model::with_params(cfg.clone(), p.clone())?;
                let adapted =
                    inner_adapt(&trial, &ep.support_x, &ep.support_y, meta.inner_lr, steps)?;
                let adapted_model = Model::with_params(cfg.clone(), adapted)?;
                adapted_model.task_loss(
                    &ep.query_x,
                    &ep.query_y,
                    None::<&mut rand_chacha::ChaCha20Rng>,
                )
            };
            let numeric =
                gradcheck::central_diff_params(objective, &m.params, gradcheck::DEFAULT_STEP)
                    .unwrap();
            let err = gradcheck::max_rel_err_params(&analytic, &numeric).unwrap();
            assert!(err < 1e-4, "s={steps}: max rel err {err}");
        }
    }

    #[test]
    fn fomaml_gap_shrinks_linearly_with_inner_lr() {
        let features = blob_features(3, 10, 3, 9, 0.4);
        let cfg = tiny_config();
        let m = model::init_model(&cfg, 23).unwrap();
        let base = MetaConfig { shot: 3, queries: 4, meta_batch: 1, ..meta_config() };
        let ep = sample_episode(&features, &base, 2).unwrap();

        let gap_at = |alpha: f64| -> f64 {
            let mut second_cfg = MetaConfig { inner_lr: alpha, ..base.clone() };
            second_cfg.order = MetaOrder::Second;
            let second = maml_meta_step(&m, core::slice::from_ref(&ep), &second_cfg).unwrap();
            let mut first_cfg = second_cfg.clone();
            first_cfg.order = MetaOrder::First;
            let first = maml_meta_step(&m, core::slice::from_ref(&ep), &first_cfg).unwrap();
            // ‖g₂ − g₁‖ / ‖g₂‖ over all parameters, reading the gradients
            // back out of the outer updates.
            let mut diff_sq = 0.0;
            let mut norm_sq = 0.0;
            for ((_, s), ((_, f), (_, orig))) in second
                .model
                .params
                .iter()
                .zip(first.model.params.iter().zip(m.params.iter()))
            {
                for ((sv, fv), ov) in s.data().iter().zip(f.data()).zip(orig.data()) {
                    let gs = ov - sv;
                    let gf = ov - fv;
                    diff_sq += (gs - gf) * (gs - gf);
                    norm_sq += gs * gs;
                }
            }
            (diff_sq / norm_sq).sqrt()
        };

        let coarse = gap_at(1e-2);
        let fine = gap_at(1e-4);
        assert!(
            fine <= 0.1 * coarse,
            "gap did not shrink linearly: {coarse} at 1e-2 vs {fine} at 1e-4"
        );
    }

    #[test]
    fn zero_inner_steps_collapse_to_pooled_sgd_bit_exactly() {
        let features = blob_features(4, 10, 3, 10, 0.4);
        let cfg = tiny_config();
        let m = model::init_model(&cfg, 29).unwrap();
        let meta = MetaConfig { shot: 2, queries: 3, inner_steps: 0, meta_batch: 3, ..meta_config() };
        let episodes: Vec<Episode> =
            (0..3).map(|i| sample_episode(&features, &meta, i).unwrap()).collect();

        let second = maml_meta_step(&m, &episodes, &MetaConfig { order: MetaOrder::Second, ..meta.clone() })
            .unwrap();
        let first = maml_meta_step(&m, &episodes, &MetaConfig { order: MetaOrder::First, ..meta.clone() })
            .unwrap();
        let pooled = pooled_query_step(&m, &episodes, &meta).unwrap();

        assert!(second.model.params.bit_eq(&pooled.model.params));
        assert!(first.model.params.bit_eq(&pooled.model.params));
        assert_eq!(second.episode_losses, pooled.episode_losses);
        assert_eq!(first.episode_losses, pooled.episode_losses);
    }

    #[test]
    fn meta_train_zero_episodes_returns_start_unchanged() {
        let features = blob_features(3, 10, 3, 11, 0.4);
        let cfg = tiny_config();
        let meta = MetaConfig { episodes_total: 0, ..meta_config() };
        let fresh = meta_train(&cfg, &meta, &features, None).unwrap();
        let expect = model::init_model(
            &ModelConfig { num_classes: meta.way, ..cfg.clone() },
            meta.seed,
        )
        .unwrap();
        assert!(fresh.model.params.bit_eq(&expect.params));
        assert!(fresh.loss_trace.is_empty());

        let pre = model::init_model(&ModelConfig { num_classes: 7, ..cfg.clone() }, 3).unwrap();
        let seeded = meta_train(&cfg, &meta, &features, Some(&pre)).unwrap();
        let expect2 = model::reinit_head(&pre, meta.way, meta.seed).unwrap();
        assert!(seeded.model.params.bit_eq(&expect2.params));
    }

    #[test]
    fn meta_train_loss_trends_downward() {
        let features = blob_features(5, 12, 4, 12, 1.0);
        let cfg = ModelConfig { input_dim: 4, ..tiny_config() };
        let meta = MetaConfig {
            way: 3,
            shot: 2,
            queries: 4,
            inner_steps: 1,
            outer_lr: 0.5,
            episodes_total: 40,
            meta_batch: 4,
            ..meta_config()
        };
        let run = meta_train(&cfg, &meta, &features, None).unwrap();
        assert_eq!(run.loss_trace.len(), 40);
        let first10: f64 = run.loss_trace[..10].iter().sum::<f64>() / 10.0;
        let last10: f64 = run.loss_trace[30..].iter().sum::<f64>() / 10.0;
        assert!(last10 < first10, "first {first10} vs last {last10}");

        // Deterministic per seed.
        let rerun = meta_train(&cfg, &meta, &features, None).unwrap();
        assert!(run.model.params.bit_eq(&rerun.model.params));
        assert_eq!(run.loss_trace, rerun.loss_trace);
    }

    #[test]
    fn prototypes_are_class_means() {
        let emb = Tensor::new(3, 2, vec![0.0, 0.0, 2.0, 4.0, 6.0, -2.0]).unwrap();
        let protos = protonet_prototypes(&emb, &[0, 0, 1], 2).unwrap();
        assert_eq!(protos.row(0), &[1.0, 2.0]);
        assert_eq!(protos.row(1), &[6.0, -2.0]);

        // K=1: prototype equals the single embedding.
        let single = protonet_prototypes(&emb, &[0, 1, 2], 3).unwrap();
        assert!(single.bit_eq(&emb));

        // A class with no members is a contract error.
        assert!(protonet_prototypes(&emb, &[0, 0, 0], 2).is_err());
    }

    #[test]
    fn classify_matches_hand_computed_softmax() {
        // One query at distance² 1 and 4 from two prototypes:
        // probabilities softmax([-1, -4]), evaluated independently.
        let protos = Tensor::new(2, 1, vec![0.0, 3.0]).unwrap();
        let query = Tensor::new(1, 1, vec![1.0]).unwrap();
        let p = protonet_classify(&query, &protos).unwrap();
        assert!((p.get(0, 0) - 0.9525741268224333).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.047425873177566774).abs() < 1e-15);
    }

    #[test]
    fn classify_symmetry_and_nearest_prototype() {
        // Equidistant query → uniform.
        let protos = Tensor::new(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let query = Tensor::new(1, 2, vec![0.0, 5.0]).unwrap();
        let p = protonet_classify(&query, &protos).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-12);

        // Query sitting on a prototype → that class wins.
        let at_proto = Tensor::new(1, 2, vec![-1.0, 0.0]).unwrap();
        let p2 = protonet_classify(&at_proto, &protos).unwrap();
        assert_eq!(p2.argmax_rows(), vec![1]);
    }

    #[test]
    fn one_shot_classification_is_nearest_neighbor() {
        let mut gen = rng::seeded(31);
        let protos = rng::uniform_tensor(&mut gen, 5, 4, -1.0, 1.0).unwrap();
        let queries = rng::uniform_tensor(&mut gen, 200, 4, -1.5, 1.5).unwrap();
        let probs = protonet_classify(&queries, &protos).unwrap();
        let predicted = probs.argmax_rows();
        for (i, &hit) in predicted.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..protos.rows() {
                let d: f64 = queries
                    .row(i)
                    .iter()
                    .zip(protos.row(c))
                    .map(|(q, p)| (q - p) * (q - p))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assert_eq!(hit, best, "query {i}");
        }
    }

    #[test]
    fn classification_is_translation_invariant() {
        let mut gen = rng::seeded(37);
        let protos = rng::uniform_tensor(&mut gen, 4, 3, -1.0, 1.0).unwrap();
        let queries = rng::uniform_tensor(&mut gen, 20, 3, -1.0, 1.0).unwrap();
        let shift = [13.5, -7.25, 2.0];
        let shifted_p = Tensor::from_fn(4, 3, |i, j| protos.get(i, j) + shift[j]).unwrap();
        let shifted_q = Tensor::from_fn(20, 3, |i, j| queries.get(i, j) + shift[j]).unwrap();
        let a = protonet_classify(&queries, &protos).unwrap();
        let b = protonet_classify(&shifted_q, &shifted_p).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn protonet_episode_gradient_matches_finite_differences() {
        let features = blob_features(3, 8, 3, 13, 0.4);
        let meta = MetaConfig { way: 3, shot: 2, queries: 3, ..meta_config() };
        let cfg = ModelConfig { num_classes: 3, ..tiny_config() };
        let m = model::init_model(&cfg, 41).unwrap();
        let ep = sample_episode(&features, &meta, 0).unwrap();

        let encoder = model::encoder_params(&m);
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &encoder);
        let loss = protonet_episode_loss_on(&mut graph, &cfg, &bound, &ep).unwrap();
        let analytic = grad_params(&mut graph, loss, &bound).unwrap();

        let numeric = gradcheck::central_diff_params(
            |enc: &ParamSet| {
                let mut graph = Graph::new();
                let bound = BoundParams::bind(&mut graph, enc);
                let loss = protonet_episode_loss_on(&mut graph, &cfg, &bound, &ep)?;
                graph.value(loss).item()
            },
            &encoder,
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        let err = gradcheck::max_rel_err_params(&analytic, &numeric).unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn protonet_train_trends_downward_and_is_deterministic() {
        let features = blob_features(5, 12, 4, 14, 1.0);
        let cfg = ModelConfig { input_dim: 4, num_classes: 3, ..tiny_config() };
        let meta = MetaConfig {
            way: 3,
            shot: 2,
            queries: 4,
            outer_lr: 0.5,
            episodes_total: 40,
            meta_batch: 4,
            ..meta_config()
        };
        let run = protonet_train(&cfg, &meta, &features, None).unwrap();
        assert_eq!(run.loss_trace.len(), 40);
        let first10: f64 = run.loss_trace[..10].iter().sum::<f64>() / 10.0;
        let last10: f64 = run.loss_trace[30..].iter().sum::<f64>() / 10.0;
        assert!(last10 < first10, "first {first10} vs last {last10}");

        let rerun = protonet_train(&cfg, &meta, &features, None).unwrap();
        assert!(run.model.params.bit_eq(&rerun.model.params));

        // The head is never touched.
        let start = model::init_model(&ModelConfig { num_classes: 3, ..cfg.clone() }, meta.seed)
            .unwrap();
        assert!(run
            .model
            .params
            .tensor("head.W")
            .unwrap()
            .bit_eq(start.params.tensor("head.W").unwrap()));
    }
}
