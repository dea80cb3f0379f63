//! Exact t-SNE: Gaussian input affinities calibrated to a target perplexity
//! by per-point binary search, Student-t low-dimensional affinities, and
//! plain gradient descent with the reference momentum and early-exaggeration
//! schedule. O(n²) throughout — no tree approximations — which keeps the
//! gradient finite-difference-checkable.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::rng;
use crate::tensor::Tensor;
use crate::text::FeatureMatrix;

/// Settings for [`tsne`]. `new` fills in the standard schedule (momentum
/// 0.5 switching to 0.8 at iteration 250, early exaggeration ×12 for the
/// first 250 iterations); the fields stay public so tests can disable the
/// exaggeration phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    /// Target perplexity, in (1, n−1) for n input points.
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub early_momentum: f64,
    pub late_momentum: f64,
    /// Iteration at which momentum switches from early to late.
    pub momentum_switch: usize,
    /// Input-affinity multiplier during the early phase (1.0 disables).
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

/// KL divergence is recorded at initialization and then every this many
/// iterations (plus once more after the final iteration).
pub const KL_RECORD_EVERY: usize = 50;

impl TsneConfig {
    /// The standard schedule around the caller-chosen knobs.
    pub fn new(perplexity: f64, iters: usize, learning_rate: f64, seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity,
            iters,
            learning_rate,
            early_momentum: 0.5,
            late_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity > 1.0 && self.perplexity.is_finite()) {
            return Err(CoreError::Config(alloc::format!(
                "perplexity must exceed 1, got {}",
                self.perplexity
            )));
        }
        if self.iters < 1 {
            return Err(CoreError::Config("need at least 1 iteration".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Config(alloc::format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, m) in [
            ("early momentum", self.early_momentum),
            ("late momentum", self.late_momentum),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(CoreError::Config(alloc::format!(
                    "{name} must lie in [0, 1), got {m}"
                )));
            }
        }
        if !(self.exaggeration >= 1.0 && self.exaggeration.is_finite()) {
            return Err(CoreError::Config(alloc::format!(
                "exaggeration must be at least 1, got {}",
                self.exaggeration
            )));
        }
        Ok(())
    }
}

/// A 2-D embedding of n points with their pass-through labels and the KL
/// divergence trace recorded during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Tensor,
    pub labels: Vec<usize>,
    pub kl_trace: Vec<f64>,
}

/// Pairwise squared Euclidean distances between rows.
fn pairwise_sq(x: &Tensor) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let diff = x.get(i, k) - x.get(j, k);
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Entropy-based perplexity `exp(H)` of the Gaussian conditional for row
/// distances `d` at precision `beta`, plus the normalized probabilities.
/// Distances are shifted by their minimum before exponentiation so the
/// normalizer never underflows.
fn row_affinities(d: &[f64], skip: usize, beta: f64, probs: &mut [f64]) -> f64 {
    let mut dmin = f64::INFINITY;
    for (j, &dj) in d.iter().enumerate() {
        if j != skip && dj < dmin {
            dmin = dj;
        }
    }
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, &dj) in d.iter().enumerate() {
        if j == skip {
            probs[j] = 0.0;
            continue;
        }
        let shifted = dj - dmin;
        let p = Float::exp(-beta * shifted);
        probs[j] = p;
        z += p;
        weighted += p * shifted;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
    // H = ln Z + β·E[d]; exp(H) is the realized perplexity (shift-invariant).
    Float::exp(Float::ln(z) + beta * weighted / z)
}

/// Tolerance on the realized perplexity of each calibrated row.
pub const PERPLEXITY_TOL: f64 = 1e-4;
const MAX_CALIBRATION_ITERS: usize = 100;

/// Row-stochastic Gaussian conditional affinities `p_{j|i}`: each row's
/// bandwidth is found by binary search so its realized perplexity matches
/// the target within [`PERPLEXITY_TOL`] (up to 100 halvings; exactly
/// duplicated points can cap the reachable range, in which case the closest
/// achievable distribution is kept). Diagonal is zero; rows sum to one.
pub fn conditional_affinities(x: &Tensor, perplexity: f64) -> Result<Tensor> {
    let n = x.rows();
    if n < 3 {
        return Err(CoreError::Config(alloc::format!(
            "need at least 3 points, got {n}"
        )));
    }
    let in_range = perplexity > 1.0 && perplexity < (n - 1) as f64;
    if !in_range {
        return Err(CoreError::Config(alloc::format!(
            "perplexity must lie in (1, {}), got {perplexity}",
            n - 1
        )));
    }
    let d = pairwise_sq(x);
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let dists = &d[i * n..(i + 1) * n];
        let mut beta = 1.0;
        let mut beta_lo = 0.0;
        let mut beta_hi = f64::INFINITY;
        for _ in 0..MAX_CALIBRATION_ITERS {
            let realized = row_affinities(dists, i, beta, &mut row);
            if Float::abs(realized - perplexity) <= PERPLEXITY_TOL {
                break;
            }
            if realized > perplexity {
                // Too flat: sharpen.
                beta_lo = beta;
                beta = if beta_hi.is_finite() { 0.5 * (beta + beta_hi) } else { beta * 2.0 };
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Tensor::new(n, n, p)
}

/// Joint input affinities from the conditionals: `P = (P + Pᵀ) / 2n`,
/// symmetric, non-negative, summing to one overall.
pub fn symmetrize(conditional: &Tensor) -> Result<Tensor> {
    let (n, m) = conditional.shape();
    if n != m {
        return Err(CoreError::ShapeMismatch {
            op: "symmetrize",
            lhs: conditional.shape(),
            rhs: (n, n),
        });
    }
    let scale = 1.0 / (2.0 * n as f64);
    Tensor::from_fn(n, n, |i, j| (conditional.get(i, j) + conditional.get(j, i)) * scale)
}

/// Joint Student-t affinities of a 2-D embedding:
/// `q_ij = w_ij / Σw` with `w_ij = 1/(1 + ‖y_i − y_j‖²)`, diagonal zero.
pub fn student_t_affinities(y: &Tensor) -> Result<Tensor> {
    let n = y.rows();
    let d = pairwise_sq(y);
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = 1.0 / (1.0 + d[i * n + j]);
                w[i * n + j] = v;
                z += v;
            }
        }
    }
    for v in w.iter_mut() {
        *v /= z;
    }
    Tensor::new(n, n, w)
}

/// `KL(P ‖ Q) = Σ p ln(p/q)` over off-diagonal entries, with zero-p terms
/// contributing nothing and q floored at the ln clamp.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(CoreError::ShapeMismatch { op: "kl", lhs: p.shape(), rhs: q.shape() });
    }
    let mut total = 0.0;
    for (i, (&pv, &qv)) in p.data().iter().zip(q.data()).enumerate() {
        let n = p.rows();
        if i / n == i % n || pv <= 0.0 {
            continue;
        }
        total += pv * (Float::ln(pv) - Float::ln(qv.max(crate::tensor::LN_CLAMP)));
    }
    Ok(total)
}

/// The exact t-SNE gradient of `KL(P ‖ Q(Y))` at the embedding `y`:
/// `∂C/∂y_i = 4 Σ_j (p_ij − q_ij)·w_ij·(y_i − y_j)`.
pub fn kl_gradient(p: &Tensor, y: &Tensor) -> Result<Tensor> {
    let n = y.rows();
    if p.shape() != (n, n) {
        return Err(CoreError::ShapeMismatch { op: "kl gradient", lhs: p.shape(), rhs: (n, n) });
    }
    if y.cols() != 2 {
        return Err(CoreError::ShapeMismatch { op: "kl gradient", lhs: y.shape(), rhs: (n, 2) });
    }
    let d = pairwise_sq(y);
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = 1.0 / (1.0 + d[i * n + j]);
                w[i * n + j] = v;
                z += v;
            }
        }
    }
    let mut grad = vec![0.0; n * 2];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w[i * n + j];
            let coeff = 4.0 * (p.get(i, j) - wij / z) * wij;
            grad[i * 2] += coeff * (y.get(i, 0) - y.get(j, 0));
            grad[i * 2 + 1] += coeff * (y.get(i, 1) - y.get(j, 1));
        }
    }
    Tensor::new(n, 2, grad)
}

/// Runs exact t-SNE on the rows of `x`. Labels are carried through to the
/// output untouched. The KL trace holds the true (unexaggerated) divergence
/// at initialization, every [`KL_RECORD_EVERY`] iterations, and at the end.
pub fn tsne(x: &Tensor, labels: &[usize], cfg: &TsneConfig) -> Result<Projection> {
    cfg.validate()?;
    let n = x.rows();
    if labels.len() != n {
        return Err(CoreError::Contract(alloc::format!(
            "{n} points but {} labels",
            labels.len()
        )));
    }
    let p = symmetrize(&conditional_affinities(x, cfg.perplexity)?)?;

    let mut y = rng::gaussian_tensor(&mut rng::seeded(cfg.seed), n, 2, 1e-4)?;
    let mut velocity = Tensor::zeros(n, 2);
    let mut kl_trace = vec![kl_divergence(&p, &student_t_affinities(&y)?)?];

    for it in 0..cfg.iters {
        let p_eff = if it < cfg.exaggeration_iters && cfg.exaggeration != 1.0 {
            p.affine(cfg.exaggeration, 0.0)?
        } else {
            p.clone()
        };
        let grad = kl_gradient(&p_eff, &y)?;
        let momentum =
            if it < cfg.momentum_switch { cfg.early_momentum } else { cfg.late_momentum };
        velocity = velocity.affine(momentum, 0.0)?.sub(&grad.affine(cfg.learning_rate, 0.0)?)?;
        y = y.add(&velocity)?;
        if (it + 1) % KL_RECORD_EVERY == 0 || it + 1 == cfg.iters {
            kl_trace.push(kl_divergence(&p, &student_t_affinities(&y)?)?);
        }
    }
    Ok(Projection { points: y, labels: labels.to_vec(), kl_trace })
}

/// Embeds the documents with the model's encoder, then projects to 2-D.
pub fn project_corpus(
    model: &Model,
    features: &FeatureMatrix,
    cfg: &TsneConfig,
) -> Result<Projection> {
    let embeddings = model.embed(&features.features)?;
    tsne(&embeddings, &features.labels, cfg)
}
