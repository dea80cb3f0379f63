//! Dense row-major 2-D tensors of `f64` and the value-level kernels used
//! both directly (inference paths) and by the autodiff graph.
//!
//! Every public constructor and operation validates shapes and rejects
//! non-finite values, so a `Tensor` in hand is always finite.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{CoreError, Result};

/// Probabilities are clamped here before taking logarithms.
pub const LN_CLAMP: f64 = 1e-12;

/// A dense matrix of 64-bit floats. Scalars are 1x1, row vectors 1xN,
/// column vectors Nx1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::NonFinite { op })
    }
}

impl Tensor {
    /// Builds a tensor from row-major data. Errors if the length does not
    /// match the shape or any value is non-finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(CoreError::Contract(alloc::format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        ensure_finite("tensor construction", &data)?;
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(1, 1, vec![value])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// The value of a 1x1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(CoreError::Contract(alloc::format!(
                "expected scalar, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Bitwise equality, stricter than `==` (distinguishes -0.0 from 0.0).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch { op, lhs: self.shape(), rhs: other.shape() })
        }
    }

    fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        ensure_finite(op, &data)?;
        Ok(Tensor { rows: self.rows, cols: self.cols, data })
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        ensure_finite(op, &data)?;
        Ok(Tensor { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// Elementwise `k * x + c`.
    pub fn affine(&self, k: f64, c: f64) -> Result<Tensor> {
        self.map("affine", |v| k * v + c)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.map("tanh", Float::tanh)
    }

    /// `ln(max(x, LN_CLAMP))`.
    pub fn ln_clamp(&self) -> Result<Tensor> {
        self.map("ln_clamp", |v| Float::ln(v.max(LN_CLAMP)))
    }

    /// `1/x` where `x > LN_CLAMP`, else 0. The derivative of [`Tensor::ln_clamp`].
    pub fn masked_recip(&self) -> Result<Tensor> {
        self.map("masked_recip", |v| if v > LN_CLAMP { 1.0 / v } else { 0.0 })
    }

    /// Matrix product. Errors if the inner dimensions differ.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut data[i * n..(i + 1) * n];
            for (p, &a_ip) in a_row.iter().enumerate() {
                if a_ip == 0.0 {
                    continue; // TF-IDF rows are mostly zeros
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ip * b_pj;
                }
            }
        }
        ensure_finite("matmul", &data)?;
        Ok(Tensor { rows: m, cols: n, data })
    }

    pub fn transpose(&self) -> Tensor {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor { rows: self.cols, cols: self.rows, data }
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data.iter().sum();
        Tensor { rows: 1, cols: 1, data: vec![s] }
    }

    /// Column vector of per-row sums: MxN -> Mx1.
    pub fn row_sums(&self) -> Tensor {
        let data = (0..self.rows).map(|i| self.row(i).iter().sum()).collect();
        Tensor { rows: self.rows, cols: 1, data }
    }

    /// Row vector of per-column sums: MxN -> 1xN.
    pub fn col_sums(&self) -> Tensor {
        let mut data = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, &v) in data.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        Tensor { rows: 1, cols: self.cols, data }
    }

    /// Repeats a 1x1 scalar into the given shape.
    pub fn broadcast_scalar(&self, rows: usize, cols: usize) -> Result<Tensor> {
        let v = self.item()?;
        Ok(Tensor { rows, cols, data: vec![v; rows * cols] })
    }

    /// Repeats an Mx1 column across `cols` columns.
    pub fn broadcast_col(&self, cols: usize) -> Result<Tensor> {
        if self.cols != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "broadcast_col",
                lhs: self.shape(),
                rhs: (self.rows, 1),
            });
        }
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend(core::iter::repeat_n(self.data[i], cols));
        }
        Ok(Tensor { rows: self.rows, cols, data })
    }

    /// Repeats a 1xN row across `rows` rows.
    pub fn broadcast_row(&self, rows: usize) -> Result<Tensor> {
        if self.rows != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "broadcast_row",
                lhs: self.shape(),
                rhs: (1, self.cols),
            });
        }
        let mut data = Vec::with_capacity(rows * self.cols);
        for _ in 0..rows {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor { rows, cols: self.cols, data })
    }

    /// Row-wise softmax with max-subtraction for stability. Each output row
    /// is non-negative and sums to 1.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        ensure_finite("softmax_rows", &self.data)?;
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            let row = self.row(i);
            let out = &mut data[i * self.cols..(i + 1) * self.cols];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = Float::exp(v - max);
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        ensure_finite("softmax_rows", &data)?;
        Ok(Tensor { rows: self.rows, cols: self.cols, data })
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// The epsilon-smoothed one-hot target distribution: the true class gets
/// `1 - eps + eps/c`, every other class `eps/c`.
pub fn smoothed_targets(labels: &[usize], classes: usize, eps: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&eps) {
        return Err(CoreError::Config(alloc::format!(
            "label smoothing must lie in [0, 1), got {eps}"
        )));
    }
    let off = eps / classes as f64;
    let on = 1.0 - eps + off;
    let mut t = Tensor::zeros(labels.len(), classes);
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(CoreError::Index(alloc::format!(
                "label {label} out of range for {classes} classes (sample {i})"
            )));
        }
        for j in 0..classes {
            t.data[i * classes + j] = if j == label { on } else { off };
        }
    }
    Ok(t)
}

/// Mean over samples of `-sum_j q_j ln(max(p_j, LN_CLAMP))` with the
/// epsilon-smoothed one-hot targets `q`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize], eps: f64) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(CoreError::Contract(alloc::format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let q = smoothed_targets(labels, probs.cols(), eps)?;
    let ln_p = probs.ln_clamp()?;
    let total = q.mul(&ln_p)?.sum_all().item()?;
    Ok(-total / probs.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(eye.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_small() {
        let a = t(1, 2, &[1.0, 2.0]);
        let b = t(2, 1, &[3.0, 4.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c.item().unwrap(), 11.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let err = a.matmul(&Tensor::zeros(2, 3)).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("2x3"), "unexpected message: {msg}");
    }

    #[test]
    fn non_finite_rejected_at_construction() {
        assert!(Tensor::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let s = t(1, 2, &[0.0, 0.0]).softmax_rows().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let a = t(1, 3, &[0.3, -1.2, 2.0]).softmax_rows().unwrap();
        let b = t(1, 3, &[100.3, 98.8, 102.0]).softmax_rows().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let s = t(1, 2, &[1000.0, 0.0]).softmax_rows().unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.get(0, 1) >= 0.0 && s.get(0, 1) < 1e-300);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = t(3, 4, &[0.1, -2.0, 3.5, 0.0, 1.0, 1.0, 1.0, 1.0, -9.0, 4.2, 0.3, 2.2])
            .softmax_rows()
            .unwrap();
        for i in 0..3 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let p = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let ce = cross_entropy(&p, &[0, 1], 0.0).unwrap();
        assert_eq!(ce, 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        for c in [2usize, 3, 5] {
            let p = Tensor::from_fn(1, c, |_, _| 1.0 / c as f64).unwrap();
            let ce = cross_entropy(&p, &[0], 0.0).unwrap();
            assert!((ce - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_smoothed_matches_scalar_oracle() {
        // -[(1 - 0.1 + 0.1/3) ln 0.7 + (0.1/3)(ln 0.2 + ln 0.1)],
        // evaluated independently.
        let p = t(1, 3, &[0.7, 0.2, 0.1]);
        let ce = cross_entropy(&p, &[0], 0.1).unwrap();
        assert!((ce - 0.46329738119042185).abs() < 1e-15, "{ce}");
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let p = t(1, 2, &[0.5, 0.5]);
        assert!(matches!(cross_entropy(&p, &[2], 0.0), Err(CoreError::Index(_))));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let s = t(2, 3, &[0.4, 0.4, 0.2, 0.1, 0.5, 0.5]);
        assert_eq!(s.argmax_rows(), vec![0, 1]);
    }

    #[test]
    fn broadcast_round_trips() {
        let col = t(2, 1, &[1.0, 2.0]);
        let wide = col.broadcast_col(3).unwrap();
        assert_eq!(wide.row_sums().data(), &[3.0, 6.0]);
        let row = t(1, 2, &[5.0, -1.0]);
        let tall = row.broadcast_row(4).unwrap();
        assert_eq!(tall.col_sums().data(), &[20.0, -4.0]);
    }
}
