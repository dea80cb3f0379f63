//! Named, ordered parameter collections and SGD updates.
//!
//! Insertion order is preserved and is the canonical order everywhere:
//! checkpoint payload layout, gradient application, and update loops all
//! walk parameters in the order they were registered. Two collections are
//! combinable only when their names, order, and shapes match exactly.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// An ordered `name -> Tensor` map. Also used for gradient and momentum
/// buffers keyed by the same names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Registers a tensor under a fresh name. Errors on duplicates so a
    /// model cannot silently shadow one of its own parameters.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(CoreError::Contract(alloc::format!("duplicate parameter {name:?}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`ParamSet::get`] but names the missing parameter in the error.
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| CoreError::Index(alloc::format!("unknown parameter {name:?}")))
    }

    /// Replaces an existing entry; the new value must keep the shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| CoreError::Index(alloc::format!("unknown parameter {name:?}")))?;
        if entry.1.shape() != value.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "parameter update",
                lhs: entry.1.shape(),
                rhs: value.shape(),
            });
        }
        entry.1 = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar values across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// A collection with the same names, order, and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        ParamSet { entries }
    }

    /// Entrywise sum of two collections with identical layout.
    pub fn add(&self, other: &ParamSet) -> Result<ParamSet> {
        self.check_layout(other, "param add")?;
        let mut out = ParamSet::new();
        for ((name, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            out.insert(name.clone(), a.add(b)?)?;
        }
        Ok(out)
    }

    /// Bitwise equality of every entry, in order (names and payloads).
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, at), (bn, bt))| an == bn && at.bit_eq(bt))
    }

    /// Errors unless `other` has identical names, order, and shapes.
    pub fn check_layout(&self, other: &ParamSet, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(CoreError::Contract(alloc::format!(
                "{op}: parameter layouts differ ({} vs {} entries)",
                self.len(),
                other.len()
            )));
        }
        for ((an, at), (bn, bt)) in self.entries.iter().zip(&other.entries) {
            if an != bn {
                return Err(CoreError::Contract(alloc::format!(
                    "{op}: parameter layouts differ ({an:?} vs {bn:?})"
                )));
            }
            if at.shape() != bt.shape() {
                return Err(CoreError::ShapeMismatch { op, lhs: at.shape(), rhs: bt.shape() });
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a ParamSet {
    type Item = (&'a str, &'a Tensor);
    type IntoIter = alloc::vec::IntoIter<(&'a str, &'a Tensor)>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect::<Vec<_>>()
            .into_iter()
    }
}

/// One plain gradient-descent step, `θ - lr·g` entrywise. Pure: the inputs
/// are untouched. `lr = 0` returns the parameters bit-exactly.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
    params.check_layout(grads, "sgd_step")?;
    if lr == 0.0 {
        return Ok(params.clone());
    }
    let mut out = ParamSet::new();
    for ((name, p), (_, g)) in params.entries.iter().zip(&grads.entries) {
        out.insert(name.clone(), p.sub(&g.affine(lr, 0.0)?)?)?;
    }
    Ok(out)
}

/// Heavy-ball step: `v' = momentum·v + g`, `θ' = θ - lr·v'`. Returns the new
/// parameters and velocity. Pass [`ParamSet::zeros_like`] (or the previous
/// velocity) for `velocity`; with `momentum = 0` this reduces to
/// [`sgd_step`] with an unchanged zero velocity.
pub fn sgd_step_momentum(
    params: &ParamSet,
    grads: &ParamSet,
    lr: f64,
    momentum: f64,
    velocity: &ParamSet,
) -> Result<(ParamSet, ParamSet)> {
    params.check_layout(grads, "sgd_step")?;
    params.check_layout(velocity, "sgd_step")?;
    if momentum == 0.0 {
        return Ok((sgd_step(params, grads, lr)?, velocity.clone()));
    }
    let mut new_v = ParamSet::new();
    for ((name, v), (_, g)) in velocity.entries.iter().zip(&grads.entries) {
        new_v.insert(name.clone(), v.affine(momentum, 0.0)?.add(g)?)?;
    }
    let updated = sgd_step(params, &new_v, lr)?;
    Ok((updated, new_v))
}
