//! Finite-difference oracles for gradient verification.
//!
//! Analytic gradients throughout the crate are checked against central
//! differences of the corresponding scalar objective. These helpers are part
//! of the public API so downstream test suites can run the same oracles.

use alloc::vec::Vec;

use crate::error::Result;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Differences smaller than this are treated as zero when computing
/// relative error, so true-zero gradients compare clean against
/// finite-difference noise.
pub const ABS_FLOOR: f64 = 1e-8;

/// Central finite differences of a scalar function at `x`:
/// `(f(x + h·e) - f(x - h·e)) / 2h` per entry.
pub fn central_diff(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let (rows, cols) = x.shape();
    let base: Vec<f64> = x.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut bumped = base.clone();
        bumped[i] = base[i] + h;
        let plus = f(&Tensor::new(rows, cols, bumped.clone())?)?;
        bumped[i] = base[i] - h;
        let minus = f(&Tensor::new(rows, cols, bumped)?)?;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(rows, cols, grad)
}

/// Central finite differences of a scalar function of a whole parameter
/// collection, perturbing one scalar entry at a time.
pub fn central_diff_params(
    mut f: impl FnMut(&ParamSet) -> Result<f64>,
    params: &ParamSet,
    h: f64,
) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    let names: Vec<alloc::string::String> =
        params.names().map(alloc::string::String::from).collect();
    for name in names {
        let t = params.tensor(&name)?.clone();
        let g = central_diff(
            |bumped: &Tensor| {
                let mut trial = params.clone();
                trial.set(&name, bumped.clone())?;
                f(&trial)
            },
            &t,
            h,
        )?;
        out.insert(name, g)?;
    }
    Ok(out)
}

/// Relative error between one analytic and one numeric value, with the
/// absolute floor: differences below [`ABS_FLOOR`] count as zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Largest entrywise [`rel_err`] between two same-shaped tensors.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    debug_assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Largest entrywise [`rel_err`] across two parameter collections.
pub fn max_rel_err_params(analytic: &ParamSet, numeric: &ParamSet) -> Result<f64> {
    analytic.check_layout(numeric, "max_rel_err_params")?;
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|((_, a), (_, n))| max_rel_err(a, n))
        .fold(0.0, f64::max))
}
