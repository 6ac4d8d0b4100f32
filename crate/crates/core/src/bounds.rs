//! Bound estimation, plug-in standard deviations and normal-approximation
//! confidence intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{DatasetView, DualVariables, GMatrix, LabelModel};
use crate::error::{Error, Result};
use crate::objective::{DualObjective, ObjectiveSide, SmoothingConfig};
use crate::solver::{minimize, SolveReport, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimate {
    pub side: ObjectiveSide,
    /// Unpenalized objective at the centered optimizer.
    pub value: f64,
    /// Optimizer with zero column sums.
    pub optimizer: DualVariables,
    pub plugin_std: f64,
    pub n: usize,
    pub report: SolveReport,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub low: f64,
    pub high: f64,
}

/// Solves one side from `a = 0` and re-evaluates at the centered optimizer.
pub fn estimate_side(
    objective: &DualObjective<'_>,
    side: ObjectiveSide,
    scfg: &SolverConfig,
) -> Result<BoundEstimate> {
    let a0 = DualVariables::zeros(objective.num_classes(), objective.num_signatures());
    let (a_hat, report) = minimize(
        |a| objective.descent_value(a, side),
        |a| objective.gradient(a, side),
        &a0,
        scfg,
    )?;
    let optimizer = a_hat.center_columns();
    let values = objective.per_sample(&optimizer, side)?;
    let n = values.len();
    let value = values.iter().sum::<f64>() / n as f64;
    let plugin_std = if n >= 2 { sample_std(&values) } else { 0.0 };
    Ok(BoundEstimate {
        side,
        value,
        optimizer,
        plugin_std,
        n,
        report,
        epsilon: objective.config().epsilon,
    })
}

/// Smoothed lower and upper bound estimates.
pub fn estimate_bounds(
    data: &DatasetView,
    model: &LabelModel,
    g: &GMatrix,
    cfg: SmoothingConfig,
    scfg: &SolverConfig,
) -> Result<(BoundEstimate, BoundEstimate)> {
    let objective = DualObjective::new(data, model, g, cfg)?;
    let lower = estimate_side(&objective, ObjectiveSide::Lower, scfg)?;
    let upper = estimate_side(&objective, ObjectiveSide::Upper, scfg)?;
    Ok((lower, upper))
}

/// Sample standard deviation with divisor `n − 1`.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Standard deviation of the per-sample dual values at `a_hat`.
pub fn plugin_std(
    data: &DatasetView,
    model: &LabelModel,
    g: &GMatrix,
    a_hat: &DualVariables,
    cfg: SmoothingConfig,
    side: ObjectiveSide,
) -> Result<f64> {
    if data.n() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: data.n(),
        });
    }
    if !a_hat.is_finite() {
        return Err(Error::Argument("optimizer has non-finite entries".into()));
    }
    let values = DualObjective::new(data, model, g, cfg)?.per_sample(a_hat, side)?;
    Ok(sample_std(&values))
}

/// `Φ⁻¹(p)` for the standard normal.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided `1 − γ` interval `value ± Φ⁻¹(1 − γ/2)·σ/√n`.
pub fn normal_interval(value: f64, std: f64, n: usize, gamma: f64) -> Result<ConfidenceInterval> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Argument(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let half = normal_quantile(1.0 - gamma / 2.0) * std / (n as f64).sqrt();
    Ok(ConfidenceInterval {
        level: 1.0 - gamma,
        low: value - half,
        high: value + half,
    })
}

pub fn confidence_interval(est: &BoundEstimate, gamma: f64) -> Result<ConfidenceInterval> {
    normal_interval(est.value, est.plugin_std, est.n, gamma)
}

/// Mean label-model probability of `positive_class` over the sample.
pub fn estimate_class_prior(
    data: &DatasetView,
    model: &LabelModel,
    positive_class: usize,
) -> Result<f64> {
    model.check_covers(data)?;
    if positive_class >= model.num_classes() {
        return Err(Error::Argument(format!(
            "class {positive_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    if data.n() == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let total: f64 = data
        .z_ids()
        .iter()
        .map(|&z| model.prob(z, positive_class))
        .sum();
    Ok(total / data.n() as f64)
}

/// Indices of a uniform subset without replacement, in ascending order.
pub fn subsample_indices(n: usize, n_target: usize, seed: u64) -> Result<Vec<usize>> {
    if n_target > n {
        return Err(Error::Argument(format!(
            "cannot draw {n_target} of {n} samples"
        )));
    }
    if n_target < 2 {
        return Err(Error::Argument(format!(
            "bounds need at least 2 samples, requested {n_target}"
        )));
    }
    if n_target == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, n_target).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn subsample_for_bounds(data: &DatasetView, n_target: usize, seed: u64) -> Result<DatasetView> {
    let idx = subsample_indices(data.n(), n_target, seed)?;
    Ok(data.select(&idx))
}
