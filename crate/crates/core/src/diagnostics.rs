//! Informativeness and misspecification diagnostics, and model selection
//! from bound estimates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::estimate_bounds;
use crate::domain::{DatasetView, GMatrix, LabelModel};
use crate::error::{Error, Result};
use crate::objective::SmoothingConfig;
use crate::solver::SolverConfig;

/// Total variation distance `½·Σ|p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

fn entropy(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `H(Y | Z)` in nats under the given signature weights.
pub fn conditional_entropy_y(model: &LabelModel, z_weights: &[f64]) -> Result<f64> {
    if z_weights.len() != model.num_signatures() {
        return Err(Error::Argument(format!(
            "{} weights for {} signatures",
            z_weights.len(),
            model.num_signatures()
        )));
    }
    if z_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Argument("signature weights must be non-negative".into()));
    }
    Ok(model
        .table()
        .rows()
        .into_iter()
        .zip(z_weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(row, &w)| w * entropy(row.iter().copied()))
        .sum())
}

/// Empirical `H(X | Z)` in nats for categorical `X`.
pub fn conditional_entropy_x(x_categories: &[usize], z_ids: &[usize]) -> Result<f64> {
    if x_categories.len() != z_ids.len() {
        return Err(Error::Argument("x categories and z-ids differ in length".into()));
    }
    if z_ids.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut marg: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &z) in x_categories.iter().zip(z_ids) {
        *joint.entry((z, x)).or_default() += 1.0;
        *marg.entry(z).or_default() += 1.0;
    }
    let n = z_ids.len() as f64;
    Ok(joint
        .iter()
        .map(|(&(z, _), &c)| -(c / n) * (c / marg[&z]).ln())
        .sum())
}

/// `√(8·‖g‖²_∞·H)`, an upper bound on the width `U − L`.
pub fn informativeness_bound(g_sup: f64, h_cond: f64) -> f64 {
    (8.0 * g_sup * g_sup * h_cond.max(0.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    /// Largest row-wise TV distance over signatures present in the data.
    pub delta: f64,
    pub lower_p: f64,
    pub lower_q: f64,
    pub upper_p: f64,
    pub upper_q: f64,
    pub bound_gap_lower: f64,
    pub bound_gap_upper: f64,
    pub optimizer_norm_p: f64,
    pub optimizer_norm_q: f64,
    /// `2·δ·max(‖â_P‖_∞, ‖â_Q‖_∞)`.
    pub certificate: f64,
    /// Both gaps within `certificate + 1e-5`.
    pub within_certificate: bool,
}

pub const CERTIFICATE_SLACK: f64 = 1e-5;

/// Bounds under a reference model `P` and an alternative `Q`, with the
/// computable sensitivity certificate.
pub fn misspecification_report(
    data: &DatasetView,
    model_p: &LabelModel,
    model_q: &LabelModel,
    g: &GMatrix,
    cfg: SmoothingConfig,
    scfg: &SolverConfig,
) -> Result<MisspecReport> {
    model_p.check_covers(data)?;
    model_q.check_covers(data)?;
    if model_p.num_classes() != model_q.num_classes() {
        return Err(Error::Argument(format!(
            "models have {} and {} classes",
            model_p.num_classes(),
            model_q.num_classes()
        )));
    }
    let freq = data.signature_frequencies();
    let mut delta: f64 = 0.0;
    for (z, &f) in freq.iter().enumerate() {
        if f > 0.0 {
            let p = model_p.table().row(z).to_vec();
            let q = model_q.table().row(z).to_vec();
            delta = delta.max(tv_distance(&p, &q)?);
        }
    }
    let (lp, up) = estimate_bounds(data, model_p, g, cfg, scfg)?;
    let (lq, uq) = estimate_bounds(data, model_q, g, cfg, scfg)?;
    let norm_p = lp.optimizer.sup_norm().max(up.optimizer.sup_norm());
    let norm_q = lq.optimizer.sup_norm().max(uq.optimizer.sup_norm());
    let certificate = 2.0 * delta * norm_p.max(norm_q);
    let gap_lower = (lq.value - lp.value).abs();
    let gap_upper = (uq.value - up.value).abs();
    Ok(MisspecReport {
        delta,
        lower_p: lp.value,
        lower_q: lq.value,
        upper_p: up.value,
        upper_q: uq.value,
        bound_gap_lower: gap_lower,
        bound_gap_upper: gap_upper,
        optimizer_norm_p: norm_p,
        optimizer_norm_q: norm_q,
        certificate,
        within_certificate: gap_lower.max(gap_upper) <= certificate + CERTIFICATE_SLACK,
    })
}

/// Mean of `E[g | Z = z_i]` under the label model: the value of the
/// conditionally independent coupling.
pub fn label_model_score(data: &DatasetView, model: &LabelModel, g: &GMatrix) -> Result<f64> {
    model.check_covers(data)?;
    if g.n() != data.n() || g.num_classes() != model.num_classes() {
        return Err(Error::Argument(format!(
            "cost matrix is {}x{}, expected {}x{}",
            g.n(),
            g.num_classes(),
            data.n(),
            model.num_classes()
        )));
    }
    if data.n() == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let total: f64 = data
        .z_ids()
        .iter()
        .zip(g.values().rows())
        .map(|(&z, row)| row.iter().zip(model.table().row(z)).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(total / data.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Lower,
    Upper,
    Average,
    LabelModel,
}

impl SelectionStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Self::Lower),
            "upper" => Ok(Self::Upper),
            "average" => Ok(Self::Average),
            "label_model" | "label-model" => Ok(Self::LabelModel),
            other => Err(Error::Argument(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lower: f64,
    pub upper: f64,
    pub label_model_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: SelectionStrategy,
    pub chosen_index: usize,
    pub scores: Vec<f64>,
}

/// Picks the candidate with the highest strategy score; ties go to the
/// lowest index.
pub fn select_model(candidates: &[Candidate], strategy: SelectionStrategy) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to select from".into()));
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| match strategy {
            SelectionStrategy::Lower => c.lower,
            SelectionStrategy::Upper => c.upper,
            SelectionStrategy::Average => (c.lower + c.upper) / 2.0,
            SelectionStrategy::LabelModel => c.label_model_score,
        })
        .collect();
    let mut chosen = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[chosen] {
            chosen = i;
        }
    }
    Ok(SelectionResult {
        strategy,
        chosen_index: chosen,
        scores,
    })
}
