//! Smoothed dual objectives for the lower and upper Fréchet bounds.
//!
//! For a sample `(X_i, Z_i)` and dual matrix `a`, the per-sample upper value is
//!
//! ```text
//! f_u(i, a) = ε·ln[(1/|Y|) Σ_y exp((G[i,y] + a[y,z_i]) / ε)] − Σ_y P(y|z_i)·a[y,z_i]
//! ```
//!
//! and the lower value replaces the soft maximum with the soft minimum. The
//! upper bound is the infimum over `a` of the sample mean of `f_u`, the lower
//! bound the supremum of the mean of `f_l`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::{DatasetView, DualVariables, GMatrix, LabelModel};
use crate::error::{Error, Result};

/// Smallest admissible smoothing temperature.
pub const MIN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub penalty_weight: f64,
}

impl SmoothingConfig {
    pub fn new(epsilon: f64, penalty_weight: f64) -> Result<Self> {
        if !(epsilon >= MIN_EPSILON) || !epsilon.is_finite() {
            return Err(Error::Argument(format!(
                "epsilon must be at least {MIN_EPSILON}, got {epsilon}"
            )));
        }
        if !(penalty_weight >= 0.0) || !penalty_weight.is_finite() {
            return Err(Error::Argument(format!(
                "penalty weight must be non-negative, got {penalty_weight}"
            )));
        }
        Ok(Self {
            epsilon,
            penalty_weight,
        })
    }

    /// Temperature giving a smoothing bias of at most 0.01, with unit penalty.
    pub fn default_for(num_classes: usize) -> Self {
        Self {
            epsilon: 0.01 / (num_classes as f64).ln(),
            penalty_weight: 1.0,
        }
    }

    /// Worst-case gap between the smoothed and exact bound: `ε·ln|Y|`.
    pub fn smoothing_gap(&self, num_classes: usize) -> f64 {
        self.epsilon * (num_classes as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSide {
    Lower,
    Upper,
}

impl ObjectiveSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveSide::Lower => "lower",
            ObjectiveSide::Upper => "upper",
        }
    }
}

/// Soft minimum (lower) or soft maximum (upper) with the `1/K` normalizer,
/// evaluated with a max-shift.
pub fn soft_extreme(values: &[f64], epsilon: f64, side: ObjectiveSide) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("soft extreme of an empty list".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(soft_extreme_unchecked(values, epsilon, side))
}

fn soft_extreme_unchecked(values: &[f64], epsilon: f64, side: ObjectiveSide) -> f64 {
    let k = values.len() as f64;
    match side {
        ObjectiveSide::Upper => {
            let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = values.iter().map(|b| ((b - m) / epsilon).exp()).sum();
            m + epsilon * (s / k).ln()
        }
        ObjectiveSide::Lower => {
            let m = values.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = values.iter().map(|b| (-(b - m) / epsilon).exp()).sum();
            m - epsilon * (s / k).ln()
        }
    }
}

/// A validated `(data, label model, G, smoothing)` bundle.
#[derive(Debug, Clone, Copy)]
pub struct DualObjective<'a> {
    data: &'a DatasetView,
    model: &'a LabelModel,
    g: &'a GMatrix,
    cfg: SmoothingConfig,
}

impl<'a> DualObjective<'a> {
    pub fn new(
        data: &'a DatasetView,
        model: &'a LabelModel,
        g: &'a GMatrix,
        cfg: SmoothingConfig,
    ) -> Result<Self> {
        model.check_covers(data)?;
        if g.n() != data.n() {
            return Err(Error::Argument(format!(
                "cost matrix has {} rows for {} samples",
                g.n(),
                data.n()
            )));
        }
        if g.num_classes() != model.num_classes() {
            return Err(Error::Argument(format!(
                "cost matrix has {} classes, label model {}",
                g.num_classes(),
                model.num_classes()
            )));
        }
        if data.n() == 0 {
            return Err(Error::InsufficientSample { needed: 1, got: 0 });
        }
        Ok(Self { data, model, g, cfg })
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn num_signatures(&self) -> usize {
        self.data.num_signatures()
    }

    pub fn config(&self) -> SmoothingConfig {
        self.cfg
    }

    pub fn data(&self) -> &'a DatasetView {
        self.data
    }

    fn check_shape(&self, a: &DualVariables) -> Result<()> {
        if a.num_classes() != self.num_classes() || a.num_signatures() != self.num_signatures() {
            return Err(Error::Argument(format!(
                "dual variables are {}x{}, expected {}x{}",
                a.num_classes(),
                a.num_signatures(),
                self.num_classes(),
                self.num_signatures()
            )));
        }
        Ok(())
    }

    /// `Σ_y P(y|z)·a[y,z]` for every z.
    fn label_terms(&self, a: &DualVariables) -> Vec<f64> {
        let a = a.matrix();
        (0..self.num_signatures())
            .map(|z| {
                (0..self.num_classes())
                    .map(|y| self.model.prob(z, y) * a[[y, z]])
                    .sum()
            })
            .collect()
    }

    /// Per-sample values of the smoothed dual function.
    pub fn per_sample(&self, a: &DualVariables, side: ObjectiveSide) -> Result<Vec<f64>> {
        self.check_shape(a)?;
        let terms = self.label_terms(a);
        let am = a.matrix();
        let mut buf = vec![0.0; self.num_classes()];
        let out = self
            .data
            .z_ids()
            .iter()
            .zip(self.g.values().rows())
            .map(|(&z, row)| {
                for (y, b) in buf.iter_mut().enumerate() {
                    *b = row[y] + am[[y, z]];
                }
                soft_extreme_unchecked(&buf, self.cfg.epsilon, side) - terms[z]
            })
            .collect();
        Ok(out)
    }

    /// Sample mean of the per-sample values, without penalty.
    pub fn value(&self, a: &DualVariables, side: ObjectiveSide) -> Result<f64> {
        let vals = self.per_sample(a, side)?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Objective with the column-sum penalty added (upper) or subtracted (lower).
    pub fn penalized(&self, a: &DualVariables, side: ObjectiveSide) -> Result<f64> {
        let pen = self.cfg.penalty_weight * a.penalty_residual();
        let v = self.value(a, side)?;
        Ok(match side {
            ObjectiveSide::Upper => v + pen,
            ObjectiveSide::Lower => v - pen,
        })
    }

    /// Value minimized by the solver: the penalized upper objective, or the
    /// negated penalized lower objective.
    pub fn descent_value(&self, a: &DualVariables, side: ObjectiveSide) -> Result<f64> {
        let v = self.penalized(a, side)?;
        Ok(match side {
            ObjectiveSide::Upper => v,
            ObjectiveSide::Lower => -v,
        })
    }

    /// Gradient of [`Self::descent_value`].
    pub fn gradient(&self, a: &DualVariables, side: ObjectiveSide) -> Result<Array2<f64>> {
        self.check_shape(a)?;
        let k = self.num_classes();
        let nz = self.num_signatures();
        let n = self.data.n() as f64;
        let eps = self.cfg.epsilon;
        let am = a.matrix();
        // +1 for the soft maximum, -1 for the soft minimum
        let sign = match side {
            ObjectiveSide::Upper => 1.0,
            ObjectiveSide::Lower => -1.0,
        };

        let mut weight_sums = Array2::<f64>::zeros((k, nz));
        let mut counts = vec![0usize; nz];
        let mut buf = vec![0.0; k];
        for (&z, row) in self.data.z_ids().iter().zip(self.g.values().rows()) {
            counts[z] += 1;
            for (y, b) in buf.iter_mut().enumerate() {
                *b = sign * (row[y] + am[[y, z]]) / eps;
            }
            let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for b in buf.iter_mut() {
                *b = (*b - m).exp();
                total += *b;
            }
            for (y, b) in buf.iter().enumerate() {
                weight_sums[[y, z]] += b / total;
            }
        }

        let col_sums = a.column_sums();
        let rho2 = 2.0 * self.cfg.penalty_weight;
        let grad = Array2::from_shape_fn((k, nz), |(y, z)| {
            let data_term = (weight_sums[[y, z]] - counts[z] as f64 * self.model.prob(z, y)) / n;
            sign * data_term + rho2 * col_sums[z]
        });
        Ok(grad)
    }
}

pub fn eval_objective(
    data: &DatasetView,
    model: &LabelModel,
    g: &GMatrix,
    a: &DualVariables,
    cfg: SmoothingConfig,
    side: ObjectiveSide,
) -> Result<f64> {
    DualObjective::new(data, model, g, cfg)?.value(a, side)
}

pub fn eval_penalized(
    data: &DatasetView,
    model: &LabelModel,
    g: &GMatrix,
    a: &DualVariables,
    cfg: SmoothingConfig,
    side: ObjectiveSide,
) -> Result<f64> {
    DualObjective::new(data, model, g, cfg)?.penalized(a, side)
}

/// Gradient of the penalized upper objective, or of the negated penalized
/// lower objective.
pub fn gradient(
    data: &DatasetView,
    model: &LabelModel,
    g: &GMatrix,
    a: &DualVariables,
    cfg: SmoothingConfig,
    side: ObjectiveSide,
) -> Result<Array2<f64>> {
    DualObjective::new(data, model, g, cfg)?.gradient(a, side)
}
