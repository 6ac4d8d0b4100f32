//! Cost matrices for classifier metrics and the conversion of joint
//! probability bounds into precision, recall and F1 bounds.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bounds::{estimate_bounds, estimate_class_prior, normal_interval, BoundEstimate};
use crate::domain::{DatasetView, GMatrix, LabelModel, LabelSpace};
use crate::error::{Error, Result};
use crate::objective::SmoothingConfig;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Risk,
    Accuracy,
    JointPositive,
    Custom,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Risk => "risk",
            MetricKind::Accuracy => "accuracy",
            MetricKind::JointPositive => "joint_positive",
            MetricKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    /// `loss_table[[ŷ, y]] = ℓ(ŷ, y)`, required for risk.
    pub loss_table: Option<Array2<f64>>,
    /// Binarizes scores as `h = 1[score ≥ t]`.
    pub threshold: Option<f64>,
}

impl MetricSpec {
    pub fn accuracy() -> Self {
        Self {
            kind: MetricKind::Accuracy,
            loss_table: None,
            threshold: None,
        }
    }

    pub fn joint_positive() -> Self {
        Self {
            kind: MetricKind::JointPositive,
            loss_table: None,
            threshold: None,
        }
    }

    pub fn risk(loss_table: Array2<f64>) -> Self {
        Self {
            kind: MetricKind::Risk,
            loss_table: Some(loss_table),
            threshold: None,
        }
    }

    pub fn with_threshold(mut self, t: f64) -> Self {
        self.threshold = Some(t);
        self
    }
}

/// Classifier predictions: thresholded scores when a threshold is given and
/// scores exist, otherwise the stored predictions.
pub fn predictions(data: &DatasetView, threshold: Option<f64>) -> Result<Vec<usize>> {
    match (threshold, data.scores(), data.predictions()) {
        (Some(t), Some(scores), _) => Ok(scores.iter().map(|&s| usize::from(s >= t)).collect()),
        (None, _, Some(preds)) => Ok(preds.to_vec()),
        (Some(_), None, Some(preds)) => Ok(preds.to_vec()),
        (None, Some(_), None) => Err(Error::Argument(
            "scores need a threshold to produce predictions".into(),
        )),
        (_, None, None) => Err(Error::Argument(
            "data has neither predictions nor scores".into(),
        )),
    }
}

/// Builds `G[i, y] = g(X_i, y, Z_i)` for the requested metric.
pub fn build_g(data: &DatasetView, spec: &MetricSpec, space: &LabelSpace) -> Result<GMatrix> {
    let k = space.num_classes();
    let preds = predictions(data, spec.threshold)?;
    if let Some(&p) = preds.iter().find(|&&p| p >= k) {
        return Err(Error::Format(format!("prediction {p} out of range for {k} classes")));
    }
    let n = preds.len();
    match spec.kind {
        MetricKind::Accuracy => {
            let values = Array2::from_shape_fn((n, k), |(i, y)| f64::from(u8::from(preds[i] == y)));
            GMatrix::new(values, 1.0)
        }
        MetricKind::JointPositive => {
            if k != 2 {
                return Err(Error::Argument(format!(
                    "joint-positive metric needs 2 classes, got {k}"
                )));
            }
            let values = Array2::from_shape_fn((n, 2), |(i, y)| {
                f64::from(u8::from(y == 1 && preds[i] == 1))
            });
            GMatrix::new(values, 1.0)
        }
        MetricKind::Risk => {
            let loss = spec
                .loss_table
                .as_ref()
                .ok_or_else(|| Error::Argument("risk metric needs a loss table".into()))?;
            if loss.dim() != (k, k) {
                return Err(Error::Argument(format!(
                    "loss table is {:?}, expected {k}x{k}",
                    loss.dim()
                )));
            }
            let values = Array2::from_shape_fn((n, k), |(i, y)| loss[[preds[i], y]]);
            GMatrix::from_values(values)
        }
        MetricKind::Custom => Err(Error::Argument(
            "custom metrics supply their cost matrix directly".into(),
        )),
    }
}

/// Fraction of examples predicted positive.
pub fn estimate_h1(data: &DatasetView, threshold: Option<f64>) -> Result<f64> {
    let preds = predictions(data, threshold)?;
    if preds.is_empty() {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    Ok(preds.iter().filter(|&&p| p == 1).count() as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBounds {
    pub lower: f64,
    pub upper: f64,
    pub lower_std: f64,
    pub upper_std: f64,
    /// Set when either value was moved into `[0, 1]`.
    pub clamped: bool,
}

impl MetricBounds {
    /// Maps joint bounds and their stds through `x ↦ scale·x / denom`, then
    /// clamps.
    fn ratio(lower: f64, upper: f64, lower_std: f64, upper_std: f64, scale: f64, denom: f64) -> Self {
        let f = |x: f64| scale * x / denom;
        Self::clamp(f(lower), f(upper), f(lower_std), f(upper_std))
    }

    /// Clamps both values into `[0, 1]` and keeps `lower ≤ upper`.
    pub fn clamp(lower: f64, upper: f64, lower_std: f64, upper_std: f64) -> Self {
        let cl = lower.clamp(0.0, 1.0);
        let cu = upper.clamp(0.0, 1.0);
        let fixed_lower = cl.min(cu);
        Self {
            lower: fixed_lower,
            upper: cu,
            lower_std,
            upper_std,
            clamped: fixed_lower != lower || cu != upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfBounds {
    pub precision: MetricBounds,
    pub recall: MetricBounds,
    pub f1: MetricBounds,
    pub p_hat_h1: f64,
    pub p_hat_y1: f64,
}

/// Precision, recall and F1 bounds from bounds on `P(h(X)=1, Y=1)`, with
/// the matching plug-in stds.
pub fn prf_from_values(
    lower: f64,
    upper: f64,
    lower_std: f64,
    upper_std: f64,
    p_h1: f64,
    p_y1: f64,
) -> Result<PrfBounds> {
    if !(p_h1 > 0.0) || !(p_y1 > 0.0) {
        return Err(Error::DegenerateDenominator(format!(
            "P(h=1) = {p_h1}, P(Y=1) = {p_y1}"
        )));
    }
    Ok(PrfBounds {
        precision: MetricBounds::ratio(lower, upper, lower_std, upper_std, 1.0, p_h1),
        recall: MetricBounds::ratio(lower, upper, lower_std, upper_std, 1.0, p_y1),
        f1: MetricBounds::ratio(lower, upper, lower_std, upper_std, 2.0, p_h1 + p_y1),
        p_hat_h1: p_h1,
        p_hat_y1: p_y1,
    })
}

pub fn prf_from_joint(
    lower: &BoundEstimate,
    upper: &BoundEstimate,
    p_h1: f64,
    p_y1: f64,
) -> Result<PrfBounds> {
    prf_from_values(
        lower.value,
        upper.value,
        lower.plugin_std,
        upper.plugin_std,
        p_h1,
        p_y1,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Accuracy,
    JointPositive,
    Precision,
    Recall,
    F1,
}

impl SweepMetric {
    pub fn name(self) -> &'static str {
        match self {
            SweepMetric::Accuracy => "accuracy",
            SweepMetric::JointPositive => "joint_positive",
            SweepMetric::Precision => "precision",
            SweepMetric::Recall => "recall",
            SweepMetric::F1 => "f1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(SweepMetric::Accuracy),
            "joint_positive" | "joint-positive" => Ok(SweepMetric::JointPositive),
            "precision" => Ok(SweepMetric::Precision),
            "recall" => Ok(SweepMetric::Recall),
            "f1" => Ok(SweepMetric::F1),
            other => Err(Error::Argument(format!("unknown sweep metric {other:?}"))),
        }
    }

    fn needs_joint(self) -> bool {
        !matches!(self, SweepMetric::Accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub metric: String,
    pub lower: f64,
    pub upper: f64,
    pub lower_std: f64,
    pub upper_std: f64,
    pub ci_lower: [f64; 2],
    pub ci_upper: [f64; 2],
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub level: f64,
    pub epsilon: f64,
    pub n: usize,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub metrics: Vec<SweepMetric>,
    pub smoothing: SmoothingConfig,
    pub solver: SolverConfig,
    pub gamma: f64,
    /// Overrides the label-model class prior when set.
    pub prior_y1: Option<f64>,
}

fn sweep_row(threshold: f64, metric: SweepMetric, b: MetricBounds, n: usize, gamma: f64) -> Result<SweepRow> {
    let lo = normal_interval(b.lower, b.lower_std, n, gamma)?;
    let hi = normal_interval(b.upper, b.upper_std, n, gamma)?;
    Ok(SweepRow {
        threshold,
        metric: metric.name().to_string(),
        lower: b.lower,
        upper: b.upper,
        lower_std: b.lower_std,
        upper_std: b.upper_std,
        ci_lower: [lo.low, lo.high],
        ci_upper: [hi.low, hi.high],
        clamped: b.clamped,
    })
}

/// Bounds for each metric at each threshold, with `h_t = 1[score ≥ t]`.
///
/// Precision is omitted at thresholds where no example is predicted
/// positive, since it is undefined there.
pub fn threshold_sweep(
    data: &DatasetView,
    model: &LabelModel,
    thresholds: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable> {
    if thresholds.is_empty() {
        return Err(Error::Argument("threshold sweep needs at least one threshold".into()));
    }
    if data.scores().is_none() {
        return Err(Error::Argument("threshold sweep needs classifier scores".into()));
    }
    let space = LabelSpace::new(model.num_classes(), None)?;
    let n = data.n();
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);

    let needs_joint = opts.metrics.iter().any(|m| m.needs_joint());
    let p_y1 = if needs_joint {
        match opts.prior_y1 {
            Some(p) => p,
            None => estimate_class_prior(data, model, 1)?,
        }
    } else {
        f64::NAN
    };

    let mut rows = Vec::new();
    for &t in &ts {
        let spec_acc = MetricSpec::accuracy().with_threshold(t);
        let acc = if opts.metrics.contains(&SweepMetric::Accuracy) {
            let g = build_g(data, &spec_acc, &space)?;
            Some(estimate_bounds(data, model, &g, opts.smoothing, &opts.solver)?)
        } else {
            None
        };
        let joint = if needs_joint {
            let g = build_g(data, &MetricSpec::joint_positive().with_threshold(t), &space)?;
            Some(estimate_bounds(data, model, &g, opts.smoothing, &opts.solver)?)
        } else {
            None
        };
        let p_h1 = estimate_h1(data, Some(t))?;

        for &metric in &opts.metrics {
            let b = match metric {
                SweepMetric::Accuracy => {
                    let (l, u) = acc.as_ref().expect("accuracy bounds computed");
                    MetricBounds::clamp(l.value, u.value, l.plugin_std, u.plugin_std)
                }
                _ => {
                    let (l, u) = joint.as_ref().expect("joint bounds computed");
                    let (scale, denom) = match metric {
                        SweepMetric::JointPositive => (1.0, 1.0),
                        SweepMetric::Precision => (1.0, p_h1),
                        SweepMetric::Recall => (1.0, p_y1),
                        _ => (2.0, p_h1 + p_y1),
                    };
                    if !(denom > 0.0) {
                        if metric == SweepMetric::Precision {
                            continue;
                        }
                        return Err(Error::DegenerateDenominator(format!(
                            "{} at threshold {t}",
                            metric.name()
                        )));
                    }
                    MetricBounds::ratio(l.value, u.value, l.plugin_std, u.plugin_std, scale, denom)
                }
            };
            rows.push(sweep_row(t, metric, b, n, opts.gamma)?);
        }
    }
    Ok(SweepTable {
        level: 1.0 - opts.gamma,
        epsilon: opts.smoothing.epsilon,
        n,
        rows,
    })
}
