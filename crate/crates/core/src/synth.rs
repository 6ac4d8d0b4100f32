//! Synthetic weak-supervision data with a closed-form label model, and the
//! confidence-interval coverage experiment built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bounds::{confidence_interval, estimate_bounds};
use crate::domain::{LabelSpace, WeakSignature, ABSTAIN};
use crate::error::{Error, Result};
use crate::io::{resolve_with_model, DatasetFile, Fallback, LabelModelEntry, LabelModelFile};
use crate::metrics::{build_g, MetricSpec};
use crate::objective::SmoothingConfig;
use crate::solver::SolverConfig;

/// Binary task with conditionally independent labelers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub labeler_accuracies: Vec<f64>,
    pub abstain_rates: Vec<f64>,
    pub prior_y1: f64,
    /// Distance between the class-conditional means of the latent score.
    pub score_separation: f64,
    /// Threshold used for the `pred` column and the true metrics.
    pub threshold: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Argument("synthetic n must be positive".into()));
        }
        if self.labeler_accuracies.is_empty() {
            return Err(Error::Argument("need at least one labeler".into()));
        }
        if self.labeler_accuracies.len() != self.abstain_rates.len() {
            return Err(Error::Argument(format!(
                "{} accuracies but {} abstain rates",
                self.labeler_accuracies.len(),
                self.abstain_rates.len()
            )));
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !self.labeler_accuracies.iter().all(|&a| unit(a)) {
            return Err(Error::Argument("labeler accuracies must lie in [0, 1]".into()));
        }
        if !self.abstain_rates.iter().all(|&a| (0.0..1.0).contains(&a)) {
            return Err(Error::Argument("abstain rates must lie in [0, 1)".into()));
        }
        if !(self.prior_y1 > 0.0 && self.prior_y1 < 1.0) {
            return Err(Error::Argument("prior must lie in (0, 1)".into()));
        }
        if !self.score_separation.is_finite() || !unit(self.threshold) {
            return Err(Error::Argument("invalid score separation or threshold".into()));
        }
        Ok(())
    }

    /// Exact `P(Y = 1 | z)` by Bayes under conditional independence.
    pub fn posterior_y1(&self, sig: &WeakSignature) -> Result<f64> {
        if sig.len() != self.labeler_accuracies.len() {
            return Err(Error::Argument("signature length differs from labeler count".into()));
        }
        let mut like = [1.0 - self.prior_y1, self.prior_y1];
        for (j, &v) in sig.0.iter().enumerate() {
            if v == ABSTAIN {
                continue;
            }
            let acc = self.labeler_accuracies[j];
            for (y, l) in like.iter_mut().enumerate() {
                *l *= if v as usize == y { acc } else { 1.0 - acc };
            }
        }
        let total = like[0] + like[1];
        if !(total > 0.0) {
            return Err(Error::Argument(format!("signature {:?} has zero probability", sig.0)));
        }
        Ok(like[1] / total)
    }
}

/// Realized metrics of the thresholded score against the drawn labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueMetrics {
    pub accuracy: f64,
    pub joint_positive: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub positive_rate: f64,
}

impl TrueMetrics {
    pub fn from_labels(preds: &[usize], labels: &[usize]) -> Self {
        let n = preds.len() as f64;
        let count = |f: &dyn Fn(usize, usize) -> bool| {
            preds.iter().zip(labels).filter(|(&p, &y)| f(p, y)).count() as f64
        };
        let correct = count(&|p, y| p == y);
        let tp = count(&|p, y| p == 1 && y == 1);
        let pred_pos = count(&|p, _| p == 1);
        let pos = count(&|_, y| y == 1);
        let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        Self {
            accuracy: correct / n,
            joint_positive: tp / n,
            precision: ratio(tp, pred_pos),
            recall: ratio(tp, pos),
            f1: ratio(2.0 * tp, pred_pos + pos),
            positive_rate: pos / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDraw {
    pub dataset: DatasetFile,
    /// Exact label model over the observed signatures.
    pub label_model: LabelModelFile,
    pub truth: TrueMetrics,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent = Normal::new(0.0, 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    let k = spec.labeler_accuracies.len();

    let mut labels = Vec::with_capacity(spec.n);
    let mut scores = Vec::with_capacity(spec.n);
    let mut weak = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y = usize::from(rng.random_bool(spec.prior_y1));
        let mut sig = Vec::with_capacity(k);
        for j in 0..k {
            let v = if rng.random_bool(spec.abstain_rates[j]) {
                ABSTAIN
            } else if rng.random_bool(spec.labeler_accuracies[j]) {
                y as i32
            } else {
                1 - y as i32
            };
            sig.push(v);
        }
        let sign = if y == 1 { 0.5 } else { -0.5 };
        let s: f64 = sign * spec.score_separation + latent.sample(&mut rng);
        scores.push(1.0 / (1.0 + (-s).exp()));
        labels.push(y);
        weak.push(WeakSignature(sig));
    }
    let preds: Vec<usize> = scores.iter().map(|&s| usize::from(s >= spec.threshold)).collect();
    let truth = TrueMetrics::from_labels(&preds, &labels);

    let mut entries: Vec<LabelModelEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for sig in &weak {
        if seen.insert(sig.clone()) {
            let p1 = spec.posterior_y1(sig)?;
            entries.push(LabelModelEntry {
                z: sig.0.clone(),
                p: vec![1.0 - p1, p1],
            });
        }
    }
    Ok(SyntheticDraw {
        dataset: DatasetFile {
            scores: Some(scores),
            predictions: Some(preds),
            labels: Some(labels),
            weak_labels: weak,
        },
        label_model: LabelModelFile {
            num_classes: 2,
            entries,
            fallback: Fallback::Error,
        },
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub replications: usize,
    pub n: usize,
    pub generator: SynthSpec,
    pub gamma: f64,
    pub epsilon: f64,
    /// Reference sample size as a multiple of `n`; at least 100.
    pub reference_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replications: usize,
    pub n: usize,
    pub n_reference: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub reference_lower: f64,
    pub reference_upper: f64,
    pub coverage_lower: f64,
    pub coverage_upper: f64,
    /// Binomial standard errors of the two coverage fractions.
    pub se_lower: f64,
    pub se_upper: f64,
}

/// Accuracy bounds of the thresholded score under the exact label model.
fn accuracy_bounds(
    spec: &SynthSpec,
    cfg: SmoothingConfig,
    scfg: &SolverConfig,
) -> Result<(crate::bounds::BoundEstimate, crate::bounds::BoundEstimate)> {
    let draw = generate_synthetic(spec)?;
    let resolved = resolve_with_model(&draw.dataset, &draw.label_model)?;
    let g = build_g(&resolved.data, &MetricSpec::accuracy(), &LabelSpace::binary())?;
    estimate_bounds(&resolved.data, &resolved.model, &g, cfg, scfg)
}

/// Fraction of replications whose interval for each smoothed bound covers
/// a reference value computed once on a much larger sample.
pub fn coverage_experiment(spec: &CoverageSpec, scfg: &SolverConfig) -> Result<CoverageReport> {
    if spec.replications < 100 {
        return Err(Error::Argument(format!(
            "coverage needs at least 100 replications, got {}",
            spec.replications
        )));
    }
    if spec.reference_factor < 100 {
        return Err(Error::Argument("reference factor must be at least 100".into()));
    }
    if spec.n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: spec.n });
    }
    let cfg = SmoothingConfig::new(spec.epsilon, 1.0)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(spec.generator.seed);
    let n_reference = spec.n * spec.reference_factor;

    let reference_spec = SynthSpec {
        n: n_reference,
        seed: seeds.random(),
        ..spec.generator.clone()
    };
    let (ref_l, ref_u) = accuracy_bounds(&reference_spec, cfg, scfg)?;

    let mut hits = [0usize; 2];
    for _ in 0..spec.replications {
        let rep = SynthSpec {
            n: spec.n,
            seed: seeds.random(),
            ..spec.generator.clone()
        };
        let (l, u) = accuracy_bounds(&rep, cfg, scfg)?;
        for (hit, (est, reference)) in hits.iter_mut().zip([(&l, ref_l.value), (&u, ref_u.value)]) {
            let ci = confidence_interval(est, spec.gamma)?;
            if ci.low <= reference && reference <= ci.high {
                *hit += 1;
            }
        }
    }
    let r = spec.replications as f64;
    let frac = |h: usize| h as f64 / r;
    let se = |p: f64| (p * (1.0 - p) / r).sqrt();
    Ok(CoverageReport {
        replications: spec.replications,
        n: spec.n,
        n_reference,
        gamma: spec.gamma,
        epsilon: spec.epsilon,
        reference_lower: ref_l.value,
        reference_upper: ref_u.value,
        coverage_lower: frac(hits[0]),
        coverage_upper: frac(hits[1]),
        se_lower: se(frac(hits[0])),
        se_upper: se(frac(hits[1])),
    })
}
