//! Shared data types: label spaces, weak-label signatures, datasets, label
//! models, cost matrices and dual variables.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows of a label model must sum to one within this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Weak-label value meaning "this labeler abstained".
pub const ABSTAIN: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl LabelSpace {
    pub fn new(num_classes: usize, class_names: Option<Vec<String>>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Argument(format!(
                "label space needs at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != num_classes {
                return Err(Error::Argument(format!(
                    "{} class names for {num_classes} classes",
                    names.len()
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for name in names {
                if !seen.insert(name) {
                    return Err(Error::Argument(format!("duplicate class name {name:?}")));
                }
            }
        }
        Ok(Self {
            num_classes,
            class_names,
        })
    }

    pub fn binary() -> Self {
        Self {
            num_classes: 2,
            class_names: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }
}

/// The tuple of all weak-labeler outputs for one example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeakSignature(pub Vec<i32>);

impl WeakSignature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<i32>> for WeakSignature {
    fn from(v: Vec<i32>) -> Self {
        Self(v)
    }
}

/// Bijection between observed signatures and dense z-ids, in first-observed
/// order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignatureTable {
    signatures: Vec<WeakSignature>,
    index: HashMap<WeakSignature, usize>,
}

impl SignatureTable {
    /// Builds a table from an explicit list of distinct signatures.
    pub fn from_signatures(signatures: Vec<WeakSignature>) -> Result<Self> {
        let mut table = Self::default();
        for sig in signatures {
            if table.index.contains_key(&sig) {
                return Err(Error::Format(format!("duplicate signature {:?}", sig.0)));
            }
            table.push(sig)?;
        }
        Ok(table)
    }

    fn push(&mut self, sig: WeakSignature) -> Result<usize> {
        if let Some(first) = self.signatures.first() {
            if first.len() != sig.len() {
                return Err(Error::Format(format!(
                    "ragged signatures: expected {} weak labels, got {}",
                    first.len(),
                    sig.len()
                )));
            }
        }
        if let Some(v) = sig.0.iter().find(|&&v| v < ABSTAIN) {
            return Err(Error::Format(format!("invalid weak label {v}")));
        }
        let id = self.signatures.len();
        self.index.insert(sig.clone(), id);
        self.signatures.push(sig);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    /// Number of weak labelers (tuple length).
    pub fn num_labelers(&self) -> usize {
        self.signatures.first().map_or(0, WeakSignature::len)
    }

    pub fn id_of(&self, sig: &WeakSignature) -> Option<usize> {
        self.index.get(sig).copied()
    }

    pub fn decode(&self, z_id: usize) -> Option<&WeakSignature> {
        self.signatures.get(z_id)
    }

    pub fn signatures(&self) -> &[WeakSignature] {
        &self.signatures
    }
}

/// Assigns dense z-ids to raw signatures in first-observed order.
pub fn encode_signatures(raw: &[WeakSignature]) -> Result<(SignatureTable, Vec<usize>)> {
    if raw.is_empty() {
        return Err(Error::Format("no weak-label signatures".into()));
    }
    let mut table = SignatureTable::default();
    let mut ids = Vec::with_capacity(raw.len());
    for sig in raw {
        let id = match table.id_of(sig) {
            Some(id) => id,
            None => table.push(sig.clone())?,
        };
        ids.push(id);
    }
    Ok((table, ids))
}

/// A sample of `(X, Z)` pairs as seen by the bound estimators: the signature
/// id of each example plus whatever classifier outputs are available.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetView {
    z_ids: Vec<usize>,
    num_signatures: usize,
    scores: Option<Vec<f64>>,
    predictions: Option<Vec<usize>>,
    labels: Option<Vec<usize>>,
}

impl DatasetView {
    pub fn new(z_ids: Vec<usize>, num_signatures: usize) -> Result<Self> {
        if let Some(&z) = z_ids.iter().find(|&&z| z >= num_signatures) {
            return Err(Error::Format(format!(
                "z-id {z} out of range for {num_signatures} signatures"
            )));
        }
        Ok(Self {
            z_ids,
            num_signatures,
            scores: None,
            predictions: None,
            labels: None,
        })
    }

    pub fn with_scores(mut self, scores: Vec<f64>) -> Result<Self> {
        self.check_len("scores", scores.len())?;
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Format(format!("score {s} outside [0, 1]")));
        }
        self.scores = Some(scores);
        Ok(self)
    }

    pub fn with_predictions(mut self, predictions: Vec<usize>) -> Result<Self> {
        self.check_len("predictions", predictions.len())?;
        self.predictions = Some(predictions);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_len("labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.z_ids.len() {
            return Err(Error::Format(format!(
                "{what} has length {len}, expected {}",
                self.z_ids.len()
            )));
        }
        Ok(())
    }

    /// Checks class ids against the label space.
    pub fn check_classes(&self, space: &LabelSpace) -> Result<()> {
        let k = space.num_classes();
        for (what, col) in [("prediction", &self.predictions), ("label", &self.labels)] {
            if let Some(c) = col.as_ref().and_then(|v| v.iter().find(|&&c| c >= k)) {
                return Err(Error::Format(format!(
                    "{what} {c} out of range for {k} classes"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.z_ids.len()
    }

    pub fn num_signatures(&self) -> usize {
        self.num_signatures
    }

    pub fn z_ids(&self) -> &[usize] {
        &self.z_ids
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn predictions(&self) -> Option<&[usize]> {
        self.predictions.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Empirical frequency of each signature.
    pub fn signature_frequencies(&self) -> Vec<f64> {
        let mut freq = vec![0.0; self.num_signatures];
        for &z in &self.z_ids {
            freq[z] += 1.0;
        }
        let n = self.n().max(1) as f64;
        freq.iter_mut().for_each(|f| *f /= n);
        freq
    }

    /// Restricts the view to the given example indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i]).collect()
        }
        Self {
            z_ids: pick(&self.z_ids, indices),
            num_signatures: self.num_signatures,
            scores: self.scores.as_deref().map(|v| pick(v, indices)),
            predictions: self.predictions.as_deref().map(|v| pick(v, indices)),
            labels: self.labels.as_deref().map(|v| pick(v, indices)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelModelSource {
    External,
    CountedFromLabels,
}

/// Conditional table `P(Y = y | Z = z)`, one row per z-id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelModel {
    table: Array2<f64>,
    source: LabelModelSource,
}

impl LabelModel {
    /// Validates every row against the simplex. Rows off by at most
    /// [`SIMPLEX_TOL`] are renormalized; anything else is rejected.
    pub fn new(mut table: Array2<f64>, source: LabelModelSource) -> Result<Self> {
        if table.ncols() < 2 {
            return Err(Error::Argument("label model needs at least 2 classes".into()));
        }
        for (z, mut row) in table.axis_iter_mut(Axis(0)).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::Format(format!("label model row {z} has entries outside [0, 1]")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Format(format!(
                    "label model row {z} sums to {sum}, not 1"
                )));
            }
            row.mapv_inplace(|p| p / sum);
        }
        Ok(Self { table, source })
    }

    /// Wraps a table without any simplex checks. Use
    /// [`validate_label_model`] to inspect it.
    pub fn raw(table: Array2<f64>, source: LabelModelSource) -> Self {
        Self { table, source }
    }

    pub fn uniform(num_signatures: usize, num_classes: usize) -> Self {
        Self {
            table: Array2::from_elem((num_signatures, num_classes), 1.0 / num_classes as f64),
            source: LabelModelSource::External,
        }
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn source(&self) -> LabelModelSource {
        self.source
    }

    pub fn num_classes(&self) -> usize {
        self.table.ncols()
    }

    pub fn num_signatures(&self) -> usize {
        self.table.nrows()
    }

    pub fn prob(&self, z: usize, y: usize) -> f64 {
        self.table[[z, y]]
    }

    /// Fails with a coverage error on the first z-id in `data` without a row.
    pub fn check_covers(&self, data: &DatasetView) -> Result<()> {
        match data.z_ids().iter().find(|&&z| z >= self.num_signatures()) {
            Some(&z_id) => Err(Error::Coverage { z_id }),
            None => Ok(()),
        }
    }

    /// Mixes every row toward uniform: `(1 - t) p + t / |Y|`.
    pub fn mix_uniform(&self, t: f64) -> Self {
        let k = self.num_classes() as f64;
        Self {
            table: self.table.mapv(|p| (1.0 - t) * p + t / k),
            source: self.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// z-ids present in the table but absent from the model.
    pub missing_signatures: Vec<usize>,
    /// Rows that are not probability vectors within tolerance.
    pub simplex_violations: Vec<usize>,
    pub min_entry: f64,
    pub max_entry: f64,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.missing_signatures.is_empty() && self.simplex_violations.is_empty()
    }
}

pub fn validate_label_model(model: &LabelModel, table: &SignatureTable) -> ValidationReport {
    let missing_signatures = (model.num_signatures()..table.len()).collect();
    let simplex_violations = model
        .table
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| {
            row.iter().any(|p| !p.is_finite() || *p < -SIMPLEX_TOL || *p > 1.0 + SIMPLEX_TOL)
                || (row.sum() - 1.0).abs() > SIMPLEX_TOL
        })
        .map(|(z, _)| z)
        .collect();
    let min_entry = model.table.iter().copied().fold(f64::INFINITY, f64::min);
    let max_entry = model.table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ValidationReport {
        missing_signatures,
        simplex_violations,
        min_entry,
        max_entry,
    }
}

/// Per-example costs `g(X_i, y, Z_i)`, an `n × |Y|` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GMatrix {
    values: Array2<f64>,
    sup_norm: f64,
}

impl GMatrix {
    pub fn new(values: Array2<f64>, sup_norm: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("cost matrix has non-finite entries".into()));
        }
        if let Some(v) = values.iter().find(|v| v.abs() > sup_norm) {
            return Err(Error::Argument(format!(
                "cost entry {v} exceeds declared bound {sup_norm}"
            )));
        }
        Ok(Self { values, sup_norm })
    }

    /// Uses the largest absolute entry as the declared bound.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self::new(values, sup)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
            sup_norm: self.sup_norm,
        }
    }
}

/// Dual variables `a ∈ R^{|Y|×|Z|}`.
///
/// The solver sees them flattened z-major: entry `(y, z)` sits at
/// `z * |Y| + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    a: Array2<f64>,
}

impl DualVariables {
    pub fn new(a: Array2<f64>) -> Self {
        Self { a }
    }

    pub fn zeros(num_classes: usize, num_signatures: usize) -> Self {
        Self {
            a: Array2::zeros((num_classes, num_signatures)),
        }
    }

    pub fn from_flat(num_classes: usize, num_signatures: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), num_classes * num_signatures);
        let a = Array2::from_shape_fn((num_classes, num_signatures), |(y, z)| {
            flat[z * num_classes + y]
        });
        Self { a }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let (k, nz) = self.a.dim();
        let mut flat = vec![0.0; k * nz];
        for ((y, z), v) in self.a.indexed_iter() {
            flat[z * k + y] = *v;
        }
        flat
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn num_classes(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_signatures(&self) -> usize {
        self.a.ncols()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.a.sum_axis(Axis(0)).to_vec()
    }

    /// `Σ_z (Σ_y a[y, z])²`, zero exactly on the constraint set.
    pub fn penalty_residual(&self) -> f64 {
        self.column_sums().iter().map(|s| s * s).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite())
    }

    /// Subtracts each column's mean, landing in the zero-column-sum set.
    pub fn center_columns(&self) -> Self {
        let mut a = self.a.clone();
        for mut col in a.axis_iter_mut(Axis(1)) {
            let mean = col.mean().unwrap_or(0.0);
            col.mapv_inplace(|v| v - mean);
        }
        Self { a }
    }
}
