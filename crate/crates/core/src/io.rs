//! File formats (dataset CSV, label-model JSON, result JSON, sweep CSV) and
//! the counting label-model estimator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bounds::normal_interval;
use crate::domain::{
    encode_signatures, DatasetView, LabelModel, LabelModelSource, SignatureTable, WeakSignature,
    ABSTAIN,
};
use crate::error::{Error, Result};
use crate::metrics::{MetricBounds, SweepTable};
use crate::solver::SolveReport;

/// Significant digits kept for reals in result files.
pub const RESULT_DIGITS: usize = 9;

/// Contents of a dataset CSV: optional `score`, `pred` and `label`
/// columns plus weak labels `wl_0..wl_{K-1}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetFile {
    pub scores: Option<Vec<f64>>,
    pub predictions: Option<Vec<usize>>,
    pub labels: Option<Vec<usize>>,
    pub weak_labels: Vec<WeakSignature>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.weak_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weak_labels.is_empty()
    }

    pub fn num_labelers(&self) -> usize {
        self.weak_labels.first().map_or(0, WeakSignature::len)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, col: &str, row: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("row {row}, column {col}: cannot parse {s:?}")))
}

pub fn read_dataset<R: Read>(reader: R) -> Result<DatasetFile> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut score_col = None;
    let mut pred_col = None;
    let mut label_col = None;
    let mut wl_cols: Vec<(usize, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h.trim() {
            "score" => score_col = Some(i),
            "pred" => pred_col = Some(i),
            "label" => label_col = Some(i),
            other => match other.strip_prefix("wl_").and_then(|j| j.parse::<usize>().ok()) {
                Some(j) => wl_cols.push((j, i)),
                None => return Err(Error::Format(format!("unknown column {other:?}"))),
            },
        }
    }
    wl_cols.sort_unstable();
    if wl_cols.is_empty() {
        return Err(Error::Format("no weak-label columns".into()));
    }
    if wl_cols.iter().enumerate().any(|(expect, &(j, _))| j != expect) {
        return Err(Error::Format("weak-label columns must be wl_0..wl_{K-1}".into()));
    }

    let mut out = DatasetFile {
        scores: score_col.map(|_| Vec::new()),
        predictions: pred_col.map(|_| Vec::new()),
        labels: label_col.map(|_| Vec::new()),
        weak_labels: Vec::new(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if let (Some(c), Some(v)) = (score_col, out.scores.as_mut()) {
            v.push(parse_field(&rec[c], "score", row)?);
        }
        if let (Some(c), Some(v)) = (pred_col, out.predictions.as_mut()) {
            v.push(parse_field(&rec[c], "pred", row)?);
        }
        if let (Some(c), Some(v)) = (label_col, out.labels.as_mut()) {
            v.push(parse_field(&rec[c], "label", row)?);
        }
        let sig = wl_cols
            .iter()
            .map(|&(j, c)| {
                let v: i32 = parse_field(&rec[c], &format!("wl_{j}"), row)?;
                if v < ABSTAIN {
                    return Err(Error::Format(format!("row {row}: invalid weak label {v}")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        out.weak_labels.push(WeakSignature(sig));
    }
    if out.weak_labels.is_empty() {
        return Err(Error::Format("dataset has no rows".into()));
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(data: &DatasetFile, writer: W) -> Result<()> {
    let n = data.len();
    for (name, len) in [
        ("scores", data.scores.as_ref().map(Vec::len)),
        ("predictions", data.predictions.as_ref().map(Vec::len)),
        ("labels", data.labels.as_ref().map(Vec::len)),
    ] {
        if len.is_some_and(|l| l != n) {
            return Err(Error::Format(format!("{name} length differs from row count")));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    if data.scores.is_some() {
        header.push("score".into());
    }
    if data.predictions.is_some() {
        header.push("pred".into());
    }
    if data.labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..data.num_labelers()).map(|j| format!("wl_{j}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(s) = &data.scores {
            rec.push(s[i].to_string());
        }
        if let Some(p) = &data.predictions {
            rec.push(p[i].to_string());
        }
        if let Some(l) = &data.labels {
            rec.push(l[i].to_string());
        }
        rec.extend(data.weak_labels[i].0.iter().map(i32::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn save_dataset(data: &DatasetFile, path: &Path) -> Result<()> {
    write_dataset(data, BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// Unseen signatures are a data error.
    #[default]
    Error,
    /// Unseen signatures get a uniform row.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelEntry {
    pub z: Vec<i32>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelFile {
    pub num_classes: usize,
    pub entries: Vec<LabelModelEntry>,
    #[serde(default)]
    pub fallback: Fallback,
}

impl LabelModelFile {
    pub fn from_model(table: &SignatureTable, model: &LabelModel, fallback: Fallback) -> Result<Self> {
        if table.len() != model.num_signatures() {
            return Err(Error::Inconsistent(format!(
                "{} signatures but {} label-model rows",
                table.len(),
                model.num_signatures()
            )));
        }
        let entries = table
            .signatures()
            .iter()
            .zip(model.table().rows())
            .map(|(sig, row)| LabelModelEntry {
                z: sig.0.clone(),
                p: row.to_vec(),
            })
            .collect();
        Ok(Self {
            num_classes: model.num_classes(),
            entries,
            fallback,
        })
    }

    /// Validates the file and returns the signature table with one model row
    /// per entry, in entry order.
    pub fn to_model(&self) -> Result<(SignatureTable, LabelModel)> {
        if self.entries.is_empty() {
            return Err(Error::Format("label model has no entries".into()));
        }
        let k = self.num_classes;
        let mut table = Array2::zeros((self.entries.len(), k));
        for (z, e) in self.entries.iter().enumerate() {
            if e.p.len() != k {
                return Err(Error::Format(format!(
                    "entry {z} has {} probabilities, expected {k}",
                    e.p.len()
                )));
            }
            table.row_mut(z).assign(&ndarray::ArrayView1::from(&e.p));
        }
        let sigs = SignatureTable::from_signatures(
            self.entries.iter().map(|e| WeakSignature(e.z.clone())).collect(),
        )?;
        Ok((sigs, LabelModel::new(table, LabelModelSource::External)?))
    }
}

pub fn read_label_model<R: Read>(reader: R) -> Result<LabelModelFile> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_label_model(path: &Path) -> Result<LabelModelFile> {
    read_label_model(BufReader::new(File::open(path)?))
}

/// Writes at full precision so probabilities survive the round trip.
pub fn save_label_model(file: &LabelModelFile, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(file)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// A dataset matched against a label model.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub data: DatasetView,
    pub model: LabelModel,
    pub signatures: SignatureTable,
    /// Signatures that received a uniform fallback row.
    pub fallback_rows: usize,
}

fn attach_outputs(view: DatasetView, file: &DatasetFile) -> Result<DatasetView> {
    let mut view = view;
    if let Some(s) = &file.scores {
        view = view.with_scores(s.clone())?;
    }
    if let Some(p) = &file.predictions {
        view = view.with_predictions(p.clone())?;
    }
    if let Some(l) = &file.labels {
        view = view.with_labels(l.clone())?;
    }
    Ok(view)
}

/// Maps dataset signatures onto the label model's z-ids.
pub fn resolve_with_model(file: &DatasetFile, lm: &LabelModelFile) -> Result<Resolved> {
    let (table, model) = lm.to_model()?;
    if table.num_labelers() != file.num_labelers() {
        return Err(Error::Format(format!(
            "label model signatures have {} weak labels, dataset has {}",
            table.num_labelers(),
            file.num_labelers()
        )));
    }
    let mut sigs = table.signatures().to_vec();
    let mut unseen: Vec<WeakSignature> = Vec::new();
    let mut z_ids = Vec::with_capacity(file.len());
    for sig in &file.weak_labels {
        let id = match table.id_of(sig) {
            Some(id) => id,
            None => match lm.fallback {
                Fallback::Error => {
                    return Err(Error::Inconsistent(format!(
                        "label model has no entry for signature {:?}",
                        sig.0
                    )))
                }
                Fallback::Uniform => match unseen.iter().position(|u| u == sig) {
                    Some(j) => table.len() + j,
                    None => {
                        unseen.push(sig.clone());
                        table.len() + unseen.len() - 1
                    }
                },
            },
        };
        z_ids.push(id);
    }
    let k = lm.num_classes;
    let model = if unseen.is_empty() {
        model
    } else {
        let mut rows = model.table().clone();
        let extra = Array2::from_elem((unseen.len(), k), 1.0 / k as f64);
        rows = ndarray::concatenate(ndarray::Axis(0), &[rows.view(), extra.view()])
            .map_err(|e| Error::Format(e.to_string()))?;
        LabelModel::new(rows, LabelModelSource::External)?
    };
    let fallback_rows = unseen.len();
    sigs.extend(unseen);
    let signatures = SignatureTable::from_signatures(sigs)?;
    let data = attach_outputs(DatasetView::new(z_ids, signatures.len())?, file)?;
    Ok(Resolved {
        data,
        model,
        signatures,
        fallback_rows,
    })
}

/// Encodes the dataset's own signatures and counts a label model from its
/// labels.
pub fn resolve_counted(file: &DatasetFile, num_classes: usize, alpha: f64) -> Result<Resolved> {
    let (signatures, z_ids) = encode_signatures(&file.weak_labels)?;
    let data = attach_outputs(DatasetView::new(z_ids, signatures.len())?, file)?;
    let model = count_label_model(&data, num_classes, alpha)?;
    Ok(Resolved {
        data,
        model,
        signatures,
        fallback_rows: 0,
    })
}

/// `P̂(y | z) = (count(y, z) + α) / (count(z) + α·|Y|)`.
pub fn count_label_model(data: &DatasetView, num_classes: usize, alpha: f64) -> Result<LabelModel> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Argument("counting a label model needs labels".into()))?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Argument(format!("smoothing alpha must be non-negative, got {alpha}")));
    }
    if num_classes < 2 {
        return Err(Error::Argument("label model needs at least 2 classes".into()));
    }
    let mut counts = Array2::<f64>::zeros((data.num_signatures(), num_classes));
    for (&z, &y) in data.z_ids().iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::Format(format!("label {y} out of range for {num_classes} classes")));
        }
        counts[[z, y]] += 1.0;
    }
    for (z, mut row) in counts.rows_mut().into_iter().enumerate() {
        let denom = row.sum() + alpha * num_classes as f64;
        if denom <= 0.0 {
            return Err(Error::Format(format!("signature {z} has no labeled examples")));
        }
        row.mapv_inplace(|c| (c + alpha) / denom);
    }
    LabelModel::new(counts, LabelModelSource::CountedFromLabels)
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 || digits == 0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(num) if !(num.is_i64() || num.is_u64()) => {
            if let Some(r) = num.as_f64().map(|f| round_sig(f, RESULT_DIGITS)) {
                if let Some(n) = serde_json::Number::from_f64(r) {
                    *num = n;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every real rounded to [`RESULT_DIGITS`] significant
/// digits and a trailing newline.
pub fn to_stable_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub lower: SolveReport,
    pub upper: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub lower: f64,
    pub upper: f64,
    pub lower_std: f64,
    pub upper_std: f64,
    pub ci_level: f64,
    pub ci_lower: [f64; 2],
    pub ci_upper: [f64; 2],
    pub epsilon: f64,
    pub n: usize,
    pub clamped: bool,
    pub solver: SolverSummary,
    /// Value of the conditionally independent coupling, where defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_model_score: Option<f64>,
}

impl MetricResult {
    pub fn new(
        metric: &str,
        bounds: MetricBounds,
        n: usize,
        gamma: f64,
        epsilon: f64,
        solver: SolverSummary,
    ) -> Result<Self> {
        let lo = normal_interval(bounds.lower, bounds.lower_std, n, gamma)?;
        let hi = normal_interval(bounds.upper, bounds.upper_std, n, gamma)?;
        Ok(Self {
            metric: metric.to_string(),
            lower: bounds.lower,
            upper: bounds.upper,
            lower_std: bounds.lower_std,
            upper_std: bounds.upper_std,
            ci_level: lo.level,
            ci_lower: [lo.low, lo.high],
            ci_upper: [hi.low, hi.high],
            epsilon,
            n,
            clamped: bounds.clamped,
            solver,
            label_model_score: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub label_model_source: LabelModelSource,
    /// Examples in the input file.
    pub m: usize,
    /// Examples used for the bound estimates.
    pub n: usize,
    pub seed: u64,
    pub fallback_rows: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub metrics: Vec<MetricResult>,
    pub metadata: ResultMetadata,
}

pub fn read_result<R: Read>(reader: R) -> Result<ResultFile> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_result(path: &Path) -> Result<ResultFile> {
    read_result(BufReader::new(File::open(path)?))
}

pub fn save_result(result: &ResultFile, path: &Path) -> Result<()> {
    std::fs::write(path, to_stable_json(result)?)?;
    Ok(())
}

/// Plot-ready CSV, one row per (threshold, metric).
pub fn write_sweep_csv<W: Write>(table: &SweepTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "threshold",
        "metric",
        "lower",
        "upper",
        "lower_std",
        "upper_std",
        "ci_lower_low",
        "ci_lower_high",
        "ci_upper_low",
        "ci_upper_high",
        "clamped",
    ])?;
    let f = |x: f64| round_sig(x, RESULT_DIGITS).to_string();
    for r in &table.rows {
        w.write_record([
            f(r.threshold),
            r.metric.clone(),
            f(r.lower),
            f(r.upper),
            f(r.lower_std),
            f(r.upper_std),
            f(r.ci_lower[0]),
            f(r.ci_lower[1]),
            f(r.ci_upper[0]),
            f(r.ci_upper[1]),
            r.clamped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
