//! `frechet`: bounds on classifier metrics from weak labels.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use frechet_core::bounds::{estimate_bounds, estimate_class_prior, subsample_for_bounds};
use frechet_core::diagnostics::{
    conditional_entropy_y, informativeness_bound, label_model_score, misspecification_report,
    select_model, Candidate, SelectionStrategy,
};
use frechet_core::domain::{DatasetView, GMatrix, LabelModel, LabelSpace};
use frechet_core::io::{
    load_dataset, load_label_model, load_result, resolve_counted, resolve_with_model, save_dataset,
    save_label_model, to_stable_json, write_sweep_csv, MetricResult, ResultFile, ResultMetadata,
    Resolved, SolverSummary,
};
use frechet_core::metrics::{
    build_g, estimate_h1, prf_from_joint, threshold_sweep, MetricBounds, MetricKind, MetricSpec,
    SweepMetric, SweepOptions,
};
use frechet_core::objective::SmoothingConfig;
use frechet_core::oracle::{exact_bounds, ORACLE_SIZE_LIMIT};
use frechet_core::solver::SolverConfig;
use frechet_core::synth::{coverage_experiment, generate_synthetic, CoverageSpec, SynthSpec};
use frechet_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "frechet", version, about = "Fréchet bounds on classifier metrics from weak labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bound one metric on a dataset.
    Estimate(EstimateArgs),
    /// Bound metrics of a thresholded score over a grid of thresholds.
    Sweep(SweepArgs),
    /// Pick a model from a directory of result files.
    Select(SelectArgs),
    /// Exact bounds for small instances.
    Oracle(OracleArgs),
    /// Informativeness and misspecification diagnostics.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic dataset with its exact label model.
    Synth(SynthArgs),
    /// Confidence-interval coverage experiment on synthetic data.
    Coverage(CoverageArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Label-model JSON; without it the model is counted from the `label` column.
    #[arg(long)]
    label_model: Option<PathBuf>,
    /// Number of classes when counting the label model.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Additive smoothing when counting the label model.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MetricArg {
    Accuracy,
    Risk,
    JointPositive,
}

#[derive(Args, Debug)]
struct MetricArgs {
    #[arg(long, value_enum, default_value_t = MetricArg::Accuracy)]
    metric: MetricArg,
    /// Loss table for risk, rows separated by `;`, e.g. `0,1;1,0`.
    #[arg(long)]
    loss_table: Option<String>,
    /// Binarize scores as `score >= threshold`.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct SmoothArgs {
    /// Smoothing temperature; defaults to `0.01 / ln|Y|`.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    penalty: f64,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    gradient_tolerance: f64,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    /// Examples used for the bounds, drawn without replacement.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Known `P(Y = 1)`, overriding the label-model estimate.
    #[arg(long)]
    prior: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SweepFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Comma-separated thresholds.
    #[arg(long)]
    thresholds: String,
    /// Comma-separated metrics among accuracy, joint_positive, precision, recall, f1.
    #[arg(long, default_value = "accuracy,precision,recall,f1")]
    metrics: String,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long)]
    prior: Option<f64>,
    #[arg(long, value_enum, default_value_t = SweepFormat::Csv)]
    format: SweepFormat,
    /// Accepted for a uniform interface; the sweep uses no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum StrategyArg {
    Lower,
    Upper,
    Average,
    LabelModel,
}

impl From<StrategyArg> for SelectionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Lower => SelectionStrategy::Lower,
            StrategyArg::Upper => SelectionStrategy::Upper,
            StrategyArg::Average => SelectionStrategy::Average,
            StrategyArg::LabelModel => SelectionStrategy::LabelModel,
        }
    }
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Directory of result JSON files, one per candidate, ordered by name.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Lower)]
    strategy: StrategyArg,
    /// Metric entry to compare.
    #[arg(long, default_value = "accuracy")]
    metric: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    metric: MetricArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Alternative label model for the misspecification report.
    #[arg(long)]
    label_model_alt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GeneratorArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Comma-separated labeler accuracies.
    #[arg(long, default_value = "0.8,0.7,0.65")]
    accuracies: String,
    /// Comma-separated abstain rates; zero for every labeler by default.
    #[arg(long)]
    abstain: Option<String>,
    #[arg(long = "prior", default_value_t = 0.5)]
    prior_y1: f64,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives data.csv, label_model.json and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 500)]
    replications: usize,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    reference_factor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 1,
        Error::Numerical { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => estimate(a),
        Command::Sweep(a) => sweep(a),
        Command::Select(a) => select(a),
        Command::Oracle(a) => oracle(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Synth(a) => synth(a),
        Command::Coverage(a) => coverage(a),
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Argument(format!("cannot parse {what} entry {t:?}")))
        })
        .collect()
}

fn parse_loss_table(s: &str, k: usize) -> Result<ndarray::Array2<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| parse_list(r, "loss table"))
        .collect::<Result<_>>()?;
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Argument(format!("loss table must be {k}x{k}")));
    }
    Ok(ndarray::Array2::from_shape_fn((k, k), |(i, j)| rows[i][j]))
}

fn load_input(a: &InputArgs) -> Result<Resolved> {
    let file = load_dataset(&a.data)?;
    let resolved = match &a.label_model {
        Some(path) => resolve_with_model(&file, &load_label_model(path)?)?,
        None => {
            let k = match a.num_classes {
                Some(k) => k,
                None => file
                    .labels
                    .as_ref()
                    .and_then(|l| l.iter().max())
                    .map_or(2, |&m| (m + 1).max(2)),
            };
            resolve_counted(&file, k, a.alpha)?
        }
    };
    let space = LabelSpace::new(resolved.model.num_classes(), None)?;
    resolved.data.check_classes(&space)?;
    Ok(resolved)
}

fn metric_spec(a: &MetricArgs, k: usize) -> Result<MetricSpec> {
    let spec = match a.metric {
        MetricArg::Accuracy => MetricSpec::accuracy(),
        MetricArg::JointPositive => MetricSpec::joint_positive(),
        MetricArg::Risk => {
            let table = a
                .loss_table
                .as_deref()
                .ok_or_else(|| Error::Argument("--metric risk needs --loss-table".into()))?;
            MetricSpec::risk(parse_loss_table(table, k)?)
        }
    };
    Ok(match a.threshold {
        Some(t) => spec.with_threshold(t),
        None => spec,
    })
}

fn smoothing(a: &SmoothArgs, k: usize) -> Result<(SmoothingConfig, SolverConfig)> {
    let eps = a.epsilon.unwrap_or_else(|| SmoothingConfig::default_for(k).epsilon);
    let cfg = SmoothingConfig::new(eps, a.penalty)?;
    let scfg = SolverConfig {
        max_iterations: a.max_iterations,
        gradient_tolerance: a.gradient_tolerance,
        ..SolverConfig::default()
    };
    scfg.validate()?;
    Ok((cfg, scfg))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    check_gamma(a.gamma)?;
    let r = load_input(&a.input)?;
    let k = r.model.num_classes();
    let spec = metric_spec(&a.metric, k)?;
    let (cfg, scfg) = smoothing(&a.smooth, k)?;
    let m = r.data.n();
    let data = match a.n {
        Some(n) => subsample_for_bounds(&r.data, n, a.seed)?,
        None => r.data.clone(),
    };
    let n = data.n();
    let g = build_g(&data, &spec, &LabelSpace::new(k, None)?)?;
    let (lo, up) = estimate_bounds(&data, &r.model, &g, cfg, &scfg)?;
    let solver = SolverSummary {
        lower: lo.report,
        upper: up.report,
    };
    let raw = MetricBounds {
        lower: lo.value,
        upper: up.value,
        lower_std: lo.plugin_std,
        upper_std: up.plugin_std,
        clamped: false,
    };
    let bounds = match spec.kind {
        MetricKind::Risk => raw,
        _ => MetricBounds::clamp(raw.lower, raw.upper, raw.lower_std, raw.upper_std),
    };
    let mut main = MetricResult::new(spec.kind.name(), bounds, n, a.gamma, cfg.epsilon, solver)?;
    main.label_model_score = Some(label_model_score(&data, &r.model, &g)?);
    let mut metrics = vec![main];
    let mut notes = Vec::new();

    if spec.kind == MetricKind::JointPositive {
        let p_h1 = estimate_h1(&r.data, spec.threshold)?;
        let p_y1 = match a.prior {
            Some(p) => p,
            None => estimate_class_prior(&r.data, &r.model, 1)?,
        };
        let prf = prf_from_joint(&lo, &up, p_h1, p_y1)?;
        for (name, b) in [("precision", prf.precision), ("recall", prf.recall), ("f1", prf.f1)] {
            metrics.push(MetricResult::new(name, b, n, a.gamma, cfg.epsilon, solver)?);
        }
        notes.push(format!("p_hat_h1={p_h1}, p_hat_y1={p_y1}"));
        if n == m {
            notes.push(
                "precision/recall/F1 intervals assume n grows slower than m; here n = m".into(),
            );
        }
    }
    if !(lo.report.converged && up.report.converged) {
        notes.push("solver did not reach the gradient tolerance".into());
    }
    let result = ResultFile {
        metrics,
        metadata: ResultMetadata {
            label_model_source: r.model.source(),
            m,
            n,
            seed: a.seed,
            fallback_rows: r.fallback_rows,
            notes,
        },
    };
    emit(a.out.as_deref(), &to_stable_json(&result)?)
}

fn sweep(a: SweepArgs) -> Result<()> {
    check_gamma(a.gamma)?;
    let r = load_input(&a.input)?;
    let k = r.model.num_classes();
    let (cfg, scfg) = smoothing(&a.smooth, k)?;
    let thresholds: Vec<f64> = parse_list(&a.thresholds, "threshold")?;
    let metrics = a
        .metrics
        .split(',')
        .map(|s| SweepMetric::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let opts = SweepOptions {
        metrics,
        smoothing: cfg,
        solver: scfg,
        gamma: a.gamma,
        prior_y1: a.prior,
    };
    let table = threshold_sweep(&r.data, &r.model, &thresholds, &opts)?;
    let content = match a.format {
        SweepFormat::Json => to_stable_json(&table)?,
        SweepFormat::Csv => {
            let mut buf = Vec::new();
            write_sweep_csv(&table, &mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?
        }
    };
    emit(a.out.as_deref(), &content)
}

fn select(a: SelectArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.candidates)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!(
            "no result files in {}",
            a.candidates.display()
        )));
    }
    let strategy = SelectionStrategy::from(a.strategy);
    let mut candidates = Vec::with_capacity(files.len());
    for path in &files {
        let result = load_result(path)?;
        let entry = result
            .metrics
            .iter()
            .find(|m| m.metric == a.metric)
            .ok_or_else(|| {
                Error::Format(format!("{} has no {} entry", path.display(), a.metric))
            })?;
        let score = match (strategy, entry.label_model_score) {
            (_, Some(s)) => s,
            (SelectionStrategy::LabelModel, None) => {
                return Err(Error::Format(format!(
                    "{} has no label-model score",
                    path.display()
                )))
            }
            (_, None) => f64::NAN,
        };
        candidates.push(Candidate {
            lower: entry.lower,
            upper: entry.upper,
            label_model_score: score,
        });
    }
    let sel = select_model(&candidates, strategy)?;
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let out = json!({
        "strategy": sel.strategy,
        "metric": a.metric,
        "chosen_index": sel.chosen_index,
        "chosen": names[sel.chosen_index],
        "candidates": names,
        "scores": sel.scores,
    });
    emit(a.out.as_deref(), &to_stable_json(&out)?)
}

fn oracle(a: OracleArgs) -> Result<()> {
    let r = load_input(&a.input)?;
    let k = r.model.num_classes();
    let spec = metric_spec(&a.metric, k)?;
    let g = build_g(&r.data, &spec, &LabelSpace::new(k, None)?)?;
    let exact = exact_bounds(&r.data, &r.model, &g)?;
    eprintln!("L={} U={}", exact.lower, exact.upper);
    let out = json!({
        "metric": spec.kind.name(),
        "n": r.data.n(),
        "lower": exact.lower,
        "upper": exact.upper,
        "per_signature": exact.per_signature,
    });
    emit(a.out.as_deref(), &to_stable_json(&out)?)
}

fn exact_if_small(data: &DatasetView, model: &LabelModel, g: &GMatrix) -> Result<Value> {
    let size = data.n() * model.num_classes() * data.num_signatures();
    if size > ORACLE_SIZE_LIMIT {
        return Ok(Value::Null);
    }
    let exact = exact_bounds(data, model, g)?;
    Ok(json!({ "lower": exact.lower, "upper": exact.upper, "width": exact.upper - exact.lower }))
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let r = load_input(&a.input)?;
    let k = r.model.num_classes();
    let spec = metric_spec(&a.metric, k)?;
    let (cfg, scfg) = smoothing(&a.smooth, k)?;
    let g = build_g(&r.data, &spec, &LabelSpace::new(k, None)?)?;
    let h = conditional_entropy_y(&r.model, &r.data.signature_frequencies())?;
    let mut notes = Vec::new();

    let misspec = match &a.label_model_alt {
        Some(path) => {
            let alt = resolve_with_model(&load_dataset(&a.input.data)?, &load_label_model(path)?)?;
            if alt.signatures.signatures() != r.signatures.signatures() {
                return Err(Error::Inconsistent(
                    "alternative label model assigns signatures differently".into(),
                ));
            }
            notes.push(
                "the certificate assumes optimizer norms stay bounded across label models; only the two reported norms are checked"
                    .to_string(),
            );
            serde_json::to_value(misspecification_report(&r.data, &r.model, &alt.model, &g, cfg, &scfg)?)?
        }
        None => Value::Null,
    };
    let out = json!({
        "metric": spec.kind.name(),
        "n": r.data.n(),
        "num_signatures": r.data.num_signatures(),
        "g_sup_norm": g.sup_norm(),
        "conditional_entropy_y": h,
        "informativeness_bound": informativeness_bound(g.sup_norm(), h),
        "label_model_score": label_model_score(&r.data, &r.model, &g)?,
        "exact_bounds": exact_if_small(&r.data, &r.model, &g)?,
        "misspecification": misspec,
        "notes": notes,
    });
    emit(a.out.as_deref(), &to_stable_json(&out)?)
}

fn synth_spec(g: &GeneratorArgs, seed: u64) -> Result<SynthSpec> {
    let acc: Vec<f64> = parse_list(&g.accuracies, "accuracy")?;
    let abstain = match &g.abstain {
        Some(s) => parse_list(s, "abstain rate")?,
        None => vec![0.0; acc.len()],
    };
    let spec = SynthSpec {
        n: g.n,
        labeler_accuracies: acc,
        abstain_rates: abstain,
        prior_y1: g.prior_y1,
        score_separation: g.separation,
        threshold: g.threshold,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = synth_spec(&a.generator, a.seed)?;
    let draw = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    save_dataset(&draw.dataset, &a.out_dir.join("data.csv"))?;
    save_label_model(&draw.label_model, &a.out_dir.join("label_model.json"))?;
    fs::write(a.out_dir.join("truth.json"), to_stable_json(&draw.truth)?)?;
    Ok(())
}

fn coverage(a: CoverageArgs) -> Result<()> {
    check_gamma(a.gamma)?;
    let spec = CoverageSpec {
        replications: a.replications,
        n: a.generator.n,
        generator: synth_spec(&a.generator, a.seed)?,
        gamma: a.gamma,
        epsilon: a.epsilon,
        reference_factor: a.reference_factor,
    };
    let report = coverage_experiment(&spec, &SolverConfig::default())?;
    emit(a.out.as_deref(), &to_stable_json(&report)?)
}
