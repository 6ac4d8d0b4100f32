//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use frechet_core::bounds::estimate_bounds;
use frechet_core::diagnostics::{
    conditional_entropy_y, informativeness_bound, label_model_score, misspecification_report,
};
use frechet_core::domain::{DatasetView, DualVariables, GMatrix, LabelModel, LabelModelSource, LabelSpace};
use frechet_core::io::resolve_with_model;
use frechet_core::metrics::{build_g, prf_from_values, MetricSpec};
use frechet_core::objective::{DualObjective, ObjectiveSide, SmoothingConfig};
use frechet_core::oracle::exact_bounds;
use frechet_core::solver::SolverConfig;
use frechet_core::synth::{coverage_experiment, generate_synthetic, CoverageSpec, SynthSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn simplex_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn random_model(rng: &mut ChaCha8Rng, nz: usize, k: usize) -> LabelModel {
    let mut table = Array2::zeros((nz, k));
    for z in 0..nz {
        for (y, p) in simplex_row(rng, k).into_iter().enumerate() {
            table[[z, y]] = p;
        }
    }
    LabelModel::new(table, LabelModelSource::External).unwrap()
}

/// Every signature appears at least once.
fn random_data(rng: &mut ChaCha8Rng, n_max: usize, nz_max: usize) -> DatasetView {
    let nz = rng.random_range(1..=nz_max);
    let n = rng.random_range(nz.max(2)..=n_max);
    let mut z_ids: Vec<usize> = (0..nz).collect();
    z_ids.extend((nz..n).map(|_| rng.random_range(0..nz)));
    DatasetView::new(z_ids, nz).unwrap()
}

fn random_g(rng: &mut ChaCha8Rng, n: usize, k: usize) -> GMatrix {
    GMatrix::from_values(Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..=1.0))).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (DatasetView, LabelModel, GMatrix) {
    let k = rng.random_range(2..=3);
    let data = random_data(rng, 60, 5);
    let model = random_model(rng, data.num_signatures(), k);
    let g = random_g(rng, data.n(), k);
    (data, model, g)
}

fn oracle_sandwich() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scfg = SolverConfig::default();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let instances = 500;
    for _ in 0..instances {
        let (data, model, g) = random_instance(&mut rng);
        let k = model.num_classes();
        let gap = 1e-3;
        let cfg = SmoothingConfig::new(gap / (k as f64).ln(), 1.0).unwrap();
        let exact = exact_bounds(&data, &model, &g).unwrap();
        let (lo, up) = estimate_bounds(&data, &model, &g, cfg, &scfg).unwrap();
        let viol = [
            exact.lower - 1e-5 - lo.value,
            lo.value - (exact.lower + gap + 1e-5),
            (exact.upper - gap - 1e-5) - up.value,
            up.value - (exact.upper + 1e-5),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(viol);
        if viol > 0.0 {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 60.0,
        format!("{instances} instances, {failures} outside, worst excess {worst:.2e}, {secs:.1} s"),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (data, model, g) = random_instance(&mut rng);
        let (k, nz) = (model.num_classes(), data.num_signatures());
        let eps = rng.random_range(0.05..1.0);
        let cfg = SmoothingConfig::new(eps, rng.random_range(0.0..2.0)).unwrap();
        let obj = DualObjective::new(&data, &model, &g, cfg).unwrap();
        let a = DualVariables::new(Array2::from_shape_fn((k, nz), |_| rng.random_range(-1.0..1.0)));
        for side in [ObjectiveSide::Lower, ObjectiveSide::Upper] {
            let analytic = DualVariables::new(obj.gradient(&a, side).unwrap()).to_flat();
            let x = a.to_flat();
            let fd: Vec<f64> = (0..x.len())
                .map(|i| {
                    let shifted = |d: f64| {
                        let mut xs = x.clone();
                        xs[i] += d;
                        obj.descent_value(&DualVariables::from_flat(k, nz, &xs), side).unwrap()
                    };
                    (shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();
            let err = analytic
                .iter()
                .zip(&fd)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            worst = worst.max(err / scale.max(f64::MIN_POSITIVE));
        }
    }
    outcome(worst <= 1e-5, format!("100 triples, max relative error {worst:.2e}"))
}

fn two_point_gap() -> Outcome {
    let data = DatasetView::new(vec![0, 0], 1).unwrap();
    let model = LabelModel::new(array![[0.25, 0.75]], LabelModelSource::External).unwrap();
    let g = GMatrix::from_values(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let mut devs = Vec::new();
    let mut pass = true;
    for eps in [1e-1, 1e-2, 1e-3] {
        let cfg = SmoothingConfig::new(eps, 1.0).unwrap();
        let (lo, _) = estimate_bounds(&data, &model, &g, cfg, &SolverConfig::default()).unwrap();
        let dev = (lo.value - 0.25).abs();
        pass &= dev <= eps * 2f64.ln() + 1e-5;
        devs.push(dev);
    }
    pass &= devs.windows(2).all(|w| w[1] < w[0]);
    outcome(pass, format!("deviations {:.3e}, {:.3e}, {:.3e}", devs[0], devs[1], devs[2]))
}

fn ci_coverage() -> Outcome {
    let start = Instant::now();
    let spec = CoverageSpec {
        replications: 500,
        n: 2000,
        generator: SynthSpec {
            n: 2000,
            labeler_accuracies: vec![0.8, 0.7, 0.65],
            abstain_rates: vec![0.0; 3],
            prior_y1: 0.4,
            score_separation: 2.0,
            threshold: 0.5,
            seed: 4,
        },
        gamma: 0.05,
        epsilon: 1e-2,
        reference_factor: 100,
    };
    let r = coverage_experiment(&spec, &SolverConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (0.92..=0.98).contains(&r.coverage_lower) && secs <= 600.0,
        format!(
            "lower {:.3} (se {:.3}), upper {:.3}, {secs:.1} s",
            r.coverage_lower, r.se_lower, r.coverage_upper
        ),
    )
}

fn prf_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut std_exact = true;
    for _ in 0..50 {
        let p_h1: f64 = rng.random_range(0.05..1.0);
        let p_y1: f64 = rng.random_range(0.05..1.0);
        let l = rng.random_range(0.0..p_h1.min(p_y1));
        let u = rng.random_range(l..p_h1.min(p_y1));
        let (sl, su) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let b = prf_from_values(l, u, sl, su, p_h1, p_y1).unwrap();
        let hand = [
            (l / p_h1, u / p_h1, b.precision),
            (l / p_y1, u / p_y1, b.recall),
            (2.0 * l / (p_h1 + p_y1), 2.0 * u / (p_h1 + p_y1), b.f1),
        ];
        for (hl, hu, got) in hand {
            let (hl, hu) = (hl.clamp(0.0, 1.0), hu.clamp(0.0, 1.0));
            worst = worst.max((got.lower - hl).abs()).max((got.upper - hu).abs());
        }
        std_exact &= b.precision.lower_std == sl / p_h1
            && b.recall.lower_std == sl / p_y1
            && b.f1.lower_std == 2.0 * sl / (p_h1 + p_y1)
            && b.precision.upper_std == su / p_h1;
    }
    outcome(
        worst <= 1e-12 && std_exact,
        format!("50 tuples, max value error {worst:.1e}, stds exact: {std_exact}"),
    )
}

fn misspecification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scfg = SolverConfig::default();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_same: f64 = 0.0;
    for i in 0..100 {
        let (data, p, g) = random_instance(&mut rng);
        let k = p.num_classes();
        let cfg = SmoothingConfig::new(rng.random_range(0.02..0.2), 1.0).unwrap();
        let q = if i % 2 == 0 {
            p.mix_uniform(rng.random_range(0.0..1.0))
        } else {
            let t = rng.random_range(0.0..0.5);
            let mut table = p.table().clone();
            for z in 0..table.nrows() {
                let other = simplex_row(&mut rng, k);
                for y in 0..k {
                    table[[z, y]] = (1.0 - t) * table[[z, y]] + t * other[y];
                }
            }
            LabelModel::new(table, LabelModelSource::External).unwrap()
        };
        let r = misspecification_report(&data, &p, &q, &g, cfg, &scfg).unwrap();
        let gap = r.bound_gap_lower.max(r.bound_gap_upper);
        worst_excess = worst_excess.max(gap - r.certificate);
        let same = misspecification_report(&data, &p, &p, &g, cfg, &scfg).unwrap();
        worst_same = worst_same.max(same.bound_gap_lower.max(same.bound_gap_upper));
    }
    outcome(
        worst_excess <= 1e-5 && worst_same <= 1e-6,
        format!("100 pairs, max gap − certificate {worst_excess:.2e}, Q = P gap {worst_same:.1e}"),
    )
}

fn informativeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let (data, model, g) = random_instance(&mut rng);
        let exact = exact_bounds(&data, &model, &g).unwrap();
        let h = conditional_entropy_y(&model, &data.signature_frequencies()).unwrap();
        worst = worst.max(exact.upper - exact.lower - informativeness_bound(g.sup_norm(), h));
    }
    let mut onehot_width: f64 = 0.0;
    for _ in 0..50 {
        let (data, _, g) = random_instance(&mut rng);
        let k = g.num_classes();
        let table = Array2::from_shape_fn((data.num_signatures(), k), |(z, y)| f64::from(u8::from(y == z % k)));
        let model = LabelModel::new(table, LabelModelSource::External).unwrap();
        let exact = exact_bounds(&data, &model, &g).unwrap();
        onehot_width = onehot_width.max(exact.upper - exact.lower);
    }
    outcome(
        worst <= 1e-9 && onehot_width <= 1e-9,
        format!("200 instances, max width − bound {worst:.2e}, one-hot width {onehot_width:.1e}"),
    )
}

/// Random coupling of the rows of one signature with the label classes,
/// with row masses `1/n` and column masses `n_z/n · p(·|z)`, by iterative
/// proportional fitting from a random positive start.
fn ipf_coupling(rng: &mut ChaCha8Rng, rows: usize, n: usize, p: &[f64]) -> Array2<f64> {
    let k = p.len();
    let row_mass = 1.0 / n as f64;
    let col_mass: Vec<f64> = p.iter().map(|&v| v * rows as f64 / n as f64).collect();
    let mut pi = Array2::from_shape_fn((rows, k), |_| rng.random_range(0.01..1.0));
    for _ in 0..10_000 {
        for mut r in pi.rows_mut() {
            let s = r.sum();
            r.mapv_inplace(|v| v * row_mass / s);
        }
        let mut err: f64 = 0.0;
        for (y, mut c) in pi.columns_mut().into_iter().enumerate() {
            let s = c.sum();
            err = err.max((s - col_mass[y]).abs());
            if s > 0.0 {
                c.mapv_inplace(|v| v * col_mass[y] / s);
            }
        }
        if err < 1e-15 {
            break;
        }
    }
    pi
}

fn coupling_containment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    for _ in 0..100 {
        let (data, model, g) = random_instance(&mut rng);
        let exact = exact_bounds(&data, &model, &g).unwrap();
        let n = data.n();
        let mut value = 0.0;
        for z in 0..data.num_signatures() {
            let idx: Vec<usize> = (0..n).filter(|&i| data.z_ids()[i] == z).collect();
            let p = model.table().row(z).to_vec();
            let pi = ipf_coupling(&mut rng, idx.len(), n, &p);
            for (r, &i) in idx.iter().enumerate() {
                for y in 0..p.len() {
                    value += pi[[r, y]] * g.values()[[i, y]];
                }
            }
        }
        let lms = label_model_score(&data, &model, &g).unwrap();
        let inside = |v: f64| exact.lower - 1e-9 <= v && v <= exact.upper + 1e-9;
        if !inside(value) || !inside(lms) {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("100 couplings, {failures} outside [L, U]"))
}

fn end_to_end() -> Outcome {
    let scfg = SolverConfig::default();
    let eps = 1e-2;
    let cfg = SmoothingConfig::new(eps, 1.0).unwrap();
    let gap = eps * 2f64.ln();
    let mut inside = 0;
    let trials = 200;
    for seed in 0..trials {
        let spec = SynthSpec {
            n: 500,
            labeler_accuracies: vec![0.85, 0.75, 0.7],
            abstain_rates: vec![0.1, 0.2, 0.1],
            prior_y1: 0.5,
            score_separation: 1.5,
            threshold: 0.5,
            seed,
        };
        let draw = generate_synthetic(&spec).unwrap();
        let r = resolve_with_model(&draw.dataset, &draw.label_model).unwrap();
        let g = build_g(&r.data, &MetricSpec::accuracy(), &LabelSpace::binary()).unwrap();
        let (lo, up) = estimate_bounds(&r.data, &r.model, &g, cfg, &scfg).unwrap();
        let root_n = (r.data.n() as f64).sqrt();
        let low = lo.value - gap - 3.0 * lo.plugin_std / root_n;
        let high = up.value + gap + 3.0 * up.plugin_std / root_n;
        if low <= draw.truth.accuracy && draw.truth.accuracy <= high {
            inside += 1;
        }
    }
    let frac = inside as f64 / trials as f64;
    outcome(frac >= 0.99, format!("{inside}/{trials} trials contain the true accuracy"))
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_frechet"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Runs every subcommand in `dir`, writing outputs there.
fn cli_round(dir: &Path, data_dir: &Path) -> bool {
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let data = data_dir.join("data.csv").to_string_lossy().into_owned();
    let lm = data_dir.join("label_model.json").to_string_lossy().into_owned();
    let cand = dir.join("cand");
    std::fs::create_dir_all(&cand).unwrap();
    let c = |name: &str| cand.join(name).to_string_lossy().into_owned();
    let mut ok = true;
    ok &= run_cli(&["synth", "--n", "300", "--seed", "11", "--out-dir", &d("synth")]);
    ok &= run_cli(&[
        "estimate", "--data", &data, "--label-model", &lm, "--n", "150", "--seed", "3",
        "--out", &c("a.json"),
    ]);
    ok &= run_cli(&[
        "estimate", "--data", &data, "--label-model", &lm, "--threshold", "0.6", "--seed", "3",
        "--out", &c("b.json"),
    ]);
    ok &= run_cli(&[
        "estimate", "--data", &data, "--label-model", &lm, "--metric", "joint-positive",
        "--threshold", "0.6", "--seed", "3", "--out", &d("prf.json"),
    ]);
    ok &= run_cli(&[
        "estimate", "--data", &data, "--metric", "risk", "--loss-table", "0,1;2,0",
        "--seed", "3", "--out", &d("risk.json"),
    ]);
    ok &= run_cli(&[
        "sweep", "--data", &data, "--label-model", &lm, "--thresholds", "0.2,0.5,0.8",
        "--seed", "3", "--out", &d("sweep.csv"),
    ]);
    ok &= run_cli(&[
        "select", "--candidates", &cand.to_string_lossy(), "--strategy", "lower", "--seed", "3",
        "--out", &d("select.json"),
    ]);
    ok &= run_cli(&["oracle", "--data", &data, "--label-model", &lm, "--seed", "3", "--out", &d("oracle.json")]);
    ok &= run_cli(&[
        "diagnose", "--data", &data, "--label-model", &lm, "--label-model-alt", &lm,
        "--seed", "3", "--out", &d("diagnose.json"),
    ]);
    ok &= run_cli(&[
        "coverage", "--n", "100", "--replications", "100", "--seed", "3", "--out", &d("coverage.json"),
    ]);
    ok
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, base, out);
        } else {
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("input");
    if !run_cli(&["synth", "--n", "300", "--seed", "5", "--out-dir", &data_dir.to_string_lossy()]) {
        return outcome(false, "synth failed".into());
    }
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    if !(cli_round(&a, &data_dir) && cli_round(&b, &data_dir)) {
        return outcome(false, "a CLI command failed".into());
    }
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(&a, &a, &mut fa);
    collect_files(&b, &b, &mut fb);
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} output files compared, differing: {differing:?}", fa.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle sandwich", oracle_sandwich),
        ("gradient vs finite differences", gradient_check),
        ("two-point smoothing gap", two_point_gap),
        ("confidence-interval coverage", ci_coverage),
        ("precision/recall/F1 arithmetic", prf_arithmetic),
        ("misspecification certificate", misspecification),
        ("informativeness dominance", informativeness),
        ("feasible-coupling containment", coupling_containment),
        ("end-to-end sanity", end_to_end),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<32} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
