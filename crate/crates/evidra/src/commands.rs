//! One function per subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use evidra_core::backbone::MlpConfig;
use evidra_core::baselines::{to_records, ScoredPrediction, UncertaintyMethod, UncertaintyScorer};
use evidra_core::calibration::{calibrate, ThresholdConfig};
use evidra_core::datagen::{gen_blobs, gen_ood, split_622, BlobSpec, Dataset, SplitSpec};
use evidra_core::metrics::{ood_detection_rate, report, thresholded_report, wrong_prediction_auroc, MetricReport};
use evidra_core::trainer::{train, TrainConfig, TrainedModel};
use evidra_core::derive_seed;
use serde::Serialize;

use crate::checkpoint::{file_fingerprint, CalibrationRecord, Checkpoint};
use crate::cli::{CalibrateArgs, CompareArgs, EvalArgs, GenDataArgs, OodEvalArgs, ScorerArgs, TrainArgs};
use crate::csv_io::{load_csv, write_csv};
use crate::error::{CliError, CliResult};
use crate::report::{CalibrationSummary, ComparisonRow, DatasetRef, Evaluation, Histogram, OodResult, RunReport};

/// Seed streams for the generated files, so each file has its own sequence.
const UNSEEN_STREAM: u64 = 1_000;
const OOD_STREAM: u64 = 2_000;

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    file: String,
    rows: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    seed: u64,
    blobs: BlobSpec,
    split: SplitSpec,
    n_ood: usize,
    unseen_sigma: Option<f64>,
    files: Vec<ManifestFile>,
}

fn write_dataset(dir: &Path, name: &str, ds: &Dataset, files: &mut Vec<ManifestFile>) -> CliResult<()> {
    let file = format!("{name}.csv");
    let path = dir.join(&file);
    write_csv(&path, ds)?;
    files.push(ManifestFile { name: name.into(), file, rows: ds.len(), sha256: file_fingerprint(&path)? });
    Ok(())
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let spec = BlobSpec::on_circle(args.k, args.dim, args.radius, args.sigma, args.n_per_class, args.seed)?;
    let split = SplitSpec { seed: args.seed, ..SplitSpec::default() };
    let blobs = gen_blobs(&spec)?;
    let (tr, va, te) = split_622(&blobs, &split)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let mut files = Vec::new();
    write_dataset(&args.out_dir, "train", &tr, &mut files)?;
    write_dataset(&args.out_dir, "val", &va, &mut files)?;
    write_dataset(&args.out_dir, "test", &te, &mut files)?;
    if args.unseen {
        let n = (args.n_per_class as f64 * split.ratios[2]).round() as usize;
        let unseen = BlobSpec { sigma: args.unseen_sigma, n_per_class: n.max(1), seed: derive_seed(args.seed, UNSEEN_STREAM), ..spec.clone() };
        write_dataset(&args.out_dir, "test_unseen", &gen_blobs(&unseen)?, &mut files)?;
    }
    let mut kinds = args.ood_kinds.clone();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let ood = gen_ood(kind, args.n_ood, &spec, derive_seed(args.seed, OOD_STREAM + kind as u64))?;
        write_dataset(&args.out_dir, &format!("ood_{}", kind.name()), &ood, &mut files)?;
    }

    for f in &files {
        println!("wrote {} ({} rows)", args.out_dir.join(&f.file).display(), f.rows);
    }
    let manifest = Manifest {
        schema_version: 1,
        seed: args.seed,
        blobs: spec,
        split,
        n_ood: args.n_ood,
        unseen_sigma: args.unseen.then_some(args.unseen_sigma),
        files,
    };
    let path = args.out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// A labelled file whose class labels fit `classes`.
fn load_labelled(path: &Path, classes: Option<usize>) -> CliResult<(Dataset, Vec<usize>)> {
    let ds = load_csv(path)?;
    if ds.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())));
    }
    let labels = ds.class_labels().map_err(|e| CliError::from(e).context(path.display()))?;
    if let Some(k) = classes {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(CliError::Data(format!("{}: label {bad} is out of range for {k} classes", path.display())));
        }
    }
    Ok((ds, labels))
}

fn dataset_ref(path: &Path, ds: &Dataset) -> CliResult<DatasetRef> {
    Ok(DatasetRef { name: ds.name.clone(), rows: ds.len(), sha256: file_fingerprint(path)? })
}

fn check_dim(path: &Path, ds: &Dataset, model: &TrainedModel) -> CliResult<()> {
    if ds.dim() != model.config.input_dim {
        return Err(CliError::Data(format!(
            "{}: {} feature columns, but the checkpoint expects {}",
            path.display(),
            ds.dim(),
            model.config.input_dim
        )));
    }
    Ok(())
}

fn log_path(args: &TrainArgs) -> PathBuf {
    args.log.clone().unwrap_or_else(|| args.out.with_extension("log.jsonl"))
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let (tr, labels) = load_labelled(&args.train, args.classes)?;
    let classes = args.classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let val = args.val.as_deref().map(|p| load_labelled(p, Some(classes))).transpose()?;
    if let (Some((v, _)), Some(p)) = (&val, &args.val) {
        if v.dim() != tr.dim() {
            return Err(CliError::Data(format!("{}: {} feature columns, training data has {}", p.display(), v.dim(), tr.dim())));
        }
    }

    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: args.lr.unwrap_or(defaults.learning_rate),
        weight_decay: args.weight_decay.unwrap_or(defaults.weight_decay),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        epochs: args.epochs.unwrap_or(defaults.epochs),
        anneal_epochs: args.anneal_epochs.unwrap_or(defaults.anneal_epochs),
        objective: args.objective,
        seed: args.seed,
        snapshot_count: args.snapshots.unwrap_or(defaults.snapshot_count),
    };
    let mlp = MlpConfig { hidden_dims: args.hidden.clone(), dropout_rate: args.dropout, seed: args.seed, ..MlpConfig::new(tr.dim(), classes) };

    let validation = val.as_ref().map(|(v, l)| (&v.features, l.as_slice()));
    let (model, log) = train(&tr.features, &labels, validation, &mlp, &cfg)?;

    let ck = Checkpoint::from_model(&model, cfg, file_fingerprint(&args.train)?);
    ck.save(&args.out)?;
    let lp = log_path(args);
    let mut text = String::new();
    for rec in &log.epochs {
        text.push_str(&serde_json::to_string(rec).expect("log record serialises"));
        text.push('\n');
    }
    std::fs::write(&lp, text).map_err(|e| CliError::io(&lp, e))?;

    let last = log.epochs.last();
    println!(
        "trained {} model: {} epochs, final loss {}, checkpoint {}, log {}",
        args.objective.name(),
        log.epochs.len(),
        last.map_or_else(|| "n/a".into(), |r| format!("{:.6}", r.loss)),
        args.out.display(),
        lp.display()
    );
    if let Some(acc) = last.and_then(|r| r.val_accuracy) {
        println!("validation accuracy {acc:.4}");
    }
    Ok(())
}

fn default_method(model: &TrainedModel) -> UncertaintyMethod {
    if model.objective.is_evidential() {
        UncertaintyMethod::Uios
    } else {
        UncertaintyMethod::Entropy
    }
}

/// Scorer from, in order of precedence: explicit flags, the stored
/// calibration for the method, the method's defaults.
fn resolve_scorer(args: &ScorerArgs, ck: &Checkpoint, model: &TrainedModel) -> UncertaintyScorer {
    let method = args.method.unwrap_or_else(|| default_method(model));
    let mut s = ck.calibrations.get(&method).map_or_else(|| UncertaintyScorer::new(method), |c| c.scorer.clone());
    if let Some(p) = args.passes {
        s.passes = p;
    }
    if let Some(r) = args.mc_dropout {
        s.dropout_rate = Some(r);
    }
    if let Some(j) = args.jitter_sigma {
        s.jitter_sigma = j;
    }
    if let Some(seed) = args.scorer_seed {
        s.seed = seed;
    }
    s
}

fn mean_u(scored: &[ScoredPrediction]) -> f64 {
    scored.iter().map(|s| s.uncertainty).sum::<f64>() / scored.len().max(1) as f64
}

pub fn calibrate_cmd(args: &CalibrateArgs) -> CliResult<()> {
    let mut ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let scorer = resolve_scorer(&args.scorer, &ck, &model);
    let (val, labels) = load_labelled(&args.val, Some(model.classes()))?;
    check_dim(&args.val, &val, &model)?;

    let records = to_records(&scorer.score(&model, &val.features)?, &labels)?;
    let n_wrong = records.iter().filter(|r| !r.is_correct()).count();
    if n_wrong == 0 {
        return Err(CliError::Data(format!(
            "{}: the model classifies every validation sample correctly, so there are no errors to calibrate against; \
             use a larger or harder validation set",
            args.val.display()
        )));
    }
    let config = ThresholdConfig { tpr_weight: args.tpr_weight, ..ThresholdConfig::default() };
    let cal = calibrate(&records, config)?;
    let vref = dataset_ref(&args.val, &val)?;
    let method = scorer.method;
    ck.calibrations.insert(method, CalibrationRecord::new(scorer, &cal, vref.sha256.clone(), records.len(), n_wrong));
    let out = args.out.as_deref().unwrap_or(&args.checkpoint);
    ck.save(out)?;

    println!(
        "method {method}: theta {:.6}  TPR {:.4}  FPR {:.4}  objective {:.4}  ({} of {} validation predictions wrong)",
        cal.theta,
        cal.tpr_at_theta(),
        cal.fpr_at_theta(),
        cal.objective_at_theta(),
        n_wrong,
        records.len()
    );
    println!("updated checkpoint {}", out.display());
    if let Some(path) = &args.report {
        let mut r = RunReport::new("calibrate");
        r.calibration = Some(CalibrationSummary::new(method.to_string(), vref, &cal));
        r.save(path)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn print_metrics(title: &str, m: &MetricReport) {
    println!(
        "{title}: n={} evaluated={} referred={} ({:.2}%)  accuracy {}  macro-F1 {}  macro-AUC {}",
        m.n_total,
        m.n_evaluated,
        m.n_referred,
        100.0 * m.referral_rate,
        fmt_opt(m.accuracy),
        fmt_opt(m.macro_f1()),
        fmt_opt(m.macro_auc())
    );
    println!("  confusion (rows: true, cols: predicted)");
    for row in &m.confusion.counts {
        println!("  {}", row.iter().map(|c| format!("{c:>6}")).collect::<String>());
    }
}

pub fn eval_cmd(args: &EvalArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let scorer = resolve_scorer(&args.scorer, &ck, &model);
    let theta = if args.thresholded { Some(ck.calibration(scorer.method)?.theta) } else { None };
    let (test, labels) = load_labelled(&args.test, Some(model.classes()))?;
    check_dim(&args.test, &test, &model)?;

    let scored = scorer.score(&model, &test.features)?;
    let records = to_records(&scored, &labels)?;
    let unthresholded = report(&records, model.classes())?;
    let thresholded = theta.map(|t| thresholded_report(&records, model.classes(), t)).transpose()?;

    println!("method {} on {}: wrong-prediction AUROC of u {}", scorer.method, test.name, fmt_opt(wrong_prediction_auroc(&records)));
    print_metrics("unthresholded", &unthresholded);
    if let Some(t) = &thresholded {
        print_metrics(&format!("thresholded (theta {:.6})", t.theta.unwrap_or(f64::NAN)), t);
    }
    if let Some(path) = &args.out {
        let mut r = RunReport::new("eval");
        r.evaluations.push(Evaluation {
            method: scorer.method.to_string(),
            dataset: dataset_ref(&args.test, &test)?,
            mean_uncertainty: mean_u(&scored),
            wrong_prediction_auroc: wrong_prediction_auroc(&records),
            unthresholded,
            thresholded,
        });
        r.save(path)?;
    }
    Ok(())
}

fn ood_result(path: &Path, model: &TrainedModel, scorer: &UncertaintyScorer, theta: f64, bins: usize) -> CliResult<OodResult> {
    let ds = load_csv(path)?;
    if ds.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())));
    }
    check_dim(path, &ds, model)?;
    let u: Vec<f64> = scorer.score(model, &ds.features)?.into_iter().map(|s| s.uncertainty).collect();
    Ok(OodResult {
        method: scorer.method.to_string(),
        dataset: dataset_ref(path, &ds)?,
        theta,
        detection_rate: ood_detection_rate(&u, theta)?,
        mean_uncertainty: u.iter().sum::<f64>() / u.len() as f64,
        histogram: Histogram::of_unit_interval(&u, bins),
    })
}

pub fn ood_eval_cmd(args: &OodEvalArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let scorer = resolve_scorer(&args.scorer, &ck, &model);
    let theta = ck.calibration(scorer.method)?.theta;
    let mut r = RunReport::new("ood-eval");
    for path in &args.ood {
        let res = ood_result(path, &model, &scorer, theta, args.bins)?;
        println!(
            "{}: detection rate {:.4} (u >= {:.6}), mean u {:.4}, n={}",
            res.dataset.name, res.detection_rate, theta, res.mean_uncertainty, res.dataset.rows
        );
        print!("{}", res.histogram.render(40));
        r.ood.push(res);
    }
    if let Some(path) = &args.out {
        r.save(path)?;
    }
    Ok(())
}

fn parse_method_path(spec: &str) -> CliResult<(UncertaintyMethod, PathBuf)> {
    let (m, p) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("--checkpoint expects METHOD=PATH, got {spec:?}")))?;
    Ok((m.trim().parse()?, PathBuf::from(p.trim())))
}

pub fn compare_cmd(args: &CompareArgs) -> CliResult<()> {
    let mut entries = Vec::new();
    for spec in &args.checkpoints {
        let (method, path) = parse_method_path(spec)?;
        if entries.iter().any(|(m, _)| *m == method) {
            return Err(CliError::Usage(format!("method {method} given twice")));
        }
        entries.push((method, path));
    }

    // Gather every missing artifact before failing so the error lists them all.
    let mut missing = Vec::new();
    let mut loaded = Vec::new();
    for (method, path) in &entries {
        if !path.exists() {
            missing.push(format!("{method}: checkpoint {} not found", path.display()));
            continue;
        }
        let ck = Checkpoint::load(path)?;
        if !ck.calibrations.contains_key(method) {
            missing.push(format!("{method}: {} has no calibration for {method}", path.display()));
            continue;
        }
        loaded.push((*method, ck));
    }
    if !missing.is_empty() {
        return Err(CliError::Data(format!("missing artifacts:\n  {}", missing.join("\n  "))));
    }

    let test = load_csv(&args.test)?;
    let labels = test.class_labels().map_err(|e| CliError::from(e).context(args.test.display()))?;
    let mut r = RunReport::new("compare");
    for (method, ck) in &loaded {
        let model = ck.model()?;
        check_dim(&args.test, &test, &model)?;
        let cal = &ck.calibrations[method];
        let scorer = &cal.scorer;
        let start = Instant::now();
        let scored = scorer.score(&model, &test.features)?;
        let elapsed = start.elapsed().as_secs_f64();
        let records = to_records(&scored, &labels)?;
        let full = report(&records, model.classes())?;
        let gated = thresholded_report(&records, model.classes(), cal.theta)?;

        let mut rates = Vec::new();
        for path in &args.ood {
            let res = ood_result(path, &model, scorer, cal.theta, 10)?;
            rates.push(res.detection_rate);
            r.ood.push(res);
        }
        r.comparison.push(ComparisonRow {
            method: method.to_string(),
            theta: cal.theta,
            accuracy: full.accuracy,
            macro_f1: full.macro_f1(),
            thresholded_macro_f1: gated.macro_f1(),
            macro_auc: full.macro_auc(),
            referral_rate: gated.referral_rate,
            ood_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            forward_passes_per_sample: scorer.forward_passes(&model),
            seconds_per_sample: args.timing.then(|| elapsed / test.len().max(1) as f64),
        });
        r.evaluations.push(Evaluation {
            method: method.to_string(),
            dataset: dataset_ref(&args.test, &test)?,
            mean_uncertainty: mean_u(&scored),
            wrong_prediction_auroc: wrong_prediction_auroc(&records),
            unthresholded: full,
            thresholded: Some(gated),
        });
    }

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>12}", "method", "theta", "macroF1", "gatedF1", "macroAUC", "referral", "ood", "passes", "us/sample");
    for row in &r.comparison {
        let _ = writeln!(
            stdout,
            "{:<9} {:>9.4} {:>9} {:>9} {:>9} {:>9.4} {:>9} {:>7} {:>12}",
            row.method,
            row.theta,
            fmt_opt(row.macro_f1),
            fmt_opt(row.thresholded_macro_f1),
            fmt_opt(row.macro_auc),
            row.referral_rate,
            fmt_opt(row.ood_rate),
            row.forward_passes_per_sample,
            row.seconds_per_sample.map_or_else(|| "-".into(), |s| format!("{:.3}", s * 1e6))
        );
    }
    if let Some(path) = &args.out {
        r.save(path)?;
    }
    Ok(())
}
