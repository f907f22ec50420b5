use std::path::Path;
use std::process::{Command, Output};

use evidra::checkpoint::Checkpoint;
use evidra::report::RunReport;
use evidra_core::backbone::{MlpConfig, MlpParams};
use evidra_core::baselines::UncertaintyMethod;
use evidra_core::losses::ScheduleState;
use evidra_core::trainer::{Objective, TrainConfig, TrainedModel};

fn evidra(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evidra")).current_dir(dir).args(args).output().expect("binary runs")
}

#[track_caller]
fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

/// Small benchmark: 5 classes, 60 per class.
fn small_data(dir: &Path) {
    ok(&evidra(dir, &["gen-data", "--out-dir", "d", "--n-per-class", "60", "--n-ood", "50"]));
}

#[test]
fn gen_data_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    ok(&evidra(dir.path(), &["gen-data", "--out-dir", "a"]));
    ok(&evidra(dir.path(), &["gen-data", "--out-dir", "b"]));
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["manifest.json", "ood_far_cluster.csv", "ood_ring.csv", "test.csv", "train.csv", "val.csv"]);
    for n in &names {
        assert_eq!(read(dir.path(), &format!("a/{n}")), read(dir.path(), &format!("b/{n}")), "{n}");
    }
    ok(&evidra(dir.path(), &["gen-data", "--out-dir", "c", "--seed", "7"]));
    assert_ne!(read(dir.path(), "a/train.csv"), read(dir.path(), "c/train.csv"));
}

#[test]
fn gen_data_options() {
    let dir = tempfile::tempdir().unwrap();
    ok(&evidra(dir.path(), &["gen-data", "--out-dir", "d", "--k", "9", "--n-per-class", "20", "--unseen", "--ood-kinds", "uniform_box"]));
    let train = evidra::csv_io::load_csv(&dir.path().join("d/train.csv")).unwrap();
    assert_eq!(train.label_indices().len(), 9);
    assert!(dir.path().join("d/test_unseen.csv").exists());
    assert!(dir.path().join("d/ood_uniform_box.csv").exists());
    assert!(!dir.path().join("d/ood_ring.csv").exists());
}

#[test]
fn zero_epoch_checkpoint_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    ok(&evidra(dir.path(), &["train", "--train", "d/train.csv", "--out", "c.json", "--epochs", "0"]));
    let ck = Checkpoint::load(&dir.path().join("c.json")).unwrap();
    assert_eq!(ck.train_config.epochs, 0);
    assert!(ck.model().unwrap().snapshots.is_empty());
    assert!(read(dir.path(), "c.log.jsonl").is_empty());
    ok(&evidra(dir.path(), &["eval", "--checkpoint", "c.json", "--test", "d/test.csv"]));
}

#[test]
fn pipeline_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d);
    for name in ["a", "b"] {
        let ck = format!("{name}.json");
        ok(&evidra(d, &["train", "--train", "d/train.csv", "--val", "d/val.csv", "--out", &ck, "--epochs", "15", "--lr", "1e-3"]));
        ok(&evidra(d, &["calibrate", "--checkpoint", &ck, "--val", "d/val.csv", "--report", &format!("{name}_cal.json")]));
        ok(&evidra(d, &["eval", "--checkpoint", &ck, "--test", "d/test.csv", "--thresholded", "--out", &format!("{name}_eval.json")]));
        ok(&evidra(d, &["ood-eval", "--checkpoint", &ck, "--ood", "d/ood_ring.csv", "--out", &format!("{name}_ood.json")]));
        ok(&evidra(d, &["compare", "--checkpoint", &format!("uios={ck}"), "--test", "d/test.csv", "--ood", "d/ood_ring.csv", "--out", &format!("{name}_cmp.json")]));
    }
    for suffix in [".json", ".log.jsonl", "_cal.json", "_eval.json", "_ood.json", "_cmp.json"] {
        assert_eq!(read(d, &format!("a{suffix}")), read(d, &format!("b{suffix}")), "{suffix}");
    }
    let report = RunReport::load(&d.join("a_eval.json")).unwrap();
    assert_eq!(report.evaluations.len(), 1);
    assert!(report.evaluations[0].thresholded.is_some());
    let cal = RunReport::load(&d.join("a_cal.json")).unwrap().calibration.unwrap();
    assert_eq!(cal.candidates.len(), cal.objective_curve.len());

    // recalibration with the same inputs gives the same threshold
    let before = Checkpoint::load(&d.join("a.json")).unwrap().calibrations[&UncertaintyMethod::Uios].theta;
    ok(&evidra(d, &["calibrate", "--checkpoint", "a.json", "--val", "d/val.csv"]));
    assert_eq!(Checkpoint::load(&d.join("a.json")).unwrap().calibrations[&UncertaintyMethod::Uios].theta, before);
}

/// A linear two-class model: evidence `[softplus(x), ~0]`, so the
/// uncertainty of input `x` is `2 / (2 + softplus(x))`.
fn linear_checkpoint(dir: &Path) {
    let mut cfg = MlpConfig::new(1, 2);
    cfg.hidden_dims = vec![];
    let mut params = MlpParams::zeros(&cfg).unwrap();
    params.layers[0].weights.set(0, 0, 1.0);
    params.layers[0].bias = vec![0.0, -50.0];
    let model = TrainedModel { config: cfg, params, objective: Objective::Tun, schedule: ScheduleState::annealed(), snapshots: vec![] };
    Checkpoint::from_model(&model, TrainConfig::default(), String::new()).save(&dir.join("lin.json")).unwrap();
}

/// Input whose uncertainty under [`linear_checkpoint`] is `u`.
fn x_for_u(u: f64) -> f64 {
    let e = 2.0 / u - 2.0;
    e.exp_m1().ln()
}

#[test]
fn calibrate_crafted_stub() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    linear_checkpoint(d);
    // every prediction is class 0; the two most uncertain rows are wrong
    let rows: Vec<String> = [(0.1, 0), (0.2, 0), (0.6, 1), (0.8, 1)].iter().map(|(u, y)| format!("{:?},{y}", x_for_u(*u))).collect();
    std::fs::write(d.join("val.csv"), format!("f0,label\n{}\n", rows.join("\n"))).unwrap();
    let out = ok(&evidra(d, &["calibrate", "--checkpoint", "lin.json", "--val", "val.csv"]));
    assert!(out.contains("TPR 1.0000") && out.contains("FPR 0.0000"), "{out}");
    let ck = Checkpoint::load(&d.join("lin.json")).unwrap();
    let rec = &ck.calibrations[&UncertaintyMethod::Uios];
    assert!((rec.theta - 0.6).abs() < 1e-12, "theta {}", rec.theta);
    assert_eq!(rec.objective, 2.0);

    // a validation set without errors cannot be calibrated
    std::fs::write(d.join("perfect.csv"), "f0,label\n1.0,0\n2.0,0\n3.0,0\n").unwrap();
    let out = evidra(d, &["calibrate", "--checkpoint", "lin.json", "--val", "perfect.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no errors to calibrate"));
}

#[test]
fn thresholded_eval_above_max_u_matches_plain_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    linear_checkpoint(d);
    std::fs::write(d.join("val.csv"), format!("f0,label\n{:?},0\n{:?},1\n", x_for_u(0.2), x_for_u(0.7))).unwrap();
    ok(&evidra(d, &["calibrate", "--checkpoint", "lin.json", "--val", "val.csv"]));
    let mut ck = Checkpoint::load(&d.join("lin.json")).unwrap();
    ck.calibrations.get_mut(&UncertaintyMethod::Uios).unwrap().theta = 2.0;
    ck.save(&d.join("lin.json")).unwrap();
    std::fs::write(d.join("test.csv"), "f0,label\n3.0,0\n-1.0,1\n0.5,0\n").unwrap();
    ok(&evidra(d, &["eval", "--checkpoint", "lin.json", "--test", "test.csv", "--thresholded", "--out", "r.json"]));
    let ev = &RunReport::load(&d.join("r.json")).unwrap().evaluations[0];
    let gated = ev.thresholded.clone().unwrap();
    assert_eq!(gated.n_referred, 0);
    assert_eq!(gated.confusion, ev.unthresholded.confusion);
    assert_eq!(gated.per_class, ev.unthresholded.per_class);
    assert_eq!(gated.auc, ev.unthresholded.auc);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(evidra(d, &["train", "--nope"]).status.code(), Some(2));
    assert_eq!(evidra(d, &["gen-data", "--sigma", "0"]).status.code(), Some(2));
    assert_eq!(evidra(d, &["train", "--train", "missing.csv", "--out", "c.json"]).status.code(), Some(3));

    std::fs::write(d.join("bad.csv"), "f0,f1,label\n1,abc,0\n").unwrap();
    let out = evidra(d, &["train", "--train", "bad.csv", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2, column f1"));

    linear_checkpoint(d);
    assert_eq!(evidra(d, &["eval", "--checkpoint", "lin.json", "--test", "bad.csv", "--thresholded"]).status.code(), Some(2));
    std::fs::write(d.join("wide.csv"), "f0,f1,label\n1,2,0\n").unwrap();
    let out = evidra(d, &["eval", "--checkpoint", "lin.json", "--test", "wide.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expects 1"));

    std::fs::write(d.join("empty.csv"), "f0,label\n").unwrap();
    std::fs::write(d.join("val.csv"), "f0,label\n-3,0\n3,1\n").unwrap();
    ok(&evidra(d, &["calibrate", "--checkpoint", "lin.json", "--val", "val.csv"]));
    assert_eq!(evidra(d, &["ood-eval", "--checkpoint", "lin.json", "--ood", "empty.csv"]).status.code(), Some(3));

    // activations that overflow to infinity are a numeric failure
    std::fs::write(d.join("t.csv"), "f0,label\n1e308,0\n-1e308,1\n1.7e308,0\n").unwrap();
    let out = evidra(d, &["train", "--train", "t.csv", "--out", "x.json", "--epochs", "3", "--objective", "standard_ce"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d);
    std::fs::write(d.join("train.cfg"), "train=d/train.csv\nout=c.json\nepochs=4\nobjective=un\nhidden=8\n").unwrap();
    ok(&evidra(d, &["train", "--config", "train.cfg", "--epochs", "2"]));
    let ck = Checkpoint::load(&d.join("c.json")).unwrap();
    assert_eq!(ck.train_config.epochs, 2);
    assert_eq!(ck.objective, Objective::Un);
    assert_eq!(ck.mlp.hidden_dims, vec![8]);
    std::fs::write(d.join("bad.cfg"), "epoch=4\n").unwrap();
    assert_eq!(evidra(d, &["train", "--config", "bad.cfg"]).status.code(), Some(2));
}

#[test]
fn compare_lists_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    linear_checkpoint(d);
    std::fs::write(d.join("test.csv"), "f0,label\n1,0\n").unwrap();
    let out = evidra(d, &["compare", "--checkpoint", "uios=lin.json", "--checkpoint", "entropy=gone.json", "--test", "test.csv"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("uios: lin.json has no calibration") && err.contains("entropy: checkpoint gone.json not found"), "{err}");
}

#[test]
fn compare_two_methods_gives_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d);
    ok(&evidra(d, &["train", "--train", "d/train.csv", "--out", "tun.json", "--epochs", "10", "--lr", "1e-3"]));
    ok(&evidra(d, &["train", "--train", "d/train.csv", "--out", "std.json", "--epochs", "10", "--lr", "1e-3", "--objective", "standard_ce"]));
    ok(&evidra(d, &["calibrate", "--checkpoint", "tun.json", "--val", "d/val.csv"]));
    ok(&evidra(d, &["calibrate", "--checkpoint", "std.json", "--val", "d/val.csv"]));
    let out = ok(&evidra(d, &["compare", "--checkpoint", "uios=tun.json", "--checkpoint", "entropy=std.json", "--test", "d/test.csv", "--out", "cmp.json"]));
    assert_eq!(out.lines().count(), 3, "{out}");
    let r = RunReport::load(&d.join("cmp.json")).unwrap();
    let methods: Vec<&str> = r.comparison.iter().map(|c| c.method.as_str()).collect();
    assert_eq!(methods, ["uios", "entropy"]);
    assert!(r.comparison.iter().all(|c| c.seconds_per_sample.is_none()));
}
