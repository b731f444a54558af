use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcnprobe_cli::config::{resolve, Condition, ExperimentConfig, Overrides, Scale};
use pcnprobe_cli::output::{read_csv, read_json, Manifest, NoopFile, ProbeRecordRow, ResultRow};
use pcnprobe_cli::summary::{summarize, summarize_dir, to_table};
use pcnprobe_core::metrics::auroc2_scores;

fn pcnprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcnprobe"))
        .args(args)
        .env_remove("PCNPROBE_CIFAR10_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn presets_match_training_protocol() {
    for c in Condition::ALL {
        let p = ExperimentConfig::preset(c);
        assert_eq!(p.run.seed, 42, "{c}");
        assert_eq!(p.training.batch_size, 128, "{c}");
        assert_eq!(p.training.weight_lr, 1e-4, "{c}");
        assert_eq!(p.training.weight_decay, 1e-4, "{c}");
        assert_eq!(p.eval.images, 1280, "{c}");
        assert_eq!(p.inference.momentum, 0.5, "{c}");
        assert_eq!(p.run.scale, Scale::Full);
    }
    let c1 = ExperimentConfig::preset(Condition::C1DetPc);
    assert_eq!(c1.training.epochs, 25);
    assert_eq!((c1.inference.steps, c1.inference.lr, c1.inference.sigma_train), (13, 5e-2, 0.0));
    assert_eq!(c1.training.checkpoint_epochs, vec![5, 10, 15, 20, 25]);
    assert_eq!(c1.eval.sigmas, vec![0.0]);

    let c3 = ExperimentConfig::preset(Condition::C3BpDecoder);
    assert_eq!((c3.training.epochs, c3.training.decoder_epochs), (5, 5));
    let c4 = ExperimentConfig::preset(Condition::C4Bp);
    assert_eq!(c4.training.epochs, 25);
    assert!(c4.eval.sigmas.is_empty());

    for c in [Condition::C5Langevin, Condition::C6Mcpc] {
        let p = ExperimentConfig::preset(c);
        assert_eq!(p.training.epochs, 10);
        assert_eq!((p.inference.steps, p.inference.lr, p.inference.sigma_train), (50, 1e-2, 1e-2));
    }
    assert_eq!(ExperimentConfig::preset(Condition::C5Langevin).eval.sigmas, vec![0.0, 1e-3, 1e-2, 1e-1, 1.0]);
    let c6 = ExperimentConfig::preset(Condition::C6Mcpc);
    assert_eq!(c6.training.mcpc_samples, 10);
    assert_eq!(c6.eval.sigmas, vec![0.0, 1e-2]);
    assert_eq!(ExperimentConfig::preset(Condition::C5Langevin).training.mcpc_samples, 0);
}

#[test]
fn print_config_round_trips() {
    let out = pcnprobe(&["run", "--condition", "c6", "--dataset", "synthetic", "--print-config"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let mut want = ExperimentConfig::preset(Condition::C6Mcpc);
    want.data.source = pcnprobe_cli::DataSource::Synthetic;
    assert_eq!(cfg, want);
}

#[test]
fn diagnose_fresh_model_writes_noop_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c2");
    let out = pcnprobe(&[
        "diagnose",
        "--dataset",
        "synthetic",
        "--scale",
        "ci",
        "--epochs",
        "0",
        "--eval-images",
        "20",
        "--out",
        s(&out_dir),
    ]);
    ok(&out);
    let noop: NoopFile = read_json(&out_dir.join("noop.json")).unwrap();
    assert_eq!(noop.condition, "c2-diagnose");
    assert_eq!(noop.reports.len(), 1);
    let r = &noop.reports[0].report;
    assert_eq!(r.n_images, 20);
    assert_eq!(r.steps, 13);
    for v in [&r.mean_abs_delta, &r.mean_abs_grad, &r.mse_vs_ff] {
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
    assert!(r.relative_energy_decrease.is_finite());
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("noop.json")).unwrap()).unwrap();
    for key in ["mean_abs_delta", "mean_abs_grad", "mse_vs_ff", "relative_energy_decrease"] {
        assert!(raw["reports"][0].get(key).is_some(), "{key} missing");
    }
}

#[test]
fn langevin_run_has_five_structural_rows_and_one_softmax_row() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c5");
    let out = pcnprobe(&[
        "run",
        "--condition",
        "c5-langevin",
        "--scale",
        "ci",
        "--dataset",
        "synthetic",
        "--subset",
        "60",
        "--eval-images",
        "10",
        "--out",
        s(&out_dir),
    ]);
    ok(&out);
    let rows: Vec<ResultRow> = read_csv(&out_dir.join("results.csv")).unwrap();
    let structural: Vec<_> = rows.iter().filter(|r| r.probe == "structural").collect();
    let softmax: Vec<_> = rows.iter().filter(|r| r.probe == "softmax").collect();
    assert_eq!(structural.len(), 5);
    assert_eq!(softmax.len(), 1);
    let sigmas: Vec<f64> = structural.iter().map(|r| r.sigma.unwrap()).collect();
    assert_eq!(sigmas, vec![0.0, 1e-3, 1e-2, 1e-1, 1.0]);
    assert!(rows.iter().all(|r| r.epoch == 1 && r.n_eval == 10 && r.condition == "c5-langevin"));

    let manifest: Manifest = read_json(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.status, "ok");
    for f in &manifest.files {
        let (bytes, sha) = pcnprobe_cli::output::sha256_file(&out_dir.join(&f.path)).unwrap();
        assert_eq!((bytes, sha.as_str()), (f.bytes, f.sha256.as_str()), "{}", f.path);
    }
    assert!(manifest.files.iter().any(|f| f.path == "checkpoints/epoch_001.ckpt"));
    assert!(manifest.phases.iter().all(|p| p.seconds >= 0.0));
}

fn small_c1(out_dir: &Path) -> Output {
    pcnprobe(&[
        "run",
        "--condition",
        "c1",
        "--scale",
        "ci",
        "--dataset",
        "synthetic",
        "--subset",
        "100",
        "--eval-images",
        "40",
        "--deterministic",
        "--out",
        s(out_dir),
    ])
}

#[test]
fn repeated_runs_are_byte_identical_and_auditable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&small_c1(&a));
    ok(&small_c1(&b));
    let ra = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("results.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoints/epoch_001.ckpt")).unwrap(),
        fs::read(b.join("checkpoints/epoch_001.ckpt")).unwrap()
    );

    // every auroc2 is recomputable from the per-image records
    let results: Vec<ResultRow> = read_csv(&a.join("results.csv")).unwrap();
    let records: Vec<ProbeRecordRow> = read_csv(&a.join("probe_records.csv")).unwrap();
    assert!(!results.is_empty());
    for r in &results {
        let cell: Vec<&ProbeRecordRow> =
            records.iter().filter(|p| p.epoch == r.epoch && p.probe == r.probe && p.sigma == r.sigma).collect();
        assert_eq!(cell.len(), r.n_eval);
        let margins: Vec<f64> = cell.iter().map(|p| p.margin).collect();
        let correct: Vec<bool> = cell.iter().map(|p| p.correct).collect();
        let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        assert_eq!(acc, r.accuracy);
        assert_eq!(auroc2_scores(&margins, &correct).ok(), r.auroc2);
    }

    // a second run into the same directory is refused
    let again = small_c1(&a);
    assert!(!again.status.success());
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), ra);
}

#[test]
fn invalid_combinations_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--condition", "c4", "--eval-sigma", "0.1"],
        vec!["run", "--condition", "c5", "--eval-sigma", "-1"],
        vec!["run", "--condition", "c5", "--eval-sigma", "abc"],
        vec!["run", "--condition", "c7"],
        vec!["run", "--condition", "c1", "--scale", "huge"],
        vec!["run", "--condition", "c1", "--epochs", "0"],
        vec!["run", "--condition", "c1", "--dataset", "cifar10"],
        vec!["run", "--dataset", "synthetic"],
        vec!["diagnose", "--condition", "c1", "--dataset", "synthetic"],
    ];
    for args in cases {
        let out_dir = dir.path().join("never");
        let mut full = args.clone();
        if !args.contains(&"--dataset") {
            full.extend(["--dataset", "synthetic"]);
        }
        full.extend(["--out", s(&out_dir)]);
        let out = pcnprobe(&full);
        assert!(!out.status.success(), "{args:?} accepted");
        assert!(!out_dir.exists(), "{args:?} created output");
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset_at(Condition::C5Langevin, Scale::Ci);
    cfg.run.seed = 7;
    cfg.eval.images = 30;
    cfg.data.source = pcnprobe_cli::DataSource::Synthetic;
    let path = dir.path().join("c5.toml");
    fs::write(&path, cfg.to_toml()).unwrap();

    let out = pcnprobe(&["run", "--config", s(&path), "--seed", "9", "--eval-sigma", "0,0.5", "--print-config"]);
    ok(&out);
    let got = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(got.run.seed, 9);
    assert_eq!(got.eval.sigmas, vec![0.0, 0.5]);
    assert_eq!(got.eval.images, 30);
    assert_eq!(got.inference.steps, 50);

    let conflict = pcnprobe(&["run", "--config", s(&path), "--condition", "c1", "--print-config"]);
    assert!(!conflict.status.success());

    fs::write(&path, cfg.to_toml().replace("[eval]", "[eval]\nbogus = 1")).unwrap();
    assert!(!pcnprobe(&["run", "--config", s(&path), "--print-config"]).status.success());
}

#[test]
fn flag_resolution_order() {
    let o = Overrides {
        condition: Some(Condition::C1DetPc),
        scale: Some(Scale::Desk),
        epochs: Some(2),
        dataset: Some(pcnprobe_cli::DataSource::Synthetic),
        ..Overrides::default()
    };
    let cfg = resolve(None, &o).unwrap();
    assert_eq!(cfg.training.epochs, 2);
    assert_eq!(cfg.training.checkpoint_epochs, vec![1, 2]);
    assert_eq!(cfg.data.train_subset, Some(5_000));
}

fn results(dir: &Path, condition: &str, rows: &[(usize, &str, Option<f64>, Option<f64>)]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut w = csv::Writer::from_path(dir.join("results.csv")).unwrap();
    for &(epoch, probe, sigma, auroc2) in rows {
        w.serialize(ResultRow {
            condition: condition.into(),
            epoch,
            probe: probe.into(),
            sigma,
            n_eval: 1280,
            accuracy: 0.5,
            auroc2,
            seed: 42,
        })
        .unwrap();
    }
    w.flush().unwrap();
    dir.to_path_buf()
}

#[test]
fn summary_of_single_bp_decoder_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = results(
        &dir.path().join("c3"),
        "c3-bp-decoder",
        &[(5, "structural", Some(0.0), Some(0.7)), (5, "softmax", None, Some(0.75))],
    );
    let rows = summarize_dir(&d).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].delta.unwrap() + 0.05).abs() < 1e-12);
}

#[test]
fn summary_reproduces_published_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let c1 = results(
        &root.join("c1"),
        "c1-det-pc",
        &[
            (20, "structural", Some(0.0), Some(0.70)),
            (20, "softmax", None, Some(0.86)),
            (25, "structural", Some(0.0), Some(0.7661)),
            (25, "softmax", None, Some(0.8712)),
        ],
    );
    let c3 = results(
        &root.join("c3"),
        "c3-bp-decoder",
        &[(5, "structural", Some(0.0), Some(0.7674)), (5, "softmax", None, Some(0.7765))],
    );
    let c5 = results(
        &root.join("c5"),
        "c5-langevin",
        &[
            (10, "structural", Some(0.0), Some(0.7531)),
            (10, "softmax", None, Some(0.8290)),
            (10, "structural", Some(1e-2), Some(0.7360)),
        ],
    );
    let c6 = results(
        &root.join("c6"),
        "c6-mcpc",
        &[
            (10, "structural", Some(0.0), Some(0.7537)),
            (10, "softmax", None, Some(0.8310)),
            (10, "structural", Some(1e-2), Some(0.7467)),
        ],
    );
    let (rows, errors) = summarize(&[c1.clone(), c3.clone(), c5.clone(), c6.clone()]);
    assert!(errors.is_empty());
    let deltas: Vec<f64> = rows.iter().map(|r| (r.delta.unwrap() * 1000.0).round() / 1000.0).collect();
    assert_eq!(deltas, vec![-0.105, -0.009, -0.076, -0.093, -0.077, -0.084]);
    assert_eq!(rows[0].epoch, 25);

    let table = to_table(&rows);
    assert_eq!(table.lines().count(), 7);
    for d in ["-0.105", "-0.009", "-0.076", "-0.093", "-0.077", "-0.084"] {
        assert!(table.contains(d), "{d} missing from\n{table}");
    }

    let csv_out = root.join("summary.csv");
    let out = pcnprobe(&["summarize", s(&c1), s(&c3), s(&c5), s(&c6), "--out", s(&csv_out)]);
    ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), table);
    let text = fs::read_to_string(&csv_out).unwrap();
    assert!(text.starts_with("run,condition,epoch,sigma,structural_auroc2,softmax_auroc2,delta\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn summary_reports_corrupt_runs_and_keeps_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let good = results(
        &dir.path().join("good"),
        "c1-det-pc",
        &[(3, "structural", Some(0.0), Some(0.6)), (3, "softmax", None, Some(0.7))],
    );
    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("results.csv"), "condition,epoch\nc1,not-a-number\n").unwrap();
    let missing = dir.path().join("missing");

    let (rows, errors) = summarize(&[good.clone(), bad.clone()]);
    assert_eq!((rows.len(), errors.len()), (1, 1));
    assert!(errors[0].contains("bad"));

    let out = pcnprobe(&["summarize", s(&good), s(&bad)]);
    ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().filter(|l| l.starts_with("error:")).count(), 1);

    assert!(!pcnprobe(&["summarize", s(&bad), s(&missing)]).status.success());
}

#[test]
fn softmax_only_run_gets_a_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = results(&dir.path().join("c4"), "c4-bp", &[(1, "softmax", None, Some(0.8)), (2, "softmax", None, Some(0.81))]);
    let rows = summarize_dir(&d).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].epoch, rows[0].softmax_auroc2, rows[0].delta), (2, Some(0.81), None));
}
