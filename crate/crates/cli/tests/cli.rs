use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use medfront::datasets::Partition;
use medfront::frontends::FrontendKind;
use medfront_cli::commands::{self, read_manifest};
use medfront_cli::{main_with_args, CliError, DatasetKind, RunConfig, EFFECTIVE_CONFIG, KEYS};
use tempfile::TempDir;

const SMALL: &str = "dataset = synthetic\nsynthetic_count = 60\nn_filters = 16\nepochs = 1\n";

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["medfront".to_string(), "--config".into(), config.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    main_with_args(argv)
}

fn pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
}

#[test]
fn effective_config_reparses_to_the_same_text() {
    let dir = TempDir::new().unwrap();
    let cfg = RunConfig::parse(
        "dataset = heartbeat\ncorpus_dir = data\nfrontend = leaf\nlr = 0.002\npool_width = 3\n",
        dir.path(),
    )
    .unwrap();
    let text = cfg.to_text();
    let again = RunConfig::parse(&text, dir.path()).unwrap();
    assert_eq!(again.to_text(), text);
    assert_eq!(again.corpus_dir, Some(dir.path().join("data")));
    assert_eq!(again.frontend_kind, FrontendKind::Leaf);
    for (key, _) in KEYS {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} ="))), "{key} missing from echo");
    }
}

#[test]
fn dataset_sets_band_and_filter_range_defaults() {
    let base = Path::new("/tmp");
    let resp = RunConfig::parse("dataset = respiratory\n", base).unwrap();
    assert_eq!(resp.band_hz, (120.0, 1800.0));
    assert_eq!((resp.frontend.fmin_hz, resp.frontend.fmax_hz), (100.0, 2000.0));
    assert_eq!(resp.sample_rate(), 4000);
    let heart = RunConfig::parse("dataset = heartbeat\n", base).unwrap();
    assert_eq!(heart.band_hz, (25.0, 400.0));
    assert_eq!((heart.frontend.fmin_hz, heart.frontend.fmax_hz), (25.0, 1000.0));
    assert_eq!(heart.sample_rate(), 4000);
    assert_eq!(DatasetKind::Heartbeat.epochs(), 300);
    assert_eq!(heart.input_samples(), 8000);
}

#[test]
fn unknown_or_duplicate_keys_are_config_errors() {
    let base = Path::new("/tmp");
    let unknown = RunConfig::parse("dataset = synthetic\nlearning_rate = 1\n", base).unwrap_err();
    assert!(matches!(unknown, CliError::Config(ref m) if m.contains("learning_rate") && m.contains("line 2")));
    let dup = RunConfig::parse("seed = 1\nseed = 2\n", base).unwrap_err();
    assert!(matches!(dup, CliError::Config(_)));
    assert_eq!(dup.exit_code(), 1);
}

#[test]
fn pipeline_preprocess_train_eval_compare_extract() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "run.cfg", SMALL);
    let out = dir.path().join("medfront-out");

    assert_eq!(run(&cfg_path, &["preprocess"]), 0);
    let cfg = RunConfig::from_file(&cfg_path).unwrap();
    let manifest = read_manifest(&cfg).unwrap();
    assert_eq!(manifest.entries.len(), 60);
    for p in Partition::ALL {
        let (n, a) = manifest.class_counts(p);
        assert!(n > 0 && a > 0, "{p} lacks a class");
    }
    assert!(out.join(EFFECTIVE_CONFIG).is_file());
    assert_eq!(fs::read_to_string(out.join(commands::PREPROCESS_ERRORS_FILE)).unwrap(), "");

    assert_eq!(run(&cfg_path, &["train"]), 0);
    let log = fs::read_to_string(out.join("logs/mel_train.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "header plus one epoch:\n{log}");
    assert!(out.join("checkpoints/mel.mfck").is_file());
    assert!(out.join("checkpoints/mel.json").is_file());

    assert_eq!(run(&cfg_path, &["eval"]), 0);
    let eval = fs::read_to_string(out.join("reports/mel_eval.csv")).unwrap();
    assert!(eval.starts_with("frontend,balanced_accuracy,tpr,tnr,tp,fn,tn,fp\nmel,"));
    let preds = fs::read_to_string(out.join("reports/mel_predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + manifest.partition(Partition::Test).count());

    // The same model in all three slots: no discordant pairs, so every p is 1.
    let ck = out.join("checkpoints/mel.mfck").display().to_string();
    assert_eq!(run(&cfg_path, &["compare", "--checkpoints", &ck, &ck, &ck]), 0);
    let cmp = fs::read_to_string(out.join("reports/comparison.csv")).unwrap();
    let rows: Vec<&str> = cmp.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[1], f[2], f[4], f[5], f[6]), ("0", "0", "1", "1", "false"), "{row}");
    }

    let seg = manifest.entries[0].segment.segment_path.clone();
    assert_eq!(run(&cfg_path, &["extract", "--segment", &seg, "--frontend", "nnaudio"]), 0);
    let stem = Path::new(&seg).file_stem().unwrap().to_string_lossy().into_owned();
    let pgm = fs::read(out.join(format!("features/{stem}_nnaudio.pgm"))).unwrap();
    let header = b"P5\n198 16\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 198 * 16);
    assert!(out.join(format!("features/{stem}_nnaudio.mfft")).is_file());
}

#[test]
fn compare_rejects_checkpoints_from_another_split() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), "run.cfg", SMALL);
    let pool = pool();
    let cfg = RunConfig::from_file(&cfg_path).unwrap();
    commands::preprocess(&cfg, &pool).unwrap();
    let trained = commands::train(&cfg, &pool, None).unwrap();

    let other = cfg.clone().with_seed(99);
    commands::preprocess(&other, &pool).unwrap();
    let ck = vec![trained.checkpoint.clone(); 3];
    let err = commands::compare(&other, &pool, Some(&ck)).unwrap_err();
    assert!(matches!(err, CliError::Data(ref m) if m.contains("test partition")), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn seeded_preprocess_and_train_are_reproducible() {
    let pool = pool();
    let mut artifacts = Vec::new();
    for _ in 0..2 {
        let dir = TempDir::new().unwrap();
        let cfg_path = write_config(dir.path(), "run.cfg", SMALL);
        let cfg = RunConfig::from_file(&cfg_path).unwrap().with_seed(7);
        commands::preprocess(&cfg, &pool).unwrap();
        let t = commands::train(&cfg, &pool, None).unwrap();
        artifacts.push((
            fs::read(commands::manifest_path(&cfg)).unwrap(),
            fs::read(&t.log).unwrap(),
            fs::read(&t.checkpoint).unwrap(),
        ));
    }
    assert!(artifacts[0] == artifacts[1]);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_medfront");
    let dir = TempDir::new().unwrap();

    let status = Command::new(bin).arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(1));

    let bad = write_config(dir.path(), "bad.cfg", "dataset = synthetic\nwindow_ms = fast\n");
    let out = Command::new(bin).args(["--config", bad.to_str().unwrap(), "preprocess"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_ms"));

    // Training before preprocessing has no manifest to read.
    let good = write_config(dir.path(), "good.cfg", SMALL);
    let status = Command::new(bin).args(["--config", good.to_str().unwrap(), "train"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let status = Command::new(bin)
        .args(["--config", good.to_str().unwrap(), "--jobs", "0", "preprocess"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
