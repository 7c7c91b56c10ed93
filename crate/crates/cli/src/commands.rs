//! The five pipeline stages. Each reads its inputs from, and writes its
//! artifacts to, the configured output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use medfront::autodiff::ParamStore;
use medfront::datasets::{
    generate_synthetic, icbhi_patient_id, make_split, parse_cycle_annotations, parse_exclusions, parse_label_csv,
    parse_wav, segment_by_cycles, segment_fixed, write_wav, Label, Partition, Preprocessor, Segment, SegmentRef,
    SplitManifest, SyntheticConfig,
};
use medfront::eval::{compare_frontends, format_percent, metrics, ComparisonReport, ConfusionCounts, Metrics};
use medfront::frontends::{write_feature_dump, write_pgm, Frontend, FrontendKind};
use medfront::model::{self, Classifier, Example, Prediction, TrainReport};
use medfront::signal::Waveform;
use rayon::prelude::*;
use rayon::ThreadPool;
use sha2::{Digest, Sha256};

use crate::config::{DatasetKind, RunConfig, EFFECTIVE_CONFIG};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PREPROCESS_ERRORS_FILE: &str = "preprocess_errors.txt";

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| data_err(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, contents).map_err(|e| data_err(path, e))
}

/// Writes the effective configuration into the output directory.
pub fn echo_config(cfg: &RunConfig) -> Result<(), CliError> {
    write_file(&cfg.output_dir.join(EFFECTIVE_CONFIG), cfg.to_text())
}

pub fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(MANIFEST_FILE)
}

pub fn default_checkpoint(cfg: &RunConfig, kind: FrontendKind) -> PathBuf {
    cfg.output_dir.join("checkpoints").join(format!("{}.mfck", kind.name()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone)]
pub struct PreprocessSummary {
    pub manifest: SplitManifest,
    /// `(file, error)` for every input that could not be used.
    pub errors: Vec<(String, String)>,
}

/// A recording-level job: where it comes from and how to cut it.
enum Source {
    Synthetic(Segment),
    Cycles(PathBuf),
    Fixed(PathBuf, Label),
}

impl Source {
    fn name(&self) -> String {
        match self {
            Source::Synthetic(s) => s.origin_file.clone(),
            Source::Cycles(p) | Source::Fixed(p, _) => p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        }
    }

    fn segments(self, cfg: &RunConfig) -> Result<Vec<Segment>, String> {
        let read = |p: &Path| -> Result<Waveform, String> {
            let bytes = fs::read(p).map_err(|e| e.to_string())?;
            let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            parse_wav(&bytes, &name).map_err(|e| e.to_string())
        };
        match self {
            Source::Synthetic(s) => Ok(vec![s]),
            Source::Cycles(path) => {
                let w = read(&path)?;
                let txt = path.with_extension("txt");
                let text = fs::read_to_string(&txt).map_err(|e| format!("{}: {e}", txt.display()))?;
                let anns = parse_cycle_annotations(&text).map_err(|e| e.to_string())?;
                let name = self_name(&path);
                let patient = icbhi_patient_id(&name);
                let mut segs = segment_by_cycles(&w, &anns, &name);
                segs.iter_mut().for_each(|s| s.patient_id.clone_from(&patient));
                Ok(segs)
            }
            Source::Fixed(path, label) => {
                let w = read(&path)?;
                log::debug!("{}: native rate {} Hz", path.display(), w.sample_rate);
                Ok(segment_fixed(&w, cfg.segment_s, label, &self_name(&path)))
            }
        }
    }
}

fn self_name(path: &Path) -> String {
    path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

fn read_exclusions(cfg: &RunConfig) -> Result<std::collections::BTreeSet<String>, CliError> {
    match &cfg.exclusions {
        Some(p) => Ok(parse_exclusions(&fs::read_to_string(p).map_err(|e| data_err(p, e))?)),
        None => Ok(Default::default()),
    }
}

fn sources(cfg: &RunConfig) -> Result<Vec<Source>, CliError> {
    let exclusions = read_exclusions(cfg)?;
    let corpus = || {
        cfg.corpus_dir
            .clone()
            .ok_or_else(|| CliError::Config(format!("dataset {} needs corpus_dir", cfg.dataset)))
    };
    Ok(match cfg.dataset {
        DatasetKind::Synthetic => generate_synthetic(&SyntheticConfig {
            count: cfg.synthetic_count,
            seed: cfg.seed,
            duration_s: cfg.segment_s,
            band_hz: cfg.band_hz,
            ..SyntheticConfig::default()
        })
        .into_iter()
        .map(Source::Synthetic)
        .collect(),
        DatasetKind::Respiratory => {
            let dir = corpus()?;
            let mut wavs: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| data_err(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .filter(|p| !exclusions.contains(&self_name(p)))
                .collect();
            wavs.sort();
            wavs.into_iter().map(Source::Cycles).collect()
        }
        DatasetKind::Heartbeat => {
            let dir = corpus()?;
            let csv = cfg
                .labels_csv
                .clone()
                .ok_or_else(|| CliError::Config("dataset heartbeat needs labels_csv".into()))?;
            let text = fs::read_to_string(&csv).map_err(|e| data_err(&csv, e))?;
            parse_label_csv(&text)
                .map_err(|e| data_err(&csv, e))?
                .into_iter()
                .filter(|(file, _)| !exclusions.contains(file))
                .map(|(file, label)| Source::Fixed(dir.join(file), label))
                .collect()
        }
    })
}

/// Segments, filters, resamples and pads the corpus, writes one WAV per
/// segment under `segments/`, the split manifest and an error sidecar.
pub fn preprocess(cfg: &RunConfig, pool: &ThreadPool) -> Result<PreprocessSummary, CliError> {
    let sources = sources(cfg)?;
    let names: Vec<String> = sources.iter().map(Source::name).collect();
    log::info!("preprocessing {} {} recordings", sources.len(), cfg.dataset);
    let seg_dir = cfg.output_dir.join("segments");
    create_dir(&seg_dir)?;
    let order = cfg.filter_order;
    let rate = cfg.sample_rate();
    let results: Vec<Result<Vec<(SegmentRef, Waveform)>, String>> = pool.install(|| {
        sources
            .into_par_iter()
            .map_init(
                || Preprocessor::new(order, cfg.band_hz, rate, cfg.segment_s),
                |pre, source| {
                    let segs = source.segments(cfg)?;
                    segs.into_iter()
                        .enumerate()
                        .map(|(k, s)| {
                            let w = pre.process(&s.waveform).map_err(|e| e.to_string())?;
                            let base = s.origin_file.rsplit_once('.').map_or(s.origin_file.as_str(), |(b, _)| b);
                            let seg_ref = SegmentRef {
                                segment_path: format!("segments/{base}_{k:03}.wav"),
                                label: s.label,
                                origin_file: s.origin_file.clone(),
                                start_s: s.start_s,
                                end_s: s.end_s,
                                patient_id: s.patient_id.clone(),
                            };
                            Ok((seg_ref, w))
                        })
                        .collect()
                },
            )
            .collect()
    });

    let mut errors = Vec::new();
    let mut kept = Vec::new();
    for (name, r) in names.into_iter().zip(results) {
        match r {
            Ok(segs) => kept.extend(segs),
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                errors.push((name, e));
            }
        }
    }
    pool.install(|| {
        kept.par_iter().try_for_each(|(r, w)| {
            let path = cfg.output_dir.join(&r.segment_path);
            let file = fs::File::create(&path).map_err(|e| data_err(&path, e))?;
            write_wav(BufWriter::new(file), w).map_err(|e| data_err(&path, e))
        })
    })?;
    let mut err_text = String::new();
    for (f, e) in &errors {
        let _ = writeln!(err_text, "{f}\t{e}");
    }
    write_file(&cfg.output_dir.join(PREPROCESS_ERRORS_FILE), err_text)?;

    let refs: Vec<SegmentRef> = kept.into_iter().map(|(r, _)| r).collect();
    let manifest = make_split(refs, cfg.seed, cfg.fractions, cfg.split_mode)?;
    write_file(&manifest_path(cfg), manifest.to_csv()?)?;
    for p in Partition::ALL {
        let (n, a) = manifest.class_counts(p);
        log::info!("{p}: {n} normal, {a} abnormal");
    }
    Ok(PreprocessSummary { manifest, errors })
}

pub fn read_manifest(cfg: &RunConfig) -> Result<SplitManifest, CliError> {
    let path = manifest_path(cfg);
    let text = fs::read_to_string(&path).map_err(|e| data_err(&path, format!("{e} (run `medfront preprocess` first)")))?;
    SplitManifest::from_csv(&text).map_err(|e| data_err(&path, e))
}

/// SHA-256 over the test partition's `segment_path,label` lines.
pub fn test_digest(manifest: &SplitManifest) -> String {
    let mut h = Sha256::new();
    for s in manifest.partition(Partition::Test) {
        h.update(format!("{},{}\n", s.segment_path, s.label).as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads every segment of partition `p`, checking rate and length.
pub fn load_partition(
    cfg: &RunConfig,
    manifest: &SplitManifest,
    p: Partition,
    input_samples: usize,
    rate: u32,
    pool: &ThreadPool,
) -> Result<Vec<Example>, CliError> {
    let refs: Vec<&SegmentRef> = manifest.partition(p).collect();
    if refs.is_empty() {
        return Err(CliError::Data(format!("the {p} partition is empty")));
    }
    pool.install(|| {
        refs.par_iter()
            .map(|r| {
                let path = cfg.output_dir.join(&r.segment_path);
                let bytes = fs::read(&path).map_err(|e| data_err(&path, e))?;
                let w = parse_wav(&bytes, &r.segment_path).map_err(|e| data_err(&path, e))?;
                if w.sample_rate != rate || w.len() != input_samples {
                    return Err(data_err(
                        &path,
                        format!(
                            "{} samples at {} Hz, expected {input_samples} at {rate} Hz",
                            w.len(),
                            w.sample_rate
                        ),
                    ));
                }
                Ok(Example {
                    id: r.segment_path.clone(),
                    waveform: w,
                    label: r.label,
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains the configured frontend and model; writes the checkpoint, its
/// sidecar and the per-epoch log.
pub fn train(cfg: &RunConfig, pool: &ThreadPool, checkpoint: Option<&Path>) -> Result<TrainSummary, CliError> {
    let manifest = read_manifest(cfg)?;
    let n = cfg.input_samples();
    let train = load_partition(cfg, &manifest, Partition::Train, n, cfg.sample_rate(), pool)?;
    let val = load_partition(cfg, &manifest, Partition::Val, n, cfg.sample_rate(), pool)?;
    let mut clf = Classifier::new(cfg.frontend_kind, &cfg.frontend, &cfg.model, n, cfg.seed)?;
    log::info!(
        "training {} frontend + {} model ({} parameters) on {} segments, validating on {}",
        cfg.frontend_kind,
        cfg.model.architecture,
        clf.store.numel(),
        train.len(),
        val.len()
    );
    let report = model::train(&mut clf, &train, &val, &cfg.train)?;
    let path = checkpoint.map_or_else(|| default_checkpoint(cfg, cfg.frontend_kind), Path::to_path_buf);
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut side = clf.sidecar(&cfg.train, report.best_epoch);
    side.test_digest = Some(test_digest(&manifest));
    clf.save(&path, &side)?;
    let log_path = cfg.output_dir.join("logs").join(format!("{}_train.csv", stem(&path)));
    write_file(&log_path, report.log_csv())?;
    Ok(TrainSummary {
        report,
        checkpoint: path,
        log: log_path,
    })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub frontend: FrontendKind,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

/// Fixed-width table of balanced accuracy, TPR and TNR in percent.
pub fn metrics_table(rows: &[(String, Metrics)]) -> String {
    let mut out = format!("{:<12}{:>20}{:>10}{:>10}\n", "%", "Balanced Accuracy", "TPR", "TNR");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<12}{:>20}{:>10}{:>10}",
            name,
            format_percent(m.balanced_accuracy),
            format_percent(m.tpr),
            format_percent(m.tnr)
        );
    }
    out
}

fn evaluate(clf: &Classifier, test: &[Example]) -> Result<EvalSummary, CliError> {
    let waves: Vec<&Waveform> = test.iter().map(|e| &e.waveform).collect();
    let predictions = clf.predict(&waves)?;
    let pred: Vec<Label> = predictions.iter().map(|p| p.label).collect();
    let truth: Vec<Label> = test.iter().map(|e| e.label).collect();
    let counts = ConfusionCounts::from_predictions(&pred, &truth).map_err(|e| CliError::Data(e.to_string()))?;
    let metrics = metrics(counts).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(EvalSummary {
        frontend: clf.frontend.kind(),
        counts,
        metrics,
        predictions,
    })
}

fn load_checkpoint(path: &Path) -> Result<(Classifier, model::Sidecar), CliError> {
    Classifier::load(path).map_err(|e| match e {
        model::ModelError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        _ => data_err(path, e),
    })
}

/// Evaluates a checkpoint on the test partition; prints the metrics table
/// and writes the metrics and per-segment predictions under `reports/`.
pub fn eval(cfg: &RunConfig, pool: &ThreadPool, checkpoint: Option<&Path>) -> Result<EvalSummary, CliError> {
    let path = checkpoint.map_or_else(|| default_checkpoint(cfg, cfg.frontend_kind), Path::to_path_buf);
    let (clf, side) = load_checkpoint(&path)?;
    let manifest = read_manifest(cfg)?;
    if side.test_digest.as_deref() != Some(test_digest(&manifest).as_str()) {
        log::warn!("{} was trained against a different test partition", path.display());
    }
    let test = load_partition(
        cfg,
        &manifest,
        Partition::Test,
        clf.input_samples(),
        side.frontend_config.sample_rate,
        pool,
    )?;
    let summary = evaluate(&clf, &test)?;

    let name = stem(&path);
    let reports = cfg.output_dir.join("reports");
    let (m, c) = (summary.metrics, summary.counts);
    write_file(
        &reports.join(format!("{name}_eval.csv")),
        format!(
            "frontend,balanced_accuracy,tpr,tnr,tp,fn,tn,fp\n{},{},{},{},{},{},{},{}\n",
            summary.frontend, m.balanced_accuracy, m.tpr, m.tnr, c.tp, c.fn_, c.tn, c.fp
        ),
    )?;
    let mut pred_csv = String::from("segment_path,label,predicted,probability\n");
    for (e, p) in test.iter().zip(&summary.predictions) {
        let _ = writeln!(pred_csv, "{},{},{},{}", e.id, e.label, p.label, p.probability());
    }
    write_file(&reports.join(format!("{name}_predictions.csv")), pred_csv)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub evals: Vec<EvalSummary>,
    pub report: ComparisonReport,
}

/// Evaluates three checkpoints (ordered mel, leaf, nnaudio) on the same test
/// partition and runs the Holm-corrected pairwise McNemar tests.
pub fn compare(cfg: &RunConfig, pool: &ThreadPool, checkpoints: Option<&[PathBuf]>) -> Result<CompareSummary, CliError> {
    let paths: Vec<PathBuf> = match checkpoints {
        Some(p) if p.len() == 3 => p.to_vec(),
        Some(p) => return Err(CliError::Usage(format!("compare needs three checkpoints, got {}", p.len()))),
        None => FrontendKind::ALL.iter().map(|&k| default_checkpoint(cfg, k)).collect(),
    };
    let manifest = read_manifest(cfg)?;
    let digest = test_digest(&manifest);
    let mut loaded = Vec::with_capacity(3);
    for (path, expected) in paths.iter().zip(FrontendKind::ALL) {
        let (clf, side) = load_checkpoint(path)?;
        if side.test_digest.as_deref() != Some(digest.as_str()) {
            return Err(data_err(
                path,
                "was not trained against the manifest's test partition; paired tests need identical cases",
            ));
        }
        if side.frontend != expected {
            log::warn!("{} holds a {} frontend in the {} slot", path.display(), side.frontend, expected);
        }
        loaded.push((clf, side));
    }
    let rate = loaded[0].1.frontend_config.sample_rate;
    let n = loaded[0].0.input_samples();
    if loaded.iter().any(|(c, s)| c.input_samples() != n || s.frontend_config.sample_rate != rate) {
        return Err(CliError::Data("checkpoints expect different input lengths or sample rates".into()));
    }
    let test = load_partition(cfg, &manifest, Partition::Test, n, rate, pool)?;
    let evals = loaded
        .iter()
        .map(|(clf, _)| evaluate(clf, &test))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<Vec<Label>> = evals
        .iter()
        .map(|e| e.predictions.iter().map(|p| p.label).collect())
        .collect();
    let truth: Vec<Label> = test.iter().map(|e| e.label).collect();
    let report = compare_frontends(&labels[0], &labels[1], &labels[2], &truth).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&cfg.output_dir.join("reports").join("comparison.csv"), report.to_csv())?;
    Ok(CompareSummary { evals, report })
}

/// Writes `<stem>_<frontend>.mfft` and `.pgm` under `features/` for every
/// segment and frontend; returns the written dump paths.
pub fn extract(
    cfg: &RunConfig,
    pool: &ThreadPool,
    segments: &[PathBuf],
    frontends: &[FrontendKind],
    checkpoints: &[PathBuf],
) -> Result<Vec<PathBuf>, CliError> {
    let mut trained: BTreeMap<u8, (Frontend, ParamStore)> = BTreeMap::new();
    for path in checkpoints {
        let (clf, side) = load_checkpoint(path)?;
        if trained.insert(side.frontend.tag(), (clf.frontend, clf.store)).is_some() {
            return Err(CliError::Usage(format!("two checkpoints hold a {} frontend", side.frontend)));
        }
    }
    let mut kinds: Vec<FrontendKind> = if frontends.is_empty() {
        vec![cfg.frontend_kind]
    } else {
        frontends.to_vec()
    };
    kinds.dedup();
    let mut fronts = Vec::with_capacity(kinds.len());
    for kind in kinds {
        match trained.remove(&kind.tag()) {
            Some(f) => fronts.push(f),
            None if kind.is_learnable() && default_checkpoint(cfg, kind).is_file() => {
                let (clf, side) = load_checkpoint(&default_checkpoint(cfg, kind))?;
                if side.frontend != kind {
                    return Err(CliError::Data(format!(
                        "{} holds a {} frontend",
                        default_checkpoint(cfg, kind).display(),
                        side.frontend
                    )));
                }
                fronts.push((clf.frontend, clf.store));
            }
            None => {
                if kind.is_learnable() {
                    log::warn!("no checkpoint for the {kind} frontend; using its initialization");
                }
                let mut store = ParamStore::new();
                let f = Frontend::new(kind, &cfg.frontend, &mut store)?;
                fronts.push((f, store));
            }
        }
    }
    let out_dir = cfg.output_dir.join("features");
    create_dir(&out_dir)?;
    let jobs: Vec<(&PathBuf, &(Frontend, ParamStore))> =
        segments.iter().flat_map(|s| fronts.iter().map(move |f| (s, f))).collect();
    pool.install(|| {
        jobs.par_iter()
            .map(|(seg, (frontend, store))| {
                let path = if seg.is_absolute() || seg.exists() {
                    seg.to_path_buf()
                } else {
                    cfg.output_dir.join(seg)
                };
                let bytes = fs::read(&path).map_err(|e| data_err(&path, e))?;
                let w = parse_wav(&bytes, &stem(&path)).map_err(|e| data_err(&path, e))?;
                let fm = frontend.extract(store, &w).map_err(|e| data_err(&path, e))?;
                let base = out_dir.join(format!("{}_{}", stem(&path), frontend.kind()));
                let dump = base.with_extension("mfft");
                let file = fs::File::create(&dump).map_err(|e| data_err(&dump, e))?;
                write_feature_dump(BufWriter::new(file), frontend.kind(), &fm).map_err(|e| data_err(&dump, e))?;
                let pgm = base.with_extension("pgm");
                let file = fs::File::create(&pgm).map_err(|e| data_err(&pgm, e))?;
                write_pgm(BufWriter::new(file), &fm).map_err(|e| data_err(&pgm, e))?;
                log::info!("{}: {} frames x {} channels", dump.display(), fm.frames, fm.channels);
                Ok(dump)
            })
            .collect()
    })
}
