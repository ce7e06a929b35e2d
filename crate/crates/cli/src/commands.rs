use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use atk_core::data::{
    exclude_wet_weather, parse_raw_csv, read_json, read_segments, segment_daily, split_dataset, write_json,
    write_raw_csv, DatasetSplit, SegmentLabels,
};
use atk_core::detect::{evaluate, SegmentDetections, Threshold};
use atk_core::gradcheck::check_tiny;
use atk_core::pipeline::{fit_pipeline, labels_to_model_resolution, Detector, PipelineConfig};
use atk_core::synth::{
    gen_dry_weather, inject_anomalies, random_specs, GenerationLog, InjectionLog, SynthConfig, GENERATOR_ANNOTATOR,
};
use atk_core::train::TrainConfig;
use atk_service::{AppState, ServiceConfig};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::manifest::{manifest_path_for, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] atk_core::Error),
    #[error(transparent)]
    Service(#[from] atk_service::ServiceError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Detection output of `detect`, consumed by `evaluate`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub weights_id: String,
    pub downsample: usize,
    pub threshold: Threshold,
    pub segments: Vec<SegmentDetections>,
}

#[derive(Debug, Serialize)]
struct SynthLog<'a> {
    generation: &'a GenerationLog,
    injection: &'a InjectionLog,
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        days: a.days,
        seed: a.seed,
        start_date: a.start_date,
        noise_std: a.noise_std,
        lag: a.lag,
        a1: a.a1,
        a2: a.a2,
        wet_probability: a.wet_probability,
        jitter: a.jitter,
        ..SynthConfig::default()
    };
    let (clean, log) = gen_dry_weather(&cfg)?;
    let dry = segment_daily(&exclude_wet_weather(&clean));
    let split_seed = a.split_seed.unwrap_or(a.seed);
    let targets: Vec<_> = match a.inject_into {
        InjectInto::None => Vec::new(),
        InjectInto::All => dry.iter().map(|s| s.date).collect(),
        InjectInto::Test => {
            let split = split_dataset(&dry, split_seed, a.test_frac, a.val_frac)?;
            let test: HashSet<&String> = split.test_ids.iter().collect();
            dry.iter()
                .filter(|s| test.contains(&s.segment_id))
                .map(|s| s.date)
                .collect()
        }
    };
    let specs = if targets.is_empty() || a.anomalies_per_day == 0 {
        Vec::new()
    } else {
        random_specs(&targets, a.anomalies_per_day, &a.anomaly_kinds, a.seed)?
    };
    let (series, injected, inj_log) = inject_anomalies(&clean, &specs, a.seed)?;

    // Every dry day gets a record; days without anomalies have no spans.
    let mut labels: BTreeMap<String, SegmentLabels> = dry
        .iter()
        .map(|s| {
            let empty = SegmentLabels {
                segment_id: s.segment_id.clone(),
                spans: Vec::new(),
                annotator: GENERATOR_ANNOTATOR.into(),
                saved_at: Utc::now(),
            };
            (s.segment_id.clone(), empty)
        })
        .collect();
    for l in injected {
        labels.insert(l.segment_id.clone(), l);
    }
    let labels: Vec<SegmentLabels> = labels.into_values().collect();

    create_dir(&a.out_dir)?;
    let raw_path = a.out_dir.join("raw.csv");
    fs::write(&raw_path, write_raw_csv(&series)).map_err(io_err(&raw_path))?;
    let labels_path = a.out_dir.join("labels.json");
    write_json(&labels_path, &labels)?;
    let log_path = a.out_dir.join("generation_log.json");
    write_json(
        &log_path,
        &SynthLog {
            generation: &log,
            injection: &inj_log,
        },
    )?;

    let mut m = RunManifest::new("synth", &a, json!({ "synth": cfg, "split_seed": split_seed }));
    m.seed = Some(a.seed);
    m.outputs = vec![raw_path, labels_path, log_path];
    write_json(&a.out_dir.join("run_manifest.json"), &m)?;
    println!(
        "{} days ({} dry, {} wet), {} anomalies on {} days",
        log.days,
        log.dry_days.len(),
        log.wet_days.len(),
        specs.len(),
        targets.len()
    );
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let file = fs::File::open(&a.input).map_err(io_err(&a.input))?;
    let series = parse_raw_csv(std::io::BufReader::new(file))?;
    let source = if a.keep_wet {
        series.clone()
    } else {
        exclude_wet_weather(&series)
    };
    let segments = segment_daily(&source);
    ensure_parent(&a.out)?;
    write_json(&a.out, &segments)?;
    let mut m = RunManifest::new("segment", &a, json!({ "exclude_wet": !a.keep_wet }));
    m.inputs = vec![a.input.clone()];
    m.outputs = vec![a.out.clone()];
    write_json(&manifest_path_for(&a.out), &m)?;
    println!("{} complete days from {} rows", segments.len(), series.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let segments = read_segments(&a.segments)?;
    let train_cfg = TrainConfig {
        max_epochs: a.max_epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        patience: a.patience,
        min_delta: a.min_delta,
        seed: a.seed,
        precision: a.precision.into(),
    };
    let cfg = PipelineConfig {
        test_frac: a.test_frac,
        val_frac: a.val_frac,
        threshold_method: a.threshold_method.into(),
        threshold_param: a.threshold_param,
        merge_gap: a.merge_gap,
        min_len: a.min_len,
        ..PipelineConfig::new(a.arch.resolve(), train_cfg)
    };
    let fitted = fit_pipeline(&segments, &cfg)?;
    let (weights_path, detector_path) = fitted.save(&a.out_dir, "weights.cae")?;
    let report_path = a.out_dir.join("train_report.json");
    write_json(&report_path, &fitted.report)?;
    let split_path = a.out_dir.join("split.json");
    write_json(&split_path, &fitted.split)?;

    let mut m = RunManifest::new("train", &a, &cfg);
    m.seed = Some(a.seed);
    m.inputs = vec![a.segments.clone()];
    m.outputs = vec![weights_path, detector_path, report_path, split_path];
    write_json(&a.out_dir.join("run_manifest.json"), &m)?;
    let r = &fitted.report;
    println!(
        "trained {} parameters: best epoch {} of {}, val loss {:.5}, threshold {:.5}",
        r.parameter_count,
        r.best_epoch,
        r.stopped_epoch,
        r.val_loss
            .get(r.best_epoch.saturating_sub(1))
            .copied()
            .unwrap_or(f64::NAN),
        fitted.detector.spec.threshold.value
    );
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let detector = Detector::load(&a.detector)?;
    let mut segments = read_segments(&a.segments)?;
    let subset = a
        .subset
        .unwrap_or(if a.split.is_some() { Subset::Test } else { Subset::All });
    if subset != Subset::All {
        let Some(split_path) = &a.split else {
            return Err(CliError::Failed("--subset needs --split".into()));
        };
        let split: DatasetSplit = read_json(split_path)?;
        let ids: HashSet<String> = match subset {
            Subset::Train => split.train_ids,
            Subset::Val => split.val_ids,
            _ => split.test_ids,
        }
        .into_iter()
        .collect();
        segments.retain(|s| ids.contains(&s.segment_id));
    }
    let out = DetectionsFile {
        weights_id: detector.spec.weights_id.clone(),
        downsample: detector.spec.downsample,
        threshold: detector.spec.threshold.clone(),
        segments: detector.detect_all(&segments)?,
    };
    ensure_parent(&a.out)?;
    write_json(&a.out, &out)?;
    let mut m = RunManifest::new("detect", &a, json!({ "subset": subset, "detector": &detector.spec }));
    m.inputs = [Some(a.detector.clone()), Some(a.segments.clone()), a.split.clone()]
        .into_iter()
        .flatten()
        .collect();
    m.outputs = vec![a.out.clone()];
    write_json(&manifest_path_for(&a.out), &m)?;
    let spans: usize = out.segments.iter().map(|s| s.spans.len()).sum();
    println!("{spans} spans detected in {} segments", out.segments.len());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let detections: DetectionsFile = read_json(&a.detections)?;
    let labels: Vec<SegmentLabels> = read_json(&a.labels)?;
    let labels = labels_to_model_resolution(&labels, detections.downsample)?;
    let report = evaluate(&detections.segments, &labels)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &report)?;
    let mut m = RunManifest::new("evaluate", &a, json!({ "downsample": detections.downsample }));
    m.inputs = vec![a.detections.clone(), a.labels.clone()];
    m.outputs = vec![a.out.clone()];
    write_json(&manifest_path_for(&a.out), &m)?;
    let g = &report.aggregate;
    println!(
        "accuracy {:.3} ({} of {} labeled spans), precision {:.3} ({} false positives)",
        g.accuracy,
        g.tp,
        g.tp + g.fn_,
        g.precision,
        g.fp
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let (report, model_seed) = check_tiny(a.seed, a.eps, a.samples, a.mutate)?;
    let passed = if a.mutate {
        report.max_relative_error > 0.1
    } else {
        report.max_relative_error < a.tolerance
    };
    ensure_parent(&a.out)?;
    write_json(
        &a.out,
        &json!({ "report": &report, "model_seed": model_seed, "mutated": a.mutate, "passed": passed }),
    )?;
    let mut m = RunManifest::new(
        "gradcheck",
        &a,
        json!({ "config": atk_core::model::ArchitectureConfig::tiny() }),
    );
    m.seed = Some(a.seed);
    m.outputs = vec![a.out.clone()];
    write_json(&manifest_path_for(&a.out), &m)?;
    println!(
        "max relative error {:.3e} over {} coordinates ({} skipped at kinks){}",
        report.max_relative_error,
        report.coordinates_checked,
        report.kinks_skipped,
        if a.mutate { ", mutated backward pass" } else { "" }
    );
    if passed {
        Ok(())
    } else if a.mutate {
        Err(CliError::Failed("negative control was not detected".into()))
    } else {
        Err(CliError::Failed(format!(
            "gradient check exceeded tolerance {}",
            a.tolerance
        )))
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let segments = read_segments(&a.segments)?;
    let detector = a.detector.as_deref().map(Detector::load).transpose()?;
    let audit = a
        .audit_log
        .clone()
        .unwrap_or_else(|| a.labels.with_extension("audit.jsonl"));
    ensure_parent(&a.labels)?;
    let state = AppState::new(ServiceConfig {
        segments,
        labels_path: a.labels.clone(),
        audit_path: audit.clone(),
        detector,
        ui_dir: a.ui_dir.clone(),
    })?;
    let mut m = RunManifest::new("serve", &a, json!({ "audit_log": &audit }));
    m.inputs = [Some(a.segments.clone()), a.detector.clone()]
        .into_iter()
        .flatten()
        .collect();
    m.outputs = vec![a.labels.clone(), audit];
    write_json(&a.labels.with_file_name("serve.manifest.json"), &m)?;

    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Failed(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        atk_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::Failed(e.to_string()))
    })
}
