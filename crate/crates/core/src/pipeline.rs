//! End-to-end glue: fit normalization, split, train, fit a threshold, and
//! bundle everything needed for detection in a detector file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    fit_normalization, normalize, read_json, split_dataset, DailySegment, DatasetSplit, NormalizationStats,
    SegmentLabels,
};
use crate::detect::{
    detect, fit_threshold, score_segment, DetectedSpan, ScoreSeries, SegmentDetections, Threshold, ThresholdMethod,
};
use crate::engine::Real;
use crate::model::{decode_weights, encode_weights, weights_id, ArchitectureConfig, Model};
use crate::train::{train, Precision, TrainConfig, TrainReport};
use crate::{Error, Result, SAMPLES_PER_DAY};

pub const DEFAULT_TEST_FRAC: f64 = 0.2;
pub const DEFAULT_VAL_FRAC: f64 = 0.2;
pub const DEFAULT_QUANTILE: f64 = 0.99;
pub const DEFAULT_MERGE_GAP: usize = 6;
pub const DEFAULT_MIN_LEN: usize = 1;

/// How many raw samples feed one model timestep.
pub fn downsample_factor(config: &ArchitectureConfig) -> Result<usize> {
    if config.seq_len == 0 || !SAMPLES_PER_DAY.is_multiple_of(config.seq_len) {
        return Err(Error::Config(format!(
            "sequence length {} does not divide {SAMPLES_PER_DAY}",
            config.seq_len
        )));
    }
    Ok(SAMPLES_PER_DAY / config.seq_len)
}

/// Brings raw daily segments to model resolution.
pub fn to_model_resolution(segments: &[DailySegment], factor: usize) -> Result<Vec<DailySegment>> {
    segments.iter().map(|s| s.downsample(factor)).collect()
}

/// Maps labels onto the model grid; segments without labels are skipped.
pub fn labels_to_model_resolution(labels: &[SegmentLabels], factor: usize) -> Result<Vec<SegmentLabels>> {
    labels
        .iter()
        .map(|l| l.downsample(factor, SAMPLES_PER_DAY / factor))
        .collect()
}

/// Everything `detect` needs besides the weights bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorFile {
    /// Weights path, relative to the detector file's directory.
    pub weights_file: String,
    pub weights_id: String,
    pub config: ArchitectureConfig,
    pub normalization: NormalizationStats,
    pub threshold: Threshold,
    pub downsample: usize,
    pub merge_gap: usize,
    pub min_len: usize,
}

/// A loaded model plus its detection settings. Inference runs in f64.
#[derive(Clone, Debug)]
pub struct Detector {
    pub model: Model<f64>,
    pub spec: DetectorFile,
}

impl Detector {
    pub fn from_bytes(weights: &[u8], spec: DetectorFile) -> Result<Self> {
        let model = decode_weights(weights, Some(&spec.config))?;
        let id = weights_id(weights)?;
        if id != spec.weights_id {
            return Err(Error::Weights(format!(
                "weights id {id} does not match detector file ({})",
                spec.weights_id
            )));
        }
        Ok(Detector { model, spec })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: DetectorFile = read_json(path)?;
        let weights_path = path.parent().unwrap_or(Path::new(".")).join(&spec.weights_file);
        let bytes = std::fs::read(&weights_path).map_err(|e| Error::io(weights_path.clone(), e))?;
        Detector::from_bytes(&bytes, spec)
    }

    /// Scores a raw-resolution segment at model resolution.
    pub fn score(&self, raw: &DailySegment) -> Result<ScoreSeries> {
        score_segment(
            &self.model,
            &raw.downsample(self.spec.downsample)?,
            &self.spec.normalization,
        )
    }

    pub fn detect(&self, raw: &DailySegment) -> Result<(ScoreSeries, Vec<DetectedSpan>)> {
        let scores = self.score(raw)?;
        let spans = detect(&scores, &self.spec.threshold, self.spec.merge_gap, self.spec.min_len);
        Ok((scores, spans))
    }

    pub fn detect_all(&self, raw: &[DailySegment]) -> Result<Vec<SegmentDetections>> {
        raw.iter()
            .map(|s| {
                let (_, spans) = self.detect(s)?;
                Ok(SegmentDetections {
                    segment_id: s.segment_id.clone(),
                    spans,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub test_frac: f64,
    pub val_frac: f64,
    pub threshold_method: ThresholdMethod,
    pub threshold_param: f64,
    pub merge_gap: usize,
    pub min_len: usize,
}

impl PipelineConfig {
    pub fn new(arch: ArchitectureConfig, train: TrainConfig) -> Self {
        PipelineConfig {
            arch,
            train,
            test_frac: DEFAULT_TEST_FRAC,
            val_frac: DEFAULT_VAL_FRAC,
            threshold_method: ThresholdMethod::Quantile,
            threshold_param: DEFAULT_QUANTILE,
            merge_gap: DEFAULT_MERGE_GAP,
            min_len: DEFAULT_MIN_LEN,
        }
    }
}

/// Result of [`fit_pipeline`]. `weights` holds the encoded weights file.
#[derive(Clone, Debug)]
pub struct FittedPipeline {
    pub detector: Detector,
    pub weights: Vec<u8>,
    pub split: DatasetSplit,
    pub report: TrainReport,
}

impl FittedPipeline {
    /// Writes the weights and detector file into `dir`, returning their paths.
    pub fn save(&self, dir: &Path, weights_name: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let weights_path = dir.join(weights_name);
        std::fs::write(&weights_path, &self.weights).map_err(|e| Error::io(weights_path.clone(), e))?;
        let mut spec = self.detector.spec.clone();
        spec.weights_file = weights_name.to_string();
        let detector_path = dir.join("detector.json");
        crate::data::write_json(&detector_path, &spec)?;
        Ok((weights_path, detector_path))
    }
}

/// Splits raw-resolution segments, fits normalization on the training part,
/// trains the autoencoder and fits the threshold on training-set scores.
pub fn fit_pipeline(raw: &[DailySegment], cfg: &PipelineConfig) -> Result<FittedPipeline> {
    cfg.arch.validate()?;
    let factor = downsample_factor(&cfg.arch)?;
    let split = split_dataset(raw, cfg.train.seed, cfg.test_frac, cfg.val_frac)?;
    let coarse = to_model_resolution(raw, factor)?;
    let by_id: HashMap<&str, &DailySegment> = coarse.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let pick = |ids: &[String]| ids.iter().map(|id| by_id[id.as_str()].clone()).collect::<Vec<_>>();
    let (train_set, val_set) = (pick(&split.train_ids), pick(&split.val_ids));
    let stats = fit_normalization(&train_set)?;
    let norm = |set: &[DailySegment]| set.iter().map(|s| normalize(s, &stats)).collect::<Vec<_>>();
    let (train_norm, val_norm) = (norm(&train_set), norm(&val_set));

    let (weights, report) = match cfg.train.precision {
        Precision::F32 => train_encoded::<f32>(cfg, &train_norm, &val_norm)?,
        Precision::F64 => train_encoded::<f64>(cfg, &train_norm, &val_norm)?,
    };

    let spec = DetectorFile {
        weights_file: String::new(),
        weights_id: weights_id(&weights)?,
        config: cfg.arch.clone(),
        normalization: stats,
        threshold: Threshold {
            method: cfg.threshold_method,
            param: cfg.threshold_param,
            value: 0.0,
        },
        downsample: factor,
        merge_gap: cfg.merge_gap,
        min_len: cfg.min_len,
    };
    let mut detector = Detector::from_bytes(&weights, spec)?;
    let mut pool = Vec::with_capacity(train_set.len() * cfg.arch.seq_len);
    for s in &train_set {
        pool.extend(score_segment(&detector.model, s, &detector.spec.normalization)?.scores);
    }
    detector.spec.threshold = fit_threshold(&pool, cfg.threshold_method, cfg.threshold_param)?;
    Ok(FittedPipeline {
        detector,
        weights,
        split,
        report,
    })
}

fn train_encoded<S: Real>(
    cfg: &PipelineConfig,
    train_set: &[DailySegment],
    val_set: &[DailySegment],
) -> Result<(Vec<u8>, TrainReport)> {
    let model = Model::<S>::build(&cfg.arch, cfg.train.seed)?;
    let (model, report) = train(model, train_set, val_set, &cfg.train)?;
    Ok((encode_weights(&model)?, report))
}
