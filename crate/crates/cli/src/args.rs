use std::path::PathBuf;

use atk_core::detect::ThresholdMethod;
use atk_core::model::ArchitectureConfig;
use atk_core::synth::AnomalyKind;
use atk_core::train::Precision;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "atk",
    version,
    about = "Autoencoder anomaly detection for in-sewer flow data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth anomaly labels
    Synth(SynthArgs),
    /// Cut a raw CSV into complete daily segments
    Segment(SegmentArgs),
    /// Train the autoencoder and fit a detection threshold
    Train(TrainArgs),
    /// Score segments and write detected spans
    Detect(DetectArgs),
    /// Score detections against labels
    Evaluate(EvaluateArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Run the labeling service
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Small,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InjectInto {
    /// Only days that the default split puts in the test set
    Test,
    All,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdArg {
    Quantile,
    MeanPlusKSigma,
}

impl From<ThresholdArg> for ThresholdMethod {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::Quantile => ThresholdMethod::Quantile,
            ThresholdArg::MeanPlusKSigma => ThresholdMethod::MeanPlusKSigma,
        }
    }
}

fn parse_kind(s: &str) -> Result<AnomalyKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown anomaly kind {s:?} (spike, flatline, offset, drift, noise_burst)"))
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 120)]
    pub days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "2017-01-01")]
    pub start_date: NaiveDate,
    #[arg(long, default_value_t = 0.3)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 2)]
    pub lag: usize,
    #[arg(long, default_value_t = 0.9)]
    pub a1: f64,
    #[arg(long, default_value_t = 0.9)]
    pub a2: f64,
    #[arg(long, default_value_t = 0.35)]
    pub wet_probability: f64,
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    #[arg(long, value_enum, default_value = "test")]
    pub inject_into: InjectInto,
    #[arg(long, default_value_t = 2)]
    pub anomalies_per_day: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "spike,flatline")]
    pub anomaly_kinds: Vec<AnomalyKind>,
    /// Seed of the split used by `--inject-into test` (defaults to --seed)
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_TEST_FRAC)]
    pub test_frac: f64,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_VAL_FRAC)]
    pub val_frac: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep wet-weather days instead of dropping them
    #[arg(long)]
    pub keep_wet: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ArchArgs {
    #[arg(long, value_enum, default_value = "paper")]
    pub profile: Profile,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub kernels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub filters: Option<Vec<usize>>,
    #[arg(long)]
    pub fc_hidden: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
}

impl ArchArgs {
    pub fn resolve(&self) -> ArchitectureConfig {
        let mut c = match self.profile {
            Profile::Paper => ArchitectureConfig::paper(),
            Profile::Small => ArchitectureConfig::small(),
        };
        let three = |v: &Vec<usize>| [v[0], v[1], v[2]];
        if let Some(v) = self.seq_len {
            c.seq_len = v;
        }
        if let Some(v) = &self.kernels {
            c.kernels = three(v);
        }
        if let Some(v) = &self.filters {
            c.filters = three(v);
        }
        if let Some(v) = self.fc_hidden {
            c.fc_hidden = v;
        }
        if let Some(v) = self.bottleneck {
            c.bottleneck = v;
        }
        if let Some(v) = self.dropout_rate {
            c.dropout_rate = v;
        }
        c
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.0)]
    pub min_delta: f64,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_TEST_FRAC)]
    pub test_frac: f64,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_VAL_FRAC)]
    pub val_frac: f64,
    #[arg(long, value_enum, default_value = "quantile")]
    pub threshold_method: ThresholdArg,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_QUANTILE)]
    pub threshold_param: f64,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_MERGE_GAP)]
    pub merge_gap: usize,
    #[arg(long, default_value_t = atk_core::pipeline::DEFAULT_MIN_LEN)]
    pub min_len: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Split file written by `train`, used with --subset
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Which part of the split to score (default: test when --split is given)
    #[arg(long, value_enum)]
    pub subset: Option<Subset>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Flip the sign of the output layer's backward pass (negative control)
    #[arg(long)]
    pub mutate: bool,
    #[arg(long, default_value = "gradcheck.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, default_value = "labels.json")]
    pub labels: PathBuf,
    /// Defaults to the labels path with an `.audit.jsonl` extension
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = atk_service::DEFAULT_PORT)]
    pub port: u16,
}
