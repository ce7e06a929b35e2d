use serde::{Deserialize, Serialize};

use super::DailySegment;
use crate::{Error, Result, CHANNELS};

/// Lower bound applied to every stored standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score parameters fitted on training segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormalizationStats {
    /// Raw mode: zero mean, unit std.
    pub fn identity() -> Self {
        NormalizationStats {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }
}

pub fn fit_normalization(train: &[DailySegment]) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::InvalidArgument(
            "normalization needs at least one training segment".into(),
        ));
    }
    let mut stats = NormalizationStats::identity();
    for c in 0..CHANNELS {
        let values = || train.iter().flat_map(|s| s.data[c].iter().copied());
        let n = values().count() as f64;
        let mean = values().sum::<f64>() / n;
        let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        stats.mean[c] = mean;
        stats.std[c] = var.sqrt().max(STD_FLOOR);
    }
    Ok(stats)
}

fn map_channels(segment: &DailySegment, f: impl Fn(usize, f64) -> f64) -> DailySegment {
    DailySegment {
        segment_id: segment.segment_id.clone(),
        date: segment.date,
        data: segment
            .data
            .iter()
            .enumerate()
            .map(|(c, xs)| xs.iter().map(|&x| f(c, x)).collect())
            .collect(),
    }
}

pub fn normalize(segment: &DailySegment, stats: &NormalizationStats) -> DailySegment {
    map_channels(segment, |c, x| (x - stats.mean[c]) / stats.std[c])
}

pub fn denormalize(segment: &DailySegment, stats: &NormalizationStats) -> DailySegment {
    map_channels(segment, |c, z| z * stats.std[c] + stats.mean[c])
}
