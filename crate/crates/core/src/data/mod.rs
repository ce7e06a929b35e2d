//! Raw sensor records, daily segments, labels, normalization and splits.

mod labels;
mod normalize;
mod raw;
mod segment;
mod split;

pub use labels::{canonicalize_spans, LabelSpan, SegmentLabels};
pub use normalize::{denormalize, fit_normalization, normalize, NormalizationStats, STD_FLOOR};
pub use raw::{exclude_wet_weather, parse_raw_csv, write_raw_csv, RawSeries, Reading};
pub use segment::{segment_daily, DailySegment};
pub use split::{round_half_up, split_dataset, DatasetSplit};

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a segments file and validates every segment's shape.
pub fn read_segments(path: &Path) -> Result<Vec<DailySegment>> {
    let segments: Vec<DailySegment> = read_json(path)?;
    for s in &segments {
        s.validate()?;
    }
    Ok(segments)
}
