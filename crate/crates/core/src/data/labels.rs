use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open anomalous index interval `[start, end)` within a segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LabelSpan {
    pub fn new(start: usize, end: usize) -> Self {
        LabelSpan { start, end, note: None }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.start >= self.end || self.end > len {
            return Err(Error::InvalidSpan {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }
}

/// Expert (or generated) labels of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabels {
    pub segment_id: String,
    pub spans: Vec<LabelSpan>,
    pub annotator: String,
    pub saved_at: DateTime<Utc>,
}

impl SegmentLabels {
    /// Validated copy with sorted, merged spans.
    pub fn canonical(&self, len: usize) -> Result<SegmentLabels> {
        Ok(SegmentLabels {
            spans: canonicalize_spans(&self.spans, len)?,
            ..self.clone()
        })
    }

    /// Maps spans onto a grid coarser by `factor`, covering every original index.
    pub fn downsample(&self, factor: usize, coarse_len: usize) -> Result<SegmentLabels> {
        let spans: Vec<LabelSpan> = self
            .spans
            .iter()
            .map(|s| LabelSpan {
                start: s.start / factor,
                end: s.end.div_ceil(factor),
                note: s.note.clone(),
            })
            .collect();
        Ok(SegmentLabels {
            spans: canonicalize_spans(&spans, coarse_len)?,
            ..self.clone()
        })
    }
}

/// Validates spans against `len`, sorts by start and merges overlapping ones.
/// Notes of merged spans are joined with `"; "`.
pub fn canonicalize_spans(spans: &[LabelSpan], len: usize) -> Result<Vec<LabelSpan>> {
    for s in spans {
        s.validate(len)?;
    }
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut merged: Vec<LabelSpan> = Vec::with_capacity(sorted.len());
    for span in sorted {
        match merged.last_mut() {
            Some(last) if span.start < last.end => {
                last.end = last.end.max(span.end);
                last.note = match (last.note.take(), span.note) {
                    (Some(a), Some(b)) if a != b => Some(format!("{a}; {b}")),
                    (a, b) => a.or(b),
                };
            }
            _ => merged.push(span),
        }
    }
    Ok(merged)
}
