use std::collections::BTreeMap;

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::engine::{Real, Tensor};
use crate::{Error, Result, CHANNELS, GRID_MINUTES, SAMPLES_PER_DAY};

/// One calendar day of complete readings, `CHANNELS × T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailySegment {
    pub segment_id: String,
    pub date: NaiveDate,
    pub data: Vec<Vec<f64>>,
}

impl DailySegment {
    pub fn new(date: NaiveDate, data: Vec<Vec<f64>>) -> Result<Self> {
        let seg = DailySegment {
            segment_id: date.format("%Y-%m-%d").to_string(),
            date,
            data,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != CHANNELS {
            return Err(Error::shape("segment", format!("{CHANNELS} channels"), self.data.len()));
        }
        let t = self.len();
        if t == 0 || self.data.iter().any(|c| c.len() != t) {
            return Err(Error::shape(
                "segment",
                "equal non-empty channel lengths",
                format!("{:?}", self.data.iter().map(Vec::len).collect::<Vec<_>>()),
            ));
        }
        if self.data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("segment {}", self.segment_id)));
        }
        Ok(())
    }

    /// Block means over `factor` consecutive samples; `factor` must divide the length.
    pub fn downsample(&self, factor: usize) -> Result<DailySegment> {
        if factor == 0 || !self.len().is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "downsample factor {factor} does not divide length {}",
                self.len()
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let data = self
            .data
            .iter()
            .map(|c| {
                c.chunks(factor)
                    .map(|b| b.iter().sum::<f64>() / factor as f64)
                    .collect()
            })
            .collect();
        Ok(DailySegment {
            segment_id: self.segment_id.clone(),
            date: self.date,
            data,
        })
    }

    pub fn to_tensor<S: Real>(&self) -> Tensor<S> {
        let flat: Vec<S> = self.data.iter().flatten().map(|&v| S::from_f64(v)).collect();
        Tensor::from_vec(&[self.data.len(), self.len()], flat).expect("validated segment shape")
    }

    pub fn from_tensor<S: Real>(segment_id: &str, date: NaiveDate, t: &Tensor<S>) -> Result<Self> {
        t.expect_rank("segment", 2)?;
        let data = (0..t.shape()[0])
            .map(|c| t.row(c).iter().map(|v| v.as_f64()).collect())
            .collect();
        Ok(DailySegment {
            segment_id: segment_id.to_string(),
            date,
            data,
        })
    }
}

/// Cuts one segment per calendar day that has all 288 samples on every channel.
/// Incomplete days are dropped; nothing is interpolated.
pub fn segment_daily(series: &RawSeries) -> Vec<DailySegment> {
    let mut days: BTreeMap<NaiveDate, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for (ts, row) in series.timestamps.iter().zip(&series.values) {
        let minute = i64::from(ts.hour()) * 60 + i64::from(ts.minute());
        if ts.second() != 0 || minute % GRID_MINUTES != 0 {
            continue;
        }
        let slot = (minute / GRID_MINUTES) as usize;
        let day = days
            .entry(ts.date())
            .or_insert_with(|| vec![vec![None; SAMPLES_PER_DAY]; CHANNELS]);
        for (c, v) in row.iter().enumerate() {
            day[c][slot] = *v;
        }
    }
    days.into_iter()
        .filter_map(|(date, channels)| {
            let data: Option<Vec<Vec<f64>>> = channels
                .into_iter()
                .map(|c| c.into_iter().collect::<Option<Vec<f64>>>())
                .collect();
            data.map(|data| DailySegment::new(date, data).expect("complete day"))
        })
        .collect()
}
