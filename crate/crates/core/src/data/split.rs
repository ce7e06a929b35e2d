use serde::{Deserialize, Serialize};

use super::DailySegment;
use crate::engine::RngState;
use crate::{Error, Result};

/// Disjoint train/validation/test id lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Seeded shuffle, then `round(test_frac·N)` test ids and
/// `round(val_frac·remainder)` validation ids; the rest is training.
///
/// For very small `N` the test and validation parts are raised to one id each.
pub fn split_dataset(segments: &[DailySegment], seed: u64, test_frac: f64, val_frac: f64) -> Result<DatasetSplit> {
    let n = segments.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "{n} segments cannot populate train, validation and test sets"
        )));
    }
    if !(0.0..1.0).contains(&test_frac) || !(0.0..1.0).contains(&val_frac) {
        return Err(Error::InvalidArgument("split fractions must lie in [0, 1)".into()));
    }
    let mut ids: Vec<String> = segments.iter().map(|s| s.segment_id.clone()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != n {
        return Err(Error::InvalidArgument("duplicate segment ids".into()));
    }
    RngState::new(seed).shuffle(&mut ids);

    let n_test = round_half_up(test_frac * n as f64).clamp(1, n - 2);
    let rest = n - n_test;
    let n_val = round_half_up(val_frac * rest as f64).clamp(1, rest - 1);
    let val_ids = ids[n_test..n_test + n_val].to_vec();
    let train_ids = ids[n_test + n_val..].to_vec();
    ids.truncate(n_test);
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        test_ids: ids,
        seed,
    })
}
