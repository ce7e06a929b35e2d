//! Reconstruction-error scoring, thresholding, span detection and evaluation
//! against labeled spans.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{normalize, DailySegment, LabelSpan, NormalizationStats, SegmentLabels};
use crate::engine::{Mode, Real, RngState, Tensor};
use crate::model::Model;
use crate::{Error, Result};

/// Per-timestep reconstruction error of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub segment_id: String,
    pub scores: Vec<f64>,
}

/// `score[t] = (1/C) Σ_c (recon[c,t] − input[c,t])²`.
pub fn reconstruction_scores<S: Real>(input: &Tensor<S>, recon: &Tensor<S>) -> Result<Vec<f64>> {
    if input.shape() != recon.shape() || input.shape().len() != 2 {
        return Err(Error::shape(
            "reconstruction_scores",
            format!("{:?}", input.shape()),
            format!("{:?}", recon.shape()),
        ));
    }
    let (c, t) = (input.shape()[0], input.shape()[1]);
    let mut scores = vec![0.0; t];
    for ch in 0..c {
        for (s, (&x, &y)) in scores.iter_mut().zip(input.row(ch).iter().zip(recon.row(ch))) {
            let r = (y - x).as_f64();
            *s += r * r;
        }
    }
    scores.iter_mut().for_each(|s| *s /= c as f64);
    Ok(scores)
}

/// Normalizes `segment` with `stats`, reconstructs it in inference mode and
/// returns the per-timestep error in normalized units.
pub fn score_segment<S: Real>(
    model: &Model<S>,
    segment: &DailySegment,
    stats: &NormalizationStats,
) -> Result<ScoreSeries> {
    let x = normalize(segment, stats).to_tensor::<S>();
    let recon = model.forward(&x, Mode::Infer, &mut RngState::new(0))?;
    Ok(ScoreSeries {
        segment_id: segment.segment_id.clone(),
        scores: reconstruction_scores(&x, &recon)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Quantile,
    MeanPlusKSigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub method: ThresholdMethod,
    pub param: f64,
    pub value: f64,
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n − 1)·q`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn fit_threshold(pool: &[f64], method: ThresholdMethod, param: f64) -> Result<Threshold> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("threshold pool is empty".into()));
    }
    if pool.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("threshold pool".into()));
    }
    let value = match method {
        ThresholdMethod::Quantile => {
            if !(param > 0.0 && param <= 1.0) {
                return Err(Error::InvalidArgument(format!("quantile {param} outside (0, 1]")));
            }
            quantile(pool, param).expect("non-empty pool")
        }
        ThresholdMethod::MeanPlusKSigma => {
            if !param.is_finite() {
                return Err(Error::InvalidArgument("k must be finite".into()));
            }
            let n = pool.len() as f64;
            let mean = pool.iter().sum::<f64>() / n;
            let var = pool.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            mean + param * var.sqrt()
        }
    };
    Ok(Threshold { method, param, value })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedSpan {
    pub segment_id: String,
    pub start: usize,
    pub end: usize,
    pub peak: f64,
}

/// Marks points scoring strictly above the threshold, joins marked runs
/// separated by at most `merge_gap` unmarked points, and drops spans shorter
/// than `min_len`.
pub fn detect(scores: &ScoreSeries, threshold: &Threshold, merge_gap: usize, min_len: usize) -> Vec<DetectedSpan> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (t, &s) in scores.scores.iter().enumerate() {
        if s <= threshold.value {
            continue;
        }
        match runs.last_mut() {
            Some((_, end)) if t - *end <= merge_gap => *end = t + 1,
            _ => runs.push((t, t + 1)),
        }
    }
    runs.into_iter()
        .filter(|(s, e)| e - s >= min_len)
        .map(|(start, end)| DetectedSpan {
            segment_id: scores.segment_id.clone(),
            start,
            end,
            peak: scores.scores[start..end].iter().copied().fold(f64::MIN, f64::max),
        })
        .collect()
}

/// Detected spans of one segment (possibly none).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentDetections {
    pub segment_id: String,
    pub spans: Vec<DetectedSpan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointClass {
    Tp,
    Fp,
    Fn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointMark {
    pub segment_id: String,
    pub t: usize,
    pub class: PointClass,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    /// Labeled spans containing at least one detected point, over all labeled spans.
    pub accuracy: f64,
    /// Detected spans overlapping a label, over all detected spans.
    pub precision: f64,
    pub labeled_spans: usize,
    pub detected_spans: usize,
}

impl Counts {
    fn finish(mut self, detected_tp: usize) -> Self {
        self.accuracy = ratio(self.tp, self.tp + self.fn_);
        self.precision = ratio(detected_tp, self.detected_spans);
        self
    }
}

// An empty denominator means nothing was missed (or nothing was falsely flagged).
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEval {
    pub segment_id: String,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: Counts,
    pub per_segment: Vec<SegmentEval>,
    pub points: Vec<PointMark>,
}

fn overlaps(d: &DetectedSpan, l: &LabelSpan) -> bool {
    d.start < l.end && l.start < d.end
}

/// Scores detections against labels. A labeled span counts as found when any
/// index inside a detected span falls within it; a detected span is a false
/// positive when it overlaps no labeled span.
pub fn evaluate(detections: &[SegmentDetections], labels: &[SegmentLabels]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &SegmentLabels> = labels.iter().map(|l| (l.segment_id.as_str(), l)).collect();
    let mut merged: BTreeMap<&str, Vec<&DetectedSpan>> = BTreeMap::new();
    for d in detections {
        if !by_id.contains_key(d.segment_id.as_str()) {
            return Err(Error::UnknownSegment(d.segment_id.clone()));
        }
        let entry = merged.entry(d.segment_id.as_str()).or_default();
        entry.extend(d.spans.iter());
    }

    let mut aggregate = Counts::default();
    let mut aggregate_detected_tp = 0;
    let mut per_segment = Vec::with_capacity(merged.len());
    let mut points = Vec::new();
    for (id, spans) in merged {
        let label_spans = &by_id[id].spans;
        let mut counts = Counts {
            labeled_spans: label_spans.len(),
            detected_spans: spans.len(),
            ..Counts::default()
        };
        for l in label_spans {
            if spans.iter().any(|d| overlaps(d, l)) {
                counts.tp += 1;
            } else {
                counts.fn_ += 1;
                points.extend((l.start..l.end).map(|t| PointMark {
                    segment_id: id.to_string(),
                    t,
                    class: PointClass::Fn,
                }));
            }
        }
        let detected_tp = spans
            .iter()
            .filter(|d| label_spans.iter().any(|l| overlaps(d, l)))
            .count();
        counts.fp = spans.len() - detected_tp;
        let mut detected_points: Vec<usize> = spans.iter().flat_map(|d| d.start..d.end).collect();
        detected_points.sort_unstable();
        detected_points.dedup();
        points.extend(detected_points.into_iter().map(|t| PointMark {
            segment_id: id.to_string(),
            t,
            class: if label_spans.iter().any(|l| l.contains(t)) {
                PointClass::Tp
            } else {
                PointClass::Fp
            },
        }));

        aggregate.tp += counts.tp;
        aggregate.fn_ += counts.fn_;
        aggregate.fp += counts.fp;
        aggregate.labeled_spans += counts.labeled_spans;
        aggregate.detected_spans += counts.detected_spans;
        aggregate_detected_tp += detected_tp;
        per_segment.push(SegmentEval {
            segment_id: id.to_string(),
            counts: counts.finish(detected_tp),
        });
    }
    Ok(EvalReport {
        aggregate: aggregate.finish(aggregate_detected_tp),
        per_segment,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use proptest::prelude::*;

    fn series(scores: Vec<f64>) -> ScoreSeries {
        ScoreSeries {
            segment_id: "s".into(),
            scores,
        }
    }

    fn at(value: f64) -> Threshold {
        Threshold {
            method: ThresholdMethod::Quantile,
            param: 1.0,
            value,
        }
    }

    fn marked(len: usize, points: &[usize]) -> ScoreSeries {
        let mut s = vec![0.0; len];
        for &p in points {
            s[p] = 5.0;
        }
        series(s)
    }

    fn labels(id: &str, spans: &[(usize, usize)]) -> SegmentLabels {
        SegmentLabels {
            segment_id: id.into(),
            spans: spans.iter().map(|&(s, e)| LabelSpan::new(s, e)).collect(),
            annotator: "test".into(),
            saved_at: Utc::now(),
        }
    }

    fn dets(id: &str, spans: &[(usize, usize)]) -> SegmentDetections {
        SegmentDetections {
            segment_id: id.into(),
            spans: spans
                .iter()
                .map(|&(start, end)| DetectedSpan {
                    segment_id: id.into(),
                    start,
                    end,
                    peak: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn score_formula() {
        let x = Tensor::<f64>::zeros(&[3, 5]);
        assert!(reconstruction_scores(&x, &x).unwrap().iter().all(|&s| s == 0.0));
        let mut y = x.clone();
        y.data_mut()[5 + 2] = 1.0;
        let s = reconstruction_scores(&x, &y).unwrap();
        assert_eq!(s, vec![0.0, 0.0, 1.0 / 3.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_cases() {
        let pool = vec![2.5; 10];
        assert_eq!(fit_threshold(&pool, ThresholdMethod::Quantile, 0.3).unwrap().value, 2.5);
        let pool: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(
            fit_threshold(&pool, ThresholdMethod::Quantile, 1.0).unwrap().value,
            99.0
        );
        let q = fit_threshold(&pool, ThresholdMethod::Quantile, 0.99).unwrap().value;
        assert!((q - 98.01).abs() < 1e-9, "{q}");
        let k = fit_threshold(&[1.0, 3.0], ThresholdMethod::MeanPlusKSigma, 2.0)
            .unwrap()
            .value;
        assert_eq!(k, 4.0);
        assert!(fit_threshold(&[], ThresholdMethod::Quantile, 0.5).is_err());
        assert!(fit_threshold(&pool, ThresholdMethod::Quantile, 0.0).is_err());
    }

    #[test]
    fn detection_run_formation_and_merging() {
        assert!(detect(&marked(30, &[]), &at(1.0), 6, 1).is_empty());
        let one = detect(&marked(30, &[10, 11, 12]), &at(1.0), 6, 1);
        assert_eq!((one.len(), one[0].start, one[0].end), (1, 10, 13));
        let merged = detect(&marked(30, &[10, 11, 16]), &at(1.0), 6, 1);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start, merged[0].end), (10, 17));
        let split = detect(&marked(30, &[10, 11, 16]), &at(1.0), 3, 1);
        assert_eq!(
            split.iter().map(|d| (d.start, d.end)).collect::<Vec<_>>(),
            vec![(10, 12), (16, 17)]
        );
        let filtered = detect(&marked(30, &[3, 10, 11, 12]), &at(1.0), 0, 2);
        assert_eq!(
            filtered.iter().map(|d| (d.start, d.end)).collect::<Vec<_>>(),
            vec![(10, 13)]
        );
    }

    #[test]
    fn exact_detections_score_perfectly() {
        let spans = [(3, 8), (20, 25)];
        let r = evaluate(&[dets("a", &spans)], &[labels("a", &spans)]).unwrap();
        assert_eq!(
            (r.aggregate.accuracy, r.aggregate.precision, r.aggregate.fp),
            (1.0, 1.0, 0)
        );
    }

    #[test]
    fn no_detections_scores_zero_accuracy() {
        let r = evaluate(&[dets("a", &[])], &[labels("a", &[(3, 8)])]).unwrap();
        assert_eq!(r.aggregate.accuracy, 0.0);
        assert_eq!(r.aggregate.fn_, 1);
        assert_eq!(r.points.len(), 5);
        assert!(r.points.iter().all(|p| p.class == PointClass::Fn));
    }

    #[test]
    fn seven_of_twenty() {
        let label_spans: Vec<(usize, usize)> = (0..20).map(|i| (i * 10, i * 10 + 5)).collect();
        let found: Vec<(usize, usize)> = label_spans[..7].iter().map(|&(s, _)| (s + 2, s + 3)).collect();
        let r = evaluate(&[dets("a", &found)], &[labels("a", &label_spans)]).unwrap();
        assert_eq!((r.aggregate.tp, r.aggregate.fn_), (7, 13));
        assert!((r.aggregate.accuracy - 0.35).abs() < 1e-12);
    }

    #[test]
    fn unknown_segment_is_an_error() {
        assert!(matches!(
            evaluate(&[dets("zz", &[])], &[labels("a", &[])]),
            Err(Error::UnknownSegment(_))
        ));
    }

    #[test]
    fn report_json_shape() {
        let r = evaluate(&[dets("a", &[(0, 2)])], &[labels("a", &[(1, 3)])]).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["tp", "fn", "fp", "accuracy", "precision"] {
            assert!(v["aggregate"].get(key).is_some(), "{key}");
        }
        assert_eq!(v["points"][0]["class"], "fp");
        assert_eq!(v["points"][1]["class"], "tp");
        assert_eq!(v["per_segment"][0]["segment_id"], "a");
    }

    proptest! {
        #[test]
        fn detected_spans_are_sorted_disjoint_and_cover_marks(
            scores in prop::collection::vec(0.0f64..2.0, 1..120),
            gap in 0usize..8,
        ) {
            let s = series(scores.clone());
            let spans = detect(&s, &at(1.0), gap, 1);
            for w in spans.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            for (t, &v) in scores.iter().enumerate() {
                let n = spans.iter().filter(|d| d.start <= t && t < d.end).count();
                if v > 1.0 { prop_assert_eq!(n, 1); }
                prop_assert!(n <= 1);
            }
        }

        #[test]
        fn raising_threshold_never_adds_points(
            scores in prop::collection::vec(0.0f64..2.0, 1..120),
            a in 0.0f64..2.0, b in 0.0f64..2.0,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let count = |th: f64| scores.iter().filter(|&&s| s > th).count();
            prop_assert!(count(hi) <= count(lo));
        }
    }
}
