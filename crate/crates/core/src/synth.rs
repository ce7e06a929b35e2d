//! Seeded synthetic flow generator: two upstream diurnal sensors, a lagged
//! downstream conjunction, optional wet-weather days and injected anomalies
//! with exact ground-truth labels.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use chrono::{Duration, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{canonicalize_spans, LabelSpan, RawSeries, SegmentLabels};
use crate::engine::RngState;
use crate::{Error, Result, CHANNELS, GRID_MINUTES, SAMPLES_PER_DAY};

pub const GENERATOR_ANNOTATOR: &str = "synthgen";

/// One cosine component of a daily profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Cycles per day, 1 to 3.
    pub cycles_per_day: u32,
    pub amplitude: f64,
    /// Hour of day at which this component peaks.
    pub peak_hour: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiurnalProfile {
    /// Base flow in L/s.
    pub base: f64,
    pub harmonics: Vec<Harmonic>,
}

impl DiurnalProfile {
    fn default_with_shift(shift_hours: f64) -> Self {
        DiurnalProfile {
            base: 10.0,
            harmonics: vec![
                Harmonic {
                    cycles_per_day: 1,
                    amplitude: 4.0,
                    peak_hour: 13.0 + shift_hours,
                },
                Harmonic {
                    cycles_per_day: 2,
                    amplitude: 2.0,
                    peak_hour: 8.0 + shift_hours,
                },
            ],
        }
    }

    /// Clean flow at sample `slot` of a day with amplitude scale `scale`.
    pub fn value(&self, slot: i64, scale: f64) -> f64 {
        let hour = (slot * GRID_MINUTES) as f64 / 60.0;
        let wave: f64 = self
            .harmonics
            .iter()
            .map(|h| h.amplitude * (TAU * f64::from(h.cycles_per_day) * (hour - h.peak_hour) / 24.0).cos())
            .sum();
        self.base + scale * wave
    }

    fn amplitude_sum(&self) -> f64 {
        self.harmonics.iter().map(|h| h.amplitude.abs()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub upstream: [DiurnalProfile; 2],
    pub noise_std: f64,
    /// Downstream delay in grid steps.
    pub lag: usize,
    pub a1: f64,
    pub a2: f64,
    pub wet_probability: f64,
    /// Relative day-to-day amplitude jitter (uniform in `1 ± jitter`).
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 100,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date"),
            upstream: [
                DiurnalProfile::default_with_shift(0.0),
                DiurnalProfile::default_with_shift(1.0),
            ],
            noise_std: 0.3,
            lag: 2,
            a1: 0.9,
            a2: 0.9,
            wet_probability: 0.35,
            jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.days == 0 {
            return bad("days must be at least 1");
        }
        if !(self.a1 > 0.0 && self.a2 > 0.0) {
            return bad("attenuation factors must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise std must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.wet_probability) {
            return bad("wet probability must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must lie in [0, 1)");
        }
        if self.lag >= SAMPLES_PER_DAY {
            return bad("lag must be shorter than a day");
        }
        for p in &self.upstream {
            if !p.base.is_finite() || p.harmonics.iter().any(|h| !(1..=3).contains(&h.cycles_per_day)) {
                return bad("profiles need a finite base and 1 to 3 cycles per day");
            }
        }
        Ok(())
    }

    /// Whether clean dry-weather flows are guaranteed positive.
    pub fn positive_regime(&self) -> bool {
        self.upstream
            .iter()
            .all(|p| p.base >= 4.0 * (p.amplitude_sum() * (1.0 + self.jitter) + 4.0 * self.noise_std))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub seed: u64,
    pub days: usize,
    pub wet_days: Vec<NaiveDate>,
    pub dry_days: Vec<NaiveDate>,
    pub config: SynthConfig,
}

fn timestamp(date: NaiveDate, slot: usize) -> NaiveDateTime {
    date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(slot as i64 * GRID_MINUTES)
}

/// Generates `config.days` full days of three-channel flow. Channel 3 is the
/// downstream conjunction `a1·up1[t−lag] + a2·up2[t−lag] + noise`.
pub fn gen_dry_weather(config: &SynthConfig) -> Result<(RawSeries, GenerationLog)> {
    config.validate()?;
    let mut day_rng = RngState::derive(config.seed, 0);
    let mut noise_rng = RngState::derive(config.seed, 1);

    let n = config.days * SAMPLES_PER_DAY;
    let lag = config.lag;
    let mut wet = Vec::with_capacity(config.days);
    let mut scales = Vec::with_capacity(config.days);
    let mut storms = Vec::with_capacity(config.days);
    for _ in 0..config.days {
        let is_wet = day_rng.uniform() < config.wet_probability;
        let scale = [0, 1].map(|_| 1.0 + config.jitter * day_rng.uniform_range(-1.0, 1.0));
        let storm = (
            day_rng.uniform_range(0.0, SAMPLES_PER_DAY as f64),
            day_rng.uniform_range(12.0, 48.0),
            day_rng.uniform_range(0.5, 1.5),
        );
        wet.push(is_wet);
        scales.push(scale);
        storms.push(storm);
    }

    // Upstream samples start `lag` steps before the first day so the
    // downstream channel is defined from t = 0.
    let mut up = vec![[0.0f64; 2]; n + lag];
    for (i, u) in up.iter_mut().enumerate() {
        let t = i as i64 - lag as i64;
        let day = t.max(0) as usize / SAMPLES_PER_DAY;
        let slot = t.rem_euclid(SAMPLES_PER_DAY as i64);
        for (k, profile) in config.upstream.iter().enumerate() {
            let mut v = profile.value(slot, scales[day][k]);
            if t >= 0 && wet[day] && (slot as usize) < SAMPLES_PER_DAY - lag {
                let (peak, width, height) = storms[day];
                let z = (slot as f64 - peak) / width;
                v += height * profile.base * (-0.5 * z * z).exp();
            }
            u[k] = v + config.noise_std * noise_rng.normal();
        }
    }

    let mut timestamps = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for t in 0..n {
        let (day, slot) = (t / SAMPLES_PER_DAY, t % SAMPLES_PER_DAY);
        let date = config.start_date + Duration::days(day as i64);
        let [u1, u2] = up[t + lag];
        let [l1, l2] = up[t];
        let down = config.a1 * l1 + config.a2 * l2 + config.noise_std * noise_rng.normal();
        timestamps.push(timestamp(date, slot));
        values.push([Some(u1), Some(u2), Some(down)]);
        flags.push(wet[day]);
    }

    let (mut wet_days, mut dry_days) = (Vec::new(), Vec::new());
    for (d, &w) in wet.iter().enumerate() {
        let date = config.start_date + Duration::days(d as i64);
        if w {
            wet_days.push(date)
        } else {
            dry_days.push(date)
        }
    }
    let series = RawSeries {
        timestamps,
        values,
        wet_flags: Some(flags),
    };
    let log = GenerationLog {
        seed: config.seed,
        days: config.days,
        wet_days,
        dry_days,
        config: config.clone(),
    };
    Ok((series, log))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    Flatline,
    Offset,
    Drift,
    NoiseBurst,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::Spike,
        AnomalyKind::Flatline,
        AnomalyKind::Offset,
        AnomalyKind::Drift,
        AnomalyKind::NoiseBurst,
    ];

    fn name(self) -> &'static str {
        match self {
            AnomalyKind::Spike => "spike",
            AnomalyKind::Flatline => "flatline",
            AnomalyKind::Offset => "offset",
            AnomalyKind::Drift => "drift",
            AnomalyKind::NoiseBurst => "noise_burst",
        }
    }

    /// Default (length, magnitude) used by [`random_specs`].
    pub fn default_shape(self) -> (usize, f64) {
        match self {
            AnomalyKind::Spike => (1, 8.0),
            AnomalyKind::Flatline => (48, 1.0),
            AnomalyKind::Offset => (24, 3.0),
            AnomalyKind::Drift => (36, 4.0),
            AnomalyKind::NoiseBurst => (24, 3.0),
        }
    }
}

/// One injected anomaly, located by day and sample index within that day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Zero-based channel index.
    pub channel: usize,
    pub date: NaiveDate,
    pub start: usize,
    pub length: usize,
    /// In units of the channel's clean dry-weather std.
    pub magnitude: f64,
}

impl AnomalySpec {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionLog {
    pub seed: u64,
    /// Clean dry-weather std per channel used to scale magnitudes.
    pub sigma: [f64; CHANNELS],
    pub specs: Vec<AnomalySpec>,
}

/// Population std of each channel over present dry-weather readings.
pub fn dry_channel_std(series: &RawSeries) -> [f64; CHANNELS] {
    let mut out = [0.0; CHANNELS];
    for (c, o) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = series
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| !series.wet_flags.as_ref().is_some_and(|w| w[*i]))
            .filter_map(|(_, r)| r[c])
            .collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        *o = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    }
    out
}

/// Applies `specs` to a copy of `series` and returns it with one
/// [`SegmentLabels`] per affected day (spans canonicalized, notes name the
/// anomaly kind and channel).
///
/// A flatline holds the reading immediately preceding its span, so every
/// labeled index differs from the clean series.
pub fn inject_anomalies(
    series: &RawSeries,
    specs: &[AnomalySpec],
    seed: u64,
) -> Result<(RawSeries, Vec<SegmentLabels>, InjectionLog)> {
    let sigma = dry_channel_std(series);
    let rows: HashMap<NaiveDateTime, usize> = series.timestamps.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    let mut ranges: Vec<(usize, usize, usize)> = Vec::with_capacity(specs.len());
    for spec in specs {
        if spec.channel >= CHANNELS {
            return Err(Error::InvalidArgument(format!("channel {} out of range", spec.channel)));
        }
        if spec.length == 0 || spec.end() > SAMPLES_PER_DAY {
            return Err(Error::InvalidSpan {
                start: spec.start,
                end: spec.end(),
                len: SAMPLES_PER_DAY,
            });
        }
        if !(spec.magnitude > 0.0 && spec.magnitude.is_finite()) {
            return Err(Error::InvalidArgument("anomaly magnitude must be positive".into()));
        }
        let first = *rows
            .get(&timestamp(spec.date, spec.start))
            .ok_or_else(|| Error::InvalidArgument(format!("{} slot {} is not in the series", spec.date, spec.start)))?;
        let last = first + spec.length - 1;
        if last >= series.len() || series.timestamps[last] != timestamp(spec.date, spec.end() - 1) {
            return Err(Error::InvalidArgument(format!(
                "{} span is not contiguous in the series",
                spec.date
            )));
        }
        if let Some(w) = &series.wet_flags {
            if w[first..=last].iter().any(|&f| f) {
                return Err(Error::InvalidArgument(format!(
                    "anomaly on {} touches a wet day",
                    spec.date
                )));
            }
        }
        if spec.kind == AnomalyKind::Flatline && first == 0 {
            return Err(Error::InvalidArgument("flatline needs a preceding sample".into()));
        }
        ranges.push((spec.channel, first, last + 1));
    }
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.0 == b.0 && a.1 < b.2 && b.1 < a.2 {
                return Err(Error::InvalidArgument(format!(
                    "overlapping anomalies on channel {}",
                    a.0
                )));
            }
        }
    }

    let mut rng = RngState::derive(seed, 3);
    let mut out = series.clone();
    let mut per_day: BTreeMap<NaiveDate, Vec<LabelSpan>> = BTreeMap::new();
    for (spec, &(c, first, end)) in specs.iter().zip(&ranges) {
        let step = spec.magnitude * sigma[c];
        let hold = series.values[first - usize::from(first > 0)][c];
        for (k, row) in out.values[first..end].iter_mut().enumerate() {
            let Some(v) = row[c] else { continue };
            row[c] = Some(match spec.kind {
                AnomalyKind::Spike | AnomalyKind::Offset => v + step,
                AnomalyKind::Flatline => hold.unwrap_or(v),
                AnomalyKind::Drift => v + step * (k + 1) as f64 / spec.length as f64,
                AnomalyKind::NoiseBurst => v + step * rng.normal(),
            });
        }
        per_day.entry(spec.date).or_default().push(LabelSpan {
            start: spec.start,
            end: spec.end(),
            note: Some(format!("{} ch{}", spec.kind.name(), c + 1)),
        });
    }

    let saved_at = Utc::now();
    let labels = per_day
        .into_iter()
        .map(|(date, spans)| {
            Ok(SegmentLabels {
                segment_id: date.format("%Y-%m-%d").to_string(),
                spans: canonicalize_spans(&spans, SAMPLES_PER_DAY)?,
                annotator: GENERATOR_ANNOTATOR.into(),
                saved_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log = InjectionLog {
        seed,
        sigma,
        specs: specs.to_vec(),
    };
    Ok((out, labels, log))
}

/// Draws `per_day` anomalies on each of `dates`, cycling through `kinds`.
/// Spans on one day never overlap and keep a 12-step gap; flatlines are
/// placed on the morning rise where a held value is visible.
pub fn random_specs(dates: &[NaiveDate], per_day: usize, kinds: &[AnomalyKind], seed: u64) -> Result<Vec<AnomalySpec>> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no anomaly kinds given".into()));
    }
    const GAP: usize = 12;
    let mut rng = RngState::derive(seed, 4);
    let mut specs = Vec::new();
    let mut next_kind = 0;
    for &date in dates {
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut day_kinds: Vec<AnomalyKind> = (0..per_day).map(|i| kinds[(next_kind + i) % kinds.len()]).collect();
        next_kind += per_day;
        // Long spans first so short ones fill the gaps.
        day_kinds.sort_by_key(|k| std::cmp::Reverse(k.default_shape().0));
        for kind in day_kinds {
            let (length, magnitude) = kind.default_shape();
            let (lo, hi) = match kind {
                AnomalyKind::Flatline => (36, 66),
                _ => (1, SAMPLES_PER_DAY - length),
            };
            let placed = (0..200).find_map(|_| {
                let start = lo + rng.index(hi - lo + 1);
                let end = start + length;
                let clear = taken.iter().all(|&(s, e)| end + GAP <= s || e + GAP <= start);
                clear.then_some(start)
            });
            let start =
                placed.ok_or_else(|| Error::InvalidArgument(format!("cannot place {per_day} anomalies on {date}")))?;
            taken.push((start, start + length));
            specs.push(AnomalySpec {
                kind,
                channel: rng.index(CHANNELS),
                date,
                start,
                length,
                magnitude,
            });
        }
    }
    Ok(specs)
}
