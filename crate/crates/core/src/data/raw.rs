use std::fmt::Write as _;

use chrono::{NaiveDateTime, Timelike};

use crate::{Error, Result, CHANNELS, GRID_MINUTES};

/// One row of flow readings; `None` marks a missing cell.
pub type Reading = [Option<f64>; CHANNELS];

/// Timestamped three-channel flow record on the 5-minute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<Reading>,
    pub wet_flags: Option<Vec<bool>>,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Checks ordering, grid alignment and column lengths.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.timestamps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} timestamps but {} value rows",
                self.timestamps.len(),
                self.values.len()
            )));
        }
        if let Some(flags) = &self.wet_flags {
            if flags.len() != self.timestamps.len() {
                return Err(Error::InvalidArgument("wet flag count differs from row count".into()));
            }
        }
        for (i, ts) in self.timestamps.iter().enumerate() {
            check_on_grid(ts).map_err(|message| Error::Parse { line: i + 2, message })?;
            if i > 0 && *ts <= self.timestamps[i - 1] {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("timestamp {ts} is not after {}", self.timestamps[i - 1]),
                });
            }
        }
        Ok(())
    }
}

fn check_on_grid(ts: &NaiveDateTime) -> std::result::Result<(), String> {
    if ts.second() != 0 || ts.nanosecond() != 0 || i64::from(ts.minute()) % GRID_MINUTES != 0 {
        return Err(format!("timestamp {ts} is off the {GRID_MINUTES}-minute grid"));
    }
    Ok(())
}

fn parse_timestamp(field: &str) -> Option<NaiveDateTime> {
    let field = field.trim();
    field.parse::<NaiveDateTime>().ok().or_else(|| {
        ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(field, fmt).ok())
    })
}

/// Parses `timestamp,sensor_1,sensor_2,sensor_3[,wet_weather]`.
///
/// Empty flow cells become missing readings. Errors carry the 1-based line
/// number of the offending row (the header is line 1).
pub fn parse_raw_csv<R: std::io::Read>(input: R) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let has_wet = match names.as_slice() {
        ["timestamp", "sensor_1", "sensor_2", "sensor_3"] => false,
        ["timestamp", "sensor_1", "sensor_2", "sensor_3", "wet_weather"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
            })
        }
    };
    let columns = names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut wet_flags = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        if record.len() != columns {
            return Err(err(format!("expected {columns} columns, found {}", record.len())));
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| err(format!("malformed timestamp {:?}", &record[0])))?;
        check_on_grid(&ts).map_err(err)?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(err(format!("timestamp {ts} is not after {prev}")));
            }
        }
        let mut row = [None; CHANNELS];
        for (c, cell) in row.iter_mut().enumerate() {
            let text = &record[c + 1];
            if !text.is_empty() {
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(format!("non-numeric flow value {text:?} in sensor_{}", c + 1)))?;
                if !v.is_finite() {
                    return Err(err(format!("non-finite flow value {text:?}")));
                }
                *cell = Some(v);
            }
        }
        if has_wet {
            wet_flags.push(match &record[4] {
                "0" | "" => false,
                "1" => true,
                other => return Err(err(format!("wet_weather must be 0 or 1, found {other:?}"))),
            });
        }
        timestamps.push(ts);
        values.push(row);
    }
    Ok(RawSeries {
        timestamps,
        values,
        wet_flags: has_wet.then_some(wet_flags),
    })
}

pub fn write_raw_csv(series: &RawSeries) -> String {
    let mut out = String::with_capacity(series.len() * 48);
    out.push_str("timestamp,sensor_1,sensor_2,sensor_3");
    if series.wet_flags.is_some() {
        out.push_str(",wet_weather");
    }
    out.push('\n');
    for (i, (ts, row)) in series.timestamps.iter().zip(&series.values).enumerate() {
        let _ = write!(out, "{}", ts.format("%Y-%m-%dT%H:%M:%S"));
        for v in row {
            out.push(',');
            if let Some(v) = v {
                let _ = write!(out, "{v}");
            }
        }
        if let Some(flags) = &series.wet_flags {
            out.push_str(if flags[i] { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

/// Replaces every reading at a wet-flagged timestamp with a missing marker.
pub fn exclude_wet_weather(series: &RawSeries) -> RawSeries {
    let mut out = series.clone();
    if let Some(flags) = &series.wet_flags {
        for (row, &wet) in out.values.iter_mut().zip(flags) {
            if wet {
                *row = [None; CHANNELS];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    const TWO_ROWS: &str = "timestamp,sensor_1,sensor_2,sensor_3\n\
        2017-01-01T00:00:00,1.5,2.0,3.25\n\
        2017-01-01T00:05:00,1.0,,3.0\n";

    #[test]
    fn parses_well_formed_rows() {
        let s = parse_raw_csv(TWO_ROWS.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.values[0], [Some(1.5), Some(2.0), Some(3.25)]);
        assert_eq!(s.values[1], [Some(1.0), None, Some(3.0)]);
        assert!(s.wet_flags.is_none());
    }

    #[test]
    fn malformed_timestamp_names_line() {
        let text = "timestamp,sensor_1,sensor_2,sensor_3\nnot-a-date,1,2,3\n";
        match parse_raw_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("timestamp"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_errors_carry_line_numbers() {
        let cases = [
            ("2017-01-01T00:00:00,1,x,3\n", 2),
            ("2017-01-01T00:05:00,1,2,3\n2017-01-01T00:00:00,1,2,3\n", 3),
            ("2017-01-01T00:00:00,1,2,3\n2017-01-01T00:05:00,1,2\n", 3),
            ("2017-01-01T00:03:00,1,2,3\n", 2),
        ];
        for (body, expected) in cases {
            let text = format!("timestamp,sensor_1,sensor_2,sensor_3\n{body}");
            match parse_raw_csv(text.as_bytes()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected, "{body}"),
                other => panic!("unexpected {other:?} for {body}"),
            }
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let text = "time,a,b,c\n2017-01-01T00:00:00,1,2,3\n";
        assert!(matches!(
            parse_raw_csv(text.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn two_years_of_rows() {
        let start = NaiveDate::from_ymd_opt(2017, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let mut text = String::from("timestamp,sensor_1,sensor_2,sensor_3,wet_weather\n");
        let mut generated = 0usize;
        let mut ts = start;
        let end = NaiveDate::from_ymd_opt(2019, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        while ts < end {
            let _ = writeln!(text, "{},1,2,3,0", ts.format("%Y-%m-%dT%H:%M:%S"));
            generated += 1;
            ts += Duration::minutes(5);
        }
        assert_eq!(generated, 2 * 365 * 288);
        let s = parse_raw_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 210_240);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn write_then_parse_round_trips() {
        let text = "timestamp,sensor_1,sensor_2,sensor_3,wet_weather\n\
            2017-01-01T00:00:00,1.5,,3.25,1\n\
            2017-01-01T00:10:00,0.1,2,3,0\n";
        let s = parse_raw_csv(text.as_bytes()).unwrap();
        assert_eq!(parse_raw_csv(write_raw_csv(&s).as_bytes()).unwrap(), s);
    }

    fn flagged(flags: Vec<bool>) -> RawSeries {
        let start = NaiveDate::from_ymd_opt(2018, 3, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let n = flags.len();
        RawSeries {
            timestamps: (0..n).map(|i| start + Duration::minutes(5 * i as i64)).collect(),
            values: (0..n).map(|i| [Some(i as f64), Some(1.0), Some(2.0)]).collect(),
            wet_flags: Some(flags),
        }
    }

    #[test]
    fn wet_exclusion_cases() {
        let dry = flagged(vec![false; 10]);
        assert_eq!(exclude_wet_weather(&dry), dry);

        let wet = exclude_wet_weather(&flagged(vec![true; 10]));
        assert_eq!(wet.missing_count(), 30);
        assert_eq!(wet.timestamps.len(), 10);

        let mut flags = vec![false; 3 * 288];
        flags[288..576].fill(true);
        let out = exclude_wet_weather(&flagged(flags));
        assert_eq!(out.missing_count(), 288 * 3);
        assert!(out.values[288..576].iter().all(|r| r.iter().all(Option::is_none)));
        assert_eq!(exclude_wet_weather(&out), out);
    }

    #[test]
    fn no_flags_is_identity() {
        let mut s = flagged(vec![true; 4]);
        s.wet_flags = None;
        assert_eq!(exclude_wet_weather(&s), s);
    }
}
