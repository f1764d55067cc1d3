//! Smart-meter readings: batching, CSV I/O and a synthetic appliance-level
//! load generator with ground-truth ON/OFF states.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Fifteen-minute reporting cadence.
pub const DEFAULT_PERIOD_SECONDS: u32 = 900;
/// One day of fifteen-minute slots.
pub const DEFAULT_BATCH_LEN: usize = 96;

pub const CSV_HEADER: [&str; 3] = ["meter_id", "timestamp", "watts"];

pub const SYNTHETIC_METER_ID: &str = "synthetic";

#[derive(Debug, Error)]
pub enum MeterDataError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: invalid reading {value} W (must be finite and non-negative)")]
    InvalidReading { line: u64, value: f64 },
    #[error("line {line}: timestamp {timestamp} of meter {meter_id} does not advance past the previous reading")]
    NonMonotone {
        line: u64,
        meter_id: String,
        timestamp: String,
    },
    #[error("line {line}: rows of meter {meter_id} are not contiguous")]
    NonContiguousMeter { line: u64, meter_id: String },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid appliance profile {name:?}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("synthetic generation needs at least one appliance profile")]
    NoProfiles,
    #[error("ground truth does not match readings: {0}")]
    TruthMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MeterDataError> = std::result::Result<T, E>;

/// A contiguous run of `t` power readings from one meter at a fixed cadence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingBatch {
    meter_id: String,
    start_time: DateTime<Utc>,
    period_seconds: u32,
    values: Vec<f64>,
}

impl ReadingBatch {
    pub fn new(
        meter_id: impl Into<String>,
        start_time: DateTime<Utc>,
        period_seconds: u32,
        values: Vec<f64>,
    ) -> Result<Self> {
        if period_seconds == 0 {
            return Err(MeterDataError::InvalidBatch(
                "period_seconds must be positive".into(),
            ));
        }
        if values.len() < 2 {
            return Err(MeterDataError::InvalidBatch(format!(
                "a batch needs at least 2 readings, got {}",
                values.len()
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(MeterDataError::InvalidBatch(format!(
                "reading {k} is {v}; readings must be finite and non-negative"
            )));
        }
        Ok(Self {
            meter_id: meter_id.into(),
            start_time,
            period_seconds,
            values,
        })
    }

    /// Same meter and timing, different readings.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(MeterDataError::InvalidBatch(format!(
                "replacement has {} readings, batch has {}",
                values.len(),
                self.values.len()
            )));
        }
        Self::new(
            self.meter_id.clone(),
            self.start_time,
            self.period_seconds,
            values,
        )
    }

    pub fn meter_id(&self) -> &str {
        &self.meter_id
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn period_seconds(&self) -> u32 {
        self.period_seconds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when this batch is shorter than the configured batch length,
    /// i.e. it is the trailing remainder of a run of readings.
    pub fn is_partial(&self, batch_len: usize) -> bool {
        self.values.len() < batch_len
    }

    pub fn timestamp(&self, slot: usize) -> DateTime<Utc> {
        self.start_time + Duration::seconds(slot as i64 * i64::from(self.period_seconds))
    }
}

impl AsRef<[f64]> for ReadingBatch {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Parameters of one simulated appliance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApplianceProfile {
    pub name: String,
    pub rated_power_watts: f64,
    /// Mean ON sojourn in slots. `f64::INFINITY` keeps the appliance ON forever.
    pub mean_on_duration_slots: f64,
    /// Mean OFF sojourn in slots. `f64::INFINITY` keeps the appliance OFF forever.
    pub mean_off_duration_slots: f64,
    pub power_jitter_fraction: f64,
    /// Forces the state of the first slot; `None` draws it from the
    /// stationary ON probability.
    pub initial_state: Option<bool>,
}

impl ApplianceProfile {
    pub fn new(
        name: impl Into<String>,
        rated_power_watts: f64,
        mean_on_duration_slots: f64,
        mean_off_duration_slots: f64,
        power_jitter_fraction: f64,
    ) -> Result<Self> {
        let profile = Self {
            name: name.into(),
            rated_power_watts,
            mean_on_duration_slots,
            mean_off_duration_slots,
            power_jitter_fraction,
            initial_state: None,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_initial_state(mut self, on: bool) -> Self {
        self.initial_state = Some(on);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(MeterDataError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.is_empty() {
            return fail("name must not be empty");
        }
        if !(self.rated_power_watts.is_finite() && self.rated_power_watts > 0.0) {
            return fail("rated power must be a positive finite number");
        }
        // Infinite means are allowed: they pin the appliance in one state.
        if !(self.mean_on_duration_slots > 0.0) || !(self.mean_off_duration_slots > 0.0) {
            return fail("mean ON/OFF durations must be positive");
        }
        if !(0.0..1.0).contains(&self.power_jitter_fraction) {
            return fail("jitter fraction must lie in [0, 1)");
        }
        Ok(())
    }

    fn stationary_on_probability(&self) -> f64 {
        match (
            self.mean_on_duration_slots.is_infinite(),
            self.mean_off_duration_slots.is_infinite(),
        ) {
            (true, true) => 0.5,
            (true, false) => 1.0,
            (false, true) => 0.0,
            (false, false) => {
                self.mean_on_duration_slots
                    / (self.mean_on_duration_slots + self.mean_off_duration_slots)
            }
        }
    }
}

/// Four-appliance household used as the reference scenario: a cycling
/// fridge, two lights and a washer-dryer, at 15-minute slots.
pub fn standard_profiles() -> Vec<ApplianceProfile> {
    [
        ("fridge", 100.0, 3.0, 5.0),
        ("light1", 60.0, 12.0, 36.0),
        ("washer_dryer", 40.0, 6.0, 42.0),
        ("light2", 15.0, 8.0, 24.0),
    ]
    .into_iter()
    .map(|(name, watts, on, off)| {
        ApplianceProfile::new(name, watts, on, off, 0.05).expect("reference profiles are valid")
    })
    .collect()
}

/// Per-slot switch probability of a geometric sojourn with the given mean.
fn leave_probability(mean_slots: f64) -> f64 {
    if mean_slots.is_infinite() {
        0.0
    } else {
        (1.0 / mean_slots).min(1.0)
    }
}

/// ON/OFF state of one appliance over the slots of one batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruthStates {
    pub appliance_name: String,
    pub states: Vec<bool>,
}

/// Output of [`generate_synthetic`]: `truth[b][j]` belongs to `batches[b]`
/// and appliance `j` in profile order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub batches: Vec<ReadingBatch>,
    pub truth: Vec<Vec<GroundTruthStates>>,
}

pub fn synthetic_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

/// Simulates `batches` consecutive days of `t` slots for one household.
pub fn generate_synthetic(
    profiles: &[ApplianceProfile],
    t: usize,
    batches: usize,
    seed: u64,
) -> Result<SyntheticData> {
    generate_synthetic_meter(SYNTHETIC_METER_ID, profiles, t, batches, seed)
}

/// Like [`generate_synthetic`] but with an explicit meter id, so several
/// simulated consumers can share a timeline.
pub fn generate_synthetic_meter(
    meter_id: &str,
    profiles: &[ApplianceProfile],
    t: usize,
    batches: usize,
    seed: u64,
) -> Result<SyntheticData> {
    if profiles.is_empty() {
        return Err(MeterDataError::NoProfiles);
    }
    if t < 2 {
        return Err(MeterDataError::InvalidBatch(format!(
            "batch length must be at least 2, got {t}"
        )));
    }
    for p in profiles {
        p.validate()?;
    }

    let total = t * batches;
    let mut power = vec![0.0f64; total];
    let mut states: Vec<Vec<bool>> = Vec::with_capacity(profiles.len());

    for (j, profile) in profiles.iter().enumerate() {
        // One stream per appliance so adding appliances leaves the others alone.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);

        let p_off = leave_probability(profile.mean_on_duration_slots);
        let p_on = leave_probability(profile.mean_off_duration_slots);
        let jitter = profile.power_jitter_fraction;

        let mut on = match profile.initial_state {
            Some(s) => s,
            None => rng.random_bool(profile.stationary_on_probability()),
        };
        let mut seq = Vec::with_capacity(total);
        for slot in power.iter_mut() {
            seq.push(on);
            if on {
                let factor = if jitter > 0.0 {
                    1.0 + rng.random_range(-jitter..=jitter)
                } else {
                    1.0
                };
                *slot += profile.rated_power_watts * factor;
            }
            on = if on {
                !rng.random_bool(p_off)
            } else {
                rng.random_bool(p_on)
            };
        }
        states.push(seq);
    }

    let epoch = synthetic_epoch();
    let mut out_batches = Vec::with_capacity(batches);
    let mut truth = Vec::with_capacity(batches);
    for b in 0..batches {
        let range = b * t..(b + 1) * t;
        let start = epoch + Duration::seconds((b * t) as i64 * i64::from(DEFAULT_PERIOD_SECONDS));
        out_batches.push(ReadingBatch::new(
            meter_id,
            start,
            DEFAULT_PERIOD_SECONDS,
            power[range.clone()].to_vec(),
        )?);
        truth.push(
            profiles
                .iter()
                .zip(&states)
                .map(|(p, s)| GroundTruthStates {
                    appliance_name: p.name.clone(),
                    states: s[range.clone()].to_vec(),
                })
                .collect(),
        );
    }
    Ok(SyntheticData {
        batches: out_batches,
        truth,
    })
}

fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_timestamp(raw: &str, line: u64) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw)
        .map(|ts| ts.with_timezone(&Utc))
        .map_err(|e| MeterDataError::Malformed {
            line,
            message: format!("bad timestamp {raw:?}: {e}"),
        })
}

struct Row {
    line: u64,
    time: DateTime<Utc>,
    watts: f64,
}

/// Reads `meter_id,timestamp,watts` rows (header optional) and cuts each
/// meter's uniformly spaced runs into batches of `batch_len` readings.
///
/// A change of spacing inside a meter's rows starts a new run. The trailing
/// remainder of a run is returned as a shorter batch; a remainder of a single
/// reading cannot form a batch and is dropped.
pub fn read_csv<R: Read>(reader: R, batch_len: usize) -> Result<Vec<ReadingBatch>> {
    if batch_len < 2 {
        return Err(MeterDataError::InvalidBatch(format!(
            "batch length must be at least 2, got {batch_len}"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut out = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut current: Option<(String, Vec<Row>)> = None;
    let mut first = true;

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if first {
            first = false;
            if record.iter().eq(CSV_HEADER.iter().copied()) {
                continue;
            }
        }
        if record.len() != 3 {
            return Err(MeterDataError::Malformed {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let meter = record[0].to_string();
        if meter.is_empty() {
            return Err(MeterDataError::Malformed {
                line,
                message: "empty meter id".into(),
            });
        }
        let time = parse_timestamp(&record[1], line)?;
        let watts: f64 = record[2].parse().map_err(|_| MeterDataError::Malformed {
            line,
            message: format!("bad watts value {:?}", &record[2]),
        })?;
        if !watts.is_finite() || watts < 0.0 {
            return Err(MeterDataError::InvalidReading { line, value: watts });
        }

        let switch = match &current {
            Some((m, _)) => *m != meter,
            None => true,
        };
        if switch {
            if let Some((m, rows)) = current.take() {
                batch_meter_rows(&m, &rows, batch_len, &mut out)?;
            }
            if !seen.insert(meter.clone()) {
                return Err(MeterDataError::NonContiguousMeter {
                    line,
                    meter_id: meter,
                });
            }
            current = Some((meter, Vec::new()));
        }
        let (m, rows) = current.as_mut().expect("meter group present");
        if let Some(prev) = rows.last() {
            if time <= prev.time {
                return Err(MeterDataError::NonMonotone {
                    line,
                    meter_id: m.clone(),
                    timestamp: format_timestamp(time),
                });
            }
        }
        rows.push(Row { line, time, watts });
    }
    if let Some((m, rows)) = current.take() {
        batch_meter_rows(&m, &rows, batch_len, &mut out)?;
    }
    Ok(out)
}

fn batch_meter_rows(
    meter: &str,
    rows: &[Row],
    batch_len: usize,
    out: &mut Vec<ReadingBatch>,
) -> Result<()> {
    let mut start = 0;
    while start < rows.len() {
        // Extend the run while spacing stays equal to the first gap.
        let mut end = start + 1;
        let mut spacing: Option<i64> = None;
        while end < rows.len() {
            let gap = (rows[end].time - rows[end - 1].time).num_milliseconds();
            match spacing {
                None => spacing = Some(gap),
                Some(s) if s == gap => {}
                Some(_) => break,
            }
            end += 1;
        }
        let run = &rows[start..end];
        if let Some(gap_ms) = spacing {
            if gap_ms % 1000 != 0 {
                return Err(MeterDataError::Malformed {
                    line: run[1].line,
                    message: format!("reading spacing of {gap_ms} ms is not a whole number of seconds"),
                });
            }
            let period = u32::try_from(gap_ms / 1000).map_err(|_| MeterDataError::Malformed {
                line: run[1].line,
                message: "reading spacing too large".into(),
            })?;
            for chunk in run.chunks(batch_len) {
                if chunk.len() < 2 {
                    continue;
                }
                out.push(ReadingBatch::new(
                    meter,
                    chunk[0].time,
                    period,
                    chunk.iter().map(|r| r.watts).collect(),
                )?);
            }
        }
        start = end;
    }
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>, batch_len: usize) -> Result<Vec<ReadingBatch>> {
    read_csv(File::open(path)?, batch_len)
}

pub fn write_csv_to<W: Write>(batches: &[ReadingBatch], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for batch in batches {
        for (slot, v) in batch.values.iter().enumerate() {
            // `{}` on f64 prints the shortest string that parses back exactly.
            wtr.write_record([
                batch.meter_id.as_str(),
                &format_timestamp(batch.timestamp(slot)),
                &format!("{v}"),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv(batches: &[ReadingBatch], path: impl AsRef<Path>) -> Result<()> {
    write_csv_to(batches, File::create(path)?)
}

/// Writes ground truth as `meter_id,timestamp,<appliance>...` with 0/1 cells,
/// one row per reading of `batches`.
pub fn write_truth_csv_to<W: Write>(
    batches: &[ReadingBatch],
    truth: &[Vec<GroundTruthStates>],
    writer: W,
) -> Result<()> {
    if batches.len() != truth.len() {
        return Err(MeterDataError::TruthMismatch(format!(
            "{} batches but {} truth entries",
            batches.len(),
            truth.len()
        )));
    }
    let names: Vec<&str> = truth
        .first()
        .map(|t| t.iter().map(|g| g.appliance_name.as_str()).collect())
        .unwrap_or_default();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["meter_id", "timestamp"];
    header.extend(&names);
    wtr.write_record(&header)?;
    for (batch, states) in batches.iter().zip(truth) {
        if states.len() != names.len()
            || states
                .iter()
                .zip(&names)
                .any(|(g, n)| g.appliance_name != *n || g.states.len() != batch.len())
        {
            return Err(MeterDataError::TruthMismatch(format!(
                "truth for batch starting {} does not cover the same appliances and slots",
                format_timestamp(batch.start_time)
            )));
        }
        for slot in 0..batch.len() {
            let mut row = vec![batch.meter_id.clone(), format_timestamp(batch.timestamp(slot))];
            row.extend(
                states
                    .iter()
                    .map(|g| if g.states[slot] { "1" } else { "0" }.to_string()),
            );
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_truth_csv(
    batches: &[ReadingBatch],
    truth: &[Vec<GroundTruthStates>],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_truth_csv_to(batches, truth, File::create(path)?)
}

/// Reads a truth file written by [`write_truth_csv`] and splits it to line up
/// with `batches`. Every truth row must carry the meter id and timestamp of
/// the reading it annotates.
pub fn read_truth_csv<R: Read>(
    reader: R,
    batches: &[ReadingBatch],
) -> Result<Vec<Vec<GroundTruthStates>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "meter_id" || &header[1] != "timestamp" {
        return Err(MeterDataError::Malformed {
            line: 1,
            message: "truth header must be meter_id,timestamp,<appliance>...".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();

    let mut records = rdr.records();
    let mut out = Vec::with_capacity(batches.len());
    for batch in batches {
        let mut states: Vec<Vec<bool>> = vec![Vec::with_capacity(batch.len()); names.len()];
        for slot in 0..batch.len() {
            let record = records.next().ok_or_else(|| {
                MeterDataError::TruthMismatch(format!(
                    "truth ends before reading {} of meter {}",
                    format_timestamp(batch.timestamp(slot)),
                    batch.meter_id
                ))
            })??;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != names.len() + 2 {
                return Err(MeterDataError::Malformed {
                    line,
                    message: format!("expected {} fields, found {}", names.len() + 2, record.len()),
                });
            }
            let time = parse_timestamp(&record[1], line)?;
            if record[0] != batch.meter_id || time != batch.timestamp(slot) {
                return Err(MeterDataError::TruthMismatch(format!(
                    "line {line}: expected meter {} at {}",
                    batch.meter_id,
                    format_timestamp(batch.timestamp(slot))
                )));
            }
            for (k, cell) in record.iter().skip(2).enumerate() {
                let on = match cell {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(MeterDataError::Malformed {
                            line,
                            message: format!("state must be 0 or 1, found {other:?}"),
                        })
                    }
                };
                states[k].push(on);
            }
        }
        out.push(
            names
                .iter()
                .zip(states)
                .map(|(n, s)| GroundTruthStates {
                    appliance_name: n.clone(),
                    states: s,
                })
                .collect(),
        );
    }
    Ok(out)
}

pub fn load_truth_csv(
    path: impl AsRef<Path>,
    batches: &[ReadingBatch],
) -> Result<Vec<Vec<GroundTruthStates>>> {
    read_truth_csv(File::open(path)?, batches)
}
