//! Ground-truth pollutant fields per zone and round.
//!
//! A [`TraceSet`] is built once (from CSV or the synthetic generator),
//! interpolated to the round length, overlaid with injected events and then
//! shared read-only by every simulation run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{PollutantKind, SimConfig, MINUTES_PER_DAY};
use crate::rng::{Purpose, StreamKey};

const CSV_HEADER: [&str; 4] = ["timestamp", "zone_id", "pollutant", "value"];
const EVENT_HEADER: [&str; 5] = [
    "zone_id",
    "start_round",
    "end_round",
    "pollutant",
    "magnitude",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("negative concentration line {line}")]
    Negative { line: u64 },
    #[error("line {line}: unknown pollutant {label:?}")]
    UnknownPollutant { line: u64, label: String },
    #[error("line {line}: zone {zone} outside 0..{n_zones}")]
    ZoneOutOfRange { line: u64, zone: u32, n_zones: u32 },
    #[error("line {line}: duplicate cell (timestamp={timestamp}, zone={zone}, {pollutant})")]
    Duplicate {
        line: u64,
        timestamp: String,
        zone: u32,
        pollutant: PollutantKind,
    },
    #[error("missing (hour={hour}, zone={zone}, {pollutant})")]
    Missing {
        hour: usize,
        zone: u32,
        pollutant: PollutantKind,
    },
    #[error("timestamps are not hourly and contiguous: gap after {after}")]
    Gap { after: String },
    #[error("need at least 2 hourly frames to interpolate, got {0}")]
    TooFewFrames(usize),
    #[error("round_minutes {0} does not divide 60")]
    BadStep(u32),
    #[error("trace has {have} rounds, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("invalid event: {0}")]
    BadEvent(String),
}

/// Concentrations for every (zone, pollutant) at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub round_index: u32,
    /// Row-major `[zone][pollutant]`.
    pub values: Vec<f64>,
}

impl TraceFrame {
    pub fn get(&self, zone: u32, pollutant: PollutantKind) -> f64 {
        self.values[zone as usize * PollutantKind::COUNT + pollutant.index()]
    }

    pub fn zone(&self, zone: u32) -> &[f64] {
        let start = zone as usize * PollutantKind::COUNT;
        &self.values[start..start + PollutantKind::COUNT]
    }

    fn get_mut(&mut self, zone: u32, pollutant: PollutantKind) -> &mut f64 {
        &mut self.values[zone as usize * PollutantKind::COUNT + pollutant.index()]
    }
}

/// An injected high-pollution episode over `[start_round, end_round)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub zone_id: u32,
    pub start_round: u32,
    pub end_round: u32,
    pub pollutant: PollutantKind,
    pub magnitude: f64,
}

impl EventSpec {
    pub fn covers(&self, round: u32) -> bool {
        round >= self.start_round && round < self.end_round
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub n_zones: u32,
    /// Minutes between consecutive frames.
    pub step_minutes: u32,
    /// Timestamp of frame 0.
    pub start: DateTime<Utc>,
    pub frames: Vec<TraceFrame>,
    pub events: Vec<EventSpec>,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn steps_per_day(&self) -> u32 {
        MINUTES_PER_DAY / self.step_minutes
    }

    /// Drops frames beyond `rounds` along with any event that starts past the end.
    pub fn truncate(mut self, rounds: usize) -> TraceSet {
        self.frames.truncate(rounds);
        let end = rounds as u32;
        self.events.retain(|e| e.start_round < end);
        for e in &mut self.events {
            e.end_round = e.end_round.min(end);
        }
        self
    }

    /// SHA-256 over the frame values and events, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.n_zones.to_le_bytes());
        h.update(self.step_minutes.to_le_bytes());
        h.update((self.frames.len() as u64).to_le_bytes());
        for f in &self.frames {
            h.update(f.round_index.to_le_bytes());
            for v in &f.values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for e in &self.events {
            h.update(e.zone_id.to_le_bytes());
            h.update(e.start_round.to_le_bytes());
            h.update(e.end_round.to_le_bytes());
            h.update([e.pollutant.index() as u8]);
            h.update(e.magnitude.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn default_start() -> DateTime<Utc> {
    DateTime::from_timestamp(1_704_067_200, 0).expect("valid epoch") // 2024-01-01T00:00:00Z
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .map(|n| n.and_utc())
}

fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads an hourly trace in `timestamp,zone_id,pollutant,value` form.
pub fn load_csv(
    path: &Path,
    expected_zones: u32,
    expected_pollutants: &[PollutantKind],
) -> Result<TraceSet, TraceError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_csv(file, expected_zones, expected_pollutants)
}

pub fn read_csv<R: Read>(
    reader: R,
    expected_zones: u32,
    expected_pollutants: &[PollutantKind],
) -> Result<TraceSet, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(TraceError::Header {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut cells: BTreeMap<DateTime<Utc>, Vec<Option<f64>>> = BTreeMap::new();
    let width = expected_zones as usize * PollutantKind::COUNT;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| TraceError::Parse { line, message };
        if rec.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", rec.len())));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| parse_err(format!("bad timestamp {:?}", &rec[0])))?;
        let zone: u32 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("bad zone_id {:?}", &rec[1])))?;
        if zone >= expected_zones {
            return Err(TraceError::ZoneOutOfRange {
                line,
                zone,
                n_zones: expected_zones,
            });
        }
        let pollutant: PollutantKind = rec[2]
            .parse()
            .ok()
            .filter(|p| expected_pollutants.contains(p))
            .ok_or_else(|| TraceError::UnknownPollutant {
                line,
                label: rec[2].to_string(),
            })?;
        let value: f64 = rec[3]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(format!("non-numeric value {:?}", &rec[3])))?;
        if value < 0.0 {
            return Err(TraceError::Negative { line });
        }
        let row = cells.entry(ts).or_insert_with(|| vec![None; width]);
        let slot = &mut row[zone as usize * PollutantKind::COUNT + pollutant.index()];
        if slot.is_some() {
            return Err(TraceError::Duplicate {
                line,
                timestamp: format_timestamp(ts),
                zone,
                pollutant,
            });
        }
        *slot = Some(value);
    }

    let mut frames = Vec::with_capacity(cells.len());
    let mut prev: Option<DateTime<Utc>> = None;
    for (hour, (ts, row)) in cells.iter().enumerate() {
        if let Some(p) = prev {
            if *ts - p != TimeDelta::hours(1) {
                return Err(TraceError::Gap {
                    after: format_timestamp(p),
                });
            }
        }
        prev = Some(*ts);
        let mut values = Vec::with_capacity(width);
        for zone in 0..expected_zones {
            for p in PollutantKind::ALL {
                let cell = row[zone as usize * PollutantKind::COUNT + p.index()];
                match cell {
                    Some(v) => values.push(v),
                    None if expected_pollutants.contains(&p) => {
                        return Err(TraceError::Missing {
                            hour,
                            zone,
                            pollutant: p,
                        })
                    }
                    None => values.push(0.0),
                }
            }
        }
        frames.push(TraceFrame {
            round_index: hour as u32,
            values,
        });
    }

    Ok(TraceSet {
        n_zones: expected_zones,
        step_minutes: 60,
        start: cells.keys().next().copied().unwrap_or_else(default_start),
        frames,
        events: Vec::new(),
    })
}

pub fn write_csv<W: Write>(traces: &TraceSet, writer: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for f in &traces.frames {
        let ts = traces.start
            + TimeDelta::minutes(i64::from(f.round_index) * i64::from(traces.step_minutes));
        let ts = format_timestamp(ts);
        for zone in 0..traces.n_zones {
            for p in PollutantKind::ALL {
                w.write_record([
                    ts.as_str(),
                    &zone.to_string(),
                    p.label(),
                    &f.get(zone, p).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|source| TraceError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_events_csv<W: Write>(events: &[EventSpec], writer: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([
            e.zone_id.to_string(),
            e.start_round.to_string(),
            e.end_round.to_string(),
            e.pollutant.label().to_string(),
            e.magnitude.to_string(),
        ])?;
    }
    w.flush().map_err(|source| TraceError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<EventSpec>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(EVENT_HEADER.iter().copied()) {
        return Err(TraceError::Header {
            expected: EVENT_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| TraceError::Parse {
            line,
            message: format!(
                "bad {what} {:?}",
                field(EVENT_HEADER.iter().position(|h| *h == what).unwrap_or(0))
            ),
        };
        let event = EventSpec {
            zone_id: field(0).parse().map_err(|_| bad("zone_id"))?,
            start_round: field(1).parse().map_err(|_| bad("start_round"))?,
            end_round: field(2).parse().map_err(|_| bad("end_round"))?,
            pollutant: field(3).parse().map_err(|_| TraceError::UnknownPollutant {
                line,
                label: field(3).to_string(),
            })?,
            magnitude: field(4).parse().map_err(|_| bad("magnitude"))?,
        };
        events.push(event);
    }
    Ok(events)
}

/// Linear interpolation of an hourly trace down to `round_minutes` steps.
///
/// Hour-mark values are copied verbatim; values in between are clamped to
/// the bracketing pair so round-off cannot overshoot.
pub fn interpolate(hourly: &TraceSet, round_minutes: u32) -> Result<TraceSet, TraceError> {
    if round_minutes == 0 || 60 % round_minutes != 0 {
        return Err(TraceError::BadStep(round_minutes));
    }
    if hourly.frames.len() < 2 {
        return Err(TraceError::TooFewFrames(hourly.frames.len()));
    }
    let per_hour = (60 / round_minutes) as usize;
    let out_len = (hourly.frames.len() - 1) * per_hour + 1;
    let mut frames = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let hour = i / per_hour;
        let k = i % per_hour;
        let a = &hourly.frames[hour];
        let values = if k == 0 {
            a.values.clone()
        } else {
            let b = &hourly.frames[hour + 1];
            let frac = k as f64 / per_hour as f64;
            a.values
                .iter()
                .zip(&b.values)
                .map(|(&va, &vb)| (va + (vb - va) * frac).clamp(va.min(vb), va.max(vb)))
                .collect()
        };
        frames.push(TraceFrame {
            round_index: i as u32,
            values,
        });
    }
    Ok(TraceSet {
        n_zones: hourly.n_zones,
        step_minutes: round_minutes,
        start: hourly.start,
        frames,
        events: hourly.events.clone(),
    })
}

/// Shape of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Base concentration per pollutant, indexed by [`PollutantKind::index`].
    pub base_levels: [f64; PollutantKind::COUNT],
    /// Zone base levels are the pollutant base times a factor from this range.
    pub zone_factor: (f64, f64),
    /// Diurnal amplitude relative to the zone base.
    pub diurnal_amplitude: f64,
    /// Stationary std of the relative AR(1) noise.
    pub noise_amplitude: f64,
    /// Hour-to-hour AR(1) coefficient.
    pub noise_persistence: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            // PM2.5, PM10 (µg/m³), CO (ppm), NO2, O3, SO2 (µg/m³)
            base_levels: [12.0, 20.0, 0.35, 25.0, 55.0, 4.0],
            zone_factor: (0.8, 1.25),
            diurnal_amplitude: 0.25,
            noise_amplitude: 0.08,
            noise_persistence: 0.9,
        }
    }
}

impl SyntheticParams {
    /// Per-zone base level for one pollutant.
    pub fn zone_base(&self, seed: u64, zone: u32, pollutant: PollutantKind) -> f64 {
        let u = StreamKey::new(seed, Purpose::Trace)
            .node(zone)
            .lane(100 + pollutant.index() as u64)
            .uniform();
        let (lo, hi) = self.zone_factor;
        self.base_levels[pollutant.index()] * (lo + (hi - lo) * u)
    }
}

/// Number of hourly frames needed to cover `cfg.rounds` rounds, plus the closing hour.
pub fn hourly_frames_for(cfg: &SimConfig) -> usize {
    let minutes = cfg.rounds as usize * cfg.round_minutes as usize;
    minutes.div_ceil(60) + 1
}

pub fn generate_synthetic(cfg: &SimConfig, seed: u64) -> TraceSet {
    generate_synthetic_with(cfg, &SyntheticParams::default(), seed)
}

/// Diurnal sinusoid with a zone-specific phase plus mean-reverting noise,
/// clipped at zero, one frame per hour.
pub fn generate_synthetic_with(cfg: &SimConfig, params: &SyntheticParams, seed: u64) -> TraceSet {
    let hours = hourly_frames_for(cfg);
    let nz = cfg.n_zones;
    let mut frames: Vec<TraceFrame> = (0..hours)
        .map(|h| TraceFrame {
            round_index: h as u32,
            values: vec![0.0; nz as usize * PollutantKind::COUNT],
        })
        .collect();
    let rho = params.noise_persistence.clamp(0.0, 0.999_999);
    let innovation = params.noise_amplitude * (1.0 - rho * rho).sqrt();
    for zone in 0..nz {
        let phase =
            StreamKey::new(seed, Purpose::Trace).node(zone).uniform() * std::f64::consts::TAU;
        for p in PollutantKind::ALL {
            let base = params.zone_base(seed, zone, p);
            // photochemical O3 peaks roughly opposite to traffic pollutants
            let offset = if p == PollutantKind::O3 {
                std::f64::consts::PI
            } else {
                0.0
            };
            let mut rng = StreamKey::new(seed, Purpose::Trace)
                .node(zone)
                .lane(p.index() as u64)
                .rng();
            let mut x: f64 = if params.noise_amplitude > 0.0 {
                params.noise_amplitude * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            for (h, frame) in frames.iter_mut().enumerate() {
                let angle = std::f64::consts::TAU * (h % 24) as f64 / 24.0 + phase + offset;
                let v = base * (1.0 + params.diurnal_amplitude * angle.sin() + x);
                *frame.get_mut(zone, p) = v.max(0.0);
                if params.noise_amplitude > 0.0 {
                    x = rho * x + innovation * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    TraceSet {
        n_zones: nz,
        step_minutes: 60,
        start: default_start(),
        frames,
        events: Vec::new(),
    }
}

/// Draws events from a per-zone Poisson process and applies them.
///
/// `rate_per_zone_day` is in events per zone per simulated day. Durations
/// are whole rounds drawn uniformly from `duration_range` (inclusive) and
/// truncated at the end of the trace.
pub fn inject_events(
    traces: &TraceSet,
    rate_per_zone_day: f64,
    duration_range: (u32, u32),
    magnitude_range: (f64, f64),
    seed: u64,
) -> TraceSet {
    let total = traces.frames.len() as u32;
    let mut events = Vec::new();
    if rate_per_zone_day > 0.0 && total > 0 {
        let per_round = rate_per_zone_day / traces.steps_per_day() as f64;
        let gap = Exp::new(per_round).expect("positive rate");
        let (dmin, dmax) = duration_range;
        let (mlo, mhi) = magnitude_range;
        for zone in 0..traces.n_zones {
            let mut rng = StreamKey::new(seed, Purpose::Events)
                .lane(zone as u64)
                .rng();
            let mut t = 0.0f64;
            loop {
                t += gap.sample(&mut rng);
                if t >= total as f64 {
                    break;
                }
                let start = t.floor() as u32;
                let duration = rng.random_range(dmin..=dmax.max(dmin));
                let pollutant = PollutantKind::ALL[rng.random_range(0..PollutantKind::COUNT)];
                let magnitude = if mhi > mlo {
                    rng.random_range(mlo..mhi)
                } else {
                    mlo
                };
                events.push(EventSpec {
                    zone_id: zone,
                    start_round: start,
                    end_round: start.saturating_add(duration).min(total),
                    pollutant,
                    magnitude,
                });
            }
        }
    }
    apply_events(traces, events).expect("generated events are valid")
}

/// Multiplies in `events`. Overlapping events on the same cell use the
/// largest multiplier rather than the product.
pub fn apply_events(traces: &TraceSet, events: Vec<EventSpec>) -> Result<TraceSet, TraceError> {
    let total = traces.frames.len() as u32;
    for e in &events {
        if e.zone_id >= traces.n_zones {
            return Err(TraceError::BadEvent(format!(
                "zone {} out of range",
                e.zone_id
            )));
        }
        if e.start_round >= e.end_round || e.end_round > total {
            return Err(TraceError::BadEvent(format!(
                "window [{}, {}) invalid for {} rounds",
                e.start_round, e.end_round, total
            )));
        }
        if e.magnitude.is_nan() || e.magnitude <= 1.0 {
            return Err(TraceError::BadEvent(format!(
                "magnitude {} must exceed 1",
                e.magnitude
            )));
        }
    }
    let mut out = traces.clone();
    let cells = traces.n_zones as usize * PollutantKind::COUNT;
    let mut multiplier = vec![1.0f64; cells * total as usize];
    for e in &events {
        let cell = e.zone_id as usize * PollutantKind::COUNT + e.pollutant.index();
        for r in e.start_round..e.end_round {
            let m = &mut multiplier[r as usize * cells + cell];
            *m = m.max(e.magnitude);
        }
    }
    for (r, frame) in out.frames.iter_mut().enumerate() {
        for (c, v) in frame.values.iter_mut().enumerate() {
            *v *= multiplier[r * cells + c];
        }
    }
    out.events.extend(events);
    out.events.sort_by_key(|e| (e.zone_id, e.start_round));
    Ok(out)
}

/// Synthetic hourly trace, interpolated to rounds, with events injected
/// per the config, truncated to `cfg.rounds`.
pub fn build_synthetic(cfg: &SimConfig) -> Result<TraceSet, TraceError> {
    let hourly = generate_synthetic(cfg, cfg.trace_seed);
    prepare(cfg, &hourly, None)
}

/// Interpolates an hourly trace to the round length, truncates it to
/// `cfg.rounds`, then applies `events` if given or injects fresh ones.
pub fn prepare(
    cfg: &SimConfig,
    hourly: &TraceSet,
    events: Option<Vec<EventSpec>>,
) -> Result<TraceSet, TraceError> {
    let fine = interpolate(hourly, cfg.round_minutes)?;
    if fine.len() < cfg.rounds as usize {
        return Err(TraceError::TooShort {
            have: fine.len(),
            need: cfg.rounds as usize,
        });
    }
    let fine = fine.truncate(cfg.rounds as usize);
    match events {
        Some(ev) => apply_events(&fine, ev),
        None => Ok(inject_events(
            &fine,
            cfg.event_rate,
            cfg.event_duration,
            cfg.event_magnitude,
            cfg.trace_seed,
        )),
    }
}
