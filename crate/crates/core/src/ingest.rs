//! Event files in, filtered and per-user partitioned events out.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoPoint};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// One geo-tagged message.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoEvent {
    pub event_id: String,
    pub user_id: String,
    pub instant: DateTime<Utc>,
    pub location: GeoPoint,
}

/// Wire form shared by the NDJSON and CSV encodings.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    user: String,
    ts: String,
    lat: f64,
    lon: f64,
}

impl Record {
    fn into_event(self) -> std::result::Result<GeoEvent, String> {
        let instant = NaiveDateTime::parse_from_str(&self.ts, TS_FORMAT)
            .map_err(|e| format!("bad timestamp {:?}: {e}", self.ts))?
            .and_utc();
        let location = GeoPoint::new(self.lat, self.lon).map_err(|e| e.to_string())?;
        Ok(GeoEvent {
            event_id: self.id,
            user_id: self.user,
            instant,
            location,
        })
    }

    fn from_event(e: &GeoEvent) -> Self {
        Record {
            id: e.event_id.clone(),
            user: e.user_id.clone(),
            ts: format_instant(&e.instant),
            lat: e.location.lat(),
            lon: e.location.lon(),
        }
    }
}

pub fn format_instant(t: &DateTime<Utc>) -> String {
    t.format(TS_FORMAT).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Ndjson,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndjson" | "jsonl" => Ok(Format::Ndjson),
            "csv" => Ok(Format::Csv),
            other => Err(Error::config("format", format!("unknown format {other:?}"))),
        }
    }
}

/// A skipped input record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordError {
    /// 1-based line number in the input (the CSV header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct Parsed {
    pub events: Vec<GeoEvent>,
    pub errors: Vec<RecordError>,
}

/// Parse an event stream. Malformed records are collected, never fatal;
/// only an unreadable stream is.
pub fn parse_events<R: Read>(stream: R, format: Format) -> Result<Parsed> {
    match format {
        Format::Ndjson => parse_ndjson(stream),
        Format::Csv => parse_csv(stream),
    }
}

fn parse_ndjson<R: Read>(stream: R) -> Result<Parsed> {
    let mut out = Parsed::default();
    for (i, line) in BufReader::new(stream).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Record>(&line)
            .map_err(|e| e.to_string())
            .and_then(Record::into_event);
        match parsed {
            Ok(ev) => out.events.push(ev),
            Err(message) => out.errors.push(RecordError {
                line: lineno,
                message,
            }),
        }
    }
    Ok(out)
}

fn parse_csv<R: Read>(stream: R) -> Result<Parsed> {
    let mut out = Parsed::default();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(stream);
    let headers = reader.headers()?.clone();
    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                let parsed = row
                    .deserialize::<Record>(Some(&headers))
                    .map_err(|e| e.to_string())
                    .and_then(Record::into_event);
                match parsed {
                    Ok(ev) => out.events.push(ev),
                    Err(message) => out.errors.push(RecordError { line, message }),
                }
            }
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(e) => out.errors.push(RecordError {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_ndjson<W: Write>(mut w: W, events: &[GeoEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, &Record::from_event(e))?;
        w.write_all(b"\n").map_err(|e| Error::io("<ndjson>", e))?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(w: W, events: &[GeoEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in events {
        wtr.serialize(Record::from_event(e))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Drop events whose id was already seen; the first occurrence wins.
/// Returns the number of duplicates removed.
pub fn dedup_by_id(events: &mut Vec<GeoEvent>) -> usize {
    let before = events.len();
    let mut seen = HashSet::with_capacity(events.len());
    events.retain(|e| seen.insert(e.event_id.clone()));
    let dropped = before - events.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} events with duplicate ids");
    }
    dropped
}

pub fn filter_bbox(events: Vec<GeoEvent>, bb: &BoundingBox) -> Vec<GeoEvent> {
    events
        .into_iter()
        .filter(|e| bb.contains(&e.location))
        .collect()
}

/// Local night window `[start, end)` at a fixed UTC offset. When
/// `start > end` the window wraps midnight; `start == end` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightWindow {
    /// Minutes after local midnight, 0..1440.
    start: u32,
    /// Minutes after local midnight, 0..=1440.
    end: u32,
    /// Minutes east of UTC.
    utc_offset: i32,
}

impl Default for NightWindow {
    fn default() -> Self {
        NightWindow {
            start: 22 * 60,
            end: 4 * 60,
            utc_offset: -480,
        }
    }
}

impl NightWindow {
    pub fn new(start_min: u32, end_min: u32, utc_offset_min: i32) -> Result<Self> {
        if start_min >= 1440 {
            return Err(Error::config("night", format!("start minute {start_min} >= 1440")));
        }
        if end_min > 1440 {
            return Err(Error::config("night", format!("end minute {end_min} > 1440")));
        }
        if !(-840..=840).contains(&utc_offset_min) {
            return Err(Error::config(
                "utc-offset",
                format!("{utc_offset_min} minutes outside [-840, 840]"),
            ));
        }
        Ok(NightWindow {
            start: start_min,
            end: end_min,
            utc_offset: utc_offset_min,
        })
    }

    /// Parse `"HH:MM-HH:MM"` plus a `"+HH:MM"`/`"-HH:MM"` offset.
    pub fn parse(window: &str, utc_offset: &str) -> Result<Self> {
        let (s, e) = window
            .split_once('-')
            .ok_or_else(|| Error::config("night", format!("expected HH:MM-HH:MM, got {window:?}")))?;
        let start = parse_clock(s).ok_or_else(|| Error::config("night", format!("bad start {s:?}")))?;
        let end = parse_clock(e).ok_or_else(|| Error::config("night", format!("bad end {e:?}")))?;
        let offset = parse_offset(utc_offset)
            .ok_or_else(|| Error::config("utc-offset", format!("bad offset {utc_offset:?}")))?;
        NightWindow::new(start, end, offset)
    }

    pub fn utc_offset_minutes(&self) -> i32 {
        self.utc_offset
    }

    pub fn contains(&self, instant: &DateTime<Utc>) -> bool {
        let local = instant.timestamp() + i64::from(self.utc_offset) * 60;
        let sec = local.rem_euclid(86_400);
        let (start, end) = (i64::from(self.start) * 60, i64::from(self.end) * 60);
        if start <= end {
            start <= sec && sec < end
        } else {
            sec >= start || sec < end
        }
    }
}

impl fmt::Display for NightWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.utc_offset < 0 { '-' } else { '+' };
        let off = self.utc_offset.unsigned_abs();
        write!(
            f,
            "{:02}:{:02}-{:02}:{:02} UTC{}{:02}:{:02}",
            self.start / 60,
            self.start % 60,
            self.end / 60,
            self.end % 60,
            sign,
            off / 60,
            off % 60
        )
    }
}

fn parse_clock(s: &str) -> Option<u32> {
    let (h, m) = s.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return None;
    }
    Some(h * 60 + m)
}

fn parse_offset(s: &str) -> Option<i32> {
    let s = s.trim();
    let (sign, rest) = match s.as_bytes().first()? {
        b'-' => (-1, &s[1..]),
        b'+' => (1, &s[1..]),
        _ => (1, s),
    };
    let (h, m) = rest.split_once(':').unwrap_or((rest, "0"));
    let (h, m): (i32, i32) = (h.parse().ok()?, m.parse().ok()?);
    if !(0..60).contains(&m) {
        return None;
    }
    Some(sign * (h * 60 + m))
}

pub fn filter_night(events: Vec<GeoEvent>, w: &NightWindow) -> Vec<GeoEvent> {
    events.into_iter().filter(|e| w.contains(&e.instant)).collect()
}

/// Partition by user, keeping input order within each user.
pub fn group_by_user(events: Vec<GeoEvent>) -> BTreeMap<String, Vec<GeoEvent>> {
    let mut groups: BTreeMap<String, Vec<GeoEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(e.user_id.clone()).or_default().push(e);
    }
    groups
}
