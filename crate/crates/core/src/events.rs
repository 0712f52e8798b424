//! Event streams and adaptive event keyframes.
//!
//! Text format: one event per line, `t x y p`, with `t` in seconds and `p`
//! either in `{0, 1}` or in `{-1, 1}`. Files ending in `.gz` (or starting
//! with the gzip magic bytes) are decompressed transparently.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u32,
    pub y: u32,
    /// `-1` or `+1`.
    pub polarity: i8,
}

impl Event {
    pub fn new(t: f64, x: u32, y: u32, polarity: i8) -> Self {
        Self { t, x, y, polarity }
    }
}

fn default_events_per_keyframe() -> usize {
    15_000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    /// Events accumulated into one keyframe.
    #[serde(default = "default_events_per_keyframe")]
    pub events_per_keyframe: usize,
    pub width: usize,
    pub height: usize,
}

impl FrontendConfig {
    pub fn new(events_per_keyframe: usize, width: usize, height: usize) -> Self {
        Self {
            events_per_keyframe,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.events_per_keyframe == 0 {
            return Err(Error::Config("events_per_keyframe must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("sensor size must be positive".into()));
        }
        Ok(())
    }
}

/// Signed per-pixel polarity sums of `count` consecutive events.
#[derive(Clone, Debug, PartialEq)]
pub struct EventKeyframe {
    /// Shape `(height, width)`, in units of the contrast threshold.
    pub delta_ie: Array2<f64>,
    /// Midpoint of the first and last event time.
    pub tau: f64,
    pub delta_tau: f64,
    pub count: usize,
}

impl EventKeyframe {
    /// Accumulate a slice of events. Returns `None` for an empty slice.
    pub fn accumulate(events: &[Event], width: usize, height: usize) -> Option<Self> {
        let first = events.first()?;
        let last = events.last()?;
        let mut delta_ie = Array2::zeros((height, width));
        for e in events {
            delta_ie[(e.y as usize, e.x as usize)] += f64::from(e.polarity);
        }
        let delta_tau = last.t - first.t;
        Some(Self {
            delta_ie,
            tau: first.t + 0.5 * delta_tau,
            delta_tau,
            count: events.len(),
        })
    }
}

/// `|ΔI_e|`: every event counted as positive.
pub fn polarity_free(kf: &EventKeyframe) -> Array2<f64> {
    kf.delta_ie.mapv(f64::abs)
}

/// Streaming cursor that slices a stream into fixed-count keyframes.
#[derive(Clone, Debug)]
pub struct KeyframeCursor<'a> {
    events: &'a [Event],
    position: usize,
    config: FrontendConfig,
}

impl<'a> KeyframeCursor<'a> {
    pub fn new(events: &'a [Event], config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            events,
            position: 0,
            config,
        })
    }

    /// Consume exactly `N` events, or return `None` when fewer remain (the
    /// partial tail is dropped).
    pub fn next_keyframe(&mut self) -> Option<EventKeyframe> {
        let n = self.config.events_per_keyframe;
        let end = self.position.checked_add(n)?;
        if end > self.events.len() {
            self.position = self.events.len();
            return None;
        }
        let slice = &self.events[self.position..end];
        self.position = end;
        EventKeyframe::accumulate(slice, self.config.width, self.config.height)
    }

    /// Events consumed so far.
    pub fn consumed(&self) -> usize {
        self.position
    }
}

impl Iterator for KeyframeCursor<'_> {
    type Item = EventKeyframe;

    fn next(&mut self) -> Option<EventKeyframe> {
        self.next_keyframe()
    }
}

/// Parse a text event stream. `source` is only used in error messages.
pub fn parse_events<R: BufRead>(reader: R, source: &Path, width: usize, height: usize) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    let mut seen_zero = false;
    let mut seen_minus = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(source, lineno, format!("expected 4 fields, found {}", fields.len())));
        }
        let t: f64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad timestamp {:?}", fields[0])))?;
        if !t.is_finite() {
            return Err(Error::parse(source, lineno, "non-finite timestamp"));
        }
        let x: u32 = fields[1]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad x coordinate {:?}", fields[1])))?;
        let y: u32 = fields[2]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad y coordinate {:?}", fields[2])))?;
        let p: i8 = fields[3]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad polarity {:?}", fields[3])))?;
        let polarity = match p {
            1 => 1,
            0 => {
                seen_zero = true;
                -1
            }
            -1 => {
                seen_minus = true;
                -1
            }
            _ => return Err(Error::parse(source, lineno, format!("polarity {p} not in {{-1, 0, 1}}"))),
        };
        if seen_zero && seen_minus {
            return Err(Error::parse(source, lineno, "polarity column mixes 0 and -1 encodings"));
        }
        if x as usize >= width || y as usize >= height {
            return Err(Error::parse(
                source,
                lineno,
                format!("pixel ({x}, {y}) outside {width}x{height} sensor"),
            ));
        }
        if let Some(prev) = events.last().map(|e: &Event| e.t) {
            if t < prev {
                return Err(Error::parse(source, lineno, format!("timestamp {t} precedes {prev}")));
            }
        }
        events.push(Event::new(t, x, y, polarity));
    }
    Ok(events)
}

/// Load an event file, decompressing gzip input.
pub fn load_events(path: &Path, width: usize, height: usize) -> Result<Vec<Event>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        parse_events(BufReader::new(MultiGzDecoder::new(file)), path, width, height)
    } else {
        parse_events(BufReader::new(file), path, width, height)
    }
}

/// Write events as `t x y p` with `p` in `{0, 1}`. Timestamps use the
/// shortest representation that parses back to the same value.
pub fn write_events<W: Write>(mut w: W, events: &[Event]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{} {} {} {}", e.t, e.x, e.y, u8::from(e.polarity > 0))?;
    }
    w.flush()
}

/// Save events, gzip-compressed when the path ends in `.gz`.
pub fn save_events(path: &Path, events: &[Event]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path.extension().is_some_and(|x| x == "gz");
    let res = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_events(&mut enc, events).and_then(|_| enc.finish()).and_then(|mut w| w.flush())
    } else {
        write_events(BufWriter::new(file), events)
    };
    res.map_err(|e| Error::io(path, e))
}
