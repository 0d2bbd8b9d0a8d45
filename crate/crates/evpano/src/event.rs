//! Event stream representation, residual pairing, and event file I/O.
//!
//! An event camera reports `(x, t, pol)` whenever the log-intensity at a
//! pixel moves by the contrast threshold. Two consecutive events at the same
//! pixel therefore pin the map difference between their two warped locations
//! to `pol * C`; [`pair_events`] extracts exactly those pairs.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One camera event. Polarity is `+1` or `-1` in memory; the on-disk format
/// uses `{1, 0}` respectively.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub pol: i8,
}

/// Two consecutive events at one pixel: the event at `t_curr` and its
/// predecessor at `t_prev = t_curr - dt`. Invariant: `t_prev < t_curr`, both
/// inside the optimization window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualPair {
    /// Index of the later event in the originating stream.
    pub event_index: usize,
    pub t_curr: f64,
    pub t_prev: f64,
    pub x: u16,
    pub y: u16,
    pub pol: i8,
}

/// Contrast thresholds of the event generation model. Positive and negative
/// events may use separate magnitudes (simulator knob); the estimation side
/// normally runs symmetric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EGMParams {
    pub c_pos: f64,
    pub c_neg: f64,
}

impl EGMParams {
    pub fn symmetric(c: f64) -> Result<Self> {
        EGMParams::new(c, c)
    }

    pub fn new(c_pos: f64, c_neg: f64) -> Result<Self> {
        for (name, v) in [("C+", c_pos), ("C-", c_neg)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("contrast threshold {name} = {v} must be > 0")));
            }
        }
        Ok(EGMParams { c_pos, c_neg })
    }

    /// Threshold magnitude for a polarity.
    #[inline]
    pub fn threshold(&self, pol: i8) -> f64 {
        if pol > 0 {
            self.c_pos
        } else {
            self.c_neg
        }
    }
}

/// Pairing result: residual pairs plus the index of the first in-window
/// event at each active pixel (events with no predecessor contribute no
/// residual and are reported separately).
#[derive(Clone, Debug, Default)]
pub struct PairedEvents {
    pub pairs: Vec<ResidualPair>,
    pub first_events: Vec<usize>,
}

/// Chains consecutive events per pixel inside `[t0, t1]` (inclusive).
///
/// The stream must be sorted by `t` (ties across pixels allowed). The pair
/// count always equals the number of in-window events minus the number of
/// active pixels. Pairs come out sorted by `(t_curr, x, y)`.
pub fn pair_events(stream: &[Event], window: (f64, f64)) -> Result<PairedEvents> {
    let (t0, t1) = window;
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(Error::Config(format!("invalid window [{t0}, {t1}]")));
    }
    let mut last_at: HashMap<(u16, u16), f64> = HashMap::new();
    let mut out = PairedEvents::default();
    let mut prev_t = f64::NEG_INFINITY;
    for (k, ev) in stream.iter().enumerate() {
        if ev.t < prev_t {
            return Err(Error::Config(format!(
                "event stream not sorted by time at index {k}: {} after {}",
                ev.t, prev_t
            )));
        }
        prev_t = ev.t;
        if ev.t < t0 || ev.t > t1 {
            continue;
        }
        match last_at.insert((ev.x, ev.y), ev.t) {
            None => out.first_events.push(k),
            Some(t_prev) => {
                if ev.t <= t_prev {
                    return Err(Error::Config(format!(
                        "events at pixel ({}, {}) not strictly increasing in time near t = {}",
                        ev.x, ev.y, ev.t
                    )));
                }
                out.pairs.push(ResidualPair {
                    event_index: k,
                    t_curr: ev.t,
                    t_prev,
                    x: ev.x,
                    y: ev.y,
                    pol: ev.pol,
                });
            }
        }
    }
    out.pairs.sort_by(|a, b| {
        (a.t_curr, a.x, a.y)
            .partial_cmp(&(b.t_curr, b.x, b.y))
            .unwrap()
    });
    Ok(out)
}

/// Drops events outside a trajectory span, returning the kept events and the
/// discard count. Interpolation is undefined outside the span, so ingest
/// clips rather than erroring.
pub fn clip_to_span(stream: &[Event], span: (f64, f64)) -> (Vec<Event>, usize) {
    let kept: Vec<Event> =
        stream.iter().copied().filter(|e| e.t >= span.0 && e.t <= span.1).collect();
    let dropped = stream.len() - kept.len();
    (kept, dropped)
}

/// Loads an event text file: one `t x y p` per line, `#` comments, p in
/// {0, 1} mapped to {-1, +1}. A `.gz` extension selects transparent gzip.
/// The stream must be sorted by time.
pub fn load_events(path: &Path) -> Result<Vec<Event>> {
    let file = std::fs::File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let reader: Box<dyn std::io::Read> = if is_gz(path) {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut events = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::data(path, e.to_string()))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut it = body.split_whitespace();
        let mut field = |name: &str| {
            it.next().ok_or_else(|| {
                Error::data(path, format!("line {}: missing {name}", lineno + 1))
            })
        };
        let t: f64 = parse(field("t")?, path, lineno, "t")?;
        let x: u16 = parse(field("x")?, path, lineno, "x")?;
        let y: u16 = parse(field("y")?, path, lineno, "y")?;
        let p_raw: u8 = parse(field("p")?, path, lineno, "p")?;
        if it.next().is_some() {
            return Err(Error::data(path, format!("line {}: trailing fields", lineno + 1)));
        }
        let pol = match p_raw {
            1 => 1,
            0 => -1,
            other => {
                return Err(Error::data(
                    path,
                    format!("line {}: polarity {other} not in {{0, 1}}", lineno + 1),
                ))
            }
        };
        if !t.is_finite() {
            return Err(Error::data(path, format!("line {}: non-finite timestamp", lineno + 1)));
        }
        if t < prev_t {
            return Err(Error::data(
                path,
                format!("line {}: timestamps not sorted ({t} after {prev_t})", lineno + 1),
            ));
        }
        prev_t = t;
        events.push(Event { t, x, y, pol });
    }
    Ok(events)
}

/// Writes an event text file (9-decimal timestamps); `.gz` extension selects
/// gzip. The write is atomic: a temp file in the same directory is renamed
/// over the target.
pub fn save_events(stream: &[Event], path: &Path) -> Result<()> {
    crate::io::atomic_write(path, |file| {
        let mut w: Box<dyn Write> = if is_gz(path) {
            Box::new(BufWriter::new(flate2::write::GzEncoder::new(
                file,
                flate2::Compression::default(),
            )))
        } else {
            Box::new(BufWriter::new(file))
        };
        writeln!(w, "# t x y p")?;
        for e in stream {
            writeln!(w, "{:.9} {} {} {}", e.t, e.x, e.y, if e.pol > 0 { 1 } else { 0 })?;
        }
        w.flush()
    })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path, lineno: usize, name: &str) -> Result<T> {
    s.parse().map_err(|_| {
        Error::data(path, format!("line {}: cannot parse {name} from {s:?}", lineno + 1))
    })
}
