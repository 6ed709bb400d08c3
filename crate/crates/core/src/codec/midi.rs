//! Standard MIDI File reader and writer.
//!
//! The writer emits format 1 with a conductor track holding a single
//! 500000 µs/quarter tempo, so one tick is exactly 1/960 s.

use std::collections::{HashMap, VecDeque};

use super::{Performance, PerformedNote};

pub const TICKS_PER_QUARTER: u16 = 480;
const TEMPO_US_PER_QUARTER: u32 = 500_000;
/// Ticks per second implied by the written tempo.
pub const TICKS_PER_SECOND: f64 = TICKS_PER_QUARTER as f64 * 1e6 / TEMPO_US_PER_QUARTER as f64;

#[derive(Debug, thiserror::Error)]
#[error("MIDI error at byte {offset}: {message}")]
pub struct MidiError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, MidiError> {
    Err(MidiError { offset, message: message.into() })
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

fn push_chunk(out: &mut Vec<u8>, tag: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

fn seconds_to_ticks(sec: f64) -> u32 {
    (sec * TICKS_PER_SECOND).round().max(0.0) as u32
}

/// Encodes a performance as SMF format 1 on channel 1.
pub fn write_midi(performance: &Performance) -> Vec<u8> {
    // (tick, is_note_on, pitch, velocity); offs sort before ons at the same tick.
    let mut events: Vec<(u32, bool, u8, u8)> = Vec::with_capacity(performance.len() * 2);
    for n in performance.notes() {
        let on = seconds_to_ticks(n.onset_sec);
        let off = seconds_to_ticks(n.onset_sec + n.duration_sec).max(on + 1);
        events.push((on, true, n.pitch, n.velocity));
        events.push((off, false, n.pitch, 0));
    }
    events.sort_by_key(|&(tick, on, pitch, _)| (tick, on, pitch));

    let mut out = Vec::new();
    let mut header = Vec::with_capacity(6);
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&2u16.to_be_bytes());
    header.extend_from_slice(&TICKS_PER_QUARTER.to_be_bytes());
    push_chunk(&mut out, b"MThd", &header);

    let tempo = TEMPO_US_PER_QUARTER.to_be_bytes();
    push_chunk(&mut out, b"MTrk", &[0x00, 0xff, 0x51, 0x03, tempo[1], tempo[2], tempo[3], 0x00, 0xff, 0x2f, 0x00]);

    let mut track = Vec::with_capacity(events.len() * 4 + 4);
    let mut last = 0;
    for (tick, on, pitch, velocity) in events {
        push_vlq(&mut track, tick - last);
        last = tick;
        track.extend_from_slice(&[if on { 0x90 } else { 0x80 }, pitch, velocity]);
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
    push_chunk(&mut out, b"MTrk", &track);
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn byte(&mut self) -> Result<u8, MidiError> {
        let b = *self.data.get(self.pos).ok_or_else(|| MidiError { offset: self.pos, message: "unexpected end of data".into() })?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.data.len() - self.pos < n {
            return err(self.pos, format!("need {n} bytes, {} remain", self.data.len() - self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.byte()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        err(start, "variable-length quantity longer than 4 bytes")
    }
}

enum Timing {
    Metrical(u16),
    /// Frames per second and ticks per frame.
    Timecode(f64, f64),
}

struct NoteEvent {
    tick: u64,
    channel: u8,
    pitch: u8,
    /// 0 for note-off.
    velocity: u8,
}

/// Decodes an SMF format 0 or 1 file into a performance.
///
/// Tempo changes on any track are honored; running status is accepted.
pub fn read_midi(bytes: &[u8]) -> Result<Performance, MidiError> {
    let mut c = Cursor { data: bytes, pos: 0 };
    if c.take(4).ok() != Some(b"MThd".as_slice()) {
        return err(0, "missing MThd header");
    }
    let header_len = c.u32()? as usize;
    if header_len < 6 {
        return err(4, format!("header length {header_len} is shorter than 6"));
    }
    let header_start = c.pos;
    let format = c.u16()?;
    let track_count = c.u16()?;
    let division = c.u16()?;
    if format > 1 {
        return err(header_start, format!("SMF format {format} is not supported"));
    }
    c.take(header_len - 6)?;
    let timing = if division & 0x8000 == 0 {
        if division == 0 {
            return err(header_start + 4, "division of 0 ticks per quarter");
        }
        Timing::Metrical(division)
    } else {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let tpf = (division & 0xff) as f64;
        if fps <= 0.0 || tpf <= 0.0 {
            return err(header_start + 4, "invalid SMPTE division");
        }
        Timing::Timecode(fps, tpf)
    };

    let mut notes = Vec::new();
    let mut tempos: Vec<(u64, u32)> = Vec::new();
    let mut tracks_read = 0;
    while c.pos < bytes.len() && tracks_read < track_count {
        let chunk_at = c.pos;
        let tag = c.take(4)?;
        let len = c.u32()? as usize;
        if bytes.len() - c.pos < len {
            return err(chunk_at + 4, format!("chunk length {len} exceeds remaining {} bytes", bytes.len() - c.pos));
        }
        let body_start = c.pos;
        c.pos += len;
        if tag != b"MTrk" {
            continue;
        }
        tracks_read += 1;
        read_track(&bytes[..body_start + len], body_start, &mut notes, &mut tempos)?;
    }
    if tracks_read < track_count {
        return err(c.pos, format!("header declares {track_count} tracks, found {tracks_read}"));
    }

    tempos.sort_by_key(|&(tick, _)| tick);
    let to_seconds = |tick: u64| -> f64 {
        match timing {
            Timing::Timecode(fps, tpf) => tick as f64 / (fps * tpf),
            Timing::Metrical(tpq) => {
                let mut sec = 0.0;
                let mut at = 0u64;
                let mut tempo = TEMPO_US_PER_QUARTER as f64;
                for &(t, us) in &tempos {
                    if t >= tick {
                        break;
                    }
                    sec += (t - at) as f64 * tempo / (1e6 * tpq as f64);
                    at = t;
                    tempo = us as f64;
                }
                sec + (tick - at) as f64 * tempo / (1e6 * tpq as f64)
            }
        }
    };

    notes.sort_by_key(|e: &NoteEvent| (e.tick, e.velocity != 0));
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    let mut performed = Vec::new();
    for e in &notes {
        let key = (e.channel, e.pitch);
        if e.velocity > 0 {
            open.entry(key).or_default().push_back((e.tick, e.velocity));
        } else if let Some((on, velocity)) = open.get_mut(&key).and_then(VecDeque::pop_front) {
            if e.tick > on {
                let onset = to_seconds(on);
                performed.push(PerformedNote {
                    pitch: e.pitch,
                    onset_sec: onset,
                    duration_sec: to_seconds(e.tick) - onset,
                    velocity,
                });
            }
        }
    }
    let dangling: usize = open.values().map(VecDeque::len).sum();
    if dangling > 0 {
        log::warn!("midi: dropping {dangling} note-on events without a matching note-off");
    }
    Performance::new(performed).map_err(|e| MidiError { offset: bytes.len(), message: e.to_string() })
}

fn read_track(data: &[u8], start: usize, notes: &mut Vec<NoteEvent>, tempos: &mut Vec<(u64, u32)>) -> Result<(), MidiError> {
    let mut c = Cursor { data, pos: start };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    while c.pos < data.len() {
        tick += c.vlq()? as u64;
        let at = c.pos;
        let first = c.byte()?;
        match first {
            0xff => {
                running = None;
                let kind = c.byte()?;
                let len = c.vlq()? as usize;
                let body = c.take(len)?;
                match kind {
                    0x2f => return Ok(()),
                    0x51 if len == 3 => {
                        tempos.push((tick, u32::from_be_bytes([0, body[0], body[1], body[2]])));
                    }
                    0x51 => return err(at, "tempo meta event must have 3 data bytes"),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = c.vlq()? as usize;
                c.take(len)?;
            }
            0xf1..=0xfe => return err(at, format!("unexpected system message 0x{first:02X} in track")),
            _ => {
                let (status, d1) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, c.byte()?)
                } else {
                    match running {
                        Some(s) => (s, first),
                        None => return err(at, "data byte without running status"),
                    }
                };
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let d2 = if matches!(kind, 0xc0 | 0xd0) { 0 } else { c.byte()? };
                if d1 > 0x7f || d2 > 0x7f {
                    return err(at, "channel message data byte has the high bit set");
                }
                match kind {
                    0x90 => notes.push(NoteEvent { tick, channel, pitch: d1, velocity: d2 }),
                    0x80 => notes.push(NoteEvent { tick, channel, pitch: d1, velocity: 0 }),
                    _ => {}
                }
            }
        }
    }
    err(c.pos, "track ended without end-of-track meta event")
}
