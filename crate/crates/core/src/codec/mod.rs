//! Conversion between aligned performances and expressive parameter streams,
//! plus the MIDI and alignment file formats the conversion consumes.

mod alignment;
mod midi;
mod params;

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use alignment::{read_alignment, write_alignment, Alignment};
pub use midi::{read_midi, write_midi, MidiError, TICKS_PER_QUARTER, TICKS_PER_SECOND};
pub use params::{
    decode, decode_aligned, encode, standardize, DecodeControls, EncodeOptions, ExpressiveParams, StreamStats,
};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("score note {0:?} has no aligned performed note")]
    UnalignedNote(String),
    #[error("need ≥ 2 onsets for beat period, score has {0}")]
    TooFewOnsets(usize),
    #[error("non-positive beat period between onsets at beats {from} and {to}")]
    NonPositiveBeatPeriod { from: f64, to: f64 },
    #[error("stream {stream} has {got} values, expected {expected}")]
    LengthMismatch { stream: Stream, expected: usize, got: usize },
    #[error("invalid performance: {0}")]
    InvalidPerformance(String),
    #[error("invalid decode controls: {0}")]
    InvalidControls(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error(transparent)]
    Midi(#[from] MidiError),
}

/// One of the five expressive parameter streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    /// MIDI velocity trend, per onset.
    Vt,
    /// Log beat period ratio, per onset.
    Lbpr,
    /// MIDI velocity deviation from the trend, per note.
    Vd,
    /// Onset deviation from the beat grid in seconds, per note.
    Tim,
    /// Log ratio of performed to notated duration, per note.
    Art,
}

impl Stream {
    pub const ALL: [Stream; 5] = [Stream::Vt, Stream::Lbpr, Stream::Vd, Stream::Tim, Stream::Art];
    pub const ONSET_WISE: [Stream; 2] = [Stream::Vt, Stream::Lbpr];
    pub const NOTE_WISE: [Stream; 3] = [Stream::Vd, Stream::Tim, Stream::Art];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Vt => "vt",
            Stream::Lbpr => "lbpr",
            Stream::Vd => "vd",
            Stream::Tim => "tim",
            Stream::Art => "art",
        }
    }

    pub fn is_onset_wise(self) -> bool {
        matches!(self, Stream::Vt | Stream::Lbpr)
    }

    /// Output column of this stream in its (onset or note) model.
    pub fn output_index(self) -> usize {
        match self {
            Stream::Vt | Stream::Vd => 0,
            Stream::Lbpr | Stream::Tim => 1,
            Stream::Art => 2,
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stream {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stream::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stream {s:?}; valid streams are vt, lbpr, vd, tim, art"))
    }
}

/// One value per expressive stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerStream<V> {
    pub vt: V,
    pub lbpr: V,
    pub vd: V,
    pub tim: V,
    pub art: V,
}

impl<V> PerStream<V> {
    pub fn from_fn(mut f: impl FnMut(Stream) -> V) -> Self {
        Self { vt: f(Stream::Vt), lbpr: f(Stream::Lbpr), vd: f(Stream::Vd), tim: f(Stream::Tim), art: f(Stream::Art) }
    }

    pub fn map<'a, U>(&'a self, mut f: impl FnMut(Stream, &'a V) -> U) -> PerStream<U> {
        PerStream::from_fn(|s| f(s, &self[s]))
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(Stream, &V) -> Result<U, E>) -> Result<PerStream<U>, E> {
        Ok(PerStream {
            vt: f(Stream::Vt, &self.vt)?,
            lbpr: f(Stream::Lbpr, &self.lbpr)?,
            vd: f(Stream::Vd, &self.vd)?,
            tim: f(Stream::Tim, &self.tim)?,
            art: f(Stream::Art, &self.art)?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (Stream, &V)> {
        Stream::ALL.into_iter().map(move |s| (s, &self[s]))
    }
}

impl<V> Index<Stream> for PerStream<V> {
    type Output = V;
    fn index(&self, s: Stream) -> &V {
        match s {
            Stream::Vt => &self.vt,
            Stream::Lbpr => &self.lbpr,
            Stream::Vd => &self.vd,
            Stream::Tim => &self.tim,
            Stream::Art => &self.art,
        }
    }
}

impl<V> IndexMut<Stream> for PerStream<V> {
    fn index_mut(&mut self, s: Stream) -> &mut V {
        match s {
            Stream::Vt => &mut self.vt,
            Stream::Lbpr => &mut self.lbpr,
            Stream::Vd => &mut self.vd,
            Stream::Tim => &mut self.tim,
            Stream::Art => &mut self.art,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformedNote {
    pub pitch: u8,
    pub onset_sec: f64,
    pub duration_sec: f64,
    pub velocity: u8,
}

/// Performed notes sorted by onset, then pitch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Performance {
    notes: Vec<PerformedNote>,
}

impl Performance {
    pub fn new(mut notes: Vec<PerformedNote>) -> Result<Self, CodecError> {
        if notes.is_empty() {
            return Err(CodecError::InvalidPerformance("performance has no notes".into()));
        }
        for (i, n) in notes.iter().enumerate() {
            if n.pitch > 127 {
                return Err(CodecError::InvalidPerformance(format!("note {i}: pitch {} outside [0, 127]", n.pitch)));
            }
            if !n.onset_sec.is_finite() || n.onset_sec < 0.0 {
                return Err(CodecError::InvalidPerformance(format!("note {i}: onset must be finite and ≥ 0")));
            }
            if !n.duration_sec.is_finite() || n.duration_sec <= 0.0 {
                return Err(CodecError::InvalidPerformance(format!("note {i}: duration must be positive")));
            }
            if !(1..=127).contains(&n.velocity) {
                return Err(CodecError::InvalidPerformance(format!("note {i}: velocity {} outside [1, 127]", n.velocity)));
            }
        }
        notes.sort_by(|a, b| a.onset_sec.total_cmp(&b.onset_sec).then(a.pitch.cmp(&b.pitch)));
        Ok(Self { notes })
    }

    pub fn notes(&self) -> &[PerformedNote] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Copy with every time value multiplied by `factor`.
    pub fn time_scaled(&self, factor: f64) -> Result<Self, CodecError> {
        Self::new(
            self.notes
                .iter()
                .map(|n| PerformedNote { onset_sec: n.onset_sec * factor, duration_sec: n.duration_sec * factor, ..*n })
                .collect(),
        )
    }
}
