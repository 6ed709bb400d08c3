//! Symbolic score representation.
//!
//! Time is measured in quarter-note beats from the start of the piece,
//! independent of the time signature denominator.

mod json;
mod musicxml;
mod onset;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use json::{parse_score_json, ScoreDoc};
pub use musicxml::{parse_musicxml, parse_musicxml_with_warnings};
pub use onset::{build_onset_index, OnsetIndex};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("malformed score JSON at {path}: {message}")]
    Json { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("invalid MusicXML: {0}")]
    Xml(String),
}

impl ScoreError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid { path: path.into(), message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNote {
    pub id: String,
    pub pitch: u8,
    pub onset_beats: f64,
    pub duration_beats: f64,
    pub voice: u32,
    pub accent: bool,
    pub fermata: bool,
    /// Derived from the score's slur spans.
    pub slur_member: bool,
}

/// Notated dynamics level, softest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dynamic {
    Pp,
    P,
    Mp,
    Mf,
    F,
    Ff,
}

impl Dynamic {
    pub const ALL: [Dynamic; 6] = [Dynamic::Pp, Dynamic::P, Dynamic::Mp, Dynamic::Mf, Dynamic::F, Dynamic::Ff];

    pub fn as_str(self) -> &'static str {
        match self {
            Dynamic::Pp => "pp",
            Dynamic::P => "p",
            Dynamic::Mp => "mp",
            Dynamic::Mf => "mf",
            Dynamic::F => "f",
            Dynamic::Ff => "ff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }

    /// Position in `ALL`.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MarkingKind {
    Dynamics(Dynamic),
    Crescendo,
    Diminuendo,
}

impl MarkingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MarkingKind::Dynamics(d) => d.as_str(),
            MarkingKind::Crescendo => "crescendo",
            MarkingKind::Diminuendo => "diminuendo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "crescendo" => Some(MarkingKind::Crescendo),
            "diminuendo" => Some(MarkingKind::Diminuendo),
            other => Dynamic::parse(other).map(MarkingKind::Dynamics),
        }
    }
}

impl fmt::Display for MarkingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Marking {
    pub kind: MarkingKind,
    pub start_beats: f64,
    /// Equal to `start_beats` for point dynamics.
    pub end_beats: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSignature {
    pub numerator: u32,
    pub denominator: u32,
    pub start_beats: f64,
}

impl TimeSignature {
    pub const COMMON: TimeSignature = TimeSignature { numerator: 4, denominator: 4, start_beats: 0.0 };

    /// Measure length in quarter-note beats.
    pub fn measure_beats(&self) -> f64 {
        self.numerator as f64 * 4.0 / self.denominator as f64
    }
}

/// Beat span of a slur, inclusive at both ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlurSpan {
    pub start_beats: f64,
    pub end_beats: f64,
}

impl SlurSpan {
    pub fn contains(&self, beat: f64) -> bool {
        self.start_beats <= beat && beat <= self.end_beats
    }
}

/// Validated score. Notes are kept in canonical `(onset, pitch, voice, id)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    title: String,
    notes: Vec<ScoreNote>,
    markings: Vec<Marking>,
    time_signatures: Vec<TimeSignature>,
    slurs: Vec<SlurSpan>,
}

/// Unvalidated note as produced by the parsers.
#[derive(Clone, Debug)]
pub struct NoteInput {
    pub id: String,
    pub pitch: i64,
    pub onset_beats: f64,
    pub duration_beats: f64,
    pub voice: u32,
    pub accent: bool,
    pub fermata: bool,
}

impl Score {
    /// Validates and canonicalizes score content.
    pub fn new(
        title: impl Into<String>,
        notes: Vec<NoteInput>,
        mut markings: Vec<Marking>,
        mut time_signatures: Vec<TimeSignature>,
        mut slurs: Vec<SlurSpan>,
    ) -> Result<Self, ScoreError> {
        if notes.is_empty() {
            return Err(ScoreError::invalid("notes", "score must contain at least one note"));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(notes.len());
        for (i, n) in notes.into_iter().enumerate() {
            let path = |field: &str| format!("notes[{i}].{field}");
            if n.id.is_empty() {
                return Err(ScoreError::invalid(path("id"), "id must not be empty"));
            }
            if !seen.insert(n.id.clone()) {
                return Err(ScoreError::invalid(path("id"), format!("duplicate note id {:?}", n.id)));
            }
            if !(0..=127).contains(&n.pitch) {
                return Err(ScoreError::invalid(path("pitch"), format!("pitch {} outside [0, 127]", n.pitch)));
            }
            if !n.onset_beats.is_finite() || n.onset_beats < 0.0 {
                return Err(ScoreError::invalid(path("onset"), "onset must be finite and non-negative"));
            }
            if !n.duration_beats.is_finite() || n.duration_beats <= 0.0 {
                return Err(ScoreError::invalid(path("duration"), "duration must be positive"));
            }
            out.push(ScoreNote {
                id: n.id,
                pitch: n.pitch as u8,
                onset_beats: n.onset_beats,
                duration_beats: n.duration_beats,
                voice: n.voice,
                accent: n.accent,
                fermata: n.fermata,
                slur_member: false,
            });
        }

        for (i, m) in markings.iter().enumerate() {
            if !m.start_beats.is_finite() || !m.end_beats.is_finite() || m.start_beats < 0.0 {
                return Err(ScoreError::invalid(format!("markings[{i}]"), "marking positions must be finite and non-negative"));
            }
            if m.end_beats < m.start_beats {
                return Err(ScoreError::invalid(format!("markings[{i}].end"), "end must not precede start"));
            }
        }
        for (i, s) in slurs.iter().enumerate() {
            if !s.start_beats.is_finite() || !s.end_beats.is_finite() || s.end_beats < s.start_beats {
                return Err(ScoreError::invalid(format!("slurs[{i}]"), "slur end must not precede start"));
            }
        }
        for (i, ts) in time_signatures.iter().enumerate() {
            if ts.numerator == 0 || ts.denominator == 0 {
                return Err(ScoreError::invalid(format!("time_signatures[{i}]"), "numerator and denominator must be positive"));
            }
            if !ts.start_beats.is_finite() || ts.start_beats < 0.0 {
                return Err(ScoreError::invalid(format!("time_signatures[{i}].start"), "start must be finite and non-negative"));
            }
        }

        time_signatures.sort_by(|a, b| a.start_beats.total_cmp(&b.start_beats));
        if let Some(w) = time_signatures.windows(2).find(|w| w[0].start_beats == w[1].start_beats) {
            return Err(ScoreError::invalid(
                "time_signatures",
                format!("two time signatures start at beat {}", w[0].start_beats),
            ));
        }
        if time_signatures.first().is_none_or(|ts| ts.start_beats > 0.0) {
            time_signatures.insert(0, TimeSignature::COMMON);
        }

        markings.sort_by(|a, b| {
            a.start_beats
                .total_cmp(&b.start_beats)
                .then(a.end_beats.total_cmp(&b.end_beats))
                .then(a.kind.cmp(&b.kind))
        });
        slurs.sort_by(|a, b| a.start_beats.total_cmp(&b.start_beats).then(a.end_beats.total_cmp(&b.end_beats)));

        for n in &mut out {
            n.slur_member = slurs.iter().any(|s| s.contains(n.onset_beats));
        }
        out.sort_by(|a, b| {
            a.onset_beats
                .total_cmp(&b.onset_beats)
                .then(a.pitch.cmp(&b.pitch))
                .then(a.voice.cmp(&b.voice))
                .then_with(|| a.id.cmp(&b.id))
        });

        Ok(Self { title: title.into(), notes: out, markings, time_signatures, slurs })
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn notes(&self) -> &[ScoreNote] {
        &self.notes
    }

    pub fn markings(&self) -> &[Marking] {
        &self.markings
    }

    /// Sorted by start; the first one starts at beat 0.
    pub fn time_signatures(&self) -> &[TimeSignature] {
        &self.time_signatures
    }

    pub fn slurs(&self) -> &[SlurSpan] {
        &self.slurs
    }

    pub fn note_index(&self, id: &str) -> Option<usize> {
        self.notes.iter().position(|n| n.id == id)
    }

    /// Copy keeping only the notes accepted by `keep`. `None` if nothing remains.
    pub fn retain_notes(&self, mut keep: impl FnMut(&ScoreNote) -> bool) -> Option<Self> {
        let notes: Vec<_> = self.notes.iter().filter(|n| keep(n)).cloned().collect();
        if notes.is_empty() {
            return None;
        }
        Some(Self { notes, ..self.clone() })
    }

    /// Same score with every onset-related position shifted by `beats`.
    pub fn shifted(&self, beats: f64) -> Result<Self, ScoreError> {
        let mut time_signatures: Vec<_> = self
            .time_signatures
            .iter()
            .map(|ts| TimeSignature { start_beats: ts.start_beats + beats, ..*ts })
            .collect();
        // Keep the opening meter in force over the inserted lead-in.
        if let Some(first) = time_signatures.first_mut() {
            first.start_beats = 0.0;
        }
        Score::new(
            self.title.clone(),
            self.notes
                .iter()
                .map(|n| NoteInput { onset_beats: n.onset_beats + beats, ..NoteInput::from(n) })
                .collect(),
            self.markings
                .iter()
                .map(|m| Marking { start_beats: m.start_beats + beats, end_beats: m.end_beats + beats, ..m.clone() })
                .collect(),
            time_signatures,
            self.slurs
                .iter()
                .map(|s| SlurSpan { start_beats: s.start_beats + beats, end_beats: s.end_beats + beats })
                .collect(),
        )
    }

    /// Measure containing `beat`: `(measure start, measure length)` in beats.
    pub fn measure_at(&self, beat: f64) -> (f64, f64) {
        let ts = self
            .time_signatures
            .iter()
            .rev()
            .find(|ts| ts.start_beats <= beat)
            .unwrap_or(&self.time_signatures[0]);
        let len = ts.measure_beats();
        let offset = beat - ts.start_beats;
        let mut k = (offset / len).floor();
        // Snap positions that land a rounding error short of a barline.
        if offset - k * len > len - 1e-9 {
            k += 1.0;
        }
        (ts.start_beats + k * len, len)
    }
}

impl From<&ScoreNote> for NoteInput {
    fn from(n: &ScoreNote) -> Self {
        Self {
            id: n.id.clone(),
            pitch: n.pitch as i64,
            onset_beats: n.onset_beats,
            duration_beats: n.duration_beats,
            voice: n.voice,
            accent: n.accent,
            fermata: n.fermata,
        }
    }
}
