//! JSON score format.

use serde::{Deserialize, Serialize};

use super::{Marking, MarkingKind, NoteInput, Score, ScoreError, SlurSpan, TimeSignature};

/// Wire form of a score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreDoc {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub time_signatures: Vec<TimeSignatureDoc>,
    pub notes: Vec<NoteDoc>,
    #[serde(default)]
    pub markings: Vec<MarkingDoc>,
    #[serde(default)]
    pub slurs: Vec<SpanDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSignatureDoc {
    pub num: u32,
    pub den: u32,
    #[serde(default)]
    pub start: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteDoc {
    pub id: String,
    pub pitch: i64,
    pub onset: f64,
    pub duration: f64,
    #[serde(default = "default_voice")]
    pub voice: u32,
    #[serde(default)]
    pub accent: bool,
    #[serde(default)]
    pub fermata: bool,
}

fn default_voice() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingDoc {
    pub kind: String,
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanDoc {
    pub start: f64,
    pub end: f64,
}

/// Parses and validates a JSON score. Errors carry the path of the offending element.
pub fn parse_score_json(bytes: &[u8]) -> Result<Score, ScoreError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: ScoreDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScoreError::Json { path, message: e.into_inner().to_string() }
    })?;
    doc.into_score()
}

impl ScoreDoc {
    pub fn into_score(self) -> Result<Score, ScoreError> {
        let notes = self
            .notes
            .into_iter()
            .map(|n| NoteInput {
                id: n.id,
                pitch: n.pitch,
                onset_beats: n.onset,
                duration_beats: n.duration,
                voice: n.voice,
                accent: n.accent,
                fermata: n.fermata,
            })
            .collect();
        let markings = self
            .markings
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let kind = MarkingKind::parse(&m.kind).ok_or_else(|| {
                    ScoreError::invalid(
                        format!("markings[{i}].kind"),
                        format!("unknown marking kind {:?} (expected pp..ff, crescendo or diminuendo)", m.kind),
                    )
                })?;
                Ok(Marking { kind, start_beats: m.start, end_beats: m.end.unwrap_or(m.start) })
            })
            .collect::<Result<Vec<_>, ScoreError>>()?;
        let time_signatures = self
            .time_signatures
            .into_iter()
            .map(|t| TimeSignature { numerator: t.num, denominator: t.den, start_beats: t.start })
            .collect();
        let slurs = self.slurs.into_iter().map(|s| SlurSpan { start_beats: s.start, end_beats: s.end }).collect();
        Score::new(self.title, notes, markings, time_signatures, slurs)
    }
}

impl From<&Score> for ScoreDoc {
    fn from(score: &Score) -> Self {
        Self {
            title: score.title().to_owned(),
            time_signatures: score
                .time_signatures()
                .iter()
                .map(|t| TimeSignatureDoc { num: t.numerator, den: t.denominator, start: t.start_beats })
                .collect(),
            notes: score
                .notes()
                .iter()
                .map(|n| NoteDoc {
                    id: n.id.clone(),
                    pitch: n.pitch as i64,
                    onset: n.onset_beats,
                    duration: n.duration_beats,
                    voice: n.voice,
                    accent: n.accent,
                    fermata: n.fermata,
                })
                .collect(),
            markings: score
                .markings()
                .iter()
                .map(|m| MarkingDoc { kind: m.kind.as_str().to_owned(), start: m.start_beats, end: Some(m.end_beats) })
                .collect(),
            slurs: score.slurs().iter().map(|s| SpanDoc { start: s.start_beats, end: s.end_beats }).collect(),
        }
    }
}

impl Score {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScoreDoc::from(self)).expect("score serialization is infallible")
    }
}
