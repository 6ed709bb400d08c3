//! Partwise MusicXML subset reader.
//!
//! Positions are tracked as exact rationals in quarter-note beats and only
//! converted to `f64` once the score is assembled, so chords and voices that
//! meet after `backup`/`forward` arithmetic land on identical onsets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::Ratio;
use roxmltree::{Document, Node};

use super::{Dynamic, Marking, MarkingKind, NoteInput, Score, ScoreError, SlurSpan, TimeSignature};

type Beats = Ratio<i64>;

/// Note children that carry no information for the model and are skipped silently.
const PRESENTATION_NOTE_CHILDREN: &[&str] =
    &["type", "stem", "beam", "dot", "accidental", "notehead", "staff", "time-modification", "instrument", "lyric", "footnote", "level", "play", "listen"];
const PRESENTATION_ATTRIBUTE_CHILDREN: &[&str] =
    &["key", "clef", "staves", "staff-details", "transpose", "measure-style", "part-symbol", "instruments", "directive", "footnote", "level"];

/// Parses a MusicXML document; unsupported content is skipped with a logged warning.
pub fn parse_musicxml(bytes: &[u8]) -> Result<Score, ScoreError> {
    let (score, warnings) = parse_musicxml_with_warnings(bytes)?;
    for w in &warnings {
        log::warn!("musicxml: {w}");
    }
    Ok(score)
}

/// Like [`parse_musicxml`] but returns the warnings instead of logging them.
pub fn parse_musicxml_with_warnings(bytes: &[u8]) -> Result<(Score, Vec<String>), ScoreError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ScoreError::Xml(format!("not UTF-8: {e}")))?;
    let doc = Document::parse(text).map_err(|e| ScoreError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "score-partwise" {
        return Err(ScoreError::Xml(format!(
            "root element <{}> is not supported, expected <score-partwise>",
            root.tag_name().name()
        )));
    }
    let mut reader = Reader::default();
    reader.read(root)?;
    reader.finish()
}

#[derive(Default)]
struct Reader {
    warnings: BTreeSet<String>,
    notes: Vec<PendingNote>,
    markings: Vec<Marking>,
    time_signatures: Vec<TimeSignature>,
    slurs: Vec<SlurSpan>,
    title: String,
    /// Open tie chains keyed by (pitch, voice), pointing into `notes`.
    open_ties: HashMap<(i64, u32), usize>,
    open_slurs: BTreeMap<String, Beats>,
    open_wedges: BTreeMap<String, (MarkingKind, Beats)>,
    end_of_piece: Beats,
}

struct PendingNote {
    pitch: i64,
    onset: Beats,
    duration: Beats,
    voice: u32,
    accent: bool,
    fermata: bool,
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == name)
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(Node::is_element)
}

fn parse_int(node: Node<'_, '_>, name: &str) -> Result<i64, ScoreError> {
    let text = node.text().map(str::trim).unwrap_or("");
    text.parse().map_err(|_| ScoreError::Xml(format!("<{name}> must be an integer, got {text:?}")))
}

impl Reader {
    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.insert(msg.into());
    }

    fn read(&mut self, root: Node<'_, '_>) -> Result<(), ScoreError> {
        self.title = child(root, "work")
            .and_then(|w| child_text(w, "work-title"))
            .or_else(|| child_text(root, "movement-title"))
            .unwrap_or("")
            .to_owned();
        let mut parts = elements(root).filter(|n| n.tag_name().name() == "part");
        let part = parts.next().ok_or_else(|| ScoreError::Xml("document has no <part>".into()))?;
        if parts.next().is_some() {
            self.warn("multiple parts found; only the first part is read");
        }
        let mut measure_start = Beats::from_integer(0);
        let mut divisions: i64 = 1;
        for measure in elements(part) {
            if measure.tag_name().name() != "measure" {
                self.warn(format!("skipping <{}> inside <part>", measure.tag_name().name()));
                continue;
            }
            let len = self.read_measure(measure, measure_start, &mut divisions)?;
            measure_start += len;
        }
        self.end_of_piece = measure_start;
        Ok(())
    }

    /// Reads one measure and returns its length in beats.
    fn read_measure(&mut self, measure: Node<'_, '_>, start: Beats, divisions: &mut i64) -> Result<Beats, ScoreError> {
        let zero = Beats::from_integer(0);
        let mut cursor = zero;
        let mut furthest = zero;
        let mut chord_onset = zero;
        let mut meter_len: Option<Beats> = None;
        for el in elements(measure) {
            match el.tag_name().name() {
                "attributes" => {
                    for a in elements(el) {
                        match a.tag_name().name() {
                            "divisions" => {
                                *divisions = parse_int(a, "divisions")?;
                                if *divisions <= 0 {
                                    return Err(ScoreError::Xml("<divisions> must be positive".into()));
                                }
                            }
                            "time" => {
                                let beats = child_text(a, "beats").and_then(|t| t.parse::<u32>().ok());
                                let beat_type = child_text(a, "beat-type").and_then(|t| t.parse::<u32>().ok());
                                match (beats, beat_type) {
                                    (Some(num), Some(den)) if num > 0 && den > 0 => {
                                        let at = start + cursor;
                                        meter_len = Some(Beats::new(num as i64 * 4, den as i64));
                                        self.time_signatures.retain(|t| t.start_beats != to_f64(at));
                                        self.time_signatures.push(TimeSignature {
                                            numerator: num,
                                            denominator: den,
                                            start_beats: to_f64(at),
                                        });
                                    }
                                    _ => self.warn("skipping <time> without integer beats/beat-type"),
                                }
                            }
                            n if PRESENTATION_ATTRIBUTE_CHILDREN.contains(&n) => {}
                            n => self.warn(format!("skipping unsupported <attributes>/<{n}>")),
                        }
                    }
                }
                "note" => self.read_note(el, start, *divisions, &mut cursor, &mut chord_onset)?,
                "backup" | "forward" => {
                    let dur = child(el, "duration")
                        .map(|d| parse_int(d, "duration"))
                        .transpose()?
                        .ok_or_else(|| ScoreError::Xml(format!("<{}> without <duration>", el.tag_name().name())))?;
                    let delta = Beats::new(dur, *divisions);
                    if el.tag_name().name() == "backup" {
                        cursor -= delta;
                        if cursor < zero {
                            return Err(ScoreError::Xml("<backup> moves before the start of the measure".into()));
                        }
                    } else {
                        cursor += delta;
                    }
                }
                "direction" => self.read_direction(el, start + cursor, *divisions)?,
                n => self.warn(format!("skipping unsupported <measure>/<{n}>")),
            }
            furthest = furthest.max(cursor);
        }
        if furthest == zero {
            if let Some(len) = meter_len {
                return Ok(len);
            }
        }
        Ok(furthest)
    }

    fn read_note(
        &mut self,
        el: Node<'_, '_>,
        measure_start: Beats,
        divisions: i64,
        cursor: &mut Beats,
        chord_onset: &mut Beats,
    ) -> Result<(), ScoreError> {
        if child(el, "grace").is_some() {
            self.warn("skipping grace note");
            return Ok(());
        }
        if child(el, "cue").is_some() {
            self.warn("skipping cue note");
            return Ok(());
        }
        let duration = child(el, "duration")
            .map(|d| parse_int(d, "duration"))
            .transpose()?
            .ok_or_else(|| ScoreError::Xml("<note> without <duration>".into()))?;
        if duration <= 0 {
            return Err(ScoreError::Xml("<note> duration must be positive".into()));
        }
        let duration = Beats::new(duration, divisions);
        let is_chord = child(el, "chord").is_some();
        let onset = if is_chord { *chord_onset } else { *cursor };
        if !is_chord {
            *chord_onset = *cursor;
            *cursor += duration;
        }

        let mut pitch = None;
        let mut voice = 1;
        let mut tie_start = false;
        let mut tie_stop = false;
        let mut accent = false;
        let mut fermata = false;
        let mut slur_events: Vec<(String, String)> = Vec::new();
        for c in elements(el) {
            match c.tag_name().name() {
                "pitch" => pitch = Some(midi_pitch(c)?),
                "rest" | "unpitched" => {}
                "duration" | "chord" => {}
                "voice" => {
                    let text = c.text().map(str::trim).unwrap_or("");
                    voice = text.parse().map_err(|_| ScoreError::Xml(format!("<voice> must be a number, got {text:?}")))?;
                }
                "tie" => match c.attribute("type") {
                    Some("start") => tie_start = true,
                    Some("stop") => tie_stop = true,
                    _ => self.warn("skipping <tie> without start/stop type"),
                },
                "notations" => {
                    for n in elements(c) {
                        match n.tag_name().name() {
                            "tied" => match n.attribute("type") {
                                Some("start") => tie_start = true,
                                Some("stop") => tie_stop = true,
                                _ => {}
                            },
                            "slur" => {
                                let number = n.attribute("number").unwrap_or("1").to_owned();
                                let kind = n.attribute("type").unwrap_or("").to_owned();
                                slur_events.push((number, kind));
                            }
                            "articulations" => {
                                for a in elements(n) {
                                    match a.tag_name().name() {
                                        "accent" => accent = true,
                                        other => self.warn(format!("skipping unsupported articulation <{other}>")),
                                    }
                                }
                            }
                            "fermata" => fermata = true,
                            other => self.warn(format!("skipping unsupported notation <{other}>")),
                        }
                    }
                }
                n if PRESENTATION_NOTE_CHILDREN.contains(&n) => {}
                n => self.warn(format!("skipping unsupported <note>/<{n}>")),
            }
        }

        let abs_onset = measure_start + onset;
        for (number, kind) in slur_events {
            match kind.as_str() {
                "start" => {
                    self.open_slurs.insert(number, abs_onset);
                }
                "stop" => match self.open_slurs.remove(&number) {
                    Some(s) => self.slurs.push(SlurSpan { start_beats: to_f64(s), end_beats: to_f64(abs_onset) }),
                    None => self.warn(format!("slur {number} stops without a start")),
                },
                _ => {}
            }
        }

        let Some(pitch) = pitch else {
            return Ok(());
        };
        let key = (pitch, voice);
        if tie_stop {
            if let Some(idx) = self.open_ties.remove(&key) {
                self.notes[idx].duration += duration;
                self.notes[idx].fermata |= fermata;
                if tie_start {
                    self.open_ties.insert(key, idx);
                }
                return Ok(());
            }
            self.warn(format!("tie stop on pitch {pitch} without a matching start"));
        }
        self.notes.push(PendingNote { pitch, onset: abs_onset, duration, voice, accent, fermata });
        if tie_start {
            self.open_ties.insert(key, self.notes.len() - 1);
        }
        Ok(())
    }

    fn read_direction(&mut self, el: Node<'_, '_>, position: Beats, divisions: i64) -> Result<(), ScoreError> {
        let offset = child(el, "offset").map(|o| parse_int(o, "offset")).transpose()?.unwrap_or(0);
        let at = position + Beats::new(offset, divisions);
        for dt in elements(el) {
            match dt.tag_name().name() {
                "direction-type" => {}
                "offset" | "staff" | "voice" | "sound" => continue,
                other => {
                    self.warn(format!("skipping unsupported <direction>/<{other}>"));
                    continue;
                }
            }
            for d in elements(dt) {
                match d.tag_name().name() {
                    "dynamics" => {
                        for level in elements(d) {
                            match Dynamic::parse(level.tag_name().name()) {
                                Some(dynamic) => self.markings.push(Marking {
                                    kind: MarkingKind::Dynamics(dynamic),
                                    start_beats: to_f64(at),
                                    end_beats: to_f64(at),
                                }),
                                None => self.warn(format!("skipping unsupported dynamics <{}>", level.tag_name().name())),
                            }
                        }
                    }
                    "wedge" => {
                        let number = d.attribute("number").unwrap_or("1").to_owned();
                        match d.attribute("type") {
                            Some("crescendo") => {
                                self.open_wedges.insert(number, (MarkingKind::Crescendo, at));
                            }
                            Some("diminuendo") => {
                                self.open_wedges.insert(number, (MarkingKind::Diminuendo, at));
                            }
                            Some("stop") => match self.open_wedges.remove(&number) {
                                Some((kind, start)) => self.markings.push(Marking {
                                    kind,
                                    start_beats: to_f64(start),
                                    end_beats: to_f64(at),
                                }),
                                None => self.warn(format!("wedge {number} stops without a start")),
                            },
                            _ => self.warn("skipping <wedge> with unsupported type"),
                        }
                    }
                    other => self.warn(format!("skipping unsupported direction type <{other}>")),
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(Score, Vec<String>), ScoreError> {
        let end = self.end_of_piece;
        for (number, (kind, start)) in std::mem::take(&mut self.open_wedges) {
            self.warn(format!("wedge {number} never stopped; closed at the end of the piece"));
            self.markings.push(Marking { kind, start_beats: to_f64(start), end_beats: to_f64(end) });
        }
        for (number, start) in std::mem::take(&mut self.open_slurs) {
            self.warn(format!("slur {number} never stopped; closed at the end of the piece"));
            self.slurs.push(SlurSpan { start_beats: to_f64(start), end_beats: to_f64(end) });
        }
        let notes = self
            .notes
            .iter()
            .enumerate()
            .map(|(i, n)| NoteInput {
                id: format!("n{}", i + 1),
                pitch: n.pitch,
                onset_beats: to_f64(n.onset),
                duration_beats: to_f64(n.duration),
                voice: n.voice,
                accent: n.accent,
                fermata: n.fermata,
            })
            .collect();
        let score = Score::new(self.title, notes, self.markings, self.time_signatures, self.slurs)?;
        Ok((score, self.warnings.into_iter().collect()))
    }
}

fn to_f64(b: Beats) -> f64 {
    *b.numer() as f64 / *b.denom() as f64
}

fn midi_pitch(pitch: Node<'_, '_>) -> Result<i64, ScoreError> {
    let step = child_text(pitch, "step").ok_or_else(|| ScoreError::Xml("<pitch> without <step>".into()))?;
    let base = match step {
        "C" => 0,
        "D" => 2,
        "E" => 4,
        "F" => 5,
        "G" => 7,
        "A" => 9,
        "B" => 11,
        other => return Err(ScoreError::Xml(format!("invalid <step> {other:?}"))),
    };
    let octave: i64 = child_text(pitch, "octave")
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ScoreError::Xml("<pitch> without integer <octave>".into()))?;
    let alter = match child_text(pitch, "alter") {
        Some(t) => t.parse::<f64>().map_err(|_| ScoreError::Xml(format!("invalid <alter> {t:?}")))?.round() as i64,
        None => 0,
    };
    Ok((octave + 1) * 12 + base + alter)
}
