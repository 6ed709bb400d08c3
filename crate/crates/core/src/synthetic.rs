//! Randomly generated score/performance pairs with known expressive structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{Alignment, PerformedNote, Performance};
use crate::model::TrainingPiece;
use crate::score::{Dynamic, Marking, MarkingKind, NoteInput, Score, TimeSignature};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub min_onsets: usize,
    pub max_onsets: usize,
    /// lbpr = `downbeat_lbpr` · downbeat + N(0, `lbpr_noise`²).
    pub downbeat_lbpr: f64,
    pub lbpr_noise: f64,
    pub beat_period: f64,
    /// Standard deviation of per-note timing deviations within chords, seconds.
    pub timing_noise: f64,
    pub max_chord: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            min_onsets: 20,
            max_onsets: 50,
            downbeat_lbpr: 0.8,
            lbpr_noise: 0.01,
            beat_period: 0.5,
            timing_noise: 0.01,
            max_chord: 3,
        }
    }
}

fn dynamic_velocity(d: Dynamic) -> f64 {
    match d {
        Dynamic::Pp => 36.0,
        Dynamic::P => 48.0,
        Dynamic::Mp => 58.0,
        Dynamic::Mf => 68.0,
        Dynamic::F => 82.0,
        Dynamic::Ff => 96.0,
    }
}

/// One 4/4 piece and a performance of it.
///
/// The first onset is performed at 0 s with no chord spread, so encoding the
/// performance and decoding it again reproduces it exactly.
pub fn synthetic_piece<R: Rng>(rng: &mut R, cfg: &SyntheticConfig, title: &str) -> TrainingPiece {
    let n_onsets = rng.gen_range(cfg.min_onsets..=cfg.max_onsets);
    let steps = [0.5, 1.0, 1.0, 1.5, 2.0];
    let mut beats = Vec::with_capacity(n_onsets);
    let mut b = 0.0;
    for _ in 0..n_onsets {
        beats.push(b);
        b += *steps.choose(rng).unwrap();
    }
    let end = b;

    let mut markings = Vec::new();
    let mut mark_at = 0.0;
    while mark_at < end {
        let d = *Dynamic::ALL.choose(rng).unwrap();
        markings.push(Marking { kind: MarkingKind::Dynamics(d), start_beats: mark_at, end_beats: mark_at });
        mark_at += 4.0 * rng.gen_range(2..=4) as f64;
    }
    let dynamic_at = |beat: f64| {
        markings
            .iter()
            .filter_map(|m| match m.kind {
                MarkingKind::Dynamics(d) if m.start_beats <= beat => Some(d),
                _ => None,
            })
            .next_back()
            .unwrap_or(Dynamic::Mf)
    };

    let lbpr_noise = Normal::new(0.0, cfg.lbpr_noise).unwrap();
    let timing_noise = Normal::new(0.0, cfg.timing_noise).unwrap();
    let art_noise = Normal::new(-0.1, 0.1).unwrap();
    let vel_noise = Normal::new(0.0, 1.5).unwrap();

    let mut notes = Vec::new();
    let mut performed = Vec::new();
    let mut grid = 0.0;
    for (t, &beat) in beats.iter().enumerate() {
        let ioi = beats.get(t + 1).map_or(1.0, |n| n - beat);
        let downbeat = if beat % 4.0 == 0.0 { 1.0 } else { 0.0 };
        let bp = cfg.beat_period * (cfg.downbeat_lbpr * downbeat + lbpr_noise.sample(rng)).exp();
        let vt = (dynamic_velocity(dynamic_at(beat)) + vel_noise.sample(rng)).round().clamp(20.0, 120.0);

        let size = rng.gen_range(1..=cfg.max_chord);
        let mut pitches: Vec<u8> = (48..=84).collect();
        pitches.shuffle(rng);
        pitches.truncate(size);
        pitches.sort_unstable();
        let offsets: Vec<f64> = if t == 0 || size == 1 {
            vec![0.0; size]
        } else {
            let raw: Vec<f64> = (0..size).map(|_| timing_noise.sample(rng)).collect();
            let mean = raw.iter().sum::<f64>() / size as f64;
            raw.iter().map(|x| x - mean).collect()
        };
        for (k, &pitch) in pitches.iter().enumerate() {
            let dur_beats = ioi;
            // top voice carries the onset's velocity trend
            let velocity = if k + 1 == size { vt } else { vt - rng.gen_range(0..=10) as f64 };
            notes.push(NoteInput {
                id: format!("n{}", notes.len() + 1),
                pitch: pitch as i64,
                onset_beats: beat,
                duration_beats: dur_beats,
                voice: 1,
                accent: false,
                fermata: false,
            });
            performed.push(PerformedNote {
                pitch,
                onset_sec: grid + offsets[k],
                duration_sec: dur_beats * bp * f64::exp(art_noise.sample(rng)),
                velocity: velocity as u8,
            });
        }
        grid += bp * ioi;
    }

    let score = Score::new(title, notes, markings, vec![TimeSignature::COMMON], vec![]).expect("generated score is valid");
    let ids: Vec<String> = score.notes().iter().map(|n| n.id.clone()).collect();
    // align by generation order before the performance is sorted
    let mut order: Vec<usize> = (0..performed.len()).collect();
    order.sort_by(|&a, &b| performed[a].onset_sec.total_cmp(&performed[b].onset_sec).then(performed[a].pitch.cmp(&performed[b].pitch)));
    let mut position = vec![0; order.len()];
    for (rank, &i) in order.iter().enumerate() {
        position[i] = rank;
    }
    let alignment = Alignment::from_pairs(ids.into_iter().enumerate().map(|(i, id)| (id, position[generated_index(&score, i)])));
    let performance = Performance::new(performed).expect("generated performance is valid");
    TrainingPiece { score, performance, alignment }
}

/// Generation order index of the score's `i`-th (canonically sorted) note.
fn generated_index(score: &Score, i: usize) -> usize {
    score.notes()[i].id[1..].parse::<usize>().unwrap() - 1
}

pub fn synthetic_corpus(pieces: usize, seed: u64, cfg: &SyntheticConfig) -> Vec<TrainingPiece> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pieces).map(|i| synthetic_piece(&mut rng, cfg, &format!("synthetic {i}"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, EncodeOptions, Stream};

    #[test]
    fn deterministic_and_in_range() {
        let cfg = SyntheticConfig::default();
        let a = synthetic_corpus(3, 11, &cfg);
        let b = synthetic_corpus(3, 11, &cfg);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.score, y.score);
            assert_eq!(x.performance, y.performance);
            let onsets = crate::score::build_onset_index(&x.score).len();
            assert!((cfg.min_onsets..=cfg.max_onsets).contains(&onsets));
            assert_eq!(x.alignment.len(), x.score.notes().len());
        }
    }

    #[test]
    fn encoded_lbpr_tracks_downbeats() {
        let cfg = SyntheticConfig { lbpr_noise: 1e-9, ..Default::default() };
        let p = &synthetic_corpus(1, 3, &cfg)[0];
        let params = encode::<f64>(&p.score, &p.performance, &p.alignment, EncodeOptions::default()).unwrap();
        let lbpr = params.stream(Stream::Lbpr);
        let n = lbpr.len();
        // the last onset copies its predecessor's beat period
        for (i, &beat) in params.onsets.iter().enumerate().take(n - 1) {
            let on = beat % 4.0 == 0.0;
            for (j, &other) in params.onsets.iter().enumerate().take(n - 1) {
                if (other % 4.0 == 0.0) == on {
                    assert!((lbpr[i] - lbpr[j]).abs() < 1e-6);
                } else {
                    assert!((lbpr[i] - lbpr[j]).abs() > 0.7);
                }
            }
        }
    }
}
