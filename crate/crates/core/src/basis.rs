//! Score basis functions: a fixed set of 18 numerical encodings of each note.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::num::{guarded, Scalar};
use crate::score::{MarkingKind, OnsetIndex, Score};

/// Column indices of the standard feature set.
pub mod feature {
    pub const PITCH: usize = 0;
    pub const PITCH_SQ: usize = 1;
    pub const DURATION: usize = 2;
    pub const IOI_PREV: usize = 3;
    pub const IOI_NEXT: usize = 4;
    pub const DOWNBEAT: usize = 5;
    pub const BEAT_PHASE: usize = 6;
    /// First of the six dynamics one-hot columns (pp..ff).
    pub const DYNAMICS: usize = 7;
    pub const CRESCENDO: usize = 13;
    pub const DIMINUENDO: usize = 14;
    pub const SLUR: usize = 15;
    pub const ACCENT: usize = 16;
    pub const FERMATA: usize = 17;
}

/// Number of basis functions `K`.
pub const NUM_FEATURES: usize = 18;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "pitch_norm",
    "pitch_norm_sq",
    "duration_beats",
    "ioi_prev",
    "ioi_next",
    "downbeat",
    "beat_phase",
    "dyn_pp",
    "dyn_p",
    "dyn_mp",
    "dyn_mf",
    "dyn_f",
    "dyn_ff",
    "crescendo",
    "diminuendo",
    "slur",
    "accent",
    "fermata",
];

/// Identifies the feature set and the onset aggregation rule.
pub const FEATURE_SPEC_VERSION: &str = "basis18-v1+onset-mean";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub names: Vec<String>,
    pub version: String,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), version: FEATURE_SPEC_VERSION.to_owned() }
    }
}

impl FeatureSpec {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Note-wise feature matrix, one row per note in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix<T> {
    pub rows: Matrix<T>,
    pub row_ids: Vec<String>,
}

/// Onset-wise feature matrix, one row per distinct onset.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetBasisMatrix<T> {
    pub rows: Matrix<T>,
    pub onsets: Vec<f64>,
}

/// Evaluates the basis functions for every note of `score`.
pub fn note_basis<T: Scalar>(score: &Score, onsets: &OnsetIndex) -> BasisMatrix<T> {
    let beats = onsets.onsets();
    let t_last = beats.len() - 1;
    let mut rows = Matrix::zeros(score.notes().len(), NUM_FEATURES);
    for (i, note) in score.notes().iter().enumerate() {
        let t = onsets.onset_of(i);
        let b = note.onset_beats;
        let row = rows.row_mut(i);
        let pitch = note.pitch as f64 / 127.0;
        row[feature::PITCH] = T::of(pitch);
        row[feature::PITCH_SQ] = T::of(pitch * pitch);
        row[feature::DURATION] = T::of(note.duration_beats);
        row[feature::IOI_PREV] = T::of(if t == 0 { 0.0 } else { beats[t] - beats[t - 1] });
        row[feature::IOI_NEXT] = T::of(if t == t_last { 0.0 } else { beats[t + 1] - beats[t] });

        let (measure_start, measure_len) = score.measure_at(b);
        let phase = ((b - measure_start) / measure_len).clamp(0.0, 1.0);
        let on_barline = (b - measure_start).abs() < 1e-9;
        row[feature::DOWNBEAT] = indicator(on_barline);
        row[feature::BEAT_PHASE] = if on_barline || phase >= 1.0 { T::zero() } else { T::of(phase) };

        row[feature::DYNAMICS + dynamics_at(score, b)] = T::one();
        row[feature::CRESCENDO] = T::of(ramp_at(score, b, MarkingKind::Crescendo));
        row[feature::DIMINUENDO] = T::of(ramp_at(score, b, MarkingKind::Diminuendo));
        row[feature::SLUR] = indicator(note.slur_member);
        row[feature::ACCENT] = indicator(note.accent);
        row[feature::FERMATA] = indicator(note.fermata);
    }
    BasisMatrix { rows, row_ids: score.notes().iter().map(|n| n.id.clone()).collect() }
}

fn indicator<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

/// Index of the dynamics level in force at `beat`; `mf` before the first marking.
fn dynamics_at(score: &Score, beat: f64) -> usize {
    score
        .markings()
        .iter()
        .filter_map(|m| match m.kind {
            MarkingKind::Dynamics(d) if m.start_beats <= beat => Some(d.index()),
            _ => None,
        })
        .next_back()
        .unwrap_or(crate::score::Dynamic::Mf.index())
}

/// Linear 0→1 ramp across every hairpin of `kind` covering `beat`.
fn ramp_at(score: &Score, beat: f64, kind: MarkingKind) -> f64 {
    score
        .markings()
        .iter()
        .filter(|m| m.kind == kind && m.end_beats > m.start_beats && m.start_beats <= beat && beat <= m.end_beats)
        .map(|m| (beat - m.start_beats) / (m.end_beats - m.start_beats))
        .fold(0.0, f64::max)
}

/// Averages note rows within each onset group.
pub fn onset_basis<T: Scalar>(basis: &BasisMatrix<T>, onsets: &OnsetIndex) -> OnsetBasisMatrix<T> {
    OnsetBasisMatrix { rows: onset_mean(&basis.rows, onsets), onsets: onsets.onsets().to_vec() }
}

/// Row means of `rows` over the groups of `onsets`.
pub fn onset_mean<T: Scalar>(rows: &Matrix<T>, onsets: &OnsetIndex) -> Matrix<T> {
    let k = rows.cols();
    let mut out = Matrix::zeros(onsets.len(), k);
    for (t, members) in onsets.members().iter().enumerate() {
        let n = T::of(members.len() as f64);
        let dst = out.row_mut(t);
        for &m in members {
            for (d, &v) in dst.iter_mut().zip(rows.row(m)) {
                *d += v;
            }
        }
        for d in dst {
            *d /= n;
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum BasisError {
    #[error("cannot fit feature statistics on an empty corpus")]
    EmptyCorpus,
    #[error("feature matrix has {got} columns, statistics have {expected}")]
    Width { expected: usize, got: usize },
    #[error("CSV export failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Per-column population statistics over a corpus of feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureStats<T> {
    pub mean: Vec<T>,
    /// Unguarded population standard deviation.
    pub std: Vec<T>,
}

impl<T: Scalar> FeatureStats<T> {
    /// Fits mean and population std over all rows of all matrices.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a Matrix<T>>) -> Result<Self, BasisError> {
        let mut it = corpus.into_iter().peekable();
        let k = it.peek().ok_or(BasisError::EmptyCorpus)?.cols();
        let mats: Vec<_> = it.collect();
        let mut n = 0usize;
        let mut sum = vec![T::zero(); k];
        for m in &mats {
            if m.cols() != k {
                return Err(BasisError::Width { expected: k, got: m.cols() });
            }
            for row in m.row_iter() {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(BasisError::EmptyCorpus);
        }
        let count = T::of(n as f64);
        let mean: Vec<T> = sum.into_iter().map(|s| s / count).collect();
        let mut var = vec![T::zero(); k];
        for m in &mats {
            for row in m.row_iter() {
                for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// `(x − mean) / max(std, 1e-8)` per column.
    pub fn apply(&self, m: &Matrix<T>) -> Result<Matrix<T>, BasisError> {
        self.check(m)?;
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((v, &mu), &sd) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / guarded(sd);
            }
        }
        Ok(out)
    }

    /// Inverse of [`FeatureStats::apply`].
    pub fn invert(&self, m: &Matrix<T>) -> Result<Matrix<T>, BasisError> {
        self.check(m)?;
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((v, &mu), &sd) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * guarded(sd) + mu;
            }
        }
        Ok(out)
    }

    fn check(&self, m: &Matrix<T>) -> Result<(), BasisError> {
        if m.cols() != self.mean.len() {
            return Err(BasisError::Width { expected: self.mean.len(), got: m.cols() });
        }
        Ok(())
    }
}

/// Writes a feature matrix as CSV with a leading key column.
pub fn write_features_csv<T: Scalar, W: Write>(
    writer: W,
    key_name: &str,
    keys: &[String],
    names: &[String],
    rows: &Matrix<T>,
) -> Result<(), BasisError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![key_name.to_owned()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (key, row) in keys.iter().zip(rows.row_iter()) {
        let mut rec = vec![key.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

impl<T: Scalar> BasisMatrix<T> {
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), BasisError> {
        write_features_csv(writer, "note_id", &self.row_ids, &FeatureSpec::default().names, &self.rows)
    }
}

impl<T: Scalar> OnsetBasisMatrix<T> {
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), BasisError> {
        let keys: Vec<_> = self.onsets.iter().map(|b| b.to_string()).collect();
        write_features_csv(writer, "onset_beats", &keys, &FeatureSpec::default().names, &self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{build_onset_index, parse_score_json};
    use approx::assert_abs_diff_eq;

    fn basis(json: &str) -> BasisMatrix<f64> {
        let s = parse_score_json(json.as_bytes()).unwrap();
        note_basis(&s, &build_onset_index(&s))
    }

    #[test]
    fn pitch_features() {
        let b = basis(r#"{"notes":[{"id":"a","pitch":60,"onset":0,"duration":1}]}"#);
        assert_abs_diff_eq!(b.rows[(0, feature::PITCH)], 0.47244, epsilon = 1e-5);
        assert_abs_diff_eq!(b.rows[(0, feature::PITCH_SQ)], 0.22320, epsilon = 1e-5);
    }

    #[test]
    fn metrical_features() {
        let b = basis(
            r#"{"notes":[{"id":"a","pitch":60,"onset":4,"duration":1},{"id":"b","pitch":60,"onset":5,"duration":1},
                         {"id":"c","pitch":60,"onset":7.5,"duration":1}]}"#,
        );
        assert_eq!(b.rows[(0, feature::DOWNBEAT)], 1.0);
        assert_eq!(b.rows[(0, feature::BEAT_PHASE)], 0.0);
        assert_eq!(b.rows[(1, feature::DOWNBEAT)], 0.0);
        assert_eq!(b.rows[(1, feature::BEAT_PHASE)], 0.25);
        assert_eq!(b.rows[(2, feature::BEAT_PHASE)], 0.875);
        assert_eq!(b.rows[(0, feature::IOI_PREV)], 0.0);
        assert_eq!(b.rows[(1, feature::IOI_PREV)], 1.0);
        assert_eq!(b.rows[(1, feature::IOI_NEXT)], 2.5);
        assert_eq!(b.rows[(2, feature::IOI_NEXT)], 0.0);
    }

    #[test]
    fn dynamics_and_ramps() {
        let b = basis(
            r#"{"notes":[{"id":"a","pitch":60,"onset":0,"duration":1},{"id":"b","pitch":60,"onset":2,"duration":1},
                         {"id":"c","pitch":60,"onset":6,"duration":1}],
                "markings":[{"kind":"crescendo","start":0,"end":4},{"kind":"ff","start":5}]}"#,
        );
        assert_eq!(b.rows[(1, feature::CRESCENDO)], 0.5);
        assert_eq!(b.rows[(2, feature::CRESCENDO)], 0.0);
        assert_eq!(b.rows[(0, feature::DYNAMICS + 3)], 1.0, "mf default");
        assert_eq!(b.rows[(2, feature::DYNAMICS + 5)], 1.0, "ff");
        for row in b.rows.row_iter() {
            assert_eq!(row[feature::DYNAMICS..feature::DYNAMICS + 6].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn onset_mean_aggregation() {
        let s = parse_score_json(
            br#"{"notes":[{"id":"a","pitch":60,"onset":0,"duration":1,"accent":true},{"id":"b","pitch":64,"onset":0,"duration":1},
                          {"id":"c","pitch":67,"onset":0,"duration":1}]}"#,
        )
        .unwrap();
        let idx = build_onset_index(&s);
        let b: BasisMatrix<f64> = note_basis(&s, &idx);
        let o = onset_basis(&b, &idx);
        assert_eq!(o.rows.rows(), 1);
        assert_abs_diff_eq!(o.rows[(0, feature::ACCENT)], 1.0 / 3.0, epsilon = 1e-15);
        for j in feature::DOWNBEAT..=feature::DIMINUENDO {
            assert_eq!(o.rows[(0, j)], b.rows[(0, j)]);
        }
    }

    #[test]
    fn singleton_groups_are_identity() {
        let s = parse_score_json(
            br#"{"notes":[{"id":"a","pitch":60,"onset":0,"duration":1},{"id":"b","pitch":64,"onset":1,"duration":2}]}"#,
        )
        .unwrap();
        let idx = build_onset_index(&s);
        let b: BasisMatrix<f64> = note_basis(&s, &idx);
        assert_eq!(onset_basis(&b, &idx).rows, b.rows);
    }

    #[test]
    fn feature_stats_population_definitions() {
        let m = Matrix::from_rows(2, [[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        let stats = FeatureStats::fit([&m]).unwrap();
        assert_abs_diff_eq!(stats.mean[0], 2.0);
        assert_abs_diff_eq!(stats.std[0], (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(stats.std[0], 0.81650, epsilon = 1e-5);
        assert_eq!(stats.std[1], 0.0);
        let z = stats.apply(&m).unwrap();
        assert_abs_diff_eq!(z[(0, 0)], -1.2247, epsilon = 1e-4);
        assert_abs_diff_eq!(z[(1, 0)], 0.0);
        assert_abs_diff_eq!(z[(2, 0)], 1.2247, epsilon = 1e-4);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        assert!(stats.invert(&z).unwrap().max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(FeatureStats::<f64>::fit(std::iter::empty()), Err(BasisError::EmptyCorpus)));
    }

    #[test]
    fn csv_header_lists_feature_names() {
        let b = basis(r#"{"notes":[{"id":"a","pitch":60,"onset":0,"duration":1}]}"#);
        let mut out = Vec::new();
        b.to_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("note_id,pitch_norm,pitch_norm_sq"));
        assert_eq!(header.split(',').count(), NUM_FEATURES + 1);
    }
}
