use serde::{Deserialize, Serialize};

use super::{Alignment, CodecError, PerStream, Performance, PerformedNote, Stream};
use crate::num::{guarded, mean_std, Scalar};
use crate::score::{build_onset_index, OnsetIndex, Score};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StreamStats<T> {
    pub mean: T,
    /// Unguarded population standard deviation.
    pub std: T,
}

impl<T: Scalar> StreamStats<T> {
    pub fn new(mean: T, std: T) -> Self {
        Self { mean, std }
    }

    #[inline]
    pub fn standardize(&self, x: T) -> T {
        (x - self.mean) / guarded(self.std)
    }

    #[inline]
    pub fn destandardize(&self, z: T) -> T {
        z * guarded(self.std) + self.mean
    }
}

/// The five expressive streams of one piece.
///
/// `vt` and `lbpr` are indexed by onset, `vd`, `tim` and `art` by note, both in
/// canonical score order. `stats` is set once the streams are standardized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ExpressiveParams<T> {
    pub onsets: Vec<f64>,
    pub note_ids: Vec<String>,
    /// Arithmetic mean of the per-onset beat periods, seconds per beat.
    pub mean_beat_period: f64,
    pub values: PerStream<Vec<T>>,
    pub stats: Option<PerStream<StreamStats<T>>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EncodeOptions {
    /// Drop unaligned score notes instead of failing. Onsets left without
    /// notes disappear from the onset-wise streams.
    pub allow_missing: bool,
}

/// Extracts raw (unstandardized) expressive parameters from an aligned performance.
pub fn encode<T: Scalar>(
    score: &Score,
    performance: &Performance,
    alignment: &Alignment,
    options: EncodeOptions,
) -> Result<ExpressiveParams<T>, CodecError> {
    let reduced;
    let score = match score.notes().iter().find(|n| alignment.get(&n.id).is_none()) {
        None => score,
        Some(n) if !options.allow_missing => return Err(CodecError::UnalignedNote(n.id.clone())),
        Some(_) => {
            reduced = score
                .retain_notes(|n| alignment.get(&n.id).is_some())
                .ok_or(CodecError::TooFewOnsets(0))?;
            &reduced
        }
    };
    let index = build_onset_index(score);
    let t_len = index.len();
    if t_len < 2 {
        return Err(CodecError::TooFewOnsets(t_len));
    }
    let perf = performance.notes();
    let performed = |note: usize| -> Result<&PerformedNote, CodecError> {
        let id = &score.notes()[note].id;
        let k = alignment.get(id).ok_or_else(|| CodecError::UnalignedNote(id.clone()))?;
        perf.get(k).ok_or_else(|| CodecError::Alignment(format!("index {k} for {id:?} outside performance")))
    };

    let mut grid = Vec::with_capacity(t_len);
    let mut trend = Vec::with_capacity(t_len);
    for members in index.members() {
        let mut sum = 0.0;
        let mut loudest = 0u8;
        for &m in members {
            let p = performed(m)?;
            sum += p.onset_sec;
            loudest = loudest.max(p.velocity);
        }
        grid.push(sum / members.len() as f64);
        trend.push(loudest as f64);
    }

    let beats = index.onsets();
    let mut bp: Vec<f64> = (0..t_len - 1)
        .map(|i| {
            let p = (grid[i + 1] - grid[i]) / (beats[i + 1] - beats[i]);
            if p > 0.0 && p.is_finite() {
                Ok(p)
            } else {
                Err(CodecError::NonPositiveBeatPeriod { from: beats[i], to: beats[i + 1] })
            }
        })
        .collect::<Result<_, _>>()?;
    bp.push(bp[t_len - 2]);
    let mean_bp = bp.iter().sum::<f64>() / t_len as f64;
    let lbpr = bp.iter().map(|&p| T::of((p / mean_bp).ln())).collect();

    let n_len = score.notes().len();
    let mut vd = Vec::with_capacity(n_len);
    let mut tim = Vec::with_capacity(n_len);
    let mut art = Vec::with_capacity(n_len);
    for (n, note) in score.notes().iter().enumerate() {
        let i = index.onset_of(n);
        let p = performed(n)?;
        vd.push(T::of(p.velocity as f64 - trend[i]));
        tim.push(T::of(p.onset_sec - grid[i]));
        art.push(T::of((p.duration_sec / (note.duration_beats * bp[i])).ln()));
    }

    Ok(ExpressiveParams {
        onsets: beats.to_vec(),
        note_ids: score.notes().iter().map(|n| n.id.clone()).collect(),
        mean_beat_period: mean_bp,
        values: PerStream { vt: trend.into_iter().map(T::of).collect(), lbpr, vd, tim, art },
        stats: None,
    })
}

/// Standardizes every stream to zero mean and unit population variance, recording the statistics.
pub fn standardize<T: Scalar>(params: &ExpressiveParams<T>) -> ExpressiveParams<T> {
    let stats = params.values.map(|_, v| {
        let (mean, std) = mean_std(v);
        StreamStats { mean, std }
    });
    let values = params.values.map(|s, v| v.iter().map(|&x| stats[s].standardize(x)).collect());
    ExpressiveParams { values, stats: Some(stats), ..params.clone() }
}

impl<T: Scalar> ExpressiveParams<T> {
    /// Raw values recovered from standardized ones; `None` if not standardized.
    pub fn destandardized(&self) -> Option<PerStream<Vec<T>>> {
        let stats = self.stats.as_ref()?;
        Some(self.values.map(|s, v| v.iter().map(|&z| stats[s].destandardize(z)).collect()))
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        #[serde(bound = "T: Scalar")]
        struct StreamDoc<'a, T> {
            values: &'a [T],
            mean: Option<T>,
            std: Option<T>,
        }
        let doc = self.values.map(|s, v| StreamDoc {
            values: v,
            mean: self.stats.as_ref().map(|st| st[s].mean),
            std: self.stats.as_ref().map(|st| st[s].std),
        });
        serde_json::to_string_pretty(&doc).expect("params serialization is infallible")
    }
}

/// Rendering inputs for [`decode`]: the mean beat period and the pair used to
/// de-standardize each stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeControls {
    /// Seconds per beat.
    pub mean_beat_period: f64,
    pub destandardize: PerStream<StreamStats<f64>>,
}

impl Default for DecodeControls {
    fn default() -> Self {
        Self {
            mean_beat_period: 0.5,
            destandardize: PerStream {
                vt: StreamStats::new(64.0, 12.0),
                lbpr: StreamStats::new(0.0, 0.15),
                vd: StreamStats::new(-5.0, 4.0),
                tim: StreamStats::new(0.0, 0.012),
                art: StreamStats::new(0.0, 0.25),
            },
        }
    }
}

impl DecodeControls {
    /// Controls reproducing the performance `params` were encoded from.
    pub fn from_params<T: Scalar>(params: &ExpressiveParams<T>) -> Option<Self> {
        let stats = params.stats.as_ref()?;
        Some(Self {
            mean_beat_period: params.mean_beat_period,
            destandardize: stats.map(|_, s| StreamStats::new(s.mean.as_f64(), s.std.as_f64())),
        })
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.mean_beat_period.is_finite() && self.mean_beat_period > 0.0) {
            return Err(CodecError::InvalidControls("mean_beat_period must be positive".into()));
        }
        for (s, st) in self.destandardize.iter() {
            if !st.mean.is_finite() || !st.std.is_finite() || st.std < 0.0 {
                return Err(CodecError::InvalidControls(format!("{s}: mean must be finite and std ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Renders standardized streams into a performance.
pub fn decode<T: Scalar>(
    score: &Score,
    standardized: &PerStream<Vec<T>>,
    controls: &DecodeControls,
) -> Result<Performance, CodecError> {
    Ok(decode_aligned(score, standardized, controls)?.0)
}

/// Like [`decode`], also returning the alignment from score notes to the rendered notes.
pub fn decode_aligned<T: Scalar>(
    score: &Score,
    standardized: &PerStream<Vec<T>>,
    controls: &DecodeControls,
) -> Result<(Performance, Alignment), CodecError> {
    controls.validate()?;
    let index = build_onset_index(score);
    check_lengths(standardized, &index, score.notes().len())?;
    let raw = standardized.map(|s, v| {
        let st = controls.destandardize[s];
        v.iter().map(|&z| st.destandardize(z.as_f64())).collect::<Vec<f64>>()
    });

    let beats = index.onsets();
    let bp: Vec<f64> = raw.lbpr.iter().map(|&l| controls.mean_beat_period * l.exp()).collect();
    let mut grid = vec![0.0; beats.len()];
    for i in 1..beats.len() {
        grid[i] = grid[i - 1] + (beats[i] - beats[i - 1]) * bp[i - 1];
    }

    let notes: Vec<PerformedNote> = score
        .notes()
        .iter()
        .enumerate()
        .map(|(n, note)| {
            let i = index.onset_of(n);
            let velocity = (raw.vt[i] + raw.vd[n].min(0.0)).round().clamp(1.0, 127.0) as u8;
            PerformedNote {
                pitch: note.pitch,
                onset_sec: (grid[i] + raw.tim[n]).max(0.0),
                duration_sec: note.duration_beats * bp[i] * raw.art[n].exp(),
                velocity,
            }
        })
        .collect();

    // Map each score note to its slot after the performance sorts its notes.
    let mut order: Vec<usize> = (0..notes.len()).collect();
    order.sort_by(|&a, &b| notes[a].onset_sec.total_cmp(&notes[b].onset_sec).then(notes[a].pitch.cmp(&notes[b].pitch)));
    let mut slot = vec![0; notes.len()];
    for (pos, &n) in order.iter().enumerate() {
        slot[n] = pos;
    }
    let alignment = Alignment::from_pairs(score.notes().iter().zip(&slot).map(|(n, &k)| (n.id.clone(), k)));
    Ok((Performance::new(notes)?, alignment))
}

fn check_lengths<T>(v: &PerStream<Vec<T>>, index: &OnsetIndex, n: usize) -> Result<(), CodecError> {
    for (s, values) in v.iter() {
        let expected = if s.is_onset_wise() { index.len() } else { n };
        if values.len() != expected {
            return Err(CodecError::LengthMismatch { stream: s, expected, got: values.len() });
        }
    }
    Ok(())
}

impl<T> ExpressiveParams<T> {
    pub fn stream(&self, s: Stream) -> &[T] {
        &self.values[s]
    }
}
