use serde::{Deserialize, Serialize};

use super::{apply_weights, linearize, shape_mean_std, ContributionMatrix, LinearizeError, ReferenceMode, WeightVector};
use crate::basis::{note_basis, onset_mean, BasisMatrix, FeatureSpec};
use crate::codec::{decode_aligned, Alignment, DecodeControls, PerStream, Performance, Stream, StreamStats};
use crate::matrix::Matrix;
use crate::model::ModelBundle;
use crate::num::Scalar;
use crate::score::{build_onset_index, OnsetIndex, Score};

/// Constant and mean/spread shaping of one stream, in standardized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamControl {
    pub c: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for StreamControl {
    fn default() -> Self {
        Self { c: 0.0, mu: 0.0, sigma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderControls {
    pub streams: PerStream<StreamControl>,
    /// Seconds per beat at lbpr = 0.
    pub mean_beat_period: f64,
    /// Maps standardized streams back to MIDI velocity, seconds and log ratios.
    pub destandardize: PerStream<StreamStats<f64>>,
}

impl Default for RenderControls {
    fn default() -> Self {
        let decode = DecodeControls::default();
        Self {
            streams: PerStream::default(),
            mean_beat_period: decode.mean_beat_period,
            destandardize: decode.destandardize,
        }
    }
}

impl RenderControls {
    pub fn validate(&self) -> Result<(), LinearizeError> {
        for (s, ctl) in self.streams.iter() {
            if !ctl.c.is_finite() || !ctl.mu.is_finite() || !ctl.sigma.is_finite() {
                return Err(LinearizeError::Controls(format!("{s}: c, mu and sigma must be finite")));
            }
            if ctl.sigma < 0.0 {
                return Err(LinearizeError::NegativeSigma { stream: s.name().to_owned(), sigma: ctl.sigma });
            }
        }
        if !(self.mean_beat_period.is_finite() && self.mean_beat_period > 0.0) {
            return Err(LinearizeError::Controls("beat_period must be positive".into()));
        }
        self.decode_controls().validate()?;
        Ok(())
    }

    pub fn decode_controls(&self) -> DecodeControls {
        DecodeControls { mean_beat_period: self.mean_beat_period, destandardize: self.destandardize.clone() }
    }
}

/// A rendered performance and the shaped streams it was decoded from.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering<T> {
    pub curves: PerStream<Vec<T>>,
    pub performance: Performance,
    /// Score note id to index in `performance`.
    pub alignment: Alignment,
}

/// Everything about a piece that does not depend on the sliders: features and
/// the contribution matrices of all five streams.
#[derive(Clone, Debug)]
pub struct PieceAnalysis<T> {
    score: Score,
    onsets: OnsetIndex,
    note_features: BasisMatrix<T>,
    note_inputs: Matrix<T>,
    onset_inputs: Matrix<T>,
    contributions: PerStream<ContributionMatrix<T>>,
}

impl<T: Scalar> PieceAnalysis<T> {
    pub fn new(score: &Score, models: &ModelBundle<T>, mode: ReferenceMode) -> Result<Self, LinearizeError> {
        let expected = FeatureSpec::default();
        if models.feature_spec != expected {
            return Err(LinearizeError::FeatureVersion { model: models.feature_spec.version.clone(), expected: expected.version });
        }
        let onsets = build_onset_index(score);
        let note_features: BasisMatrix<T> = note_basis(score, &onsets);
        let note_inputs = models.feature_stats.apply(&note_features.rows)?;
        let onset_inputs = onset_mean(&note_inputs, &onsets);
        let stream = |s: Stream| -> Result<ContributionMatrix<T>, LinearizeError> {
            let (net, phi) = if s.is_onset_wise() { (&models.onset_model, &onset_inputs) } else { (&models.note_model, &note_inputs) };
            linearize(net, phi, s.output_index(), s, mode)
        };
        let contributions = PerStream {
            vt: stream(Stream::Vt)?,
            lbpr: stream(Stream::Lbpr)?,
            vd: stream(Stream::Vd)?,
            tim: stream(Stream::Tim)?,
            art: stream(Stream::Art)?,
        };
        Ok(Self { score: score.clone(), onsets, note_features, note_inputs, onset_inputs, contributions })
    }

    pub fn score(&self) -> &Score {
        &self.score
    }

    pub fn onsets(&self) -> &OnsetIndex {
        &self.onsets
    }

    /// Raw (unnormalized) note-wise features.
    pub fn note_features(&self) -> &BasisMatrix<T> {
        &self.note_features
    }

    /// Normalized network inputs for the note model.
    pub fn note_inputs(&self) -> &Matrix<T> {
        &self.note_inputs
    }

    /// Normalized network inputs for the onset model.
    pub fn onset_inputs(&self) -> &Matrix<T> {
        &self.onset_inputs
    }

    pub fn contributions(&self, stream: Stream) -> &ContributionMatrix<T> {
        &self.contributions[stream]
    }

    /// Beat position of every row of `stream`'s contribution matrix.
    pub fn row_beats(&self, stream: Stream) -> Vec<f64> {
        if stream.is_onset_wise() {
            self.onsets.onsets().to_vec()
        } else {
            self.score.notes().iter().map(|n| n.onset_beats).collect()
        }
    }

    /// Weighted, shaped streams in standardized units.
    pub fn curves(&self, weights: &PerStream<WeightVector<T>>, controls: &RenderControls) -> Result<PerStream<Vec<T>>, LinearizeError> {
        controls.validate()?;
        weights.try_map(|s, w| {
            w.validate(self.contributions[s].c.cols()).map_err(|e| LinearizeError::Weights(format!("{s}: {e}")))?;
            let ctl = controls.streams[s];
            let y = apply_weights(&self.contributions[s].c, w, T::of(ctl.c))?;
            shape_mean_std(&y, T::of(ctl.mu), T::of(ctl.sigma))
        })
    }

    pub fn perform(&self, curves: &PerStream<Vec<T>>, controls: &RenderControls) -> Result<(Performance, Alignment), LinearizeError> {
        Ok(decode_aligned(&self.score, curves, &controls.decode_controls())?)
    }

    pub fn render(&self, weights: &PerStream<WeightVector<T>>, controls: &RenderControls) -> Result<Rendering<T>, LinearizeError> {
        let curves = self.curves(weights, controls)?;
        let (performance, alignment) = self.perform(&curves, controls)?;
        Ok(Rendering { curves, performance, alignment })
    }

    /// All-ones weights, the unmodified linearized model.
    pub fn default_weights(&self) -> PerStream<WeightVector<T>> {
        PerStream::from_fn(|s| WeightVector::ones(self.contributions[s].c.cols()))
    }
}

/// One-shot pipeline: features, reference, Jacobians, contributions, weights, shaping, decoding.
pub fn render<T: Scalar>(
    score: &Score,
    models: &ModelBundle<T>,
    weights: &PerStream<WeightVector<T>>,
    controls: &RenderControls,
) -> Result<Rendering<T>, LinearizeError> {
    PieceAnalysis::new(score, models, ReferenceMode::default())?.render(weights, controls)
}
