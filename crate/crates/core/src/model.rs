//! Trained model bundle: the onset and note networks plus the feature
//! normalization they were trained with.

use serde::{Deserialize, Serialize};

use crate::basis::{note_basis, onset_mean, BasisError, FeatureSpec, FeatureStats, NUM_FEATURES};
use crate::codec::{encode, standardize, Alignment, CodecError, EncodeOptions, Performance, Stream};
use crate::matrix::Matrix;
use crate::neural::{train, CellKind, EpochLoss, NetworkConfig, NetworkDoc, NetworkParams, NeuralError, Sample, TrainingConfig};
use crate::num::Scalar;
use crate::score::{build_onset_index, Score};

pub const MODEL_FORMAT: &str = "contempo-model/1";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format {0:?}")]
    Format(String),
    #[error("model {which} network: {source}")]
    Network { which: &'static str, source: NeuralError },
    #[error("{which} network has {got} {what}, expected {expected}")]
    Shape { which: &'static str, what: &'static str, expected: usize, got: usize },
    #[error("piece {piece}: {source}")]
    Piece { piece: usize, source: CodecError },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub feature_spec: FeatureSpec,
    pub feature_stats: FeatureStats<T>,
    /// Outputs `[vt, lbpr]` per onset.
    pub onset_model: NetworkParams<T>,
    /// Outputs `[vd, tim, art]` per note.
    pub note_model: NetworkParams<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelDoc<T> {
    format: String,
    feature_spec: FeatureSpec,
    feature_stats: FeatureStats<T>,
    onset_model: NetworkDoc<T>,
    note_model: NetworkDoc<T>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(
        feature_stats: FeatureStats<T>,
        onset_model: NetworkParams<T>,
        note_model: NetworkParams<T>,
    ) -> Result<Self, ModelError> {
        let bundle = Self { feature_spec: FeatureSpec::default(), feature_stats, onset_model, note_model };
        bundle.check()?;
        Ok(bundle)
    }

    /// Untrained networks with identity feature scaling, for tests and demos.
    pub fn untrained(cell: CellKind, hidden_size: usize, seed: u64) -> Result<Self, ModelError> {
        let stats = FeatureStats { mean: vec![T::zero(); NUM_FEATURES], std: vec![T::one(); NUM_FEATURES] };
        let onset = NetworkParams::init(&NetworkConfig { cell, hidden_size, input_size: NUM_FEATURES, output_size: 2, seed })?;
        let note = NetworkParams::init(&NetworkConfig { cell, hidden_size, input_size: NUM_FEATURES, output_size: 3, seed: seed + 1 })?;
        Self::new(stats, onset, note)
    }

    fn check(&self) -> Result<(), ModelError> {
        let k = self.feature_spec.len();
        for (which, net, outputs) in [("onset", &self.onset_model, 2), ("note", &self.note_model, 3)] {
            if net.config().input_size != k {
                return Err(ModelError::Shape { which, what: "inputs", expected: k, got: net.config().input_size });
            }
            if net.config().output_size != outputs {
                return Err(ModelError::Shape { which, what: "outputs", expected: outputs, got: net.config().output_size });
            }
        }
        if self.feature_stats.mean.len() != k || self.feature_stats.std.len() != k {
            return Err(ModelError::Shape { which: "feature", what: "statistics", expected: k, got: self.feature_stats.mean.len() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            format: MODEL_FORMAT.to_owned(),
            feature_spec: self.feature_spec.clone(),
            feature_stats: self.feature_stats.clone(),
            onset_model: self.onset_model.to_doc(),
            note_model: self.note_model.to_doc(),
        };
        serde_json::to_string(&doc).expect("model serialization is infallible")
    }

    /// Loads a bundle. The feature set version is kept as stored; callers
    /// compare it against [`FeatureSpec::default`] before evaluating.
    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        let doc: ModelDoc<T> = serde_json::from_slice(bytes)?;
        if doc.format != MODEL_FORMAT {
            return Err(ModelError::Format(doc.format));
        }
        let onset_model = NetworkParams::from_doc(&doc.onset_model).map_err(|source| ModelError::Network { which: "onset", source })?;
        let note_model = NetworkParams::from_doc(&doc.note_model).map_err(|source| ModelError::Network { which: "note", source })?;
        let bundle = Self { feature_spec: doc.feature_spec, feature_stats: doc.feature_stats, onset_model, note_model };
        bundle.check()?;
        Ok(bundle)
    }
}

/// An aligned score/performance pair.
#[derive(Clone, Debug)]
pub struct TrainingPiece {
    pub score: Score,
    pub performance: Performance,
    pub alignment: Alignment,
}

/// Network inputs and standardized targets for a corpus.
#[derive(Clone, Debug)]
pub struct PreparedCorpus<T> {
    pub feature_stats: FeatureStats<T>,
    /// Targets `[vt, lbpr]`.
    pub onset_samples: Vec<Sample<T>>,
    /// Targets `[vd, tim, art]`.
    pub note_samples: Vec<Sample<T>>,
}

fn target_matrix<T: Scalar>(columns: &[&[T]]) -> Matrix<T> {
    let rows = columns[0].len();
    let mut m = Matrix::zeros(rows, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Encodes and standardizes every piece, fits corpus feature statistics and
/// builds the onset and note training sequences.
pub fn prepare_corpus<T: Scalar>(corpus: &[TrainingPiece]) -> Result<PreparedCorpus<T>, ModelError> {
    let mut bases = Vec::with_capacity(corpus.len());
    let mut targets = Vec::with_capacity(corpus.len());
    for (piece, p) in corpus.iter().enumerate() {
        let params = encode::<T>(&p.score, &p.performance, &p.alignment, EncodeOptions::default())
            .map_err(|source| ModelError::Piece { piece, source })?;
        let index = build_onset_index(&p.score);
        bases.push((note_basis::<T>(&p.score, &index), index));
        targets.push(standardize(&params));
    }
    let feature_stats = FeatureStats::fit(bases.iter().map(|(b, _)| &b.rows))?;
    let mut onset_samples = Vec::with_capacity(corpus.len());
    let mut note_samples = Vec::with_capacity(corpus.len());
    for ((basis, index), params) in bases.iter().zip(&targets) {
        let inputs = feature_stats.apply(&basis.rows)?;
        onset_samples.push(Sample {
            inputs: onset_mean(&inputs, index),
            targets: target_matrix(&[params.stream(Stream::Vt), params.stream(Stream::Lbpr)]),
        });
        note_samples.push(Sample {
            inputs,
            targets: target_matrix(&[params.stream(Stream::Vd), params.stream(Stream::Tim), params.stream(Stream::Art)]),
        });
    }
    Ok(PreparedCorpus { feature_stats, onset_samples, note_samples })
}

/// Architecture shared by both networks of a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub cell: CellKind,
    pub hidden_size: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { cell: CellKind::Lstm, hidden_size: 16 }
    }
}

pub struct TrainedBundle<T> {
    pub bundle: ModelBundle<T>,
    pub onset_history: Vec<EpochLoss>,
    pub note_history: Vec<EpochLoss>,
}

/// Trains the onset and note networks on an aligned corpus.
///
/// The onset network is seeded with `training.seed`, the note network with `training.seed + 1`.
pub fn train_bundle<T: Scalar>(
    corpus: &[TrainingPiece],
    arch: Architecture,
    training: &TrainingConfig,
) -> Result<TrainedBundle<T>, ModelError> {
    let prepared = prepare_corpus::<T>(corpus)?;
    let cfg = |outputs, seed| NetworkConfig { cell: arch.cell, hidden_size: arch.hidden_size, input_size: NUM_FEATURES, output_size: outputs, seed };
    let onset = train(&cfg(2, training.seed), &prepared.onset_samples, training)?;
    let note_training = TrainingConfig { seed: training.seed.wrapping_add(1), ..training.clone() };
    let note = train(&cfg(3, note_training.seed), &prepared.note_samples, &note_training)?;
    Ok(TrainedBundle {
        bundle: ModelBundle::new(prepared.feature_stats, onset.params, note.params)?,
        onset_history: onset.history,
        note_history: note.history,
    })
}
