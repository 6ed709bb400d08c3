//! Expressive performance modelling with user-shaped, locally linear
//! explanations.
//!
//! A score is encoded as per-note basis functions, a pair of bidirectional
//! recurrent networks predicts five expressive streams (velocity trend, log
//! beat period ratio, velocity deviation, timing, articulation), and each
//! prediction is expanded to first order around a reference input so that
//! every feature's contribution can be re-weighted independently before the
//! streams are decoded back into a performance.
//!
//! The numeric modules are generic over [`num::Scalar`]; the aliases below fix
//! the scalar to `f64`, which is what the tools and the service use.

pub mod basis;
pub mod codec;
pub mod linearize;
pub mod matrix;
pub mod model;
pub mod neural;
pub mod num;
pub mod score;
pub mod synthetic;

pub use codec::{Performance, PerformedNote, Stream};
pub use num::Scalar;
pub use score::Score;

pub type Matrix = matrix::Matrix<f64>;
pub type BasisMatrix = basis::BasisMatrix<f64>;
pub type FeatureStats = basis::FeatureStats<f64>;
pub type ExpressiveParams = codec::ExpressiveParams<f64>;
pub type Network = neural::NetworkParams<f64>;
pub type NetworkF32 = neural::NetworkParams<f32>;
pub type Jacobian = neural::Jacobian<f64>;
pub type ContributionMatrix = linearize::ContributionMatrix<f64>;
pub type WeightVector = linearize::WeightVector<f64>;
pub type PieceAnalysis = linearize::PieceAnalysis<f64>;
pub type ModelBundle = model::ModelBundle<f64>;

/// Any failure of the modelling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Score(#[from] score::ScoreError),
    #[error(transparent)]
    Basis(#[from] basis::BasisError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Midi(#[from] codec::MidiError),
    #[error(transparent)]
    Neural(#[from] neural::NeuralError),
    #[error(transparent)]
    Linearize(#[from] linearize::LinearizeError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}
