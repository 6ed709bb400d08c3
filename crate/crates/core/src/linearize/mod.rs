//! Locally-linear approximation of a trained model around a reference point.
//!
//! For a network `f` and reference input `Φ*` (every row equal to the
//! reference vector `φ̄`), the first-order expansion of output step `i` is
//!
//! ```text
//! f(Φ)_i ≈ f(Φ*)_i + Σ_t Σ_j G[i][t][j] · (Φ[t][j] − φ̄[j])
//! ```
//!
//! with `G` the input Jacobian at `Φ*`. Summing over source time `t` gives the
//! contribution matrix `C[i][j]`: how much feature `j` moves step `i`. A
//! rendering re-weights the columns of `C`, adds a constant and reshapes the
//! result's mean and spread.

mod render;

use serde::{Deserialize, Serialize};

use crate::codec::Stream;
use crate::matrix::Matrix;
use crate::neural::{Jacobian, NetworkParams, NeuralError};
use crate::num::Scalar;

pub use render::{render, PieceAnalysis, RenderControls, Rendering, StreamControl};

#[derive(Debug, thiserror::Error)]
pub enum LinearizeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sigma for stream {stream} must be ≥ 0, got {sigma}")]
    NegativeSigma { stream: String, sigma: f64 },
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid controls: {0}")]
    Controls(String),
    #[error("model was built for feature set {model:?}, this build evaluates {expected:?}")]
    FeatureVersion { model: String, expected: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Basis(#[from] crate::basis::BasisError),
}

/// How the expansion point `φ̄` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Per-piece column mean of the (normalized) feature matrix.
    #[default]
    ColumnMean,
    /// The origin of the normalized feature space.
    Zero,
}

/// Per-feature slider weights for one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "T: Scalar")]
pub struct WeightVector<T>(pub Vec<T>);

impl<T: Scalar> WeightVector<T> {
    pub fn ones(k: usize) -> Self {
        Self(vec![T::one(); k])
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![T::zero(); k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, k: usize) -> Result<(), LinearizeError> {
        if self.0.len() != k {
            return Err(LinearizeError::Weights(format!("expected {k} weights, got {}", self.0.len())));
        }
        if let Some(j) = self.0.iter().position(|w| !w.is_finite()) {
            return Err(LinearizeError::Weights(format!("weight {j} is not finite")));
        }
        Ok(())
    }
}

/// Feature contributions to one expressive stream over time.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMatrix<T> {
    pub stream: Stream,
    /// T × K.
    pub c: Matrix<T>,
    pub reference: Vec<T>,
    /// Model output at the reference input, per step.
    pub baseline: Vec<T>,
}

impl<T: Scalar> ContributionMatrix<T> {
    /// First-order Taylor value of the model at the analysed input.
    pub fn taylor(&self) -> Vec<T> {
        self.c.row_iter().zip(&self.baseline).map(|(row, &b)| b + row.iter().copied().sum::<T>()).collect()
    }

    /// Mean of the baseline, the natural choice of constant for [`apply_weights`].
    pub fn baseline_mean(&self) -> T {
        let n = T::of(self.baseline.len() as f64);
        self.baseline.iter().copied().sum::<T>() / n
    }
}

/// Column means of `phi`.
pub fn reference_point<T: Scalar>(phi: &Matrix<T>) -> Vec<T> {
    let n = T::of(phi.rows() as f64);
    let mut mean = vec![T::zero(); phi.cols()];
    for row in phi.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

pub fn reference_for<T: Scalar>(phi: &Matrix<T>, mode: ReferenceMode) -> Vec<T> {
    match mode {
        ReferenceMode::ColumnMean => reference_point(phi),
        ReferenceMode::Zero => vec![T::zero(); phi.cols()],
    }
}

/// `C[i][j] = Σ_t G[i][t][j] · (Φ[t][j] − φ̄[j])`.
pub fn contributions<T: Scalar>(jacobian: &Jacobian<T>, phi: &Matrix<T>, reference: &[T]) -> Result<Matrix<T>, LinearizeError> {
    let (steps, k) = phi.shape();
    if reference.len() != k {
        return Err(LinearizeError::Shape(format!("reference has {} entries, features have {k}", reference.len())));
    }
    if jacobian.steps().iter().any(|g| g.shape() != (steps, k)) {
        return Err(LinearizeError::Shape(format!("jacobian slices must be {steps}×{k}")));
    }
    let mut c = Matrix::zeros(jacobian.len(), k);
    for (i, g) in jacobian.steps().iter().enumerate() {
        let out = c.row_mut(i);
        for t in 0..steps {
            for ((o, (&gv, &x)), &r) in out.iter_mut().zip(g.row(t).iter().zip(phi.row(t))).zip(reference) {
                *o += gv * (x - r);
            }
        }
    }
    Ok(c)
}

/// `ỹ_i = c + Σ_j w_j · C[i][j]`.
pub fn apply_weights<T: Scalar>(c: &Matrix<T>, weights: &WeightVector<T>, constant: T) -> Result<Vec<T>, LinearizeError> {
    if weights.len() != c.cols() {
        return Err(LinearizeError::Weights(format!("expected {} weights, got {}", c.cols(), weights.len())));
    }
    Ok(c.row_iter().map(|row| constant + row.iter().zip(&weights.0).map(|(&v, &w)| w * v).sum::<T>()).collect())
}

/// `ŷ_i = μ + σ·ỹ_i`.
pub fn shape_mean_std<T: Scalar>(values: &[T], mu: T, sigma: T) -> Result<Vec<T>, LinearizeError> {
    if sigma.is_nan() || sigma < T::zero() {
        return Err(LinearizeError::NegativeSigma { stream: String::new(), sigma: sigma.as_f64() });
    }
    Ok(values.iter().map(|&v| mu + sigma * v).collect())
}

/// Expands output `dim` of `network` around the reference of `phi`.
pub fn linearize<T: Scalar>(
    network: &NetworkParams<T>,
    phi: &Matrix<T>,
    dim: usize,
    stream: Stream,
    mode: ReferenceMode,
) -> Result<ContributionMatrix<T>, LinearizeError> {
    let reference = reference_for(phi, mode);
    let at = Matrix::broadcast_row(phi.rows(), &reference);
    let jacobian = network.input_jacobian(&at, dim)?;
    let c = contributions(&jacobian, phi, &reference)?;
    let baseline = network.forward(&at)?.column(dim);
    Ok(ContributionMatrix { stream, c, reference, baseline })
}

impl<T: Scalar> ContributionMatrix<T> {
    /// CSV with a row key column followed by one column per feature.
    pub fn to_csv<W: std::io::Write>(&self, writer: W, keys: &[String], names: &[String]) -> Result<(), crate::basis::BasisError> {
        crate::basis::write_features_csv(writer, "row", keys, names, &self.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetworkConfig;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows[0].len(), rows.iter().copied())
    }

    #[test]
    fn reference_is_column_mean() {
        assert_eq!(reference_point(&m(&[&[0.0, 3.0], &[2.0, 3.0]])), [1.0, 3.0]);
        assert_eq!(reference_point(&m(&[&[1.5, -2.0], &[1.5, -2.0], &[1.5, -2.0]])), [1.5, -2.0]);
    }

    #[test]
    fn linear_model_contributions_are_exact() {
        // y_i = Σ_j a_j Φ[i][j] has G[i][t][j] = a_j·[i == t].
        let a = [0.5, -2.0, 1.25];
        let phi = m(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, -1.0], &[3.0, 2.0, 0.5], &[-1.0, 0.5, 0.0]]);
        let steps = (0..4)
            .map(|i| {
                let mut g = Matrix::zeros(4, 3);
                g.row_mut(i).copy_from_slice(&a);
                g
            })
            .collect();
        let jac = Jacobian::from_steps(steps);
        let r = reference_point(&phi);
        let c = contributions(&jac, &phi, &r).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(c[(i, j)], a[j] * (phi[(i, j)] - r[j]));
            }
        }
    }

    #[test]
    fn zero_displacement_gives_zero_contributions() {
        let net = NetworkParams::<f64>::init(&NetworkConfig { hidden_size: 3, ..NetworkConfig::new(2, 1) }).unwrap();
        let phi = Matrix::broadcast_row(5, &[0.3, -0.1]);
        let cm = linearize(&net, &phi, 0, Stream::Lbpr, ReferenceMode::ColumnMean).unwrap();
        assert!(cm.c.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(cm.taylor(), net.forward(&phi).unwrap().column(0));
    }

    #[test]
    fn zero_weights_give_constant() {
        let c = m(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        assert_eq!(apply_weights(&c, &WeightVector::zeros(2), 0.7).unwrap(), [0.7, 0.7]);
        assert!(apply_weights(&c, &WeightVector::ones(3), 0.0).is_err());
    }

    #[test]
    fn isolating_one_column() {
        let c = m(&[&[1.0, 2.0, 4.0], &[-3.0, 0.5, 1.0]]);
        let w = WeightVector(vec![0.0, 1.5, 0.0]);
        let y = apply_weights(&c, &w, 2.0).unwrap();
        assert_eq!(y, [2.0 + 1.5 * 2.0, 2.0 + 1.5 * 0.5]);
    }

    #[test]
    fn shaping() {
        let y = [0.5f64, -1.0, 2.0];
        assert_eq!(shape_mean_std(&y, 0.0, 1.0).unwrap(), y);
        assert_eq!(shape_mean_std(&y, 0.3, 0.0).unwrap(), [0.3; 3]);
        let s = shape_mean_std(&y, 1.0, 2.0).unwrap();
        let (_, sd) = crate::num::mean_std(&s);
        let (_, sd0) = crate::num::mean_std(&y);
        assert!((sd - 2.0 * sd0).abs() < 1e-15);
        assert!(matches!(shape_mean_std(&y, 0.0, -1.0), Err(LinearizeError::NegativeSigma { .. })));
    }

    proptest! {
        #[test]
        fn weights_are_affine(
            c in proptest::collection::vec(-10.0f64..10.0, 12),
            w in proptest::collection::vec(-3.0f64..3.0, 4),
            v in proptest::collection::vec(-3.0f64..3.0, 4),
            alpha in -4.0f64..4.0,
            constant in -2.0f64..2.0,
        ) {
            let c = Matrix::from_vec(3, 4, c);
            let base = apply_weights(&c, &WeightVector(w.clone()), constant).unwrap();
            let scaled = apply_weights(&c, &WeightVector(w.iter().map(|x| alpha * x).collect()), constant).unwrap();
            let other = apply_weights(&c, &WeightVector(v.clone()), constant).unwrap();
            let sum = apply_weights(&c, &WeightVector(w.iter().zip(&v).map(|(a, b)| a + b).collect()), constant).unwrap();
            for i in 0..3 {
                prop_assert!(((scaled[i] - constant) - alpha * (base[i] - constant)).abs() < 1e-12);
                prop_assert!(((sum[i] - constant) - (base[i] - constant) - (other[i] - constant)).abs() < 1e-12);
            }
        }

        #[test]
        fn contributions_are_linear_in_displacement(
            g in proptest::collection::vec(-1.0f64..1.0, 18),
            d in proptest::collection::vec(-1.0f64..1.0, 6),
            alpha in -3.0f64..3.0,
        ) {
            let jac = Jacobian::from_steps(g.chunks(6).map(|s| Matrix::from_vec(3, 2, s.to_vec())).collect());
            let reference = [0.25, -0.5];
            let shifted = |scale: f64| {
                Matrix::from_vec(3, 2, d.iter().enumerate().map(|(n, &x)| reference[n % 2] + scale * x).collect())
            };
            let c1 = contributions(&jac, &shifted(1.0), &reference).unwrap();
            let ca = contributions(&jac, &shifted(alpha), &reference).unwrap();
            for (a, b) in ca.as_slice().iter().zip(c1.as_slice()) {
                prop_assert!((a - alpha * b).abs() < 1e-12);
            }
        }
    }
}
