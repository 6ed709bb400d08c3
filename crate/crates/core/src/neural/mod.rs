//! Bidirectional recurrent sequence regressors with hand-written
//! backpropagation through time.
//!
//! A network runs one recurrent cell left-to-right and a second one
//! right-to-left over the input rows, then maps the concatenated hidden
//! states of each step through a linear head.

mod network;
mod train;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::num::Scalar;

pub use network::Jacobian;
pub use train::{train, write_training_log, EpochLoss, Sample, TrainingConfig, TrainingOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input has {got} columns, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("target shape {got:?} does not match output shape {expected:?}")]
    TargetShape { expected: (usize, usize), got: (usize, usize) },
    #[error("empty sequence")]
    EmptySequence,
    #[error("output dimension {dim} out of range for {outputs} outputs")]
    OutputDim { dim: usize, outputs: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    TrainingConfig(String),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("malformed weights: {0}")]
    Weights(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Lstm,
    TanhRnn,
}

impl CellKind {
    /// Pre-activation blocks per hidden unit.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::TanhRnn => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub cell: CellKind,
    /// Hidden units per direction.
    pub hidden_size: usize,
    pub input_size: usize,
    pub output_size: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// LSTM with 16 hidden units per direction and seed 0.
    pub fn new(input_size: usize, output_size: usize) -> Self {
        Self { cell: CellKind::Lstm, hidden_size: 16, input_size, output_size, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.hidden_size == 0 || self.input_size == 0 || self.output_size == 0 {
            return Err(NeuralError::Config("hidden, input and output sizes must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Total number of scalar parameters:
    /// `2·(G·H·K + G·H·H + G·H) + O·2H + O` with `G` gates per unit.
    pub fn param_count(&self) -> usize {
        let l = Layout::of(self);
        l.head_bias().end
    }
}

/// Offsets of each tensor inside the flat parameter buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub gh: usize,
    pub h: usize,
    pub k: usize,
    pub o: usize,
}

impl Layout {
    pub fn of(c: &NetworkConfig) -> Self {
        Self { gh: c.cell.gates() * c.hidden_size, h: c.hidden_size, k: c.input_size, o: c.output_size }
    }

    fn cell_len(&self) -> usize {
        self.gh * self.k + self.gh * self.h + self.gh
    }

    /// Parameters of the forward (`0`) or backward (`1`) cell.
    pub fn cell(&self, dir: usize) -> Range<usize> {
        let start = dir * self.cell_len();
        start..start + self.cell_len()
    }

    pub fn head_weights(&self) -> Range<usize> {
        let start = 2 * self.cell_len();
        start..start + self.o * 2 * self.h
    }

    pub fn head_bias(&self) -> Range<usize> {
        let start = self.head_weights().end;
        start..start + self.o
    }

    /// `(w_in, w_rec, bias)` sub-ranges relative to a cell slice.
    pub fn cell_parts(&self) -> (Range<usize>, Range<usize>, Range<usize>) {
        let a = self.gh * self.k;
        let b = a + self.gh * self.h;
        (0..a, a..b, b..b + self.gh)
    }

    /// Named tensors with their shapes, in buffer order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, Range<usize>)> {
        let (wi, wr, b) = self.cell_parts();
        let mut out = Vec::new();
        for (dir, name) in ["forward", "backward"].iter().enumerate() {
            let base = self.cell(dir).start;
            out.push((format!("{name}.w_in"), vec![self.gh, self.k], base + wi.start..base + wi.end));
            out.push((format!("{name}.w_rec"), vec![self.gh, self.h], base + wr.start..base + wr.end));
            out.push((format!("{name}.bias"), vec![self.gh], base + b.start..base + b.end));
        }
        out.push(("head.w".into(), vec![self.o, 2 * self.h], self.head_weights()));
        out.push(("head.bias".into(), vec![self.o], self.head_bias()));
        out
    }
}

/// Weights of a bidirectional network, stored as one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    config: NetworkConfig,
    data: Vec<T>,
}

impl<T: Scalar> NetworkParams<T> {
    /// Seeded uniform(−s, s) weights with `s = 1/√fan_in` per matrix; zero biases.
    pub fn init(config: &NetworkConfig) -> Result<Self, NeuralError> {
        config.validate()?;
        let layout = Layout::of(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut data = vec![T::zero(); config.param_count()];
        for (name, shape, range) in layout.tensors() {
            if name.ends_with("bias") {
                continue;
            }
            let s = 1.0 / (shape[1] as f64).sqrt();
            for v in &mut data[range] {
                *v = T::of(rng.gen_range(-s..=s));
            }
        }
        Ok(Self { config: config.clone(), data })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self, NeuralError> {
        config.validate()?;
        Ok(Self { config: config.clone(), data: vec![T::zero(); config.param_count()] })
    }

    /// Wraps a flat buffer laid out as documented on [`NetworkConfig::param_count`].
    pub fn from_flat(config: &NetworkConfig, data: Vec<T>) -> Result<Self, NeuralError> {
        config.validate()?;
        if data.len() != config.param_count() {
            return Err(NeuralError::Weights(format!("expected {} values, got {}", config.param_count(), data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::Weights("non-finite weight".into()));
        }
        Ok(Self { config: config.clone(), data })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::of(&self.config)
    }

    /// Named sub-slice, e.g. `"forward.w_rec"` or `"head.bias"`.
    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        let (_, _, r) = self.layout().tensors().into_iter().find(|(n, _, _)| n == name)?;
        Some(&self.data[r])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let (_, _, r) = self.layout().tensors().into_iter().find(|(n, _, _)| n == name)?;
        Some(&mut self.data[r])
    }

    /// Network computing the time-reversed function: cells swapped and head halves exchanged.
    pub fn mirrored(&self) -> Self {
        let l = self.layout();
        let mut data = self.data.clone();
        let (f, b) = (l.cell(0), l.cell(1));
        data[f.clone()].copy_from_slice(&self.data[b.clone()]);
        data[b].copy_from_slice(&self.data[f]);
        let hw = l.head_weights();
        for r in 0..l.o {
            let row = hw.start + r * 2 * l.h;
            data[row..row + l.h].copy_from_slice(&self.data[row + l.h..row + 2 * l.h]);
            data[row + l.h..row + 2 * l.h].copy_from_slice(&self.data[row..row + l.h]);
        }
        Self { config: self.config.clone(), data }
    }

    pub fn to_doc(&self) -> NetworkDoc<T> {
        NetworkDoc {
            config: self.config.clone(),
            tensors: self
                .layout()
                .tensors()
                .into_iter()
                .map(|(name, shape, r)| TensorDoc { name, shape, values: self.data[r].to_vec() })
                .collect(),
        }
    }

    pub fn from_doc(doc: &NetworkDoc<T>) -> Result<Self, NeuralError> {
        doc.config.validate()?;
        let layout = Layout::of(&doc.config);
        let expected = layout.tensors();
        if expected.len() != doc.tensors.len() {
            return Err(NeuralError::Weights(format!("expected {} tensors, got {}", expected.len(), doc.tensors.len())));
        }
        let mut data = Vec::with_capacity(doc.config.param_count());
        for ((name, shape, _), t) in expected.iter().zip(&doc.tensors) {
            if &t.name != name || &t.shape != shape {
                return Err(NeuralError::Weights(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.values.len() != shape.iter().product::<usize>() {
                return Err(NeuralError::Weights(format!("tensor {name:?} has {} values", t.values.len())));
            }
            data.extend_from_slice(&t.values);
        }
        Self::from_flat(&doc.config, data)
    }
}

/// Serialized network: config plus named, shape-tagged weight arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetworkDoc<T> {
    pub config: NetworkConfig,
    pub tensors: Vec<TensorDoc<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TensorDoc<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let c = NetworkConfig::new(3, 2);
        let a = NetworkParams::<f64>::init(&c).unwrap();
        assert_eq!(a, NetworkParams::init(&c).unwrap());
        let other = NetworkParams::<f64>::init(&NetworkConfig { seed: 1, ..c.clone() }).unwrap();
        assert_ne!(a, other);
        assert!(a.tensor("forward.bias").unwrap().iter().all(|&v| v == 0.0));
        let s = 1.0 / 3f64.sqrt();
        assert!(a.tensor("forward.w_in").unwrap().iter().all(|v| v.abs() <= s));
        assert!(a.tensor("head.w").unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn parameter_count_formula() {
        for cell in [CellKind::Lstm, CellKind::TanhRnn] {
            let c = NetworkConfig { cell, hidden_size: 1, input_size: 1, output_size: 1, seed: 0 };
            let g = cell.gates();
            let (h, k, o) = (1, 1, 1);
            assert_eq!(c.param_count(), 2 * (g * h * k + g * h * h + g * h) + o * 2 * h + o);
        }
        assert_eq!(NetworkConfig { cell: CellKind::Lstm, hidden_size: 1, input_size: 1, output_size: 1, seed: 0 }.param_count(), 27);
        assert_eq!(NetworkConfig { cell: CellKind::TanhRnn, hidden_size: 1, input_size: 1, output_size: 1, seed: 0 }.param_count(), 9);
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(NetworkParams::<f64>::init(&NetworkConfig { hidden_size: 0, ..NetworkConfig::new(2, 1) }).is_err());
    }

    #[test]
    fn doc_round_trip_and_validation() {
        let p = NetworkParams::<f64>::init(&NetworkConfig { hidden_size: 3, ..NetworkConfig::new(2, 2) }).unwrap();
        let doc = p.to_doc();
        assert_eq!(doc.tensors[0].name, "forward.w_in");
        assert_eq!(doc.tensors[0].shape, [12, 2]);
        assert_eq!(NetworkParams::from_doc(&doc).unwrap(), p);
        let mut bad = doc.clone();
        bad.tensors[1].values.pop();
        assert!(NetworkParams::from_doc(&bad).is_err());
        let mut bad = doc;
        bad.tensors.swap(0, 1);
        assert!(NetworkParams::from_doc(&bad).is_err());
    }
}
