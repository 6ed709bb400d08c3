use std::sync::{Arc, Mutex};

use contempo_core::codec::{write_midi, PerStream};
use contempo_core::linearize::{RenderControls, Rendering, WeightVector};
use contempo_core::PieceAnalysis;

use crate::error::ApiError;

/// Controls in force and everything rendered from them.
#[derive(Debug)]
pub(crate) struct Snapshot {
    pub weights: PerStream<WeightVector<f64>>,
    pub controls: RenderControls,
    pub rendering: Rendering<f64>,
    pub midi: Vec<u8>,
}

/// One uploaded piece. The analysis is immutable; the rendered state is
/// swapped as a whole so readers never observe a partial update.
#[derive(Debug)]
pub struct Session {
    pub(crate) id: String,
    pub(crate) analysis: PieceAnalysis,
    current: Mutex<Arc<Snapshot>>,
}

pub(crate) fn render_snapshot(
    analysis: &PieceAnalysis,
    weights: PerStream<WeightVector<f64>>,
    controls: RenderControls,
) -> Result<Snapshot, ApiError> {
    let rendering = analysis.render(&weights, &controls).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let midi = write_midi(&rendering.performance);
    Ok(Snapshot { weights, controls, rendering, midi })
}

impl Session {
    pub(crate) fn new(id: String, analysis: PieceAnalysis) -> Result<Self, ApiError> {
        let initial = render_snapshot(&analysis, analysis.default_weights(), RenderControls::default())?;
        Ok(Self { id, analysis, current: Mutex::new(Arc::new(initial)) })
    }

    pub(crate) fn snapshot(&self) -> Arc<Snapshot> {
        self.current.lock().expect("session poisoned").clone()
    }

    /// Renders with new controls and installs the result. Updates of one
    /// session are serialized; a failed update leaves the old state in place.
    pub(crate) fn update(
        &self,
        weights: PerStream<WeightVector<f64>>,
        controls: RenderControls,
    ) -> Result<Arc<Snapshot>, ApiError> {
        let mut current = self.current.lock().expect("session poisoned");
        let next = Arc::new(render_snapshot(&self.analysis, weights, controls)?);
        *current = next.clone();
        Ok(next)
    }
}
