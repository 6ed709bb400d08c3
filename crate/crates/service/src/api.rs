use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap};
use axum::response::IntoResponse;
use axum::Json;
use contempo_core::basis::{onset_mean, FEATURE_NAMES};
use contempo_core::codec::PerStream;
use contempo_core::linearize::{LinearizeError, PieceAnalysis, RenderControls, WeightVector};
use contempo_core::score::{parse_musicxml, parse_score_json, Score};
use contempo_core::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::session::{Session, Snapshot};
use crate::AppState;

type AppResult<T> = Result<T, ApiError>;

fn feature_names() -> Vec<&'static str> {
    FEATURE_NAMES.to_vec()
}

fn looks_like_xml(headers: &HeaderMap, body: &[u8]) -> bool {
    if let Some(ct) = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()) {
        if ct.contains("json") {
            return false;
        }
        if ct.contains("xml") {
            return true;
        }
    }
    body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'<')
}

pub(crate) async fn upload(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> AppResult<Json<Value>> {
    let score: Score = if looks_like_xml(&headers, &body) {
        parse_musicxml(&body).map_err(|e| ApiError::BadRequest(format!("MusicXML: {e}")))?
    } else {
        parse_score_json(&body).map_err(|e| ApiError::BadRequest(format!("score JSON: {e}")))?
    };
    let model = state.model.clone();
    let mode = state.reference;
    let analysis = tokio::task::spawn_blocking(move || PieceAnalysis::new(&score, &model, mode))
        .await
        .map_err(|e| ApiError::Internal(format!("analysis task failed: {e}")))?
        .map_err(|e| match e {
            LinearizeError::FeatureVersion { .. } => ApiError::Unprocessable(e.to_string()),
            other => ApiError::Internal(format!("analysis failed: {other}")),
        })?;
    let id = state.fresh_id();
    let session = Arc::new(Session::new(id.clone(), analysis)?);
    let body = summary(&session);
    state.sessions.write().expect("session table poisoned").insert(id, session);
    Ok(Json(body))
}

fn summary(s: &Session) -> Value {
    json!({
        "piece_id": s.id,
        "title": s.analysis.score().title(),
        "T": s.analysis.onsets().len(),
        "N": s.analysis.score().notes().len(),
        "feature_names": feature_names(),
    })
}

pub(crate) async fn list(State(state): State<Arc<AppState>>) -> Json<Value> {
    let sessions = state.sessions.read().expect("session table poisoned");
    let mut pieces: Vec<&Arc<Session>> = sessions.values().collect();
    pieces.sort_by_key(|s| s.id[1..].parse::<u64>().unwrap_or(u64::MAX));
    Json(json!({ "pieces": pieces.iter().map(|s| summary(s)).collect::<Vec<_>>() }))
}

pub(crate) async fn features(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let s = state.session(&id)?;
    let a = &s.analysis;
    let notes = a.note_features();
    Ok(Json(json!({
        "piece_id": s.id,
        "feature_names": feature_names(),
        "note_ids": notes.row_ids,
        "note_onsets": a.row_beats(Stream::Vd),
        "note_basis": notes.rows.to_nested(),
        "onsets": a.onsets().onsets(),
        "onset_basis": onset_mean(&notes.rows, a.onsets()).to_nested(),
    })))
}

pub(crate) async fn contributions(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> AppResult<Json<Value>> {
    let s = state.session(&id)?;
    let stream: Stream = query
        .get("stream")
        .ok_or_else(|| ApiError::BadRequest(format!("missing query parameter stream; valid streams: {}", stream_list())))?
        .parse()
        .map_err(ApiError::BadRequest)?;
    let c = s.analysis.contributions(stream);
    let row_ids: Vec<String> = if stream.is_onset_wise() {
        (0..s.analysis.onsets().len()).map(|i| i.to_string()).collect()
    } else {
        s.analysis.score().notes().iter().map(|n| n.id.clone()).collect()
    };
    Ok(Json(json!({
        "piece_id": s.id,
        "stream": stream.name(),
        "onsets": s.analysis.row_beats(stream),
        "row_ids": row_ids,
        "feature_names": feature_names(),
        "C": c.c.to_nested(),
        "reference": c.reference,
        "baseline": c.baseline,
    })))
}

fn stream_list() -> String {
    Stream::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

/// A control given once for all streams or per stream by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StreamValues {
    All(f64),
    Each(BTreeMap<String, f64>),
}

/// Body of a controls update. Omitted fields take their defaults (weights 1,
/// c 0, mu 0, sigma 1, beat_period 0.5), so the body fully determines the
/// rendering.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsRequest {
    #[serde(default)]
    pub weights: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub c: Option<StreamValues>,
    #[serde(default)]
    pub mu: Option<StreamValues>,
    #[serde(default)]
    pub sigma: Option<StreamValues>,
    #[serde(default)]
    pub beat_period: Option<f64>,
}

fn parse_stream(field: &str, name: &str) -> AppResult<Stream> {
    name.parse().map_err(|_| ApiError::Unprocessable(format!("{field}.{name}: unknown stream; valid streams: {}", stream_list())))
}

fn apply_values(field: &str, values: &Option<StreamValues>, mut set: impl FnMut(Stream, f64)) -> AppResult<()> {
    match values {
        None => {}
        Some(StreamValues::All(v)) => Stream::ALL.iter().for_each(|&s| set(s, *v)),
        Some(StreamValues::Each(map)) => {
            for (name, &v) in map {
                set(parse_stream(field, name)?, v);
            }
        }
    }
    Ok(())
}

impl ControlsRequest {
    /// Checks the request against a piece and expands it to full render inputs.
    pub fn resolve(&self, analysis: &contempo_core::PieceAnalysis) -> AppResult<(PerStream<WeightVector<f64>>, RenderControls)> {
        let mut weights = analysis.default_weights();
        for (name, w) in &self.weights {
            let stream = parse_stream("weights", name)?;
            let k = weights[stream].len();
            if w.len() != k {
                return Err(ApiError::Unprocessable(format!("weights.{name}: expected {k} values, got {}", w.len())));
            }
            weights[stream] = WeightVector(w.clone());
        }
        let mut controls = RenderControls::default();
        apply_values("c", &self.c, |s, v| controls.streams[s].c = v)?;
        apply_values("mu", &self.mu, |s, v| controls.streams[s].mu = v)?;
        apply_values("sigma", &self.sigma, |s, v| controls.streams[s].sigma = v)?;
        for (s, ctl) in controls.streams.iter() {
            if ctl.sigma < 0.0 {
                return Err(ApiError::Unprocessable(format!("sigma.{s}: must be ≥ 0, got {}", ctl.sigma)));
            }
        }
        if let Some(b) = self.beat_period {
            if b.is_nan() || b <= 0.0 {
                return Err(ApiError::Unprocessable(format!("beat_period: must be positive, got {b}")));
            }
            controls.mean_beat_period = b;
        }
        Ok((weights, controls))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteParams {
    pub id: String,
    pub pitch: u8,
    pub onset_beats: f64,
    pub onset_sec: f64,
    pub duration_sec: f64,
    pub velocity: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlsResponse {
    pub piece_id: String,
    /// Shaped streams in standardized units; onset-wise streams have T
    /// entries, note-wise streams N in score order.
    pub curves: PerStream<Vec<f64>>,
    pub onsets: Vec<f64>,
    pub note_params: Vec<NoteParams>,
    pub weights: PerStream<WeightVector<f64>>,
    pub controls: RenderControls,
}

fn response(s: &Session, snap: &Snapshot) -> ControlsResponse {
    let perf = snap.rendering.performance.notes();
    let note_params = s
        .analysis
        .score()
        .notes()
        .iter()
        .map(|n| {
            let p = perf[snap.rendering.alignment.get(&n.id).expect("every score note is rendered")];
            NoteParams {
                id: n.id.clone(),
                pitch: p.pitch,
                onset_beats: n.onset_beats,
                onset_sec: p.onset_sec,
                duration_sec: p.duration_sec,
                velocity: p.velocity,
            }
        })
        .collect();
    ControlsResponse {
        piece_id: s.id.clone(),
        curves: snap.rendering.curves.clone(),
        onsets: s.analysis.onsets().onsets().to_vec(),
        note_params,
        weights: snap.weights.clone(),
        controls: snap.controls.clone(),
    }
}

pub(crate) async fn controls(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> AppResult<Json<ControlsResponse>> {
    let s = state.session(&id)?;
    let request: ControlsRequest = serde_json::from_slice(&body).map_err(|e| {
        if e.is_data() {
            ApiError::Unprocessable(format!("controls: {e}"))
        } else {
            ApiError::BadRequest(format!("controls JSON: {e}"))
        }
    })?;
    let (weights, controls) = request.resolve(&s.analysis)?;
    let snap = s.update(weights, controls)?;
    Ok(Json(response(&s, &snap)))
}

pub(crate) async fn current_controls(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<Json<ControlsResponse>> {
    let s = state.session(&id)?;
    let snap = s.snapshot();
    Ok(Json(response(&s, &snap)))
}

pub(crate) async fn render_midi(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<impl IntoResponse> {
    let s = state.session(&id)?;
    let snap = s.snapshot();
    Ok(([(header::CONTENT_TYPE, "audio/midi")], snap.midi.clone()))
}
