#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use contempo_core::neural::CellKind;
use contempo_core::ModelBundle;
use contempo_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const SCORE: &str = r#"{
  "title": "Little study",
  "notes": [
    { "id": "a", "pitch": 60, "onset": 0, "duration": 1 },
    { "id": "b", "pitch": 64, "onset": 0, "duration": 1 },
    { "id": "c", "pitch": 62, "onset": 1, "duration": 0.5 },
    { "id": "d", "pitch": 65, "onset": 1.5, "duration": 0.5 },
    { "id": "e", "pitch": 67, "onset": 2, "duration": 2, "accent": true },
    { "id": "f", "pitch": 72, "onset": 4, "duration": 1 },
    { "id": "g", "pitch": 71, "onset": 5, "duration": 1 },
    { "id": "h", "pitch": 69, "onset": 6, "duration": 2, "fermata": true }
  ],
  "markings": [
    { "kind": "p", "start": 0 },
    { "kind": "crescendo", "start": 2, "end": 6 },
    { "kind": "f", "start": 6 }
  ],
  "slurs": [{ "start": 4, "end": 6 }]
}"#;

pub fn model() -> ModelBundle {
    ModelBundle::untrained(CellKind::Lstm, 6, 11).unwrap()
}

pub fn app() -> Router {
    router(Arc::new(AppState::new(model())))
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<(&str, &str)>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some((content_type, text)) => {
            req = req.header("content-type", content_type);
            Body::from(text.to_owned())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let content_type = res.headers().get("content-type").map(|v| v.to_str().unwrap().to_owned());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, "GET", uri, None).await
}

pub async fn post_json(app: &Router, uri: &str, body: &str) -> Reply {
    send(app, "POST", uri, Some(("application/json", body))).await
}

pub async fn upload(app: &Router) -> String {
    let r = post_json(app, "/api/pieces", SCORE).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    r.json()["piece_id"].as_str().unwrap().to_owned()
}

pub fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}
