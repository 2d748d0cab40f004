#![allow(dead_code)]

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use covbal_core::synth::{self, Design};
use covbal_service::{router, AppState, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const BOUNDARY: &str = "covbal-test-boundary";

pub fn app(store: Store) -> Router {
    router(AppState::new(store).unwrap())
}

pub fn synthetic_csv(n: usize, seed: u64) -> String {
    synth::to_csv(&synth::generate(&Design::confounded(n, 2.0, seed)).unwrap()).unwrap()
}

pub fn multipart(fields: &[(&str, &str)]) -> String {
    let mut body = String::new();
    for (name, value) in fields {
        let filename = if *name == "file" { "; filename=\"data.csv\"" } else { "" };
        body.push_str(&format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"{filename}\r\n\r\n{value}\r\n"));
    }
    body.push_str(&format!("--{BOUNDARY}--\r\n"));
    body
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, content_type, text: String::from_utf8(bytes.to_vec()).unwrap() }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder.header(header::CONTENT_TYPE, "application/json").body(Body::from(v.to_string())),
        None => builder.body(Body::empty()),
    };
    send(app, req.unwrap()).await
}

pub async fn upload(app: &Router, csv: &str) -> Reply {
    let req = Request::builder()
        .method(Method::POST)
        .uri("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(&[("file", csv)])))
        .unwrap();
    send(app, req).await
}

pub fn synthetic_roles() -> Value {
    json!({
        "treated_level": "1",
        "roles": {
            "treatment": "treatment",
            "outcome": "outcome",
            "age": "continuous_confounder",
            "score": "continuous_confounder",
            "dose": "continuous_confounder",
            "female": "binary_confounder",
            "region": "categorical_confounder"
        }
    })
}

/// Polls a job until it leaves the running state.
pub async fn wait(app: &Router, uri: &str) -> Value {
    let start = Instant::now();
    loop {
        let r = call(app, Method::GET, uri, None).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        let v = r.json();
        if v["state"] != "running" {
            return v;
        }
        assert!(start.elapsed() < Duration::from_secs(300), "job at {uri} did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Small grid so full runs stay quick.
pub fn quick_sensitivity() -> Value {
    json!({
        "es_t": { "min": -0.4, "max": 0.4, "step": 0.2 },
        "rho_y": { "min": 0.0, "max": 0.4, "step": 0.2 },
        "replications": 5,
        "seed": 3
    })
}

/// Upload through effect and sensitivity; returns the session id.
pub async fn full_run(app: &Router, csv: &str, weights: Value) -> String {
    let r = upload(app, csv).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let id = r.json()["id"].as_str().unwrap().to_string();
    let base = format!("/sessions/{id}");
    assert_eq!(call(app, Method::PUT, &format!("{base}/roles"), Some(synthetic_roles())).await.status, StatusCode::OK);
    let r = call(app, Method::POST, &format!("{base}/weights"), Some(weights)).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text);
    assert_eq!(wait(app, &format!("{base}/weights/status")).await["state"], "succeeded");
    let r = call(app, Method::PUT, &format!("{base}/method"), Some(json!({}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let r = call(app, Method::POST, &format!("{base}/effect"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let r = call(app, Method::POST, &format!("{base}/sensitivity"), Some(quick_sensitivity())).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text);
    assert_eq!(wait(app, &format!("{base}/sensitivity/status")).await["state"], "succeeded");
    id
}
