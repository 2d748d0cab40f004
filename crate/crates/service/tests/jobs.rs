mod common;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use common::*;
use covbal_service::Store;
use serde_json::{json, Value};

fn markdown(uri: &str) -> Request<Body> {
    Request::builder().uri(uri).header(header::ACCEPT, "text/markdown").body(Body::empty()).unwrap()
}

fn strip_id(mut report: Value) -> Value {
    report["session_id"] = Value::Null;
    report
}

fn weights_cfg() -> Value {
    json!({ "methods": ["LR", "GBM_KS", "CBPS#2", "EB#2"], "gbm": { "max_trees": 600 } })
}

#[tokio::test(flavor = "multi_thread")]
async fn restored_sessions_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let first = app(Store::open(dir.path()).unwrap());
    let id = full_run(&first, &synthetic_csv(500, 21), weights_cfg()).await;
    let uri = format!("/sessions/{id}/report");
    let before = call(&first, Method::GET, &uri, None).await;
    let md_before = send(&first, markdown(&uri)).await;
    drop(first);

    let restored = app(Store::open(dir.path()).unwrap());
    let after = call(&restored, Method::GET, &uri, None).await;
    assert_eq!(after.status, StatusCode::OK);
    assert_eq!(before.text, after.text);
    let md_after = send(&restored, markdown(&uri)).await;
    assert!(md_after.text.contains("## 6."));
    assert_eq!(md_before.text, md_after.text);

    // restored sessions stay usable
    let r = call(&restored, Method::POST, &format!("/sessions/{id}/effect"), Some(json!({ "model": "weighted_means" }))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_sessions_match_serial_runs() {
    let csvs = [synthetic_csv(500, 31), synthetic_csv(500, 32)];

    let serial = app(Store::in_memory());
    let mut expected = Vec::new();
    for csv in &csvs {
        let id = full_run(&serial, csv, weights_cfg()).await;
        expected.push(strip_id(call(&serial, Method::GET, &format!("/sessions/{id}/report"), None).await.json()));
    }

    let shared = app(Store::in_memory());
    let (a, b) = tokio::join!(full_run(&shared, &csvs[0], weights_cfg()), full_run(&shared, &csvs[1], weights_cfg()));
    for (id, want) in [a, b].iter().zip(&expected) {
        let got = strip_id(call(&shared, Method::GET, &format!("/sessions/{id}/report"), None).await.json());
        assert_eq!(&got, want);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn cancelled_sensitivity_leaves_session_at_prior_step() {
    let app = app(Store::in_memory());
    let id = full_run(&app, &synthetic_csv(400, 41), json!({ "methods": ["LR", "EB#1"] })).await;
    let base = format!("/sessions/{id}");
    // redoing the effect clears the earlier sensitivity result
    assert_eq!(call(&app, Method::POST, &format!("{base}/effect"), None).await.status, StatusCode::OK);
    let before = call(&app, Method::GET, &base, None).await.json();
    assert_eq!(before["completed"]["sensitivity"], false);

    let heavy = json!({ "replications": 500, "seed": 9 });
    let r = call(&app, Method::POST, &format!("{base}/sensitivity"), Some(heavy)).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let r = call(&app, Method::POST, &format!("{base}/sensitivity/cancel"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let status = wait(&app, &format!("{base}/sensitivity/status")).await;
    assert_eq!(status["state"], "cancelled", "{status}");

    let after = call(&app, Method::GET, &base, None).await.json();
    assert_eq!(before, after);
    assert_eq!(call(&app, Method::GET, &format!("{base}/sensitivity"), None).await.status, StatusCode::CONFLICT);
    assert_eq!(call(&app, Method::GET, &format!("{base}/effect"), None).await.status, StatusCode::OK);

    // nothing left to cancel
    let r = call(&app, Method::POST, &format!("{base}/sensitivity/cancel"), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn cancelled_weights_keep_previous_fit() {
    let app = app(Store::in_memory());
    let id = upload(&app, &synthetic_csv(2000, 42)).await.json()["id"].as_str().unwrap().to_string();
    let base = format!("/sessions/{id}");
    call(&app, Method::PUT, &format!("{base}/roles"), Some(synthetic_roles())).await;
    call(&app, Method::POST, &format!("{base}/weights"), Some(json!({ "methods": ["LR"] }))).await;
    assert_eq!(wait(&app, &format!("{base}/weights/status")).await["state"], "succeeded");
    let balance = call(&app, Method::GET, &format!("{base}/balance"), None).await.text;

    call(&app, Method::POST, &format!("{base}/weights"), Some(json!({ "methods": ["GBM_ES", "GBM_KS"] }))).await;
    call(&app, Method::POST, &format!("{base}/weights/cancel"), None).await;
    assert_eq!(wait(&app, &format!("{base}/weights/status")).await["state"], "cancelled");
    assert_eq!(call(&app, Method::GET, &format!("{base}/balance"), None).await.text, balance);
}
