use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use pconj_cli::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn pvalues(ps: &[f64]) -> Value {
    Value::Array(
        ps.iter()
            .enumerate()
            .map(|(i, p)| json!({ "id": format!("h{}", i + 1), "p": p }))
            .collect(),
    )
}

async fn create(state: &Arc<AppState>, ps: &[f64]) -> (StatusCode, Value) {
    call(state, "POST", "/sessions", Some(json!({ "pvalues": pvalues(ps), "alpha": 0.05 }))).await
}

fn session_id(v: &Value) -> String {
    v["session_id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn healthz() {
    let (status, body) = call(&AppState::in_memory(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn create_and_fetch_report() {
    let state = AppState::in_memory();
    let (status, body) = create(&state, &[0.01, 0.2, 0.8]).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["report"]["u_max"], 1);
    assert_eq!(body["n"], 3);
    assert_eq!(body["post_hoc_enabled"], true);
    let curve = body["report"]["curve"].as_array().unwrap();
    assert!((curve[0].as_f64().unwrap() - 0.04505611968252525).abs() < 1e-12);

    let id = session_id(&body);
    let (status, report) = call(&state, "GET", &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report, body);
}

#[tokio::test]
async fn invalid_pvalue_names_the_id() {
    let state = AppState::in_memory();
    let bad = json!([{ "id": "h1", "p": 1.2 }, { "id": "h2", "p": 0.3 }]);
    let (status, body) = call(&state, "POST", "/sessions", Some(json!({ "pvalues": bad, "alpha": 0.05 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("h1"), "{body}");
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn invalid_alpha_and_malformed_body() {
    let state = AppState::in_memory();
    let (status, _) = call(&state, "POST", "/sessions", Some(json!({ "pvalues": pvalues(&[0.1]), "alpha": 1.5 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&state, "POST", "/sessions", Some(json!({ "pvalues": "nope" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_json");
}

#[tokio::test]
async fn large_session_has_full_set_bound_only() {
    let state = AppState::in_memory();
    let ps: Vec<f64> = (0..25).map(|i| if i < 5 { 1e-8 } else { 0.5 }).collect();
    let (status, body) = create(&state, &ps).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["post_hoc_enabled"], false);
    assert_eq!(body["lattice"], "disabled, full-set bounds only");
    assert_eq!(body["report"]["u_max"], 5);
    let id = session_id(&body);
    let (status, err) = call(&state, "POST", &format!("/sessions/{id}/selection"), Some(json!({ "ids": ["h1"] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"]["code"], "lattice_disabled");
}

#[tokio::test]
async fn oversized_request_rejected() {
    let state = AppState::in_memory();
    let ps = vec![0.5; 10_001];
    let (status, _) = create(&state, &ps).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn selection_errors() {
    let state = AppState::in_memory();
    let (status, _) = call(&state, "POST", "/sessions/nope/selection", Some(json!({ "ids": ["h1"] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&state, "GET", "/sessions/nope/report", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, body) = create(&state, &[0.001, 0.02, 0.3]).await;
    let uri = format!("/sessions/{}/selection", session_id(&body));
    let (status, err) = call(&state, "POST", &uri, Some(json!({ "ids": ["h1", "h9"] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["code"], "unknown_id");
    assert!(err["error"]["message"].as_str().unwrap().contains("h9"));
    let (status, err) = call(&state, "POST", &uri, Some(json!({ "ids": [] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["code"], "empty_selection");
}

#[tokio::test]
async fn full_selection_matches_curve_bound() {
    let state = AppState::in_memory();
    let ps = [0.001, 0.002, 0.04, 0.3, 0.7, 0.9];
    let (_, body) = create(&state, &ps).await;
    let ids: Vec<String> = (1..=ps.len()).map(|i| format!("h{i}")).collect();
    let uri = format!("/sessions/{}/selection", session_id(&body));
    let (status, sel) = call(&state, "POST", &uri, Some(json!({ "ids": ids }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(sel["f_alpha"], body["report"]["u_max"]);
    assert_eq!(sel["simultaneous"], true);
    assert_eq!(sel["size"], 6);
}

#[tokio::test]
async fn repeated_queries_identical_and_replayable() {
    let ps = [0.0004, 0.03, 0.011, 0.5, 0.002, 0.8, 0.07, 0.2];
    let queries: Vec<Vec<&str>> = vec![
        vec!["h1"],
        vec!["h1", "h5"],
        vec!["h2", "h3", "h7"],
        vec!["h4", "h6"],
        vec!["h1", "h2", "h3", "h4", "h5", "h6", "h7", "h8"],
        vec!["h3", "h1"],
    ];
    let state = AppState::in_memory();
    let (_, body) = create(&state, &ps).await;
    let uri = format!("/sessions/{}/selection", session_id(&body));
    let mut log = Vec::new();
    for q in &queries {
        let (s1, a) = call(&state, "POST", &uri, Some(json!({ "ids": q }))).await;
        let (s2, b) = call(&state, "POST", &uri, Some(json!({ "ids": q }))).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
        assert_eq!(a, b);
        log.push(a);
    }

    // The same vector in a fresh service yields the same answers.
    let fresh = AppState::in_memory();
    let (_, body2) = create(&fresh, &ps).await;
    let uri2 = format!("/sessions/{}/selection", session_id(&body2));
    for (q, before) in queries.iter().zip(&log) {
        let (_, after) = call(&fresh, "POST", &uri2, Some(json!({ "ids": q }))).await;
        for key in ["selection", "size", "f_alpha", "witness"] {
            assert_eq!(after[key], before[key], "{q:?} {key}");
        }
    }
}

#[tokio::test]
async fn snapshots_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let ps = [0.001, 0.04, 0.3, 0.02];
    let state = AppState::with_snapshots(dir.path()).unwrap();
    let (_, body) = create(&state, &ps).await;
    let id = session_id(&body);
    let uri = format!("/sessions/{id}/selection");
    let (_, before) = call(&state, "POST", &uri, Some(json!({ "ids": ["h1", "h2", "h4"] }))).await;
    drop(state);

    let reloaded = AppState::with_snapshots(dir.path()).unwrap();
    assert_eq!(reloaded.session_count(), 1);
    let (status, report) = call(&reloaded, "GET", &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report, body);
    let (_, after) = call(&reloaded, "POST", &uri, Some(json!({ "ids": ["h1", "h2", "h4"] }))).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn corrupt_snapshot_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.json"), "{not json").unwrap();
    let state = AppState::with_snapshots(dir.path()).unwrap();
    assert_eq!(state.session_count(), 0);
}
