mod common;

use std::time::{Duration, Instant};

use axum::http::StatusCode;
use common::{app, call, call_json, fixture, mock_chat, state_with, toy_app};
use flowquery_bridge::ChatConfig;
use flowquery_core::matcher::HashedEmbedder;
use flowquery_server::{Dataset, ServerError};
use serde_json::json;

#[tokio::test]
async fn health_reports_version_and_fingerprint() {
    let (s, v) = call_json(&toy_app(), "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["fingerprint"], fixture().index.fingerprint_hex());
    assert_eq!(v["indexed"], fixture().corpus.len());
}

#[tokio::test]
async fn query_matches_the_index_joined_with_geometry() {
    let app = toy_app();
    let (s, v) = call_json(&app, "POST", "/query", Some(json!({ "text": "spiral vortex", "k": 20 }))).await;
    assert_eq!(s, StatusCode::OK);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 20);
    let expected = fixture().index.query(&HashedEmbedder::default(), "spiral vortex", 20).unwrap();
    for (r, e) in results.iter().zip(&expected) {
        assert_eq!(r["segment_id"].as_u64().unwrap(), e.segment_id);
        assert_eq!(r["score"].as_f64().unwrap(), e.score);
        assert_eq!(r["rank"].as_u64().unwrap() as usize, e.rank);
        let seg = fixture().corpus.segments.iter().find(|s| s.id == e.segment_id).unwrap();
        let pts: Vec<f64> = r["points"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(pts.len(), 3 * seg.points.len());
        assert_eq!(pts[..3], [seg.points[0].x, seg.points[0].y, seg.points[0].z]);
    }
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[tokio::test]
async fn identical_queries_give_identical_bytes() {
    let app = toy_app();
    let body = json!({ "text": "two counter rotating vortices", "k": 7 }).to_string();
    let (_, a) = call(&app, "POST", "/query", Some(body.clone())).await;
    let (_, b) = call(&app, "POST", "/query", Some(body.clone())).await;
    let (_, c) = call(&toy_app(), "POST", "/query", Some(body)).await;
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[tokio::test]
async fn query_errors() {
    let app = toy_app();
    let (s, v) = call_json(&app, "POST", "/query", Some(json!({ "text": "   ", "k": 5 }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("EmptyQuery")));
    let (s, v) = call_json(&app, "POST", "/query", Some(json!({ "text": "vortex", "k": 0 }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BadParam")));
    let (s, v) = call_json(&app, "POST", "/query", Some(json!({ "text": "vortex", "k": 5000 }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BadParam")));
    let (s, _) = call(&app, "POST", "/query", Some("{not json".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let no_index = app_without_index();
    let (s, v) = call_json(&no_index, "POST", "/query", Some(json!({ "text": "vortex" }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::SERVICE_UNAVAILABLE, Some("EmptyIndex")));
}

fn app_without_index() -> axum::Router {
    app(state_with(None, ChatConfig::default()))
}

#[tokio::test]
async fn oversized_payloads_get_413() {
    let app = toy_app();
    let big = json!({ "text": "v".repeat(20_000), "k": 1 }).to_string();
    for path in ["/query", "/chat", "/tags"] {
        let (s, b) = call(&app, "POST", path, Some(big.clone())).await;
        assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE, "{path}");
        let v: serde_json::Value = serde_json::from_slice(&b).unwrap();
        assert_eq!(v["error"], "PayloadTooLarge");
    }
}

#[tokio::test]
async fn segments_by_id() {
    let app = toy_app();
    let seg = &fixture().corpus.segments[3];
    let (s, v) = call_json(&app, "GET", &format!("/segments/{}", seg.id), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"].as_array().unwrap().len(), 3 * seg.points.len());
    assert_eq!(v["level"], seg.level);
    let (s, v) = call_json(&app, "GET", "/segments/987654", None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let (s, _) = call_json(&app, "GET", "/segments/abc", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn streamlines_are_paged() {
    use flowquery_core::tracer::{Streamline, Termination};
    use flowquery_core::Vec3;
    let lines: Vec<Streamline> = (0..5)
        .map(|i| {
            let pts = (0..10).map(|k| Vec3::new(k as f64, i as f64, 0.0)).collect();
            Streamline::from_points(i, pts, Termination::MaxSteps)
        })
        .collect();
    let data = Dataset::new(None, lines, Vec::new(), None).unwrap();
    let chat = flowquery_bridge::ChatClient::new(ChatConfig::default()).unwrap();
    let state = flowquery_server::AppState::new(
        data,
        std::sync::Arc::new(HashedEmbedder::default()),
        chat,
        flowquery_bridge::TagMode::Lexicon,
    )
    .unwrap();
    let app = app(std::sync::Arc::new(state));
    let (s, v) = call_json(&app, "GET", "/streamlines?offset=3&limit=10&stride=4", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 5);
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.iter().map(|i| i["id"].as_u64().unwrap()).collect::<Vec<_>>(), vec![3, 4]);
    // points 0, 4, 8 and the last one
    assert_eq!(items[0]["points"].as_array().unwrap().len(), 4 * 3);
    let (s, _) = call_json(&app, "GET", "/streamlines?limit=0", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call_json(&app, "GET", "/field", None).await;
    assert_eq!((s, v["loaded"].as_bool()), (StatusCode::OK, Some(false)));
}

#[tokio::test]
async fn chat_without_endpoint_is_503_and_history_is_untouched() {
    let app = toy_app();
    let (s, v) = call_json(&app, "POST", "/chat", Some(json!({ "message": "hello" }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::SERVICE_UNAVAILABLE, Some("ServiceUnavailable")));
    let (s, v) = call_json(&app, "POST", "/chat", Some(json!({ "message": "  " }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BadInput")));
    // nothing to extract from yet
    let (s, _) = call_json(&app, "POST", "/tags", Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn chat_then_tags_round_trip() {
    let url = mock_chat(Duration::ZERO, |q| format!("About `{q}`: small disturbances in laminar flow trigger vortex formation."));
    let state = state_with(Some(fixture().index.clone()), ChatConfig { endpoint: Some(url), ..Default::default() });
    let app = app(state.clone());
    let (s, v) = call_json(&app, "POST", "/chat", Some(json!({ "message": "what happens here?" }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["turn"]["role"], "assistant");
    assert_eq!(v["index"], 1);
    assert!(v["turn"]["text"].as_str().unwrap().starts_with("About `what happens here?`"));

    let (s, v) = call_json(&app, "POST", "/tags", Some(json!({}))).await;
    assert_eq!(s, StatusCode::OK);
    let names: Vec<&str> = v["added"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names, vec!["laminar flow", "vortex"]);
    assert!(v["tags"].as_array().unwrap().iter().all(|t| t["source_turn"] == 1));

    // merging the same turn again changes nothing
    let (_, again) = call_json(&app, "POST", "/tags", Some(json!({ "turn": 1 }))).await;
    assert!(again["added"].as_array().unwrap().is_empty());
    let (_, listed) = call_json(&app, "GET", "/tags", None).await;
    assert_eq!(listed["tags"], v["tags"]);
    assert_eq!(state.session.lock().await.history.len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn queries_are_not_blocked_by_a_slow_chat() {
    let url = mock_chat(Duration::from_millis(1500), |_| "done".into());
    let state = state_with(Some(fixture().index.clone()), ChatConfig { endpoint: Some(url), ..Default::default() });
    let app = app(state);
    let chat_app = app.clone();
    let started = Instant::now();
    let chat = tokio::spawn(async move {
        call_json(&chat_app, "POST", "/chat", Some(json!({ "message": "slow" }))).await
    });
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (s, _) = call_json(&app, "POST", "/query", Some(json!({ "text": "vortex", "k": 3 }))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(started.elapsed() < Duration::from_millis(1200), "query waited for chat");
    let (s, _) = chat.await.unwrap();
    assert_eq!(s, StatusCode::OK);
}

#[test]
fn mismatched_index_is_rejected_at_startup() {
    let f = fixture();
    let mut segments = f.corpus.segments.clone();
    segments.pop();
    let err = Dataset::new(None, Vec::new(), segments, Some(f.index.clone())).unwrap_err();
    assert!(matches!(err, ServerError::Data(ref m) if m.contains("fingerprint")));
}

#[test]
fn loads_a_data_directory() {
    use flowquery_core::descriptor::{export_segments, import_segments};
    use flowquery_core::matcher::{build_index, save_index};
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let text = export_segments(&f.corpus.segments);
    std::fs::write(dir.path().join("segments.txt"), &text).unwrap();
    // the text export rounds coordinates, so an index over the in-memory
    // segments no longer matches the file
    save_index(&f.index, dir.path().join("index.fqix")).unwrap();
    assert!(matches!(Dataset::load(dir.path()).unwrap_err(), ServerError::Data(_)));
    let reloaded = import_segments(&text).unwrap();
    let index = build_index(&reloaded, &f.encoder, &f.matcher).unwrap();
    save_index(&index, dir.path().join("index.fqix")).unwrap();
    let data = Dataset::load(dir.path()).unwrap();
    assert_eq!(data.fingerprint(), Some(index.fingerprint_hex()));
    assert_eq!(data.segments.len(), f.corpus.len());
    assert!(data.field.is_none() && data.streamlines.is_empty());
    assert!(Dataset::load(&dir.path().join("missing")).is_err());
}
