mod common;

use common::{serve, Reply};
use flowquery_bridge::{EmbeddingServiceConfig, ServiceEmbedder};
use flowquery_core::matcher::{EmbeddingSource, TextEmbedder};
use flowquery_core::FlowError;
use serde_json::json;

fn embedder(url: &str, dim: usize) -> ServiceEmbedder {
    ServiceEmbedder::new(&EmbeddingServiceConfig { endpoint: Some(url.into()), dim, timeout_secs: 5 }).unwrap()
}

#[test]
fn vectors_come_back_normalized_and_in_order() {
    let mock = serve(|req| {
        let texts = req["texts"].as_array().unwrap();
        let vectors: Vec<_> = texts.iter().map(|t| {
            let n = t.as_str().unwrap().len() as f64;
            json!([n, 0.0, 0.0, 2.0 * n])
        }).collect();
        Reply::Json(json!({ "vectors": vectors }))
    });
    let e = embedder(&mock.url, 4);
    let out = e.embed_batch(&["ab".into(), "vortex".into()]).unwrap();
    assert_eq!(out.len(), 2);
    let s = 1.0 / 5f64.sqrt();
    for emb in &out {
        assert_eq!(emb.source, EmbeddingSource::ExternalService);
        assert!((emb.vector[0] - s).abs() < 1e-12 && (emb.vector[3] - 2.0 * s).abs() < 1e-12);
    }
}

#[test]
fn malformed_responses_are_service_errors() {
    let wrong_width = serve(|_| Reply::Json(json!({ "vectors": [[1.0, 2.0]] })));
    assert!(matches!(embedder(&wrong_width.url, 4).embed("x"), Err(FlowError::ServiceUnavailable(_))));
    let wrong_count = serve(|_| Reply::Json(json!({ "embeddings": [] })));
    assert!(matches!(embedder(&wrong_count.url, 4).embed("x"), Err(FlowError::ServiceUnavailable(_))));
    let zero = serve(|_| Reply::Json(json!({ "vectors": [[0.0, 0.0]] })));
    assert!(matches!(embedder(&zero.url, 2).embed("x"), Err(FlowError::ServiceUnavailable(_))));
    let down = serve(|_| Reply::Status(502));
    assert!(matches!(embedder(&down.url, 2).embed("x"), Err(FlowError::ServiceUnavailable(_))));
}
