use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use fieldforge::mosaic::{demo_corpus, encode_png, procedural_leaf, procedural_soil_texture, generate_mosaic, TilePool};
use fieldforge::{DiseaseClass, MosaicSpec};
use fieldforge_cli::service::{router, Models, ROUTES};
use fieldforge_cli::Corpus;
use tower::ServiceExt;

fn models() -> Arc<Models> {
    Arc::new(Models::train(&Corpus::demo(16, 1), 0.5, false).unwrap())
}

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: serde_json::Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn b64(img: &fieldforge::Image) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_png(img).unwrap())
}

#[tokio::test]
async fn index_lists_four_routes() {
    let (status, v) = call(router(models()), get("/")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["routes"], serde_json::json!(ROUTES));
    assert_eq!(v["routes"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn algorithms_and_status() {
    let app = router(models());
    let (_, v) = call(app.clone(), get("/algorithms")).await;
    assert_eq!(v["algorithms"], serde_json::json!(["identifier", "classifier"]));
    let (status, v) = call(app, get("/status")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["classifier"], "ready");
    assert_eq!(v["identifier"], "ready");
}

#[tokio::test]
async fn classifier_returns_distribution() {
    let leaf = procedural_leaf(96, 64, DiseaseClass::Rust, 99);
    let (status, v) = call(router(models()), post("/predict/classifier", serde_json::json!({ "image": b64(&leaf) }))).await;
    assert_eq!(status, StatusCode::OK);
    let probs: Vec<f64> = serde_json::from_value(v["probabilities"].clone()).unwrap();
    assert_eq!(probs.len(), 4);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(v["classes"][2], "rust");
}

#[tokio::test]
async fn identifier_returns_tile_boxes() {
    let spec = MosaicSpec::default();
    let (records, images) = demo_corpus(16, 1);
    let pool = TilePool::prepare(&records, &images, &spec).unwrap();
    let field = generate_mosaic(&pool, &procedural_soil_texture(128, 128, 0), &spec).unwrap();
    let app = router(models());
    let (status, v) = call(app.clone(), post("/predict/identifier", serde_json::json!({ "image": b64(&field.image) }))).await;
    assert_eq!(status, StatusCode::OK);
    let boxes: Vec<fieldforge::ScoredBox> = serde_json::from_value(v["boxes"].clone()).unwrap();
    assert!(!boxes.is_empty());
    assert!(boxes.iter().all(|b| b.label == 1 && (0.5..=1.0).contains(&b.score)));

    let small = procedural_leaf(96, 64, DiseaseClass::Healthy, 0);
    let (status, _) = call(app, post("/predict/identifier", serde_json::json!({ "image": b64(&small) }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_algorithm_is_not_found() {
    let (status, v) = call(router(models()), post("/predict/nonexistent", serde_json::json!({ "image": "" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nonexistent"));
}

#[tokio::test]
async fn malformed_images_are_bad_requests() {
    let app = router(models());
    for body in [
        serde_json::json!({ "image": "!!not base64!!" }),
        serde_json::json!({ "image": base64::engine::general_purpose::STANDARD.encode(b"GIF89a") }),
        serde_json::json!({ "picture": "" }),
    ] {
        let (status, v) = call(app.clone(), post("/predict/classifier", body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(v["error"].is_string());
    }
}
