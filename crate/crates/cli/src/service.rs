//! Minimal JSON prediction service.
//!
//! `GET /` lists the routes, `GET /algorithms` the bound models, `GET /status`
//! their readiness, and `POST /predict/{algorithm}` runs one model on a
//! base64-encoded PNG.

use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use fieldforge::fusion::TtaKind;
use fieldforge::mosaic::decode_png;
use fieldforge::pipeline::{baseline_classifier, BaselineClassifier, DetectorIdentifier, IdentifierModel, TileGridDetector};
use fieldforge::{DiseaseClass, MosaicAnnotation, MosaicItem, MosaicSpec, ScoredBox};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::ServeArgs;
use crate::Corpus;

/// Field images are megapixel PNGs; base64 adds a third on top.
const BODY_LIMIT: usize = 64 << 20;

pub const ROUTES: [&str; 4] = ["/", "/algorithms", "/status", "/predict/{algorithm}"];

/// Models bound at startup; read-only afterwards.
pub struct Models {
    pub classifier: BaselineClassifier,
    pub identifier: DetectorIdentifier<TileGridDetector>,
}

impl Models {
    /// Train the baseline classifier on `corpus` and wrap it as a tile-grid
    /// identifier for default-geometry mosaics.
    pub fn train(corpus: &Corpus, threshold: f64, tta: bool) -> Result<Self> {
        let classifier = baseline_classifier(corpus.records(), corpus.pixels())?;
        let identifier = DetectorIdentifier {
            detector: TileGridDetector {
                classifier: classifier.clone(),
                spec: MosaicSpec::default(),
                threshold,
            },
            tta: tta.then(|| (TtaKind::ALL.to_vec(), 0.55)),
        };
        Ok(Self { classifier, identifier })
    }
}

#[derive(Debug, Deserialize)]
pub struct PredictRequest {
    /// Base64 (standard alphabet) PNG bytes.
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PredictResponse {
    Identifier { boxes: Vec<ScoredBox> },
    Classifier { classes: Vec<String>, probabilities: Vec<f64> },
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(models: Arc<Models>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/algorithms", get(algorithms))
        .route("/status", get(status))
        .route("/predict/{algorithm}", post(predict))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(models)
}

async fn index() -> Json<serde_json::Value> {
    Json(json!({ "routes": ROUTES }))
}

async fn algorithms() -> Json<serde_json::Value> {
    Json(json!({ "algorithms": ["identifier", "classifier"] }))
}

async fn status(State(_): State<Arc<Models>>) -> Json<serde_json::Value> {
    // models are trained before the listener opens
    Json(json!({ "identifier": "ready", "classifier": "ready" }))
}

async fn predict(
    State(models): State<Arc<Models>>,
    Path(algorithm): Path<String>,
    body: Result<Json<PredictRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    if algorithm != "identifier" && algorithm != "classifier" {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown algorithm `{algorithm}`"),
        ));
    }
    let Json(request) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(request.image.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("image is not base64: {e}")))?;
    let image = decode_png(&bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("image is not a PNG: {e}")))?;

    tokio::task::spawn_blocking(move || match algorithm.as_str() {
        "classifier" => Ok(PredictResponse::Classifier {
            classes: DiseaseClass::ALL.iter().map(|c| c.to_string()).collect(),
            probabilities: models.classifier.predict(&image).to_vec(),
        }),
        _ => {
            let spec = models.identifier.detector.spec;
            if image.dimensions() != (spec.width_px, spec.height_px) {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    format!(
                        "identifier expects a {}x{} field image, got {}x{}",
                        spec.width_px,
                        spec.height_px,
                        image.width(),
                        image.height()
                    ),
                ));
            }
            let field = MosaicItem {
                image,
                annotations: Vec::<MosaicAnnotation>::new(),
                spec,
            };
            let boxes = models
                .identifier
                .identify(&field, 0)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            Ok(PredictResponse::Identifier { boxes })
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map(Json)
}

pub fn serve_blocking(a: &ServeArgs) -> Result<()> {
    let corpus = Corpus::resolve(a.corpus.labels.as_ref(), a.corpus.images.as_ref(), a.seed)?;
    let models = Arc::new(Models::train(&corpus, a.threshold, a.tta)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(models)).await?;
        Ok(())
    })
}
