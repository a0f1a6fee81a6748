//! REST surface. Handlers hop onto the blocking pool because the control
//! plane talks to the broker and the disk synchronously.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::client::ErrorBody;
use super::entities::{Id, UploadMeta};
use super::service::{
    parse_body, ApiError, ControlPlane, NewConfiguration, NewDeployment, NewInference, NewModel,
};
use super::ControlMessage;

type Cp = Arc<ControlPlane>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
            details: self.details(),
        };
        (status, Json(body)).into_response()
    }
}

async fn blocking<T, F>(status: StatusCode, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => (status, Json(v)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::Storage(std::io::Error::other(e.to_string())).into_response(),
    }
}

const OK: StatusCode = StatusCode::OK;
const CREATED: StatusCode = StatusCode::CREATED;

pub fn router(cp: Cp) -> Router {
    Router::new()
        .route("/models", post(create_model).get(list_models))
        .route("/models/:id", get(get_model).delete(delete_model))
        .route(
            "/configurations",
            post(create_configuration).get(list_configurations),
        )
        .route("/configurations/:id", get(get_configuration))
        .route("/deployments", post(deploy_training).get(list_deployments))
        .route("/deployments/:id", get(get_deployment))
        .route("/deployments/:id/model-spec", get(model_spec))
        .route(
            "/deployments/:id/jobs/:model_id/training",
            post(mark_training),
        )
        .route("/deployments/:id/results/:model_id", post(upload_result))
        .route("/results", get(list_results))
        .route("/results/:id", get(get_result))
        .route("/results/:id/download", get(download))
        .route("/inferences", post(deploy_inference).get(list_inferences))
        .route("/inferences/:id", get(get_inference).delete(stop_inference))
        .route("/datastreams", get(list_datastreams))
        .route("/datastreams/:id/replay", post(replay))
        .route("/ui", get(ui))
        .route("/ui/config.json", get(ui_config))
        .with_state(cp)
}

async fn create_model(State(cp): State<Cp>, body: Bytes) -> Response {
    blocking(CREATED, move || {
        cp.create_model(parse_body::<NewModel>(&body)?)
    })
    .await
}

async fn list_models(State(cp): State<Cp>) -> Response {
    blocking(OK, move || Ok(cp.models())).await
}

async fn get_model(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.model(id)).await
}

async fn delete_model(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.delete_model(id)).await
}

async fn create_configuration(State(cp): State<Cp>, body: Bytes) -> Response {
    blocking(CREATED, move || {
        cp.create_configuration(parse_body::<NewConfiguration>(&body)?)
    })
    .await
}

async fn list_configurations(State(cp): State<Cp>) -> Response {
    blocking(OK, move || Ok(cp.configurations())).await
}

async fn get_configuration(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.configuration(id)).await
}

async fn deploy_training(State(cp): State<Cp>, body: Bytes) -> Response {
    blocking(CREATED, move || {
        cp.deploy_training(parse_body::<NewDeployment>(&body)?)
    })
    .await
}

async fn list_deployments(State(cp): State<Cp>) -> Response {
    blocking(OK, move || Ok(cp.deployments())).await
}

async fn get_deployment(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.deployment(id)).await
}

#[derive(Deserialize)]
struct ModelQuery {
    model_id: Option<Id>,
}

async fn model_spec(
    State(cp): State<Cp>,
    Path(id): Path<Id>,
    Query(q): Query<ModelQuery>,
) -> Response {
    blocking(OK, move || {
        let model_id = match q.model_id {
            Some(m) => m,
            // single-model deployments need no query
            None => match cp.deployment(id)?.jobs.as_slice() {
                [only] => only.model_id,
                _ => {
                    return Err(ApiError::BadRequest(
                        "model_id query parameter required".into(),
                    ))
                }
            },
        };
        cp.model_spec(id, model_id)
    })
    .await
}

async fn mark_training(
    State(cp): State<Cp>,
    Path((id, model_id)): Path<(Id, Id)>,
    body: Bytes,
) -> Response {
    blocking(OK, move || {
        cp.mark_training(id, model_id, parse_body::<ControlMessage>(&body)?)
    })
    .await
}

async fn upload_result(
    State(cp): State<Cp>,
    Path((id, model_id)): Path<(Id, Id)>,
    mut form: Multipart,
) -> Response {
    let mut meta = None;
    let mut weights = None;
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let name = field.name().unwrap_or_default().to_string();
                let data = match field.bytes().await {
                    Ok(d) => d,
                    Err(e) => {
                        return ApiError::BadRequest(format!("multipart: {e}")).into_response()
                    }
                };
                match name.as_str() {
                    "metrics" => meta = Some(data),
                    "weights" => weights = Some(data),
                    _ => {}
                }
            }
            Ok(None) => break,
            Err(e) => return ApiError::BadRequest(format!("multipart: {e}")).into_response(),
        }
    }
    let (Some(meta), Some(weights)) = (meta, weights) else {
        return ApiError::BadRequest("multipart body needs metrics and weights parts".into())
            .into_response();
    };
    blocking(CREATED, move || {
        let meta: UploadMeta = parse_body(&meta)?;
        cp.upload_result(id, model_id, meta, &weights)
    })
    .await
}

async fn list_results(State(cp): State<Cp>) -> Response {
    blocking(OK, move || Ok(cp.results())).await
}

async fn get_result(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.result(id)).await
}

async fn download(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    match tokio::task::spawn_blocking(move || cp.download(id)).await {
        Ok(Ok(bytes)) => (
            [
                (header::CONTENT_TYPE, "application/octet-stream".to_string()),
                (
                    header::CONTENT_DISPOSITION,
                    format!("attachment; filename=\"result-{id}.kmlw\""),
                ),
            ],
            bytes,
        )
            .into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::Storage(std::io::Error::other(e.to_string())).into_response(),
    }
}

async fn deploy_inference(State(cp): State<Cp>, body: Bytes) -> Response {
    blocking(CREATED, move || {
        cp.deploy_inference(parse_body::<NewInference>(&body)?)
    })
    .await
}

async fn list_inferences(State(cp): State<Cp>) -> Response {
    blocking(OK, move || Ok(cp.inferences())).await
}

async fn get_inference(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.inference(id)).await
}

async fn stop_inference(State(cp): State<Cp>, Path(id): Path<Id>) -> Response {
    blocking(OK, move || cp.stop_inference(id)).await
}

async fn list_datastreams(State(cp): State<Cp>) -> Response {
    blocking(OK, move || Ok(cp.datastreams())).await
}

#[derive(Deserialize)]
struct ReplayRequest {
    deployment_id: Id,
}

async fn replay(State(cp): State<Cp>, Path(id): Path<Id>, body: Bytes) -> Response {
    blocking(StatusCode::ACCEPTED, move || {
        let req: ReplayRequest = parse_body(&body)?;
        cp.replay(id, req.deployment_id)
    })
    .await
}

const UI_PAGE: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>kafka-ml</title></head>
<body>
<h1>kafka-ml</h1>
<p>The management console loads its settings from <a href="/ui/config.json">/ui/config.json</a>
and drives the REST API listed below.</p>
<ul>
<li><a href="/models">/models</a></li>
<li><a href="/configurations">/configurations</a></li>
<li><a href="/deployments">/deployments</a></li>
<li><a href="/results">/results</a></li>
<li><a href="/inferences">/inferences</a></li>
<li><a href="/datastreams">/datastreams</a></li>
</ul>
</body></html>
"#;

async fn ui() -> Html<&'static str> {
    Html(UI_PAGE)
}

async fn ui_config(State(cp): State<Cp>) -> Json<serde_json::Value> {
    Json(json!({ "backend_base_url": cp.backend_url() }))
}
