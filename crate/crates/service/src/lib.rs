//! HTTP service over the latscope engine.
//!
//! Models, images and latents are content addressed: identical requests
//! produce identical ids and URLs. Errors use a fixed JSON envelope
//! `{code, message, detail}`.

mod error;
mod state;

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use latscope_core::experiment::TermSpec;
use latscope_core::image::{compose_grid, tensor_to_image, GridLayout, ImageBuffer};
use latscope_core::{
    evaluate_arithmetic, sample_latents, traverse, AnchorSet, AnchorSummary, ArithmeticExpression,
    GeneratorModel, LatentSpace, LatentVector, TraversalKind,
};
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ApiJson};
pub use state::{AppState, ServiceConfig};

type ApiResult<T> = Result<T, ApiError>;

/// Largest batch a single sample or traverse request may render.
pub const MAX_IMAGES_PER_REQUEST: usize = 256;
const MAX_UPLOAD_BYTES: usize = 512 << 20;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route(
            "/api/models",
            get(list_models)
                .post(upload_model)
                .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/api/sample", post(sample))
        .route("/api/traverse", post(traverse_handler))
        .route("/api/arithmetic", post(arithmetic))
        .route("/api/anchors", get(list_anchors).post(create_anchor))
        .route("/api/anchors/{name}", get(get_anchor).delete(delete_anchor))
        .route("/api/latents", post(import_latent))
        .route("/api/latents/{id}", get(get_latent))
        .route("/images/{file}", get(get_image));
    let app = match state.config().ui_dir.clone() {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such route") }),
    };
    app.with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Serialize)]
struct ModelInfo {
    model_id: String,
    input_dim: usize,
    input_space: LatentSpace,
    output_shape: Vec<usize>,
    layers: usize,
    parameter_count: usize,
}

fn model_info(id: String, m: &GeneratorModel) -> ModelInfo {
    ModelInfo {
        model_id: id,
        input_dim: m.input_dim(),
        input_space: m.input_space(),
        output_shape: m.output_shape().to_vec(),
        layers: m.layers().len(),
        parameter_count: m.parameter_count(),
    }
}

async fn upload_model(
    State(st): State<Arc<AppState>>,
    mut form: Multipart,
) -> ApiResult<(StatusCode, Json<ModelInfo>)> {
    let mut bytes = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        if field.name() == Some("file") {
            let data = field
                .bytes()
                .await
                .map_err(|e| ApiError::bad_request(e.body_text()))?;
            bytes = Some(data);
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::bad_request("multipart field `file` is required"))?;
    blocking(move || {
        let (id, m) = st.register_model(&bytes)?;
        Ok((StatusCode::CREATED, Json(model_info(id, &m))))
    })
    .await
}

#[derive(Serialize)]
struct ModelList {
    models: Vec<ModelInfo>,
}

async fn list_models(State(st): State<Arc<AppState>>) -> Json<ModelList> {
    let models = st
        .models()
        .into_iter()
        .map(|(id, m)| model_info(id, &m))
        .collect();
    Json(ModelList { models })
}

fn check_dim(model: &GeneratorModel, z: &LatentVector, what: &str) -> ApiResult<()> {
    if z.dim() != model.input_dim() {
        return Err(ApiError::dim_mismatch(format!(
            "{what} has dim {} but the model expects {}",
            z.dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn check_count(what: &str, n: usize, min: usize) -> ApiResult<()> {
    if n < min || n > MAX_IMAGES_PER_REQUEST {
        return Err(latscope_core::Error::invalid(format!(
            "{what} must be in {min}..={MAX_IMAGES_PER_REQUEST} (got {n})"
        ))
        .into());
    }
    Ok(())
}

/// Decode every latent, store the PNGs, and return images plus URLs.
fn render(
    st: &AppState,
    model: &GeneratorModel,
    latents: &[LatentVector],
) -> ApiResult<(Vec<ImageBuffer>, Vec<String>)> {
    let mut images = Vec::with_capacity(latents.len());
    let mut urls = Vec::with_capacity(latents.len());
    for z in latents {
        let img = tensor_to_image(&model.forward(z)?)?;
        urls.push(st.store_image(&img.to_png())?);
        images.push(img);
    }
    Ok((images, urls))
}

fn register_all(st: &AppState, latents: &[LatentVector]) -> ApiResult<Vec<String>> {
    latents
        .iter()
        .map(|z| st.register_latent(z).map_err(ApiError::from))
        .collect()
}

fn default_count() -> usize {
    16
}

fn default_cols() -> usize {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRequest {
    model_id: String,
    #[serde(default = "default_count")]
    count: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct SampleResponse {
    latent_ids: Vec<String>,
    image_urls: Vec<String>,
}

async fn sample(
    State(st): State<Arc<AppState>>,
    ApiJson(req): ApiJson<SampleRequest>,
) -> ApiResult<Json<SampleResponse>> {
    let model = st.model(&req.model_id)?;
    check_count("count", req.count, 1)?;
    blocking(move || {
        let zs = sample_latents(model.input_space(), model.input_dim(), req.count, req.seed)?;
        let (_, image_urls) = render(&st, &model, &zs)?;
        Ok(Json(SampleResponse {
            latent_ids: register_all(&st, &zs)?,
            image_urls,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum EndpointsRequest {
    LatentIds([String; 2]),
    Seeds([u64; 2]),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraverseRequest {
    model_id: String,
    kind: String,
    /// Absent: both endpoints come from `seed`.
    #[serde(default)]
    endpoints: Option<EndpointsRequest>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_count")]
    n: usize,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default = "default_cols")]
    grid_cols: usize,
}

#[derive(Debug, Serialize)]
struct TraverseResponse {
    kind: TraversalKind,
    latent_ids: Vec<String>,
    image_urls: Vec<String>,
    grid_url: String,
}

async fn traverse_handler(
    State(st): State<Arc<AppState>>,
    ApiJson(req): ApiJson<TraverseRequest>,
) -> ApiResult<Json<TraverseResponse>> {
    let kind: TraversalKind = req.kind.parse()?;
    let model = st.model(&req.model_id)?;
    check_count("n", req.n, 2)?;
    if req.grid_cols == 0 {
        return Err(latscope_core::Error::invalid("grid_cols must be >= 1").into());
    }
    let (space, dim) = (model.input_space(), model.input_dim());
    let draw = |seed: u64, count: usize| sample_latents(space, dim, count, seed);
    let (a, b) = match &req.endpoints {
        None => {
            let mut pair = draw(req.seed, 2)?;
            let b = pair.pop().unwrap();
            (pair.pop().unwrap(), b)
        }
        Some(EndpointsRequest::Seeds([sa, sb])) => {
            (draw(*sa, 1)?.remove(0), draw(*sb, 1)?.remove(0))
        }
        Some(EndpointsRequest::LatentIds([ia, ib])) => (st.latent(ia)?, st.latent(ib)?),
    };
    check_dim(&model, &a, "first endpoint")?;
    check_dim(&model, &b, "second endpoint")?;
    let seq = traverse(kind, &a, &b, req.n, req.radius.unwrap_or(1.0))?;
    blocking(move || {
        let (images, image_urls) = render(&st, &model, &seq.points)?;
        let grid = compose_grid(&images, GridLayout::flush(req.grid_cols))?;
        Ok(Json(TraverseResponse {
            kind,
            latent_ids: register_all(&st, &seq.points)?,
            image_urls,
            grid_url: st.store_image(&grid.to_png())?,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArithmeticRequest {
    model_id: String,
    terms: Vec<TermSpec>,
}

#[derive(Debug, Serialize)]
struct ArithmeticResponse {
    result_latent_id: String,
    operand_latent_ids: Vec<String>,
    operand_image_urls: Vec<String>,
    result_image_url: String,
    strip_url: String,
}

async fn arithmetic(
    State(st): State<Arc<AppState>>,
    ApiJson(req): ApiJson<ArithmeticRequest>,
) -> ApiResult<Json<ArithmeticResponse>> {
    let model = st.model(&req.model_id)?;
    blocking(move || {
        let sets = st.with_store(|store| {
            req.terms
                .iter()
                .map(|t| Ok((t.sign, store.get(&t.anchor_set)?)))
                .collect::<latscope_core::Result<Vec<_>>>()
        })?;
        for (_, s) in &sets {
            check_dim(
                &model,
                &s.members()[0],
                &format!("anchor set `{}`", s.name()),
            )?;
        }
        let expr = ArithmeticExpression::new(sets)?;
        let mut latents: Vec<LatentVector> = expr
            .terms
            .iter()
            .map(|(_, s)| latscope_core::average_anchors(s))
            .collect();
        latents.push(evaluate_arithmetic(&expr)?);
        let (images, mut urls) = render(&st, &model, &latents)?;
        let strip = compose_grid(&images, GridLayout::flush(images.len()))?;
        let mut ids = register_all(&st, &latents)?;
        Ok(Json(ArithmeticResponse {
            result_latent_id: ids.pop().unwrap(),
            operand_latent_ids: ids,
            result_image_url: urls.pop().unwrap(),
            operand_image_urls: urls,
            strip_url: st.store_image(&strip.to_png())?,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct TagQuery {
    #[serde(default)]
    tags: Option<String>,
}

#[derive(Serialize)]
struct AnchorList {
    anchor_sets: Vec<AnchorSummary>,
}

async fn list_anchors(
    State(st): State<Arc<AppState>>,
    Query(q): Query<TagQuery>,
) -> ApiResult<Json<AnchorList>> {
    let tags: Vec<String> = q
        .tags
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::to_string)
        .collect();
    let anchor_sets = st.with_store(|s| Ok(s.list(&tags)))?;
    Ok(Json(AnchorList { anchor_sets }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateAnchor {
    name: String,
    #[serde(default)]
    tags: Vec<String>,
    latent_ids: Vec<String>,
    #[serde(default)]
    overwrite: bool,
}

#[derive(Debug, Serialize)]
struct AnchorDetail {
    name: String,
    tags: Vec<String>,
    size: usize,
    dim: usize,
    space: LatentSpace,
    latent_ids: Vec<String>,
}

fn anchor_detail(st: &AppState, set: &AnchorSet) -> ApiResult<AnchorDetail> {
    Ok(AnchorDetail {
        name: set.name().to_string(),
        tags: set.tags().iter().cloned().collect(),
        size: set.members().len(),
        dim: set.dim(),
        space: set.space(),
        latent_ids: register_all(st, set.members())?,
    })
}

async fn create_anchor(
    State(st): State<Arc<AppState>>,
    ApiJson(req): ApiJson<CreateAnchor>,
) -> ApiResult<(StatusCode, Json<AnchorDetail>)> {
    let members = req
        .latent_ids
        .iter()
        .map(|id| st.latent(id))
        .collect::<ApiResult<Vec<_>>>()?;
    let set = AnchorSet::new(req.name, &req.tags, members)?;
    st.with_store(|s| s.put(&set, req.overwrite))?;
    Ok((StatusCode::CREATED, Json(anchor_detail(&st, &set)?)))
}

async fn get_anchor(
    State(st): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> ApiResult<Json<AnchorDetail>> {
    let set = st.with_store(|s| s.get(&name))?;
    Ok(Json(anchor_detail(&st, &set)?))
}

async fn delete_anchor(
    State(st): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> ApiResult<StatusCode> {
    st.with_store(|s| s.delete(&name))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Serialize)]
struct LatentInfo {
    latent_id: String,
    dim: usize,
    space: LatentSpace,
    record: String,
}

async fn get_latent(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<LatentInfo>> {
    let z = st.latent(&id)?;
    Ok(Json(LatentInfo {
        latent_id: id,
        dim: z.dim(),
        space: z.space(),
        record: z.to_line(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportLatent {
    record: String,
}

async fn import_latent(
    State(st): State<Arc<AppState>>,
    ApiJson(req): ApiJson<ImportLatent>,
) -> ApiResult<(StatusCode, Json<LatentInfo>)> {
    let z = LatentVector::from_line(&req.record)?;
    let id = st.register_latent(&z)?;
    Ok((
        StatusCode::CREATED,
        Json(LatentInfo {
            latent_id: id,
            dim: z.dim(),
            space: z.space(),
            record: z.to_line(),
        }),
    ))
}

async fn get_image(
    State(st): State<Arc<AppState>>,
    Path(file): Path<String>,
) -> ApiResult<Response> {
    let hash = file
        .strip_suffix(".png")
        .filter(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or_else(|| ApiError::not_found(format!("image `{file}` not found")))?;
    let path = st.image_dir().join(format!("{hash}.png"));
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found(format!("image `{file}` not found")))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}
