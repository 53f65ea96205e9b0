//! HTTP/JSON API over a [`Gateway`].
//!
//! Every route requires `Authorization: Bearer <token>`; the token decides
//! whether the caller is the owner, a consumer or a device, and each route
//! accepts exactly one of those. Errors are `{"error": code, "message": text}`.
//! Consumers only ever receive request ids, states, accuracy terms and
//! released result sets.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Path, Query as UrlQuery, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use pdv_core::context::ContextEvent;
use pdv_core::{BenefitOffer, ConsumerId, OwnerPolicy, Period, Reading, Stream, StreamId, Timestamp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::config::Config;
use crate::service::{ConsumerAction, Gateway, GatewayError, OwnerAction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    Owner,
    Consumer,
    Device,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteInfo {
    pub method: &'static str,
    pub path: &'static str,
    pub audience: Audience,
}

const fn route(method: &'static str, path: &'static str, audience: Audience) -> RouteInfo {
    RouteInfo {
        method,
        path,
        audience,
    }
}

/// Every route the router serves.
pub const ROUTES: &[RouteInfo] = &[
    route("POST", "/api/requests", Audience::Consumer),
    route("GET", "/api/requests/{id}", Audience::Consumer),
    route("POST", "/api/requests/{id}/respond", Audience::Consumer),
    route("GET", "/api/requests/{id}/result", Audience::Consumer),
    route("POST", "/api/ingest/readings", Audience::Device),
    route("POST", "/api/ingest/events", Audience::Device),
    route("GET", "/api/owner/requests", Audience::Owner),
    route("GET", "/api/owner/requests/{id}", Audience::Owner),
    route("GET", "/api/owner/requests/{id}/preview", Audience::Owner),
    route("POST", "/api/owner/requests/{id}/decision", Audience::Owner),
    route("GET", "/api/owner/grants", Audience::Owner),
    route("POST", "/api/owner/grants/{id}/revoke", Audience::Owner),
    route("POST", "/api/owner/grants/{id}/reinstate", Audience::Owner),
    route("GET", "/api/owner/notifications", Audience::Owner),
    route("POST", "/api/owner/notifications/{id}/read", Audience::Owner),
    route("GET", "/api/owner/policy", Audience::Owner),
    route("PUT", "/api/owner/policy", Audience::Owner),
    route("GET", "/api/owner/context", Audience::Owner),
    route("GET", "/api/owner/audit", Audience::Owner),
    route("POST", "/api/consumers/{id}/ratings", Audience::Owner),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Principal {
    Owner,
    Consumer(ConsumerId),
    Device,
}

#[derive(Clone)]
pub struct AppState {
    gateway: Arc<Mutex<Gateway>>,
    tokens: Arc<BTreeMap<String, Principal>>,
}

impl AppState {
    pub fn new(gateway: Gateway) -> AppState {
        let tokens = tokens(gateway.config());
        AppState {
            gateway: Arc::new(Mutex::new(gateway)),
            tokens: Arc::new(tokens),
        }
    }

    pub fn gateway(&self) -> &Arc<Mutex<Gateway>> {
        &self.gateway
    }
}

fn tokens(config: &Config) -> BTreeMap<String, Principal> {
    let mut out = BTreeMap::new();
    out.insert(config.owner.token.clone(), Principal::Owner);
    for t in &config.device_tokens {
        out.insert(t.clone(), Principal::Device);
    }
    for c in &config.consumers {
        out.insert(c.token.clone(), Principal::Consumer(c.id.clone()));
    }
    out
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> ApiError {
        use GatewayError as E;
        let status = match &e {
            E::UnknownConsumer(_) | E::UnknownRequest(_) | E::UnknownGrant(_) => StatusCode::NOT_FOUND,
            E::Query(_) | E::InvalidOffer | E::InvalidItems | E::CounterNotCoarser(_) => StatusCode::BAD_REQUEST,
            E::InvalidTransition { .. } | E::InvalidGrantTransition { .. } | E::NoCounter | E::NotAccepted(_) => {
                StatusCode::CONFLICT
            }
            E::RequestDenied | E::GrantInactive => StatusCode::FORBIDDEN,
            E::OutOfRangeRating | E::Policy(_) | E::OutOfOrderEvent { .. } | E::Tradeoff(_) | E::Rewrite(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            E::Store(crate::store::StoreError::DuplicateStream(_))
            | E::Store(crate::store::StoreError::OutOfOrder { .. }) => StatusCode::CONFLICT,
            E::Store(crate::store::StoreError::UnknownStream(_))
            | E::Store(crate::store::StoreError::InvalidRange) => StatusCode::BAD_REQUEST,
            E::Store(_) | E::Execute(_) | E::State(_) | E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

/// Consumer-facing error: assessment and internal failures carry a generic
/// message instead of the engine's.
fn consumer_error(e: GatewayError) -> ApiError {
    let mut err = ApiError::from(e);
    if err.code == "assessment-failed" || err.code == "internal" {
        err.message = "the request could not be processed".into();
    }
    err
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.code, "message": self.message})),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// JSON body whose rejections use the API error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

/// Numeric path id whose rejections use the API error format.
pub struct Id(pub u64);

impl<S: Send + Sync> FromRequestParts<S> for Id {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Path::<u64>::from_request_parts(parts, state)
            .await
            .map(|Path(id)| Id(id))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

fn principal(state: &AppState, headers: &HeaderMap) -> Result<Principal, ApiError> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
    state
        .tokens
        .get(token.trim())
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "unknown token"))
}

fn forbidden() -> ApiError {
    ApiError::new(StatusCode::FORBIDDEN, "forbidden", "this token may not use this route")
}

/// Authenticated owner. Role extractors are listed before path and body
/// extractors in every handler; token errors take precedence.
pub struct AsOwner;

/// Authenticated consumer.
pub struct AsConsumer(pub ConsumerId);

/// Authenticated device.
pub struct AsDevice;

impl FromRequestParts<AppState> for AsOwner {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        match principal(state, &parts.headers)? {
            Principal::Owner => Ok(AsOwner),
            _ => Err(forbidden()),
        }
    }
}

impl FromRequestParts<AppState> for AsConsumer {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        match principal(state, &parts.headers)? {
            Principal::Consumer(id) => Ok(AsConsumer(id)),
            _ => Err(forbidden()),
        }
    }
}

impl FromRequestParts<AppState> for AsDevice {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        match principal(state, &parts.headers)? {
            Principal::Device => Ok(AsDevice),
            _ => Err(forbidden()),
        }
    }
}

fn now() -> Timestamp {
    Utc::now()
}

fn to_value<T: Serialize>(v: T) -> Json<serde_json::Value> {
    Json(serde_json::to_value(v).expect("responses serialize"))
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    query: String,
    offer: BenefitOffer,
}

async fn submit(State(s): State<AppState>, AsConsumer(me): AsConsumer, Body(body): Body<SubmitBody>) -> Result<Response, ApiError> {
    let mut gw = s.gateway.lock().await;
    let view = gw
        .submit_request(&me, &body.query, body.offer.clone(), now())
        .map_err(consumer_error)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn consumer_get(State(s): State<AppState>, AsConsumer(me): AsConsumer, Id(id): Id) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    gw.expire_stale(now()).map_err(consumer_error)?;
    Ok(to_value(gw.consumer_view(id, &me).map_err(consumer_error)?))
}

async fn respond(
    State(s): State<AppState>,
    AsConsumer(me): AsConsumer,
    Id(id): Id,
    Body(action): Body<ConsumerAction>,
) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    Ok(to_value(gw.consumer_respond(id, &me, action, now()).map_err(consumer_error)?))
}

async fn result(State(s): State<AppState>, AsConsumer(me): AsConsumer, Id(id): Id) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    Ok(to_value(gw.fetch_result(id, &me, now()).map_err(consumer_error)?))
}

#[derive(Debug, Deserialize)]
pub struct ReadingsBody {
    pub stream_id: StreamId,
    #[serde(default)]
    pub register: Option<Stream>,
    pub readings: Vec<Reading>,
}

async fn ingest_readings(State(s): State<AppState>, _: AsDevice, Body(body): Body<ReadingsBody>) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    let n = gw.ingest_readings(&body.stream_id, body.register, &body.readings, now())?;
    Ok(Json(json!({"appended": n})))
}

async fn ingest_events(State(s): State<AppState>, _: AsDevice, Body(events): Body<Vec<ContextEvent>>) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    let report = gw.ingest_events(&events, now())?;
    Ok(Json(json!({"applied": report.applied, "warnings": report.warnings.len()})))
}

async fn owner_requests(State(s): State<AppState>, _: AsOwner) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    gw.expire_stale(now())?;
    Ok(to_value(gw.state().requests.values().collect::<Vec<_>>()))
}

async fn owner_request(State(s): State<AppState>, _: AsOwner, Id(id): Id) -> ApiResult<serde_json::Value> {
    let gw = s.gateway.lock().await;
    Ok(to_value(gw.request(id)?))
}

#[derive(Debug, Deserialize)]
struct PreviewParams {
    #[serde(default)]
    period: Option<String>,
    #[serde(default)]
    eps: Option<f64>,
}

async fn preview(
    State(s): State<AppState>,
    _: AsOwner,
    Id(id): Id,
    UrlQuery(p): UrlQuery<PreviewParams>,
) -> ApiResult<serde_json::Value> {
    let period = p
        .period
        .map(|t| t.parse::<Period>())
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let gw = s.gateway.lock().await;
    Ok(to_value(gw.preview(id, period, p.eps, now())?))
}

async fn decision(
    State(s): State<AppState>,
    _: AsOwner,
    Id(id): Id,
    Body(action): Body<OwnerAction>,
) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    Ok(to_value(gw.owner_decide(id, action, now())?))
}

async fn grants(State(s): State<AppState>, _: AsOwner) -> ApiResult<serde_json::Value> {
    let gw = s.gateway.lock().await;
    Ok(to_value(gw.state().grants.values().collect::<Vec<_>>()))
}

async fn revoke(State(s): State<AppState>, _: AsOwner, Id(id): Id) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    Ok(to_value(gw.revoke_grant(id, now())?))
}

async fn reinstate(State(s): State<AppState>, _: AsOwner, Id(id): Id) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    Ok(to_value(gw.reinstate_grant(id, now())?))
}

async fn notifications(State(s): State<AppState>, _: AsOwner) -> ApiResult<serde_json::Value> {
    let gw = s.gateway.lock().await;
    Ok(to_value(gw.owner_notifications()))
}

async fn mark_read(State(s): State<AppState>, _: AsOwner, Id(id): Id) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    gw.mark_read(id)?;
    Ok(Json(json!({"read": id})))
}

async fn get_policy(State(s): State<AppState>, _: AsOwner) -> ApiResult<serde_json::Value> {
    let gw = s.gateway.lock().await;
    Ok(to_value(&gw.state().policy))
}

async fn put_policy(State(s): State<AppState>, _: AsOwner, Body(policy): Body<OwnerPolicy>) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    gw.set_policy(policy, now())?;
    Ok(to_value(&gw.state().policy))
}

async fn context(State(s): State<AppState>, _: AsOwner) -> ApiResult<serde_json::Value> {
    let gw = s.gateway.lock().await;
    Ok(to_value(&gw.state().context))
}

async fn audit(State(s): State<AppState>, _: AsOwner) -> ApiResult<serde_json::Value> {
    let gw = s.gateway.lock().await;
    Ok(to_value(gw.audit_log()?))
}

#[derive(Debug, Deserialize)]
struct RatingBody {
    rating: f64,
}

async fn rate(
    State(s): State<AppState>,
    _: AsOwner,
    Path(id): Path<String>,
    Body(body): Body<RatingBody>,
) -> ApiResult<serde_json::Value> {
    let mut gw = s.gateway.lock().await;
    Ok(to_value(gw.rate_consumer(&ConsumerId(id), body.rating, now())?))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such route")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/requests", post(submit))
        .route("/api/requests/{id}", get(consumer_get))
        .route("/api/requests/{id}/respond", post(respond))
        .route("/api/requests/{id}/result", get(result))
        .route("/api/ingest/readings", post(ingest_readings))
        .route("/api/ingest/events", post(ingest_events))
        .route("/api/owner/requests", get(owner_requests))
        .route("/api/owner/requests/{id}", get(owner_request))
        .route("/api/owner/requests/{id}/preview", get(preview))
        .route("/api/owner/requests/{id}/decision", post(decision))
        .route("/api/owner/grants", get(grants))
        .route("/api/owner/grants/{id}/revoke", post(revoke))
        .route("/api/owner/grants/{id}/reinstate", post(reinstate))
        .route("/api/owner/notifications", get(notifications))
        .route("/api/owner/notifications/{id}/read", post(mark_read))
        .route("/api/owner/policy", get(get_policy).put(put_policy))
        .route("/api/owner/context", get(context))
        .route("/api/owner/audit", get(audit))
        .route("/api/consumers/{id}/ratings", post(rate))
        .fallback(not_found)
        .with_state(state)
}

/// Parses a method name from [`ROUTES`].
pub fn method(name: &str) -> Method {
    Method::from_bytes(name.as_bytes()).expect("route table uses valid methods")
}

pub async fn serve(state: AppState, listen: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    axum::serve(listener, router(state)).await
}
