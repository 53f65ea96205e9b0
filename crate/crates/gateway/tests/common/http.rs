//! In-process HTTP harness over the Alice gateway, shared by the API tests
//! and the acceptance target.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::TimeDelta;
use http_body_util::BodyExt;
use pdv_core::query::GrantStatus;
use pdv_core::Reading;
use pdv_gateway::api::{self, AppState};
use pdv_gateway::service::{Gateway, RequestState};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestRng, TestRunner};
use serde_json::{json, Value};
use tower::ServiceExt;

use super::*;

pub const OWNER: &str = "alice-owner-token";
pub const DEVICE: &str = "alice-meter-token";
pub const MARKETER: &str = "marketer-token";
pub const UTILITY: &str = "utility-token";

/// Keys a consumer-facing body may contain.
pub const CONSUMER_KEYS: &[&str] = &[
    "id",
    "state",
    "counter",
    "grant",
    "items",
    "sample_period",
    "noise_epsilon",
    "generalization_level",
    "expiry",
    "status",
    "request_id",
    "grant_id",
    "results",
    "stream_id",
    "readings",
    "accuracy",
    "t",
    "v",
    "error",
    "message",
];

/// Fields that must never reach a consumer.
pub const FORBIDDEN_KEYS: &[&str] = &[
    "sensitivity",
    "weights",
    "parameter_weights",
    "risk_magnitude",
    "derivations",
    "explanation",
    "active_facts",
    "facts",
    "assessment",
    "utility",
    "benefit_value",
    "tradeoff_bias_w",
    "manual_flags",
];

/// Privacy parameter names; consumer error messages must not mention them.
pub const PARAMETERS: &[&str] = &[
    "personal_information",
    "presence_absence",
    "realtime_surveillance",
    "habits",
    "device_use",
];

pub struct Api {
    pub app: Router,
    pub state: AppState,
}

impl Api {
    pub async fn call(&self, method: &str, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(api::method(method)).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }
}

pub fn small_trace() -> Vec<Reading> {
    let home = alice_home();
    home.trace(home.seed).readings.into_iter().take(480).collect()
}

/// API over a gateway whose energy stream is registered through the device
/// endpoint.
pub async fn alice_api(store: &Path, auto_accept: bool) -> Api {
    let gw = Gateway::open(alice_config(store, auto_accept).load().unwrap()).unwrap();
    let state = AppState::new(gw);
    let api = Api {
        app: api::router(state.clone()),
        state,
    };
    let body = json!({
        "stream_id": "energy.consumption",
        "register": {"id": "energy.consumption", "unit": "kW", "native_period": "15s", "value_kind": "numeric"},
        "readings": small_trace(),
    });
    let (status, v) = api.call("POST", "/api/ingest/readings", Some(DEVICE), Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    api
}

pub fn submit_body(offer: f64) -> Value {
    json!({"query": QUERY_15S, "offer": {"category": "financial", "declared_value": offer, "description": ""}})
}

pub fn concrete(path: &str, id: &str) -> String {
    path.replace("{id}", id)
}

pub fn keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                out.insert(k.clone());
                keys(x, out);
            }
        }
        Value::Array(xs) => xs.iter().for_each(|x| keys(x, out)),
        _ => {}
    }
}

pub fn strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Object(m) => m.values().for_each(|x| strings(x, out)),
        Value::Array(xs) => xs.iter().for_each(|x| strings(x, out)),
        _ => {}
    }
}

pub fn assert_consumer_safe(what: &str, body: &Value) {
    let mut found = BTreeSet::new();
    keys(body, &mut found);
    for k in &found {
        assert!(!FORBIDDEN_KEYS.contains(&k.as_str()), "{what}: forbidden key {k} in {body}");
        assert!(CONSUMER_KEYS.contains(&k.as_str()), "{what}: unexpected key {k} in {body}");
    }
    let mut texts = Vec::new();
    strings(body, &mut texts);
    for s in texts {
        for p in PARAMETERS {
            assert!(!s.contains(p), "{what}: text mentions {p}: {s}");
        }
    }
}

pub fn has_readings(v: &Value) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, x)| (k == "readings" && x.is_array()) || has_readings(x)),
        Value::Array(xs) => xs.iter().any(has_readings),
        _ => false,
    }
}

pub fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

#[derive(Clone, Debug)]
pub enum Op {
    Submit { consumer: usize, offer: f64 },
    Decide { req: usize, action: usize, period: Option<&'static str> },
    Respond { req: usize, consumer: usize, action: usize, offer: f64 },
    Fetch { req: usize, consumer: usize },
    View { req: usize, consumer: usize },
    Event { on: bool },
    Revoke { grant: usize },
    Reinstate { grant: usize },
}

pub fn op() -> impl Strategy<Value = Op> {
    let offer = prop::sample::select(vec![0.0, 0.01, 0.035, 0.5, 3.0]);
    prop_oneof![
        3 => (0..2usize, offer.clone()).prop_map(|(consumer, offer)| Op::Submit { consumer, offer }),
        4 => (0..8usize, 0..3usize, prop::option::of(prop::sample::select(vec!["15s", "5m", "30m", "1h", "1d"])))
            .prop_map(|(req, action, period)| Op::Decide { req, action, period }),
        4 => (0..8usize, 0..3usize, 0..3usize, offer).prop_map(|(req, consumer, action, offer)| Op::Respond { req, consumer, action, offer }),
        3 => (0..8usize, 0..3usize).prop_map(|(req, consumer)| Op::Fetch { req, consumer }),
        1 => (0..8usize, 0..3usize).prop_map(|(req, consumer)| Op::View { req, consumer }),
        1 => any::<bool>().prop_map(|on| Op::Event { on }),
        1 => (0..4usize).prop_map(|grant| Op::Revoke { grant }),
        1 => (0..4usize).prop_map(|grant| Op::Reinstate { grant }),
    ]
}

pub fn offer_json(v: f64) -> Value {
    json!({"category": "financial", "declared_value": v, "description": ""})
}

/// Totals over a set of random walks.
#[derive(Clone, Copy, Debug, Default)]
pub struct WalkStats {
    pub transitions: usize,
    pub releases: usize,
}

/// Runs one op sequence and checks the request diagram after every call.
pub async fn walk(auto_accept: bool, ops: &[Op]) -> Result<WalkStats, TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let api = alice_api(dir.path(), auto_accept).await;
    let consumers = [MARKETER, UTILITY, "nobody"];
    let mut event_t = t("2024-01-01T12:00:00Z");
    for op in ops {
        let (reqs, grants) = {
            let gw = api.state.gateway().lock().await;
            (gw.state().requests.clone(), gw.state().grants.clone())
        };
        let req_id = |i: usize| reqs.keys().nth(i % reqs.len().max(1)).copied().unwrap_or(1);
        let grant_id = |i: usize| grants.keys().nth(i % grants.len().max(1)).copied().unwrap_or(1);
        match op {
            Op::Submit { consumer, offer } => {
                let (status, body) = api
                    .call("POST", "/api/requests", Some(consumers[*consumer]), Some(json!({"query": QUERY_15S, "offer": offer_json(*offer)})))
                    .await;
                prop_assert_eq!(status, StatusCode::CREATED, "{}", body);
            }
            Op::Decide { req, action, period } => {
                let action = match action {
                    0 => json!({"action": "accept"}),
                    1 => json!({"action": "deny"}),
                    _ => json!({"action": "counter", "period": period}),
                };
                let id = req_id(*req);
                let before = reqs.get(&id).map(|r| r.state);
                let (status, _) = api.call("POST", &format!("/api/owner/requests/{id}/decision"), Some(OWNER), Some(action)).await;
                if status == StatusCode::OK {
                    prop_assert!(matches!(before, Some(RequestState::Assessed | RequestState::Countered)));
                }
            }
            Op::Respond { req, consumer, action, offer } => {
                let action = match action {
                    0 => json!({"action": "accept_counter"}),
                    1 => json!({"action": "raise_offer", "offer": offer_json(*offer)}),
                    _ => json!({"action": "withdraw"}),
                };
                let id = req_id(*req);
                let (status, body) = api
                    .call("POST", &format!("/api/requests/{id}/respond"), Some(consumers[*consumer]), Some(action))
                    .await;
                if status == StatusCode::OK {
                    prop_assert_eq!(reqs[&id].state, RequestState::Countered);
                }
                if *consumer < 2 {
                    assert_consumer_safe("respond", &body);
                }
            }
            Op::Fetch { req, consumer } => {
                let id = req_id(*req);
                let (status, body) = api.call("GET", &format!("/api/requests/{id}/result"), Some(consumers[*consumer]), None).await;
                if *consumer < 2 {
                    assert_consumer_safe("result", &body);
                }
                if has_readings(&body) {
                    prop_assert_eq!(status, StatusCode::OK);
                    let r = &reqs[&id];
                    prop_assert_eq!(r.state, RequestState::Accepted);
                    let g = &grants[&r.grant_id.unwrap()];
                    prop_assert_eq!(g.grant.status, GrantStatus::Active);
                    prop_assert_eq!(&body["results"][0]["accuracy"]["sample_period"], &json!(g.grant.sample_period));
                } else {
                    prop_assert_ne!(status, StatusCode::OK, "{}", body);
                }
            }
            Op::View { req, consumer } => {
                let (_, body) = api
                    .call("GET", &format!("/api/requests/{}", req_id(*req)), Some(consumers[*consumer]), None)
                    .await;
                if *consumer < 2 {
                    assert_consumer_safe("view", &body);
                }
            }
            Op::Event { on } => {
                event_t += TimeDelta::minutes(1);
                let kind = if *on { "device_on" } else { "device_off" };
                let events = json!([{"t": event_t, "kind": kind, "payload": "haemodialysis1"}]);
                let (status, body) = api.call("POST", "/api/ingest/events", Some(DEVICE), Some(events)).await;
                prop_assert_eq!(status, StatusCode::OK, "{}", body);
            }
            Op::Revoke { grant } => {
                api.call("POST", &format!("/api/owner/grants/{}/revoke", grant_id(*grant)), Some(OWNER), None).await;
            }
            Op::Reinstate { grant } => {
                api.call("POST", &format!("/api/owner/grants/{}/reinstate", grant_id(*grant)), Some(OWNER), None).await;
            }
        }
        let gw = api.state.gateway().lock().await;
        for (id, r) in &gw.state().requests {
            let mut state = RequestState::Pending;
            for tr in &r.history {
                prop_assert_eq!(tr.from, state, "request {} history is not contiguous", id);
                prop_assert!(tr.from.can_become(tr.to), "request {}: {} -> {}", id, tr.from, tr.to);
                state = tr.to;
            }
            prop_assert_eq!(state, r.state);
            if let Some(old) = reqs.get(id) {
                prop_assert!(r.history.starts_with(&old.history));
            }
            prop_assert_eq!(r.state == RequestState::Accepted, r.grant_id.is_some());
        }
        prop_assert_eq!(gw.state().grants.len(), gw.state().requests.values().filter(|r| r.grant_id.is_some()).count());
    }
    let gw = api.state.gateway().lock().await;
    Ok(WalkStats {
        transitions: gw.state().requests.values().map(|r| r.history.len()).sum(),
        releases: gw.state().releases as usize,
    })
}

/// Runs `cases` random walks of `steps` API calls each from a fixed seed and
/// returns their totals.
pub fn random_walks(cases: u32, steps: usize) -> WalkStats {
    let runtime = rt();
    let total = Cell::new(WalkStats::default());
    let mut runner = TestRunner::new_with_rng(
        RunnerConfig {
            cases,
            failure_persistence: None,
            ..RunnerConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner
        .run(&(any::<bool>(), prop::collection::vec(op(), steps)), |(auto, ops)| {
            let s = runtime.block_on(walk(auto, &ops))?;
            let t = total.get();
            total.set(WalkStats {
                transitions: t.transitions + s.transitions,
                releases: t.releases + s.releases,
            });
            Ok(())
        })
        .unwrap();
    total.get()
}
