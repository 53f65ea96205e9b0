//! The gateway proper: request lifecycle, grants, context handling, releases
//! and the audit trail, independent of any transport.
//!
//! Request states:
//!
//! ```text
//! pending -> assessed -> countered -> accepted
//!               |  ^         |  \---> withdrawn
//!               |  \---------/ (raise_offer)
//!               +-> accepted | denied
//! pending | assessed | countered -> expired
//! ```
//!
//! Every mutation is persisted to `gateway_state.json` and logged to
//! `audit.jsonl` in the state directory before the call returns.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;

use pdv_core::context::{check_order, granted_query, ActionKind, ContextEvent, ContextMonitor, EventWarning, GrantCase};
use pdv_core::noise::seeded_rng;
use pdv_core::query::{execute, parse_query, rewrite, ExecuteError, Grant, GrantStatus, Query, QueryError, RewriteError};
use pdv_core::series::ResultSet;
use pdv_core::tradeoff::{decide, decide_at, min_degradation, CounterOffer, DecisionInput, MinDegradationError, RiskModel, TradeoffError};
use pdv_core::domain::validate_policy;
use pdv_core::{
    BenefitOffer, Consumer, ConsumerId, ContextState, DecisionRecord, Degradation, Outcome, OwnerPolicy, Period,
    PolicyViolation, Reading, Stream, StreamId, Timestamp,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, Loaded};
use crate::store::{JsonlStore, StoreError};

pub const STATE_FILE: &str = "gateway_state.json";
pub const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Pending,
    Assessed,
    Countered,
    Accepted,
    Denied,
    Expired,
    Withdrawn,
}

impl RequestState {
    pub const ALL: [RequestState; 7] = [
        RequestState::Pending,
        RequestState::Assessed,
        RequestState::Countered,
        RequestState::Accepted,
        RequestState::Denied,
        RequestState::Expired,
        RequestState::Withdrawn,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            RequestState::Accepted | RequestState::Denied | RequestState::Expired | RequestState::Withdrawn
        )
    }

    /// The edges of the request state diagram.
    pub fn can_become(self, to: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, to),
            (Pending, Assessed)
                | (Pending, Expired)
                | (Assessed, Countered)
                | (Assessed, Accepted)
                | (Assessed, Denied)
                | (Assessed, Expired)
                | (Countered, Countered)
                | (Countered, Assessed)
                | (Countered, Accepted)
                | (Countered, Denied)
                | (Countered, Withdrawn)
                | (Countered, Expired)
        )
    }
}

impl std::fmt::Display for RequestState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RequestState::Pending => "pending",
            RequestState::Assessed => "assessed",
            RequestState::Countered => "countered",
            RequestState::Accepted => "accepted",
            RequestState::Denied => "denied",
            RequestState::Expired => "expired",
            RequestState::Withdrawn => "withdrawn",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Owner,
    Consumer,
    Gateway,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: RequestState,
    pub to: RequestState,
    pub at: Timestamp,
    pub by: Actor,
}

/// An accuracy the owner proposes, with the decision it was judged by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub degradation: Degradation,
    pub record: DecisionRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRequest {
    pub id: u64,
    pub consumer_id: ConsumerId,
    pub query_text: String,
    pub query: Query,
    pub offer: BenefitOffer,
    pub state: RequestState,
    pub created: Timestamp,
    /// Engine recommendation at the requested accuracy.
    #[serde(default)]
    pub assessment: Option<DecisionRecord>,
    #[serde(default)]
    pub counter: Option<Proposal>,
    #[serde(default)]
    pub grant_id: Option<u64>,
    #[serde(default)]
    pub history: Vec<Transition>,
}

impl DataRequest {
    /// Accuracy that accepting now would grant.
    pub fn proposed(&self) -> Option<Degradation> {
        match self.state {
            RequestState::Countered => self.counter.as_ref().map(|c| c.degradation),
            _ => self.assessment.as_ref().map(|a| a.degradation),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrantEntry {
    pub grant: Grant,
    pub request_id: u64,
    pub offer: BenefitOffer,
    /// Audit sequence number of the decision the grant was issued under.
    pub decision_seq: u64,
    pub created: Timestamp,
    /// The re-evaluation that suspended the grant, if any.
    #[serde(default)]
    pub suspension: Option<DecisionRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationKind {
    NewRequest,
    GrantSuspended,
    CounterReceived,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "to", content = "id", rename_all = "snake_case")]
pub enum Audience {
    Owner,
    Consumer(ConsumerId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub id: u64,
    pub kind: NotificationKind,
    pub audience: Audience,
    pub created: Timestamp,
    pub message: String,
    #[serde(default)]
    pub request_id: Option<u64>,
    #[serde(default)]
    pub grant_id: Option<u64>,
    #[serde(default)]
    pub record: Option<DecisionRecord>,
    /// Recommended owner actions, e.g. `reinstate` or `revoke`.
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub read: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditEvent {
    RequestSubmitted {
        request_id: u64,
        consumer_id: ConsumerId,
        query: String,
    },
    Decision {
        request_id: u64,
        record: Box<DecisionRecord>,
    },
    AssessmentFailed {
        request_id: u64,
        error: String,
    },
    Transition {
        request_id: u64,
        from: RequestState,
        to: RequestState,
        by: Actor,
    },
    GrantCreated {
        grant_id: u64,
        request_id: u64,
        decision_seq: u64,
    },
    Release {
        grant_id: u64,
        request_id: u64,
        decision_seq: u64,
        query: String,
        readings: usize,
    },
    ContextEvent {
        event: ContextEvent,
        #[serde(default)]
        warning: Option<EventWarning>,
    },
    GrantSuspended {
        grant_id: u64,
        record: Box<DecisionRecord>,
    },
    GrantRevoked {
        grant_id: u64,
    },
    GrantReinstated {
        grant_id: u64,
    },
    PolicyUpdated {
        policy: OwnerPolicy,
    },
    RatingAdded {
        consumer_id: ConsumerId,
        rating: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub t: Timestamp,
    #[serde(flatten)]
    pub event: AuditEvent,
}

/// Everything the gateway persists besides the data store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatewayState {
    pub policy: OwnerPolicy,
    pub context: ContextState,
    pub consumers: BTreeMap<ConsumerId, Consumer>,
    pub requests: BTreeMap<u64, DataRequest>,
    pub grants: BTreeMap<u64, GrantEntry>,
    pub notifications: Vec<Notification>,
    #[serde(default)]
    pub last_event: Option<Timestamp>,
    pub next_request: u64,
    pub next_grant: u64,
    pub next_notification: u64,
    pub next_audit: u64,
    pub releases: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown consumer: {0}")]
    UnknownConsumer(ConsumerId),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("unknown request: {0}")]
    UnknownRequest(u64),
    #[error("unknown grant: {0}")]
    UnknownGrant(u64),
    #[error("cannot {action} a request in state {state}")]
    InvalidTransition { state: RequestState, action: &'static str },
    #[error("cannot {action} a {status:?} grant")]
    InvalidGrantTransition { status: GrantStatus, action: &'static str },
    #[error("no counter-offer can make this request acceptable")]
    NoCounter,
    #[error("counter period {0} is not coarser than the requested accuracy")]
    CounterNotCoarser(Period),
    #[error("request denied")]
    RequestDenied,
    #[error("grant is not active")]
    GrantInactive,
    #[error("request is {0}, no result available")]
    NotAccepted(RequestState),
    #[error("offer value must be a non-negative number")]
    InvalidOffer,
    #[error("rating must lie in [0, 1]")]
    OutOfRangeRating,
    #[error("invalid policy: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Policy(Vec<PolicyViolation>),
    #[error("context event {index} is older than the previous event")]
    OutOfOrderEvent { index: usize },
    #[error("allowed items must be a non-empty subset of the query items")]
    InvalidItems,
    #[error(transparent)]
    Tradeoff(#[from] TradeoffError),
    #[error(transparent)]
    Rewrite(RewriteError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("release failed: {0}")]
    Execute(String),
    #[error("corrupt gateway state: {0}")]
    State(serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl GatewayError {
    /// Stable machine-readable code, used as the `error` field of API bodies.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::UnknownConsumer(_) => "unknown-consumer",
            GatewayError::Query(QueryError::InvalidRange) => "invalid-range",
            GatewayError::Query(QueryError::UnknownDurationUnit { .. }) => "unknown-duration-unit",
            GatewayError::Query(_) => "syntax-error",
            GatewayError::UnknownRequest(_) => "unknown-request",
            GatewayError::UnknownGrant(_) => "unknown-grant",
            GatewayError::InvalidTransition { .. } | GatewayError::InvalidGrantTransition { .. } => {
                "invalid-state-transition"
            }
            GatewayError::NoCounter => "no-counter",
            GatewayError::CounterNotCoarser(_) => "invalid-period",
            GatewayError::RequestDenied => "request-denied",
            GatewayError::GrantInactive => "grant-inactive",
            GatewayError::NotAccepted(_) => "not-accepted",
            GatewayError::InvalidOffer => "invalid-offer",
            GatewayError::OutOfRangeRating => "out-of-range-rating",
            GatewayError::Policy(_) => "invalid-policy",
            GatewayError::OutOfOrderEvent { .. } => "out-of-order-event",
            GatewayError::InvalidItems => "invalid-items",
            GatewayError::Tradeoff(TradeoffError::InvalidPeriod { .. }) => "invalid-period",
            GatewayError::Tradeoff(_) => "assessment-failed",
            GatewayError::Rewrite(RewriteError::GrantInactive | RewriteError::GrantExpired) => "grant-inactive",
            GatewayError::Rewrite(_) => "grant-mismatch",
            GatewayError::Store(StoreError::DuplicateStream(_)) => "duplicate-stream",
            GatewayError::Store(StoreError::UnknownStream(_)) => "unknown-stream",
            GatewayError::Store(StoreError::OutOfOrder { .. }) => "out-of-order-timestamp",
            GatewayError::Store(StoreError::InvalidRange) => "invalid-range",
            GatewayError::Store(_) | GatewayError::Execute(_) | GatewayError::State(_) | GatewayError::Io(_) => {
                "internal"
            }
        }
    }
}

impl From<RewriteError> for GatewayError {
    fn from(e: RewriteError) -> Self {
        match e {
            RewriteError::GrantInactive | RewriteError::GrantExpired => GatewayError::GrantInactive,
            other => GatewayError::Rewrite(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum OwnerAction {
    Accept {
        #[serde(default)]
        allowed_items: Option<Vec<StreamId>>,
    },
    Deny,
    Counter {
        /// Explicit period; the engine's minimal counter when absent.
        #[serde(default)]
        period: Option<Period>,
    },
}

impl OwnerAction {
    fn name(&self) -> &'static str {
        match self {
            OwnerAction::Accept { .. } => "accept",
            OwnerAction::Deny => "deny",
            OwnerAction::Counter { .. } => "counter",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ConsumerAction {
    AcceptCounter,
    RaiseOffer { offer: BenefitOffer },
    Withdraw,
}

impl ConsumerAction {
    fn name(&self) -> &'static str {
        match self {
            ConsumerAction::AcceptCounter => "accept_counter",
            ConsumerAction::RaiseOffer { .. } => "raise_offer",
            ConsumerAction::Withdraw => "withdraw",
        }
    }
}

/// What a consumer may learn about its request: state and accuracy terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerRequestView {
    pub id: u64,
    pub state: RequestState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counter: Option<AccuracyTerms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grant: Option<GrantTerms>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTerms {
    pub sample_period: Period,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrantTerms {
    pub items: Vec<StreamId>,
    pub sample_period: Period,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expiry: Option<Timestamp>,
    pub status: GrantStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub request_id: u64,
    pub grant_id: u64,
    pub results: Vec<ResultSet>,
}

/// Outcome of re-evaluating one grant after context events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrantReport {
    pub grant_id: u64,
    pub action: ActionKind,
    pub utility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub applied: usize,
    pub warnings: Vec<(usize, EventWarning)>,
    pub grants: Vec<GrantReport>,
}

pub struct Gateway {
    config: Config,
    model: RiskModel,
    store: JsonlStore,
    state: GatewayState,
    state_dir: PathBuf,
}

impl Gateway {
    /// Opens the store and the persisted state, or initialises both from the
    /// configuration.
    pub fn open(loaded: Loaded) -> Result<Gateway, GatewayError> {
        let Loaded {
            config,
            model,
            context_facts,
        } = loaded;
        let state_dir = config.state_dir().to_path_buf();
        fs::create_dir_all(&state_dir)?;
        let store = JsonlStore::open(&config.store_root)?;
        let state = match fs::read(state_dir.join(STATE_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(GatewayError::State)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let policy = config.policy.clone();
                let mut context = ContextState::with_flags(policy.parameters(), true);
                for (p, v) in &config.context_flags {
                    context.set_flag(p.clone(), *v != 0);
                }
                let context = ContextMonitor::new(&config.owner.id, &model).refresh_flags(context.with_facts(context_facts));
                GatewayState {
                    policy,
                    context,
                    consumers: BTreeMap::new(),
                    requests: BTreeMap::new(),
                    grants: BTreeMap::new(),
                    notifications: Vec::new(),
                    last_event: None,
                    next_request: 1,
                    next_grant: 1,
                    next_notification: 1,
                    next_audit: 1,
                    releases: 0,
                }
            }
            Err(e) => return Err(e.into()),
        };
        let mut gw = Gateway {
            config,
            model,
            store,
            state,
            state_dir,
        };
        for c in &gw.config.consumers {
            gw.state.consumers.entry(c.id.clone()).or_insert_with(|| c.consumer());
        }
        gw.persist()?;
        Ok(gw)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn state(&self) -> &GatewayState {
        &self.state
    }

    pub fn store(&self) -> &JsonlStore {
        &self.store
    }

    pub fn request(&self, id: u64) -> Result<&DataRequest, GatewayError> {
        self.state.requests.get(&id).ok_or(GatewayError::UnknownRequest(id))
    }

    pub fn grant(&self, id: u64) -> Result<&GrantEntry, GatewayError> {
        self.state.grants.get(&id).ok_or(GatewayError::UnknownGrant(id))
    }

    /// The consumer's own request; other consumers' ids look unknown.
    pub fn request_for(&self, id: u64, consumer: &ConsumerId) -> Result<&DataRequest, GatewayError> {
        match self.state.requests.get(&id) {
            Some(r) if &r.consumer_id == consumer => Ok(r),
            _ => Err(GatewayError::UnknownRequest(id)),
        }
    }

    pub fn consumer_view(&self, id: u64, consumer: &ConsumerId) -> Result<ConsumerRequestView, GatewayError> {
        let r = self.request_for(id, consumer)?;
        let grant = r.grant_id.and_then(|g| self.state.grants.get(&g)).map(|g| GrantTerms {
            items: g.grant.allowed_items.iter().cloned().collect(),
            sample_period: g.grant.sample_period,
            noise_epsilon: g.grant.noise_epsilon,
            expiry: g.grant.expiry,
            status: g.grant.status,
        });
        let counter = match r.state {
            RequestState::Countered => r.counter.as_ref().map(|c| AccuracyTerms {
                sample_period: c.degradation.sample_period,
                noise_epsilon: c.degradation.noise_epsilon,
            }),
            _ => None,
        };
        Ok(ConsumerRequestView {
            id: r.id,
            state: r.state,
            counter,
            grant,
        })
    }

    pub fn owner_notifications(&self) -> Vec<&Notification> {
        self.state
            .notifications
            .iter()
            .filter(|n| n.audience == Audience::Owner)
            .collect()
    }

    pub fn mark_read(&mut self, id: u64) -> Result<(), GatewayError> {
        if let Some(n) = self.state.notifications.iter_mut().find(|n| n.id == id) {
            n.read = true;
        }
        self.persist()
    }

    pub fn audit_log(&self) -> Result<Vec<AuditEntry>, GatewayError> {
        let text = match fs::read_to_string(self.state_dir.join(AUDIT_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(GatewayError::State))
            .collect()
    }

    fn persist(&self) -> Result<(), GatewayError> {
        let tmp = self.state_dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&self.state).expect("state serializes"))?;
        fs::rename(tmp, self.state_dir.join(STATE_FILE))?;
        Ok(())
    }

    fn audit(&mut self, t: Timestamp, event: AuditEvent) -> Result<u64, GatewayError> {
        let seq = self.state.next_audit;
        self.state.next_audit += 1;
        let entry = AuditEntry { seq, t, event };
        let mut line = serde_json::to_vec(&entry).expect("audit entries serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.state_dir.join(AUDIT_FILE))?;
        f.write_all(&line)?;
        Ok(seq)
    }

    fn notify(&mut self, n: Notification) {
        self.state.notifications.push(Notification {
            id: self.state.next_notification,
            ..n
        });
        self.state.next_notification += 1;
    }

    fn transition(&mut self, id: u64, to: RequestState, by: Actor, now: Timestamp) -> Result<(), GatewayError> {
        let r = self.state.requests.get_mut(&id).ok_or(GatewayError::UnknownRequest(id))?;
        let from = r.state;
        assert!(from.can_become(to), "request {id}: {from} -> {to} is not in the state diagram");
        r.state = to;
        r.history.push(Transition { from, to, at: now, by });
        self.audit(
            now,
            AuditEvent::Transition {
                request_id: id,
                from,
                to,
                by,
            },
        )?;
        Ok(())
    }

    fn consumer(&self, id: &ConsumerId) -> Result<&Consumer, GatewayError> {
        self.state
            .consumers
            .get(id)
            .ok_or_else(|| GatewayError::UnknownConsumer(id.clone()))
    }

    fn input<'a>(&'a self, query: &'a Query, consumer: &'a Consumer, offer: &'a BenefitOffer, streams: &'a BTreeMap<StreamId, Stream>) -> DecisionInput<'a> {
        DecisionInput {
            query,
            consumer,
            offer,
            policy: &self.state.policy,
            context: &self.state.context,
            streams,
        }
    }

    /// Moves stale open requests to `expired`.
    pub fn expire_stale(&mut self, now: Timestamp) -> Result<(), GatewayError> {
        let Some(ttl) = self.config.request_ttl_secs else {
            return Ok(());
        };
        let stale: Vec<u64> = self
            .state
            .requests
            .values()
            .filter(|r| !r.state.is_terminal() && now - r.created >= chrono::TimeDelta::seconds(ttl as i64))
            .map(|r| r.id)
            .collect();
        for id in &stale {
            self.transition(*id, RequestState::Expired, Actor::Gateway, now)?;
        }
        if !stale.is_empty() {
            self.persist()?;
        }
        Ok(())
    }

    /// Registers a consumer request and assesses it when its streams exist.
    pub fn submit_request(
        &mut self,
        consumer_id: &ConsumerId,
        query_text: &str,
        offer: BenefitOffer,
        now: Timestamp,
    ) -> Result<ConsumerRequestView, GatewayError> {
        self.expire_stale(now)?;
        self.consumer(consumer_id)?;
        let query = parse_query(query_text)?;
        if !(offer.declared_value >= 0.0 && offer.declared_value.is_finite()) {
            return Err(GatewayError::InvalidOffer);
        }
        let id = self.state.next_request;
        self.state.next_request += 1;
        self.state.requests.insert(
            id,
            DataRequest {
                id,
                consumer_id: consumer_id.clone(),
                query_text: query_text.into(),
                query,
                offer,
                state: RequestState::Pending,
                created: now,
                assessment: None,
                counter: None,
                grant_id: None,
                history: Vec::new(),
            },
        );
        self.audit(
            now,
            AuditEvent::RequestSubmitted {
                request_id: id,
                consumer_id: consumer_id.clone(),
                query: query_text.into(),
            },
        )?;
        self.try_assess(id, now)?;
        self.persist()?;
        self.consumer_view(id, consumer_id)
    }

    /// Assesses a pending request; leaves it pending if its streams are not
    /// registered yet.
    fn try_assess(&mut self, id: u64, now: Timestamp) -> Result<(), GatewayError> {
        let streams = self.store.streams();
        let r = self.request(id)?;
        if !r.query.items.iter().all(|i| streams.contains_key(i)) {
            return Ok(());
        }
        let consumer = self.consumer(&r.consumer_id)?;
        let record = match decide(&self.input(&r.query, consumer, &r.offer, &streams), &self.model, now) {
            Ok(rec) => rec,
            Err(e) => {
                self.audit(
                    now,
                    AuditEvent::AssessmentFailed {
                        request_id: id,
                        error: e.to_string(),
                    },
                )?;
                return Ok(());
            }
        };
        self.record_assessment(id, record, now)
    }

    fn record_assessment(&mut self, id: u64, record: DecisionRecord, now: Timestamp) -> Result<(), GatewayError> {
        let outcome = record.outcome;
        let utility = record.utility;
        self.audit(
            now,
            AuditEvent::Decision {
                request_id: id,
                record: Box::new(record.clone()),
            },
        )?;
        {
            let r = self.state.requests.get_mut(&id).expect("request exists");
            r.assessment = Some(record);
            r.counter = None;
        }
        self.transition(id, RequestState::Assessed, Actor::Gateway, now)?;
        let consumer = self.request(id)?.consumer_id.clone();
        self.notify(Notification {
            id: 0,
            kind: NotificationKind::NewRequest,
            audience: Audience::Owner,
            created: now,
            message: format!("{consumer} requests data; recommendation {outcome:?} (U = {utility:.4})"),
            request_id: Some(id),
            grant_id: None,
            record: None,
            actions: vec!["accept".into(), "deny".into(), "counter".into()],
            read: false,
        });
        if self.config.auto_accept {
            self.auto_decide(id, now)?;
        }
        Ok(())
    }

    /// Applies the engine's recommendation as if the owner had clicked it.
    fn auto_decide(&mut self, id: u64, now: Timestamp) -> Result<(), GatewayError> {
        let outcome = self.request(id)?.assessment.as_ref().map(|a| a.outcome);
        match outcome {
            Some(Outcome::Answer) => self.accept(id, None, Actor::Owner, now),
            Some(Outcome::Deny) => match self.engine_counter(id, now)? {
                Some(p) => self.set_counter(id, p, now),
                None => self.transition(id, RequestState::Denied, Actor::Owner, now),
            },
            None => Ok(()),
        }
    }

    fn engine_counter(&self, id: u64, now: Timestamp) -> Result<Option<Proposal>, GatewayError> {
        let streams = self.store.streams();
        let r = self.request(id)?;
        let consumer = self.consumer(&r.consumer_id)?;
        match min_degradation(&self.input(&r.query, consumer, &r.offer, &streams), &self.model, now) {
            Ok(CounterOffer::Counter { degradation, record }) => Ok(Some(Proposal { degradation, record })),
            Ok(CounterOffer::Infeasible) | Err(MinDegradationError::AlreadyAnswered) => Ok(None),
            Err(MinDegradationError::Tradeoff(e)) => Err(e.into()),
        }
    }

    fn set_counter(&mut self, id: u64, p: Proposal, now: Timestamp) -> Result<(), GatewayError> {
        let terms = p.degradation;
        self.audit(
            now,
            AuditEvent::Decision {
                request_id: id,
                record: Box::new(p.record.clone()),
            },
        )?;
        self.state.requests.get_mut(&id).expect("request exists").counter = Some(p);
        self.transition(id, RequestState::Countered, Actor::Owner, now)?;
        let consumer = self.request(id)?.consumer_id.clone();
        self.notify(Notification {
            id: 0,
            kind: NotificationKind::CounterReceived,
            audience: Audience::Consumer(consumer),
            created: now,
            message: format!("counter-offer: SAMPLE {}", terms.sample_period),
            request_id: Some(id),
            grant_id: None,
            record: None,
            actions: vec!["accept_counter".into(), "raise_offer".into(), "withdraw".into()],
            read: false,
        });
        Ok(())
    }

    fn accept(&mut self, id: u64, allowed: Option<Vec<StreamId>>, by: Actor, now: Timestamp) -> Result<(), GatewayError> {
        let r = self.request(id)?;
        let degradation = r.proposed().ok_or(GatewayError::InvalidTransition {
            state: r.state,
            action: "accept",
        })?;
        let allowed_items = match allowed {
            Some(items) => {
                if items.is_empty() || !items.iter().all(|i| r.query.items.contains(i)) {
                    return Err(GatewayError::InvalidItems);
                }
                items.into_iter().collect()
            }
            None => r.query.items.iter().cloned().collect(),
        };
        let grant_id = self.state.next_grant;
        let grant = Grant {
            id: grant_id,
            consumer_id: r.consumer_id.clone(),
            query: r.query.clone(),
            allowed_items,
            sample_period: degradation.sample_period,
            noise_epsilon: degradation.noise_epsilon,
            expiry: self
                .config
                .grant_ttl_secs
                .map(|s| now + chrono::TimeDelta::seconds(s as i64)),
            status: GrantStatus::Active,
        };
        let streams = self.store.streams();
        let consumer = self.consumer(&r.consumer_id)?;
        let q = granted_query(&grant);
        let record = decide_at(&self.input(&q, consumer, &r.offer, &streams), &self.model, degradation, now)?;
        let offer = r.offer.clone();
        self.state.next_grant += 1;
        let decision_seq = self.audit(
            now,
            AuditEvent::Decision {
                request_id: id,
                record: Box::new(record),
            },
        )?;
        self.state.grants.insert(
            grant_id,
            GrantEntry {
                grant,
                request_id: id,
                offer,
                decision_seq,
                created: now,
                suspension: None,
            },
        );
        self.state.requests.get_mut(&id).expect("request exists").grant_id = Some(grant_id);
        self.audit(
            now,
            AuditEvent::GrantCreated {
                grant_id,
                request_id: id,
                decision_seq,
            },
        )?;
        self.transition(id, RequestState::Accepted, by, now)
    }

    /// The owner's decision; authoritative whatever the engine recommended.
    pub fn owner_decide(&mut self, id: u64, action: OwnerAction, now: Timestamp) -> Result<&DataRequest, GatewayError> {
        self.expire_stale(now)?;
        let r = self.request(id)?;
        if !matches!(r.state, RequestState::Assessed | RequestState::Countered) {
            return Err(GatewayError::InvalidTransition {
                state: r.state,
                action: action.name(),
            });
        }
        match action {
            OwnerAction::Accept { allowed_items } => self.accept(id, allowed_items, Actor::Owner, now)?,
            OwnerAction::Deny => self.transition(id, RequestState::Denied, Actor::Owner, now)?,
            OwnerAction::Counter { period: None } => {
                let p = self.engine_counter(id, now)?.ok_or(GatewayError::NoCounter)?;
                self.set_counter(id, p, now)?;
            }
            OwnerAction::Counter { period: Some(period) } => {
                let requested = r.assessment.as_ref().map(|a| a.degradation).expect("assessed requests carry a record");
                if period <= requested.sample_period {
                    return Err(GatewayError::CounterNotCoarser(period));
                }
                let degradation = Degradation {
                    sample_period: period,
                    noise_epsilon: requested.noise_epsilon,
                };
                let record = self.evaluate(id, degradation, now)?;
                self.set_counter(id, Proposal { degradation, record }, now)?;
            }
        }
        self.persist()?;
        self.request(id)
    }

    fn evaluate(&self, id: u64, degradation: Degradation, now: Timestamp) -> Result<DecisionRecord, GatewayError> {
        let streams = self.store.streams();
        let r = self.request(id)?;
        let consumer = self.consumer(&r.consumer_id)?;
        Ok(decide_at(
            &self.input(&r.query, consumer, &r.offer, &streams),
            &self.model,
            degradation,
            now,
        )?)
    }

    /// What-if evaluation of a request at another accuracy; changes nothing.
    pub fn preview(&self, id: u64, period: Option<Period>, epsilon: Option<f64>, now: Timestamp) -> Result<DecisionRecord, GatewayError> {
        let r = self.request(id)?;
        let streams = self.store.streams();
        let consumer = self.consumer(&r.consumer_id)?;
        let input = self.input(&r.query, consumer, &r.offer, &streams);
        let requested = input.requested()?;
        let degradation = Degradation {
            sample_period: period.unwrap_or(requested.sample_period),
            noise_epsilon: epsilon.or(requested.noise_epsilon),
        };
        Ok(decide_at(&input, &self.model, degradation, now)?)
    }

    pub fn consumer_respond(
        &mut self,
        id: u64,
        consumer: &ConsumerId,
        action: ConsumerAction,
        now: Timestamp,
    ) -> Result<ConsumerRequestView, GatewayError> {
        self.expire_stale(now)?;
        let r = self.request_for(id, consumer)?;
        if r.state != RequestState::Countered {
            return Err(GatewayError::InvalidTransition {
                state: r.state,
                action: action.name(),
            });
        }
        match action {
            ConsumerAction::AcceptCounter => self.accept(id, None, Actor::Consumer, now)?,
            ConsumerAction::Withdraw => self.transition(id, RequestState::Withdrawn, Actor::Consumer, now)?,
            ConsumerAction::RaiseOffer { offer } => {
                if !(offer.declared_value >= 0.0 && offer.declared_value.is_finite()) {
                    return Err(GatewayError::InvalidOffer);
                }
                self.state.requests.get_mut(&id).expect("request exists").offer = offer;
                let record = {
                    let r = self.request(id)?;
                    let streams = self.store.streams();
                    let c = self.consumer(&r.consumer_id)?;
                    decide(&self.input(&r.query, c, &r.offer, &streams), &self.model, now)?
                };
                self.record_assessment(id, record, now)?;
            }
        }
        self.persist()?;
        self.consumer_view(id, consumer)
    }

    /// Serves an accepted request through its grant.
    pub fn fetch_result(&mut self, id: u64, consumer: &ConsumerId, now: Timestamp) -> Result<Release, GatewayError> {
        self.expire_stale(now)?;
        let r = self.request_for(id, consumer)?;
        match r.state {
            RequestState::Accepted => {}
            RequestState::Denied => return Err(GatewayError::RequestDenied),
            other => return Err(GatewayError::NotAccepted(other)),
        }
        let grant_id = r.grant_id.expect("accepted requests have a grant");
        let entry = self.grant(grant_id)?;
        let q = rewrite(&r.query, &entry.grant, consumer, now)?;
        let seed = self.config.noise_seed ^ self.state.releases.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let results = execute(&q, &self.store, &self.config.sensitivity_bounds, &mut seeded_rng(seed)).map_err(
            |e| match e {
                ExecuteError::Source(s) => GatewayError::Store(s),
                other => GatewayError::Execute(other.to_string()),
            },
        )?;
        let decision_seq = entry.decision_seq;
        self.state.releases += 1;
        self.audit(
            now,
            AuditEvent::Release {
                grant_id,
                request_id: id,
                decision_seq,
                query: q.to_string(),
                readings: results.iter().map(|r| r.readings.len()).sum(),
            },
        )?;
        self.persist()?;
        Ok(Release {
            request_id: id,
            grant_id,
            results,
        })
    }

    /// Appends device readings, registering the stream first if given.
    pub fn ingest_readings(
        &mut self,
        stream_id: &StreamId,
        register: Option<Stream>,
        readings: &[Reading],
        now: Timestamp,
    ) -> Result<usize, GatewayError> {
        if let Some(stream) = register {
            match self.store.streams().get(&stream.id) {
                Some(existing) if existing == &stream => {}
                _ => self.store.register_stream(stream)?,
            }
        }
        self.store.append_all(stream_id, readings)?;
        let pending: Vec<u64> = self
            .state
            .requests
            .values()
            .filter(|r| r.state == RequestState::Pending)
            .map(|r| r.id)
            .collect();
        for id in pending {
            self.try_assess(id, now)?;
        }
        self.persist()?;
        Ok(readings.len())
    }

    /// Applies context events in order, then re-checks every active grant.
    pub fn ingest_events(&mut self, events: &[ContextEvent], now: Timestamp) -> Result<EventReport, GatewayError> {
        check_order(events).map_err(|index| GatewayError::OutOfOrderEvent { index })?;
        if let (Some(last), Some(first)) = (self.state.last_event, events.first()) {
            if first.timestamp < last {
                return Err(GatewayError::OutOfOrderEvent { index: 0 });
            }
        }
        let monitor = ContextMonitor::new(&self.config.owner.id, &self.model);
        let mut context = self.state.context.clone();
        let mut warnings = Vec::new();
        let mut audit = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            let applied = monitor.apply_event(&context, ev);
            context = applied.state;
            if let Some(w) = applied.warning.clone() {
                warnings.push((i, w));
            }
            audit.push((ev.clone(), applied.warning));
        }
        let streams = self.store.streams();
        let mut actions = Vec::new();
        {
            let mut cases = Vec::new();
            for entry in self.state.grants.values() {
                let consumer = self.consumer(&entry.grant.consumer_id)?;
                cases.push(GrantCase {
                    grant: &entry.grant,
                    consumer,
                    offer: &entry.offer,
                });
            }
            for a in monitor.reevaluate(&cases, &context, &self.state.policy, &streams, now)? {
                actions.push(a);
            }
        }
        for (event, warning) in audit {
            let t = event.timestamp;
            self.audit(t, AuditEvent::ContextEvent { event, warning })?;
        }
        if let Some(last) = events.last() {
            self.state.last_event = Some(last.timestamp);
        }
        self.state.context = context;
        let mut grants = Vec::new();
        for a in actions {
            grants.push(GrantReport {
                grant_id: a.grant_id,
                action: a.action,
                utility: a.reason.utility,
            });
            if a.action != ActionKind::Suspend {
                continue;
            }
            let entry = self.state.grants.get_mut(&a.grant_id).expect("re-evaluated grants exist");
            entry.grant.status = GrantStatus::Suspended;
            entry.suspension = Some(a.reason.clone());
            let request_id = entry.request_id;
            let consumer = entry.grant.consumer_id.clone();
            self.audit(
                now,
                AuditEvent::GrantSuspended {
                    grant_id: a.grant_id,
                    record: Box::new(a.reason.clone()),
                },
            )?;
            let params = pdv_core::tradeoff::contributing_parameters(&a.reason.assessment).join(", ");
            self.notify(Notification {
                id: 0,
                kind: NotificationKind::GrantSuspended,
                audience: Audience::Owner,
                created: now,
                message: format!(
                    "grant {} for {consumer} suspended: context change makes U = {:.4} (risk from {params})",
                    a.grant_id, a.reason.utility
                ),
                request_id: Some(request_id),
                grant_id: Some(a.grant_id),
                record: Some(a.reason),
                actions: vec!["revoke".into(), "reinstate".into()],
                read: false,
            });
        }
        self.persist()?;
        Ok(EventReport {
            applied: events.len(),
            warnings,
            grants,
        })
    }

    pub fn revoke_grant(&mut self, id: u64, now: Timestamp) -> Result<&GrantEntry, GatewayError> {
        let entry = self.state.grants.get_mut(&id).ok_or(GatewayError::UnknownGrant(id))?;
        if entry.grant.status == GrantStatus::Revoked {
            return Err(GatewayError::InvalidGrantTransition {
                status: entry.grant.status,
                action: "revoke",
            });
        }
        entry.grant.status = GrantStatus::Revoked;
        self.audit(now, AuditEvent::GrantRevoked { grant_id: id })?;
        self.persist()?;
        self.grant(id)
    }

    /// Owner override of a context suspension.
    pub fn reinstate_grant(&mut self, id: u64, now: Timestamp) -> Result<&GrantEntry, GatewayError> {
        let entry = self.state.grants.get_mut(&id).ok_or(GatewayError::UnknownGrant(id))?;
        if entry.grant.status != GrantStatus::Suspended {
            return Err(GatewayError::InvalidGrantTransition {
                status: entry.grant.status,
                action: "reinstate",
            });
        }
        entry.grant.status = GrantStatus::Active;
        self.audit(now, AuditEvent::GrantReinstated { grant_id: id })?;
        self.persist()?;
        self.grant(id)
    }

    pub fn set_policy(&mut self, policy: OwnerPolicy, now: Timestamp) -> Result<(), GatewayError> {
        validate_policy(&policy).map_err(GatewayError::Policy)?;
        let mut context = self.state.context.clone();
        for p in policy.parameters() {
            context.manual_flags.entry(p.clone()).or_insert(1);
        }
        self.state.context = ContextMonitor::new(&self.config.owner.id, &self.model).refresh_flags(context);
        self.state.policy = policy.clone();
        self.audit(now, AuditEvent::PolicyUpdated { policy })?;
        self.persist()
    }

    pub fn rate_consumer(&mut self, id: &ConsumerId, rating: f64, now: Timestamp) -> Result<&Consumer, GatewayError> {
        if !(0.0..=1.0).contains(&rating) {
            return Err(GatewayError::OutOfRangeRating);
        }
        let c = self
            .state
            .consumers
            .get_mut(id)
            .ok_or_else(|| GatewayError::UnknownConsumer(id.clone()))?;
        c.ratings.push(rating);
        self.audit(
            now,
            AuditEvent::RatingAdded {
                consumer_id: id.clone(),
                rating,
            },
        )?;
        self.persist()?;
        self.consumer(id)
    }
}
