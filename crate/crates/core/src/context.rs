//! Context events and re-evaluation of standing grants when the owner's
//! situation changes.
//!
//! Event JSON: `{"t": "...", "kind": "device_on", "payload": "haemodialysis1"}`.
//! Fact payloads are written in rule syntax, e.g. `"ownsDevice(alice, tv1)"`;
//! flag payloads are `{"parameter": "habits", "value": 1}`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{
    BenefitOffer, Consumer, ContextState, DecisionRecord, Degradation, Outcome, OwnerPolicy,
    PrivacyParameter, Stream, StreamId, Timestamp,
};
use crate::inference::infer_risks;
use crate::query::{Grant, GrantStatus, Query};
use crate::rules::{parse_fact, Fact, Term};
use crate::tradeoff::{decide_at, DecisionInput, RiskModel, TradeoffError};

mod fact_text {
    use super::*;

    pub fn serialize<S: Serializer>(f: &Fact, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(f)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Fact, D::Error> {
        let text = String::deserialize(d)?;
        parse_fact(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagChange {
    pub parameter: PrivacyParameter,
    pub value: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    DeviceOn(String),
    DeviceOff(String),
    FactAsserted(#[serde(with = "fact_text")] Fact),
    FactRetracted(#[serde(with = "fact_text")] Fact),
    FlagSet(FlagChange),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEvent {
    #[serde(rename = "t")]
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Non-fatal oddities noticed while applying an event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventWarning {
    RetractedAbsentFact,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub state: ContextState,
    pub warning: Option<EventWarning>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Keep,
    /// Suspend the grant and tell the owner why.
    Suspend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrantAction {
    pub grant_id: u64,
    pub action: ActionKind,
    pub reason: DecisionRecord,
}

impl GrantAction {
    pub fn notifies_owner(&self) -> bool {
        self.action == ActionKind::Suspend
    }
}

/// A standing grant together with who holds it and what they offered.
#[derive(Clone, Copy, Debug)]
pub struct GrantCase<'a> {
    pub grant: &'a Grant,
    pub consumer: &'a Consumer,
    pub offer: &'a BenefitOffer,
}

/// Applies context events for one owner and re-checks grants against the
/// resulting state.
#[derive(Clone, Debug)]
pub struct ContextMonitor<'a> {
    /// Constant naming the owner in facts, e.g. `alice`.
    pub owner: String,
    pub model: &'a RiskModel,
}

impl<'a> ContextMonitor<'a> {
    pub fn new(owner: &str, model: &'a RiskModel) -> ContextMonitor<'a> {
        ContextMonitor {
            owner: owner.into(),
            model,
        }
    }

    fn uses_device(&self, device: &str) -> Fact {
        Fact {
            predicate: "useDevice".into(),
            args: alloc::vec![Term::constant(self.owner.as_str()), Term::constant(device)],
        }
    }

    /// Recomputes effective flags: the manual flags or-ed with every
    /// parameter the context facts alone make inferable.
    pub fn refresh_flags(&self, mut state: ContextState) -> ContextState {
        let inferred = infer_risks(
            &BTreeSet::new(),
            &state,
            &self.model.rules,
            &self.model.bindings,
            self.model.max_depth,
        )
        .parameters;
        let mut flags: BTreeMap<PrivacyParameter, u8> = state.manual_flags.clone();
        for p in inferred {
            flags.insert(p, 1);
        }
        state.flags = flags;
        state
    }

    /// Pure state transition for one event.
    pub fn apply_event(&self, state: &ContextState, ev: &ContextEvent) -> Applied {
        let mut next = state.clone();
        let mut warning = None;
        match &ev.kind {
            EventKind::DeviceOn(d) => {
                next.active_facts.insert(self.uses_device(d));
            }
            EventKind::DeviceOff(d) => {
                if !next.active_facts.remove(&self.uses_device(d)) {
                    warning = Some(EventWarning::RetractedAbsentFact);
                }
            }
            EventKind::FactAsserted(f) => {
                next.active_facts.insert(f.clone());
            }
            EventKind::FactRetracted(f) => {
                if !next.active_facts.remove(f) {
                    warning = Some(EventWarning::RetractedAbsentFact);
                }
            }
            EventKind::FlagSet(change) => {
                next.manual_flags.insert(change.parameter.clone(), u8::from(change.value != 0));
            }
        }
        Applied {
            state: self.refresh_flags(next),
            warning,
        }
    }

    /// Re-decides every active grant at its granted accuracy under `state`.
    ///
    /// Grants that are not active are skipped: only the owner reinstates.
    pub fn reevaluate(
        &self,
        grants: &[GrantCase<'_>],
        state: &ContextState,
        policy: &OwnerPolicy,
        streams: &BTreeMap<StreamId, Stream>,
        now: Timestamp,
    ) -> Result<Vec<GrantAction>, TradeoffError> {
        let mut actions = Vec::new();
        for case in grants.iter().filter(|c| c.grant.status == GrantStatus::Active) {
            let query = granted_query(case.grant);
            let input = DecisionInput {
                query: &query,
                consumer: case.consumer,
                offer: case.offer,
                policy,
                context: state,
                streams,
            };
            let degradation = Degradation {
                sample_period: case.grant.sample_period,
                noise_epsilon: case.grant.noise_epsilon,
            };
            let reason = decide_at(&input, self.model, degradation, now)?;
            let action = match reason.outcome {
                Outcome::Answer => ActionKind::Keep,
                Outcome::Deny => ActionKind::Suspend,
            };
            actions.push(GrantAction {
                grant_id: case.grant.id,
                action,
                reason,
            });
        }
        Ok(actions)
    }
}

/// The grant's query restricted to its allowed items, at the granted accuracy.
pub fn granted_query(grant: &Grant) -> Query {
    let mut q = grant.query.clone();
    q.items.retain(|i| grant.allowed_items.contains(i));
    q.sample_period = Some(grant.sample_period);
    q.noise_epsilon = grant.noise_epsilon;
    q
}

/// Checks that event timestamps never go backwards.
pub fn check_order(events: &[ContextEvent]) -> Result<(), usize> {
    match events.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        Some(i) => Err(i + 1),
        None => Ok(()),
    }
}

impl core::fmt::Display for EventKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EventKind::DeviceOn(d) => write!(f, "device_on({d})"),
            EventKind::DeviceOff(d) => write!(f, "device_off({d})"),
            EventKind::FactAsserted(x) => write!(f, "fact_asserted({x})"),
            EventKind::FactRetracted(x) => write!(f, "fact_retracted({x})"),
            EventKind::FlagSet(c) => write!(f, "flag_set({}, {})", c.parameter, c.value),
        }
    }
}

impl ContextEvent {
    pub fn describe(&self) -> String {
        self.kind.to_string()
    }
}
