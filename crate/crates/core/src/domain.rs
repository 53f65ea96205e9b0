//! Shared domain model: privacy parameters, owner policy, context, consumers,
//! streams and readings, benefit offers and decision records.
//!
//! These are immutable value objects. Constructors and [`validate_policy`]
//! check invariants; nothing here has behavior beyond that.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::inference::Derivation;
use crate::lexer::is_ident;
use crate::period::Period;
use crate::query::Query;
use crate::rules::Fact;
use crate::tradeoff::RiskAssessment;

pub type Timestamp = chrono::DateTime<chrono::Utc>;

/// A category of sensitive knowledge whose inferability is a privacy risk.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PrivacyParameter(String);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid privacy parameter id {0:?}: must be non-empty lowercase [a-z0-9_]")]
pub struct InvalidParameter(pub String);

impl PrivacyParameter {
    pub const PERSONAL_INFORMATION: &'static str = "personal_information";
    pub const PRESENCE_ABSENCE: &'static str = "presence_absence";
    pub const REALTIME_SURVEILLANCE: &'static str = "realtime_surveillance";
    pub const HABITS: &'static str = "habits";
    pub const DEVICE_USE: &'static str = "device_use";

    pub const CANONICAL: [&'static str; 5] = [
        Self::PERSONAL_INFORMATION,
        Self::PRESENCE_ABSENCE,
        Self::REALTIME_SURVEILLANCE,
        Self::HABITS,
        Self::DEVICE_USE,
    ];

    pub fn new(id: impl Into<String>) -> Result<Self, InvalidParameter> {
        let id = id.into();
        let ok = !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if ok {
            Ok(PrivacyParameter(id))
        } else {
            Err(InvalidParameter(id))
        }
    }

    pub fn canonical() -> impl Iterator<Item = PrivacyParameter> {
        Self::CANONICAL
            .iter()
            .map(|s| PrivacyParameter((*s).to_string()))
    }

    pub fn personal_information() -> Self {
        PrivacyParameter(Self::PERSONAL_INFORMATION.into())
    }

    pub fn presence_absence() -> Self {
        PrivacyParameter(Self::PRESENCE_ABSENCE.into())
    }

    pub fn realtime_surveillance() -> Self {
        PrivacyParameter(Self::REALTIME_SURVEILLANCE.into())
    }

    pub fn habits() -> Self {
        PrivacyParameter(Self::HABITS.into())
    }

    pub fn device_use() -> Self {
        PrivacyParameter(Self::DEVICE_USE.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PrivacyParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PrivacyParameter {
    type Err = InvalidParameter;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrivacyParameter::new(s)
    }
}

impl<'de> Deserialize<'de> for PrivacyParameter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PrivacyParameter::new(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenefitCategory {
    Financial,
    Social,
    Societal,
}

impl fmt::Display for BenefitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenefitCategory::Financial => "financial",
            BenefitCategory::Social => "social",
            BenefitCategory::Societal => "societal",
        })
    }
}

impl FromStr for BenefitCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "financial" => Ok(BenefitCategory::Financial),
            "social" => Ok(BenefitCategory::Social),
            "societal" => Ok(BenefitCategory::Societal),
            other => Err(format!("unknown benefit category {other:?}")),
        }
    }
}

/// The owner's privacy preferences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OwnerPolicy {
    pub parameter_weights: BTreeMap<PrivacyParameter, f64>,
    pub tradeoff_bias_w: f64,
    pub benefit_multipliers: BTreeMap<BenefitCategory, f64>,
    pub default_trust: f64,
}

impl OwnerPolicy {
    /// Weight for every canonical parameter, `w` = 0.5, unit multipliers.
    pub fn uniform(weight: f64) -> OwnerPolicy {
        OwnerPolicy {
            parameter_weights: PrivacyParameter::canonical().map(|p| (p, weight)).collect(),
            tradeoff_bias_w: 0.5,
            benefit_multipliers: [
                BenefitCategory::Financial,
                BenefitCategory::Social,
                BenefitCategory::Societal,
            ]
            .into_iter()
            .map(|c| (c, 1.0))
            .collect(),
            default_trust: 0.5,
        }
    }

    pub fn weight(&self, p: &PrivacyParameter) -> Option<f64> {
        self.parameter_weights.get(p).copied()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &PrivacyParameter> {
        self.parameter_weights.keys()
    }
}

/// One invariant violation found by [`validate_policy`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyViolation {
    /// Path to the offending field, e.g. `parameter_weights.habits`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for PolicyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Collects every invariant violation of `policy`; empty means valid.
pub fn validate_policy(policy: &OwnerPolicy) -> Result<(), Vec<PolicyViolation>> {
    let mut errors = Vec::new();
    for p in PrivacyParameter::canonical() {
        if !policy.parameter_weights.contains_key(&p) {
            errors.push(PolicyViolation {
                path: format!("parameter_weights.{p}"),
                message: format!("missing parameter weight: {p}"),
            });
        }
    }
    for (p, w) in &policy.parameter_weights {
        if !in_unit(*w) {
            errors.push(PolicyViolation {
                path: format!("parameter_weights.{p}"),
                message: format!("weight out of range [0,1]: {w}"),
            });
        }
    }
    if !in_unit(policy.tradeoff_bias_w) {
        errors.push(PolicyViolation {
            path: "tradeoff_bias_w".into(),
            message: "tradeoff_bias_w out of range".into(),
        });
    }
    for (c, m) in &policy.benefit_multipliers {
        if !(m.is_finite() && *m >= 0.0) {
            errors.push(PolicyViolation {
                path: format!("benefit_multipliers.{c}"),
                message: format!("multiplier must be a non-negative real: {m}"),
            });
        }
    }
    if !in_unit(policy.default_trust) {
        errors.push(PolicyViolation {
            path: "default_trust".into(),
            message: "default_trust out of range".into(),
        });
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Boolean relevance of each parameter plus the current context facts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextState {
    /// Effective relevance flags, total over the registered parameters.
    pub flags: BTreeMap<PrivacyParameter, u8>,
    pub active_facts: BTreeSet<Fact>,
    /// Flags as last set explicitly; `flags` is this or-ed with whatever the
    /// context facts make inferable.
    #[serde(default)]
    pub manual_flags: BTreeMap<PrivacyParameter, u8>,
}

impl ContextState {
    /// Every given parameter set to `flag`.
    pub fn with_flags<'a>(params: impl IntoIterator<Item = &'a PrivacyParameter>, flag: bool) -> Self {
        let flags: BTreeMap<_, _> = params.into_iter().map(|p| (p.clone(), flag as u8)).collect();
        ContextState {
            manual_flags: flags.clone(),
            flags,
            active_facts: BTreeSet::new(),
        }
    }

    pub fn flag(&self, p: &PrivacyParameter) -> Option<u8> {
        self.flags.get(p).copied()
    }

    pub fn set_flag(&mut self, p: PrivacyParameter, on: bool) {
        self.manual_flags.insert(p.clone(), on as u8);
        self.flags.insert(p, on as u8);
    }

    pub fn with_facts(mut self, facts: impl IntoIterator<Item = Fact>) -> Self {
        self.active_facts.extend(facts);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileCategory {
    Utility,
    EdgeService,
    LawEnforcement,
    Marketer,
    Healthcare,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConsumerId(pub String);

impl fmt::Display for ConsumerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConsumerId {
    fn from(s: &str) -> Self {
        ConsumerId(s.into())
    }
}

/// A data consumer and the feedback ratings it has received.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consumer {
    pub id: ConsumerId,
    pub display_name: String,
    pub profile_category: ProfileCategory,
    #[serde(default)]
    pub ratings: Vec<f64>,
}

impl Consumer {
    pub fn new(id: &str, profile_category: ProfileCategory) -> Consumer {
        Consumer {
            id: id.into(),
            display_name: id.into(),
            profile_category,
            ratings: Vec::new(),
        }
    }

    pub fn with_ratings(mut self, ratings: impl IntoIterator<Item = f64>) -> Consumer {
        self.ratings.extend(ratings);
        self
    }

    pub fn ratings_valid(&self) -> bool {
        self.ratings.iter().all(|r| in_unit(*r))
    }
}

/// Dot-separated stream path such as `energy.consumption`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct StreamId(String);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid stream id {0:?}")]
pub struct InvalidStreamId(pub String);

impl StreamId {
    pub fn new(id: impl Into<String>) -> Result<StreamId, InvalidStreamId> {
        let id = id.into();
        if id.split('.').all(is_ident) {
            Ok(StreamId(id))
        } else {
            Err(InvalidStreamId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for StreamId {
    type Err = InvalidStreamId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StreamId::new(s)
    }
}

impl<'de> Deserialize<'de> for StreamId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        StreamId::new(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stream {
    pub id: StreamId,
    pub unit: String,
    pub native_period: Period,
    pub value_kind: ValueKind,
}

impl Stream {
    pub fn numeric(id: &str, unit: &str, native_period: Period) -> Result<Stream, InvalidStreamId> {
        Ok(Stream {
            id: StreamId::new(id)?,
            unit: unit.into(),
            native_period,
            value_kind: ValueKind::Numeric,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Numeric(f64),
    Category(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Numeric(v) => Some(*v),
            Value::Category(_) => None,
        }
    }
}

/// One timestamped sample; serialized as `{"t": ..., "v": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    #[serde(rename = "t")]
    pub timestamp: Timestamp,
    #[serde(rename = "v")]
    pub value: Value,
}

impl Reading {
    pub fn numeric(timestamp: Timestamp, v: f64) -> Reading {
        Reading {
            timestamp,
            value: Value::Numeric(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenefitOffer {
    pub category: BenefitCategory,
    pub declared_value: f64,
    #[serde(default)]
    pub description: String,
}

impl BenefitOffer {
    pub fn financial(v: f64) -> BenefitOffer {
        BenefitOffer {
            category: BenefitCategory::Financial,
            declared_value: v,
            description: String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Answer,
    Deny,
}

impl Outcome {
    /// `Answer` iff the utility is strictly positive.
    pub fn from_utility(u: f64) -> Outcome {
        if u > 0.0 {
            Outcome::Answer
        } else {
            Outcome::Deny
        }
    }
}

/// Accuracy at which a release is evaluated or served.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub sample_period: Period,
    #[serde(default)]
    pub noise_epsilon: Option<f64>,
}

/// Audit record of one trade-off decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub query: Query,
    pub consumer_id: ConsumerId,
    pub benefit_value: f64,
    pub risk_magnitude: f64,
    pub tradeoff_bias_w: f64,
    pub utility: f64,
    pub outcome: Outcome,
    pub degradation: Degradation,
    pub timestamp: Timestamp,
    pub assessment: RiskAssessment,
    pub explanation: Vec<Derivation>,
}
