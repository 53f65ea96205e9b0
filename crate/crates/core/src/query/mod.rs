//! Consumer queries, owner grants, and the rewrite/execute pipeline that
//! enforces a grant on a query before data is released.
//!
//! Concrete syntax:
//!
//! ```text
//! query  := "GET" items "RANGE" ts ".." ts ["SAMPLE" dur] ["NOISE" "eps=" num] ["PURPOSE" string]
//! items  := path ("," path)*
//! path   := ident ("." ident)*
//! dur    := int ("s"|"m"|"h")
//! ts     := RFC3339
//! ```

mod parser;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::SecondsFormat;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use parser::parse_query;

use crate::domain::{ConsumerId, StreamId, Timestamp};
use crate::lexer::write_escaped;
use crate::noise::{apply_noise, NoiseError};
use crate::period::Period;
use crate::series::{downsample, ReadingSource, ResultSet, SeriesError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeRange {
    pub fn contains(&self, other: &TimeRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub items: Vec<StreamId>,
    pub range: TimeRange,
    /// `None` means the coarsest native period among the items.
    #[serde(default)]
    pub sample_period: Option<Period>,
    #[serde(default)]
    pub noise_epsilon: Option<f64>,
    #[serde(default)]
    pub purpose: Option<String>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("syntax error at {line}:{col}: expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("unknown duration unit {unit:?} at {line}:{col}")]
    UnknownDurationUnit { line: usize, col: usize, unit: String },
    #[error("invalid timestamp at {line}:{col}: {text:?}")]
    InvalidTimestamp { line: usize, col: usize, text: String },
    #[error("invalid range: start is after end")]
    InvalidRange,
    #[error("query has no items")]
    NoItems,
    #[error("duplicate item: {0}")]
    DuplicateItem(StreamId),
    #[error("noise epsilon must be positive")]
    NonPositiveEpsilon,
}

impl Query {
    pub fn new(items: Vec<StreamId>, start: Timestamp, end: Timestamp) -> Result<Query, QueryError> {
        let q = Query {
            items,
            range: TimeRange { start, end },
            sample_period: None,
            noise_epsilon: None,
            purpose: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_sample(mut self, p: Period) -> Query {
        self.sample_period = Some(p);
        self
    }

    pub fn with_noise(mut self, eps: f64) -> Query {
        self.noise_epsilon = Some(eps);
        self
    }

    pub fn with_purpose(mut self, purpose: &str) -> Query {
        self.purpose = Some(purpose.into());
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.items.is_empty() {
            return Err(QueryError::NoItems);
        }
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(item) {
                return Err(QueryError::DuplicateItem(item.clone()));
            }
        }
        if self.range.start > self.range.end {
            return Err(QueryError::InvalidRange);
        }
        if let Some(eps) = self.noise_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(QueryError::NonPositiveEpsilon);
            }
        }
        Ok(())
    }

    /// Requested period, falling back to the coarsest native period of the items.
    pub fn effective_period(&self, native: impl Fn(&StreamId) -> Option<Period>) -> Option<Period> {
        self.sample_period
            .or_else(|| self.items.iter().filter_map(native).max())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GET ")?;
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        write!(
            f,
            " RANGE {}..{}",
            self.range.start.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            self.range.end.to_rfc3339_opts(SecondsFormat::AutoSi, true)
        )?;
        if let Some(p) = self.sample_period {
            write!(f, " SAMPLE {p}")?;
        }
        if let Some(eps) = self.noise_epsilon {
            write!(f, " NOISE eps={eps}")?;
        }
        if let Some(purpose) = &self.purpose {
            f.write_str(" PURPOSE ")?;
            write_escaped(f, purpose)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantStatus {
    Active,
    Suspended,
    Revoked,
}

/// An owner-authorized, accuracy-bounded permission for one consumer query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub id: u64,
    pub consumer_id: ConsumerId,
    pub query: Query,
    pub allowed_items: BTreeSet<StreamId>,
    pub sample_period: Period,
    #[serde(default)]
    pub noise_epsilon: Option<f64>,
    #[serde(default)]
    pub expiry: Option<Timestamp>,
    pub status: GrantStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("grant is not active")]
    GrantInactive,
    #[error("grant expired")]
    GrantExpired,
    #[error("grant does not authorize this query: {0}")]
    GrantMismatch(&'static str),
    #[error("every requested item is denied")]
    EmptyResultQuery,
}

/// Restricts `q` to what `grant` allows.
///
/// Denied items are dropped, the period is raised to the granted one, and
/// the grant's noise is applied when it is stronger than what was asked.
pub fn rewrite(
    q: &Query,
    grant: &Grant,
    requester: &ConsumerId,
    now: Timestamp,
) -> Result<Query, RewriteError> {
    if grant.status != GrantStatus::Active {
        return Err(RewriteError::GrantInactive);
    }
    if grant.expiry.is_some_and(|e| now >= e) {
        return Err(RewriteError::GrantExpired);
    }
    if &grant.consumer_id != requester {
        return Err(RewriteError::GrantMismatch("different consumer"));
    }
    if !q.items.iter().all(|i| grant.query.items.contains(i)) {
        return Err(RewriteError::GrantMismatch("item outside the granted query"));
    }
    if !grant.query.range.contains(&q.range) {
        return Err(RewriteError::GrantMismatch("range outside the granted range"));
    }
    let items: Vec<StreamId> = q
        .items
        .iter()
        .filter(|i| grant.allowed_items.contains(*i))
        .cloned()
        .collect();
    if items.is_empty() {
        return Err(RewriteError::EmptyResultQuery);
    }
    let sample_period = Some(q.sample_period.map_or(grant.sample_period, |p| p.max(grant.sample_period)));
    let noise_epsilon = match (q.noise_epsilon, grant.noise_epsilon) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    Ok(Query {
        items,
        range: q.range,
        sample_period,
        noise_epsilon,
        purpose: q.purpose.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ExecuteError<E> {
    #[error("unknown stream: {0}")]
    UnknownStream(StreamId),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("store error: {0}")]
    Source(E),
}

/// Per-stream upper bounds on the noise sensitivity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBounds(pub BTreeMap<StreamId, f64>);

impl SensitivityBounds {
    /// Observed max - min of the released values, capped by the stream bound.
    ///
    /// A flat or empty series falls back to the bound, or 1.
    pub fn for_result(&self, result: &ResultSet) -> f64 {
        let cap = self.0.get(&result.stream_id).copied();
        let (lo, hi) = result
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let delta = match cap {
            Some(c) if span > c => c,
            _ => span,
        };
        if delta > 0.0 && delta.is_finite() {
            delta
        } else {
            cap.filter(|c| *c > 0.0).unwrap_or(1.0)
        }
    }
}

/// Serves a rewritten query: range, then downsample, then noise.
pub fn execute<S: ReadingSource, R: Rng + ?Sized>(
    q: &Query,
    source: &S,
    bounds: &SensitivityBounds,
    rng: &mut R,
) -> Result<Vec<ResultSet>, ExecuteError<S::Error>> {
    let mut streams = Vec::with_capacity(q.items.len());
    for item in &q.items {
        streams.push(
            source
                .stream(item)
                .ok_or_else(|| ExecuteError::UnknownStream(item.clone()))?,
        );
    }
    let period = q
        .sample_period
        .or_else(|| streams.iter().map(|s| s.native_period).max())
        .expect("queries have at least one item");
    let mut out = Vec::with_capacity(streams.len());
    for stream in &streams {
        let raw = source
            .range(&stream.id, q.range.start, q.range.end)
            .map_err(ExecuteError::Source)?;
        let sensitivity = bounds.for_result(&raw);
        let mut released = downsample(&raw, period)?;
        if let Some(eps) = q.noise_epsilon {
            released = apply_noise(&released, eps, sensitivity, rng)?;
        }
        out.push(released);
    }
    Ok(out)
}
