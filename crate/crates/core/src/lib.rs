//! Core engine of a personal data vault gateway.
//!
//! Everything in this crate is pure and allocation-only (`no_std` + `alloc`):
//! the domain model, the risk rule language and its forward-chaining engine,
//! the risk/benefit trade-off engine, the query language with its rewriter
//! and degradation operators, the context monitor and a synthetic smart-home
//! generator. Storage, networking, configuration files and the CLI live in
//! the `pdv-gateway` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod context;
pub mod domain;
pub mod inference;
mod lexer;
pub mod noise;
pub mod period;
pub mod query;
pub mod rules;
pub mod series;
pub mod simhome;
pub mod tradeoff;

pub use domain::{
    BenefitCategory, BenefitOffer, Consumer, ConsumerId, ContextState, DecisionRecord,
    Degradation, Outcome, OwnerPolicy, PolicyViolation, PrivacyParameter, ProfileCategory,
    Reading, Stream, StreamId, Timestamp, Value, ValueKind,
};
pub use period::Period;
