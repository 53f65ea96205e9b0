//! Generated queries, facts and rule texts for round-trip checks.

use chrono::{DateTime, Utc};
use pdv_core::period::Period;
use pdv_core::query::{Query, TimeRange};
use pdv_core::rules::{Fact, Term};
use pdv_core::StreamId;
use proptest::prelude::*;

pub const RESERVED: [&str; 2] = ["rule", "fresh"];

pub fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_-]{0,7}".prop_filter("reserved", |s| !RESERVED.contains(&s.as_str()))
}

pub fn stream_id() -> impl Strategy<Value = StreamId> {
    prop::collection::vec(ident(), 1..=3).prop_map(|segs| StreamId::new(segs.join(".")).unwrap())
}

pub fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
    (0i64..4_102_444_800, prop_oneof![Just(0u32), 0u32..1_000_000_000])
        .prop_map(|(s, n)| DateTime::from_timestamp(s, n).unwrap())
}

pub fn period() -> impl Strategy<Value = Period> {
    prop_oneof![
        (1u64..100_000).prop_map(Period::secs),
        (1u64..2_000).prop_map(Period::minutes),
        (1u64..500).prop_map(Period::hours),
    ]
}

pub fn query() -> impl Strategy<Value = Query> {
    (
        prop::collection::btree_set(stream_id(), 1..=4),
        timestamp(),
        timestamp(),
        prop::option::of(period()),
        prop::option::of(prop_oneof![1e-9f64..1e9, (1u32..100).prop_map(f64::from)]),
        prop::option::of(any::<String>()),
    )
        .prop_map(|(items, a, b, sample, eps, purpose)| {
            let (start, end) = if a <= b { (a, b) } else { (b, a) };
            Query {
                items: items.into_iter().collect(),
                range: TimeRange { start, end },
                sample_period: sample,
                noise_epsilon: eps,
                purpose,
            }
        })
}

pub fn arity(predicate: &str) -> usize {
    predicate.len() % 3 + 1
}

pub fn ground_term() -> impl Strategy<Value = Term> {
    prop_oneof![
        ident().prop_map(Term::constant),
        any::<String>().prop_map(Term::string),
        any::<f64>()
            .prop_filter("finite", |v| v.is_finite())
            .prop_map(|v| Term::Num(pdv_core::rules::Number::new(v).unwrap())),
    ]
}

pub fn fact() -> impl Strategy<Value = Fact> {
    ident().prop_flat_map(|p| {
        let n = arity(&p);
        prop::collection::vec(ground_term(), n).prop_map(move |args| Fact::new(p.clone(), args).unwrap())
    })
}

/// One rule as text: body over `?v0..?v3`, head over body variables,
/// ground terms and fresh variables `?n0..?n1`.
pub fn rule_text(id: usize) -> impl Strategy<Value = String> {
    let body_term = prop_oneof![
        3 => (0usize..4).prop_map(|i| format!("?v{i}")),
        1 => ground_term().prop_map(|t| t.to_string()),
    ];
    let body_atom = ident().prop_flat_map(move |p| {
        prop::collection::vec(body_term.clone(), arity(&p)).prop_map(move |ts| format!("{p}({})", ts.join(", ")))
    });
    prop::collection::vec(body_atom, 1..=3).prop_flat_map(move |body| {
        let text = body.join(", ");
        let bound: Vec<String> = (0..4).map(|i| format!("?v{i}")).filter(|v| text.contains(v.as_str())).collect();
        let head_term = prop_oneof![
            2 => if bound.is_empty() { Just(String::from("k")).boxed() } else { prop::sample::select(bound.clone()).boxed() },
            1 => ground_term().prop_map(|t| t.to_string()).boxed(),
            1 => (0usize..2).prop_map(|i| format!("?n{i}")).boxed(),
        ];
        let head_atom = ident().prop_flat_map(move |p| {
            prop::collection::vec(head_term.clone(), arity(&p)).prop_map(move |ts| (p.clone(), ts))
        });
        let text = text.clone();
        prop::collection::vec(head_atom, 1..=2).prop_map(move |head| {
            let mut introduced = std::collections::BTreeSet::new();
            let atoms: Vec<String> = head
                .into_iter()
                .map(|(p, ts)| {
                    let ts: Vec<String> = ts
                        .into_iter()
                        .map(|t| {
                            if t.starts_with("?n") && introduced.insert(t.clone()) {
                                format!("fresh({t})")
                            } else {
                                t
                            }
                        })
                        .collect();
                    format!("{p}({})", ts.join(", "))
                })
                .collect();
            format!("rule r{id}: {text} => {}.", atoms.join(", "))
        })
    })
}

pub fn ruleset_text() -> impl Strategy<Value = String> {
    (1usize..=4).prop_flat_map(|n| (0..n).map(rule_text).collect::<Vec<_>>()).prop_map(|rs| rs.join("\n"))
}
