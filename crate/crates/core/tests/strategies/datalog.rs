//! Generated Datalog instances over a small vocabulary, and a brute-force
//! fixpoint to check the engine against.

use std::collections::{BTreeMap, BTreeSet};

use pdv_core::rules::{parse_rules, Atom, Fact, RuleSet, Term};
use proptest::prelude::*;

pub const PREDICATES: [(&str, usize); 4] = [("p", 1), ("q", 2), ("r", 1), ("s", 2)];
pub const CONSTANTS: [&str; 4] = ["a", "b", "c", "d"];
pub const VARS: [&str; 3] = ["X", "Y", "Z"];
pub const DEPTH: usize = 64;

pub fn term_text() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::sample::select(&VARS[..]).prop_map(|v| format!("?{v}")),
        1 => prop::sample::select(&CONSTANTS[..]).prop_map(String::from),
    ]
}

pub fn body_atom() -> impl Strategy<Value = String> {
    prop::sample::select(&PREDICATES[..]).prop_flat_map(|(p, n)| {
        prop::collection::vec(term_text(), n).prop_map(move |ts| format!("{p}({})", ts.join(", ")))
    })
}

/// Rule text; head variables are drawn from the body, plus `fresh(?W)`
/// when `fresh` is set.
pub fn rule_text(id: usize, fresh: bool) -> impl Strategy<Value = String> {
    prop::collection::vec(body_atom(), 1..=3).prop_flat_map(move |body| {
        let joined = body.join(", ");
        let mut pool: Vec<String> = VARS
            .iter()
            .filter(|v| joined.contains(&format!("?{v}")))
            .map(|v| format!("?{v}"))
            .collect();
        pool.extend(CONSTANTS.iter().map(|c| c.to_string()));
        let use_fresh = fresh;
        let head_atom = prop::sample::select(&PREDICATES[..]).prop_flat_map(move |(p, n)| {
            let pool = pool.clone();
            (prop::collection::vec(prop::sample::select(pool), n), prop::bool::weighted(0.3)).prop_map(
                move |(ts, f)| {
                    let mut ts = ts;
                    if use_fresh && f {
                        ts[0] = "fresh(?W)".into();
                    }
                    format!("{p}({})", ts.join(", "))
                },
            )
        });
        let body = joined.clone();
        prop::collection::vec(head_atom, 1..=2).prop_map(move |mut head| {
            let mut seen = false;
            for h in &mut head {
                if h.contains("fresh(?W)") {
                    if seen {
                        *h = h.replace("fresh(?W)", "?W");
                    }
                    seen = true;
                }
            }
            format!("rule r{id}: {body} => {}.", head.join(", "))
        })
    })
}

pub fn ruleset(fresh: bool) -> impl Strategy<Value = RuleSet> {
    (1usize..=4)
        .prop_flat_map(move |n| (0..n).map(|i| rule_text(i, fresh)).collect::<Vec<_>>())
        .prop_map(|texts| parse_rules(&texts.join("\n")).unwrap())
}

pub fn ground_fact() -> impl Strategy<Value = Fact> {
    prop::sample::select(&PREDICATES[..]).prop_flat_map(|(p, n)| {
        prop::collection::vec(prop::sample::select(&CONSTANTS[..]), n)
            .prop_map(move |cs| Fact::new(p, cs.into_iter().map(Term::constant).collect()).unwrap())
    })
}

pub fn facts(max: usize) -> impl Strategy<Value = BTreeSet<Fact>> {
    prop::collection::btree_set(ground_fact(), 0..=max)
}

fn instantiate(atom: &Atom, env: &BTreeMap<&str, Term>) -> Fact {
    Fact::new(
        atom.predicate.clone(),
        atom.terms
            .iter()
            .map(|t| match t {
                Term::Var(v) => env[v.as_str()].clone(),
                other => other.clone(),
            })
            .collect(),
    )
    .unwrap()
}

/// Naive least fixpoint: every assignment of every rule's variables over
/// the active domain, repeated until nothing changes.
pub fn brute_force(base: &BTreeSet<Fact>, rules: &RuleSet) -> BTreeSet<Fact> {
    let domain: Vec<Term> = CONSTANTS.iter().map(|c| Term::constant(*c)).collect();
    let mut known = base.clone();
    loop {
        let mut added = false;
        for rule in rules.rules() {
            let vars: Vec<&str> = rule.body_vars().into_iter().collect();
            let combos = domain.len().pow(vars.len() as u32);
            for mut k in 0..combos {
                let mut env = BTreeMap::new();
                for v in &vars {
                    env.insert(*v, domain[k % domain.len()].clone());
                    k /= domain.len();
                }
                if rule.body.iter().all(|a| known.contains(&instantiate(a, &env))) {
                    for h in &rule.head {
                        added |= known.insert(instantiate(h, &env));
                    }
                }
            }
        }
        if !added {
            return known;
        }
    }
}
