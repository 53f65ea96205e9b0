//! Terms, atoms and Horn rules with existential (`fresh`) head variables.
//!
//! Rule text uses the grammar
//!
//! ```text
//! ruleset  := rule*
//! rule     := "rule" ident ":" body "=>" head "."
//! body     := atom ("," atom)*
//! head     := atom ("," atom)*
//! atom     := ident "(" term ("," term)* ")"
//! term     := "?" ident | ident | string | number | "fresh" "(" "?" ident ")"
//! ```
//!
//! with `#` comments running to end of line. `Display` on [`RuleSet`] prints
//! the canonical form accepted back by [`parse_rules`].

mod parser;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use parser::{parse_fact, parse_facts, parse_rules, RuleError};

use crate::lexer::{is_ident, write_escaped};

/// Predicate aliases folded at parse time.
///
/// Some rule sets spell the same property both `useDevice` and
/// `usesDevice`; both denote one predicate.
pub const PREDICATE_ALIASES: &[(&str, &str)] = &[("usesDevice", "useDevice")];

pub fn canonical_predicate(name: &str) -> &str {
    PREDICATE_ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map(|(_, canonical)| *canonical)
        .unwrap_or(name)
}

/// A finite number literal with total ordering (bitwise equality).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Number(f64);

impl Number {
    /// Returns `None` for NaN and infinities.
    pub fn new(v: f64) -> Option<Number> {
        v.is_finite().then_some(Number(v))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Number {}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Number {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Hash for Number {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

/// Witness generated for a `fresh` head variable.
///
/// Identity is (rule id, hash of the body binding, variable name), so firing
/// the same rule on the same frame always yields the same constant.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Skolem {
    pub rule: String,
    pub frame: u64,
    pub var: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Var(String),
    Const(String),
    Str(String),
    Num(Number),
    Skolem(Skolem),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn constant(name: impl Into<String>) -> Term {
        Term::Const(name.into())
    }

    pub fn string(s: impl Into<String>) -> Term {
        Term::Str(s.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn is_skolem(&self) -> bool {
        matches!(self, Term::Skolem(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => f.write_str(c),
            Term::Str(s) => write_escaped(f, s),
            Term::Num(n) => write!(f, "{}", n.0),
            Term::Skolem(sk) => write!(f, "_:{}.{}.{:016x}", sk.rule, sk.var, sk.frame),
        }
    }
}

/// A rule atom: predicate applied to terms that may contain variables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub terms: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, terms: Vec<Term>) -> Atom {
        Atom {
            predicate: predicate.into(),
            terms,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            _ => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atom(f, &self.predicate, &self.terms, &mut BTreeSet::new(), None)
    }
}

fn write_atom(
    f: &mut fmt::Formatter<'_>,
    predicate: &str,
    terms: &[Term],
    introduced: &mut BTreeSet<String>,
    fresh: Option<&BTreeSet<String>>,
) -> fmt::Result {
    write!(f, "{predicate}(")?;
    for (i, t) in terms.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        match (t, fresh) {
            (Term::Var(v), Some(fresh)) if fresh.contains(v) && introduced.insert(v.clone()) => {
                write!(f, "fresh(?{v})")?
            }
            _ => write!(f, "{t}")?,
        }
    }
    f.write_str(")")
}

/// A ground atom.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Fact {
    /// Builds a fact; returns `None` if any argument is a variable.
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Option<Fact> {
        if args.iter().any(Term::is_var) {
            return None;
        }
        Some(Fact {
            predicate: predicate.into(),
            args,
        })
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn has_skolem(&self) -> bool {
        self.args.iter().any(Term::is_skolem)
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atom(f, &self.predicate, &self.args, &mut BTreeSet::new(), None)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub body: Vec<Atom>,
    pub head: Vec<Atom>,
    pub fresh_vars: BTreeSet<String>,
}

impl Rule {
    pub fn body_vars(&self) -> BTreeSet<&str> {
        self.body.iter().flat_map(Atom::vars).collect()
    }

    pub fn generates_skolems(&self) -> bool {
        !self.fresh_vars.is_empty()
    }

    /// Checks the rule's structural invariants.
    pub fn check(&self) -> Result<(), RuleError> {
        if self.body.is_empty() {
            return Err(RuleError::EmptyBody {
                rule: self.id.clone(),
            });
        }
        let bound = self.body_vars();
        for v in &self.fresh_vars {
            if bound.contains(v.as_str()) {
                return Err(RuleError::FreshVariableInBody {
                    rule: self.id.clone(),
                    var: v.clone(),
                });
            }
        }
        for atom in &self.head {
            for v in atom.vars() {
                if !bound.contains(v) && !self.fresh_vars.contains(v) {
                    return Err(RuleError::UnboundHeadVariable {
                        rule: self.id.clone(),
                        var: v.into(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}: ", self.id)?;
        let mut introduced = BTreeSet::new();
        for (i, a) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write_atom(f, &a.predicate, &a.terms, &mut introduced, None)?;
        }
        f.write_str(" => ")?;
        for (i, a) in self.head.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write_atom(f, &a.predicate, &a.terms, &mut introduced, Some(&self.fresh_vars))?;
        }
        f.write_str(".")
    }
}

/// An ordered, validated collection of rules.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<RuleSet, RuleError> {
        let mut set = RuleSet { rules: Vec::new() };
        for r in rules {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, rule: Rule) -> Result<(), RuleError> {
        rule.check()?;
        if !is_ident(&rule.id) {
            return Err(RuleError::InvalidIdent(rule.id.clone()));
        }
        if self.rules.iter().any(|r| r.id == rule.id) {
            return Err(RuleError::DuplicateRule(rule.id.clone()));
        }
        let mut arities = self.arities();
        for atom in rule.body.iter().chain(&rule.head) {
            let expected = *arities.entry(atom.predicate.as_str()).or_insert(atom.terms.len());
            if expected != atom.terms.len() {
                return Err(RuleError::ArityMismatch {
                    predicate: atom.predicate.clone(),
                    expected,
                    found: atom.terms.len(),
                });
            }
        }
        self.rules.push(rule);
        Ok(())
    }

    /// Appends every rule of `other`, keeping order.
    pub fn extend(&mut self, other: RuleSet) -> Result<(), RuleError> {
        for r in other.rules {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Predicate names with their arity, across bodies and heads.
    pub fn arities(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rules {
            for a in r.body.iter().chain(&r.head) {
                out.entry(a.predicate.as_str()).or_insert(a.terms.len());
            }
        }
        out
    }

    /// Predicates that appear in some rule head.
    pub fn derived_predicates(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .flat_map(|r| r.head.iter().map(|a| a.predicate.as_str()))
            .collect()
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.arities().into_keys().collect()
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn fresh_marker_printed_once() {
        let rule = Rule {
            id: "r".into(),
            body: vec![Atom::new("p", vec![Term::var("x")])],
            head: vec![
                Atom::new("q", vec![Term::var("x"), Term::var("d")]),
                Atom::new("Device", vec![Term::var("d")]),
            ],
            fresh_vars: ["d".to_string()].into_iter().collect(),
        };
        assert_eq!(
            rule.to_string(),
            "rule r: p(?x) => q(?x, fresh(?d)), Device(?d)."
        );
    }

    #[test]
    fn unbound_head_variable_rejected() {
        let rule = Rule {
            id: "r".into(),
            body: vec![Atom::new("p", vec![Term::var("x")])],
            head: vec![Atom::new("q", vec![Term::var("y")])],
            fresh_vars: BTreeSet::new(),
        };
        assert_eq!(
            rule.check(),
            Err(RuleError::UnboundHeadVariable {
                rule: "r".into(),
                var: "y".into()
            })
        );
    }

    #[test]
    fn arity_is_fixed_per_predicate() {
        let a = Rule {
            id: "a".into(),
            body: vec![Atom::new("p", vec![Term::var("x")])],
            head: vec![Atom::new("q", vec![Term::var("x")])],
            fresh_vars: BTreeSet::new(),
        };
        let b = Rule {
            id: "b".into(),
            body: vec![Atom::new("p", vec![Term::var("x"), Term::var("y")])],
            head: vec![Atom::new("q", vec![Term::var("x")])],
            fresh_vars: BTreeSet::new(),
        };
        assert!(matches!(
            RuleSet::new(vec![a, b]),
            Err(RuleError::ArityMismatch { expected: 1, found: 2, .. })
        ));
    }

    #[test]
    fn number_ordering_is_total() {
        let a = Number::new(-0.5).unwrap();
        let b = Number::new(2.0).unwrap();
        assert!(a < b);
        assert!(Number::new(f64::NAN).is_none());
    }
}
