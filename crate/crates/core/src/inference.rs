//! Forward-chaining saturation with existential heads, proof trees, and the
//! mapping from derived predicates to privacy parameters.
//!
//! Evaluation is round-based: round `k` fires every rule against the facts
//! known after round `k - 1`, so a fact first appears in the round equal to
//! the height of its shortest derivation. Rules with `fresh` head variables
//! are skolemized: the witness constant is a function of the rule id and the
//! body binding. Such rules never fire on a binding that already contains a
//! skolem term, which bounds the chase; `max_depth` caps the number of
//! rounds on top of that.
//!
//! `sameAs/2` is interpreted as equality: it is symmetric and every fact
//! mentioning one side is copied with the other side substituted. These
//! equality steps are recorded in derivations but do not count as an
//! inference level in [`Derivation::depth`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::domain::{ContextState, PrivacyParameter};
use crate::rules::{Atom, Fact, Rule, RuleSet, Skolem, Term};

pub const DEFAULT_MAX_DEPTH: usize = 8;

/// Predicate interpreted as term equality.
pub const SAME_AS: &str = "sameAs";
/// Rule id recorded for equality substitution steps.
pub const SAME_AS_RULE: &str = "sameAs";

pub type Binding = BTreeMap<String, Term>;

/// How a fact was first derived: one rule application.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub fact: Fact,
    pub rule: String,
    pub binding: Binding,
    pub premises: Vec<Fact>,
    pub round: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Saturation {
    pub facts: BTreeSet<Fact>,
    pub base: BTreeSet<Fact>,
    steps: BTreeMap<Fact, Step>,
    /// Set when the round cap stopped evaluation before the fixpoint.
    pub truncated: bool,
    pub rounds: usize,
}

impl Saturation {
    pub fn step(&self, fact: &Fact) -> Option<&Step> {
        self.steps.get(fact)
    }

    /// One-level derivation records, in fact order.
    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.steps.values()
    }

    pub fn derived(&self) -> impl Iterator<Item = &Fact> {
        self.steps.keys()
    }

    pub fn is_derived(&self, fact: &Fact) -> bool {
        self.steps.contains_key(fact)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Premise {
    Base(Fact),
    Derived(Derivation),
}

impl Premise {
    pub fn fact(&self) -> &Fact {
        match self {
            Premise::Base(f) => f,
            Premise::Derived(d) => &d.fact,
        }
    }
}

/// A proof tree from base facts to `fact`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derivation {
    pub fact: Fact,
    pub rule: String,
    pub binding: Binding,
    pub premises: Vec<Premise>,
}

impl Derivation {
    fn is_equality(&self) -> bool {
        self.rule == SAME_AS_RULE || self.fact.predicate == SAME_AS
    }

    /// Inference height; equality steps are transparent.
    pub fn depth(&self) -> usize {
        let below = self
            .premises
            .iter()
            .map(|p| match p {
                Premise::Base(_) => 0,
                Premise::Derived(d) => d.depth(),
            })
            .max()
            .unwrap_or(0);
        if self.is_equality() {
            below
        } else {
            below + 1
        }
    }

    /// Every rule id used in the tree, outermost first.
    pub fn rules_used(&self) -> Vec<&str> {
        let mut out = alloc::vec![self.rule.as_str()];
        for p in &self.premises {
            if let Premise::Derived(d) = p {
                for r in d.rules_used() {
                    if !out.contains(&r) {
                        out.push(r);
                    }
                }
            }
        }
        out
    }

    /// Stable indented rendering, two spaces per level.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0);
        out
    }

    fn render_into(&self, out: &mut String, indent: usize) {
        let _ = writeln!(out, "{:indent$}{}  [{}]", "", self.fact, self.rule, indent = indent);
        for p in &self.premises {
            match p {
                Premise::Base(f) => {
                    let _ = writeln!(out, "{:indent$}{}  [base]", "", f, indent = indent + 2);
                }
                Premise::Derived(d) => d.render_into(out, indent + 2),
            }
        }
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExplainError {
    #[error("fact was not derived: {0}")]
    NotDerived(Fact),
}

/// Builds the proof tree of a derived fact.
pub fn explain(fact: &Fact, sat: &Saturation) -> Result<Derivation, ExplainError> {
    let step = sat
        .step(fact)
        .ok_or_else(|| ExplainError::NotDerived(fact.clone()))?;
    Ok(build_tree(step, sat))
}

fn build_tree(step: &Step, sat: &Saturation) -> Derivation {
    let premises = step
        .premises
        .iter()
        .map(|p| match sat.step(p) {
            Some(s) => Premise::Derived(build_tree(s, sat)),
            None => Premise::Base(p.clone()),
        })
        .collect();
    Derivation {
        fact: step.fact.clone(),
        rule: step.rule.clone(),
        binding: step.binding.clone(),
        premises,
    }
}

struct FactIndex<'a> {
    by_predicate: BTreeMap<&'a str, Vec<&'a Fact>>,
}

impl<'a> FactIndex<'a> {
    fn new(facts: &'a BTreeSet<Fact>) -> Self {
        let mut by_predicate: BTreeMap<&str, Vec<&Fact>> = BTreeMap::new();
        for f in facts {
            by_predicate.entry(f.predicate.as_str()).or_default().push(f);
        }
        FactIndex { by_predicate }
    }

    fn with_predicate(&self, p: &str) -> &[&'a Fact] {
        self.by_predicate.get(p).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn unify(atom: &Atom, fact: &Fact, binding: &mut Binding) -> bool {
    if atom.terms.len() != fact.args.len() {
        return false;
    }
    let mut added: Vec<&str> = Vec::new();
    for (t, v) in atom.terms.iter().zip(&fact.args) {
        let ok = match t {
            Term::Var(name) => match binding.get(name) {
                Some(bound) => bound == v,
                None => {
                    binding.insert(name.clone(), v.clone());
                    added.push(name);
                    true
                }
            },
            other => other == v,
        };
        if !ok {
            for name in added {
                binding.remove(name);
            }
            return false;
        }
    }
    true
}

/// All bindings satisfying `rule`'s body, with their premise facts.
fn matches<'a>(rule: &Rule, index: &FactIndex<'a>) -> Vec<(Binding, Vec<&'a Fact>)> {
    let mut out = Vec::new();
    let mut premises = Vec::with_capacity(rule.body.len());
    join(&rule.body, index, &mut Binding::new(), &mut premises, &mut out);
    out
}

fn join<'a>(
    body: &[Atom],
    index: &FactIndex<'a>,
    binding: &mut Binding,
    premises: &mut Vec<&'a Fact>,
    out: &mut Vec<(Binding, Vec<&'a Fact>)>,
) {
    let Some((first, rest)) = body.split_first() else {
        out.push((binding.clone(), premises.clone()));
        return;
    };
    for fact in index.with_predicate(&first.predicate) {
        let before = binding.clone();
        if unify(first, fact, binding) {
            premises.push(fact);
            join(rest, index, binding, premises, out);
            premises.pop();
        }
        *binding = before;
    }
}

fn frame_hash(rule: &str, binding: &Binding) -> u64 {
    let mut h = fnv::FnvHasher::default();
    let mut text = String::new();
    let _ = write!(text, "{rule}|");
    for (k, v) in binding {
        let _ = write!(text, "{k}={v};");
    }
    h.write(text.as_bytes());
    h.finish()
}

fn instantiate(atom: &Atom, binding: &Binding) -> Fact {
    Fact {
        predicate: atom.predicate.clone(),
        args: atom
            .terms
            .iter()
            .map(|t| match t {
                Term::Var(v) => binding
                    .get(v)
                    .cloned()
                    .expect("head variables are bound or fresh"),
                other => other.clone(),
            })
            .collect(),
    }
}

fn fire_rules(rules: &RuleSet, facts: &BTreeSet<Fact>, round: usize, out: &mut BTreeMap<Fact, Step>) {
    let index = FactIndex::new(facts);
    for rule in rules.rules() {
        for (mut binding, premises) in matches(rule, &index) {
            if rule.generates_skolems() {
                if binding.values().any(Term::is_skolem) {
                    continue;
                }
                let frame = frame_hash(&rule.id, &binding);
                for v in &rule.fresh_vars {
                    binding.insert(
                        v.clone(),
                        Term::Skolem(Skolem {
                            rule: rule.id.clone(),
                            frame,
                            var: v.clone(),
                        }),
                    );
                }
                record(rule, &binding, &premises, round, facts, out);
            } else {
                record(rule, &binding, &premises, round, facts, out);
            }
        }
    }
    fire_equality(&index, facts, round, out);
}

fn record(
    rule: &Rule,
    binding: &Binding,
    premises: &[&Fact],
    round: usize,
    facts: &BTreeSet<Fact>,
    out: &mut BTreeMap<Fact, Step>,
) {
    for atom in &rule.head {
        let fact = instantiate(atom, binding);
        if fact.predicate == SAME_AS && fact.args.len() == 2 && fact.args[0] == fact.args[1] {
            continue;
        }
        if facts.contains(&fact) {
            continue;
        }
        let step = Step {
            fact: fact.clone(),
            rule: rule.id.clone(),
            binding: binding.clone(),
            premises: premises.iter().map(|f| (*f).clone()).collect(),
            round,
        };
        offer(out, step);
    }
}

/// Keeps the smallest candidate so the choice is independent of iteration order.
fn offer(out: &mut BTreeMap<Fact, Step>, step: Step) {
    match out.get(&step.fact) {
        Some(existing) if *existing <= step => {}
        _ => {
            out.insert(step.fact.clone(), step);
        }
    }
}

fn fire_equality(index: &FactIndex<'_>, facts: &BTreeSet<Fact>, round: usize, out: &mut BTreeMap<Fact, Step>) {
    let pairs: Vec<&Fact> = index
        .with_predicate(SAME_AS)
        .iter()
        .copied()
        .filter(|f| f.args.len() == 2 && f.args[0] != f.args[1])
        .collect();
    for eq in &pairs {
        let (a, b) = (&eq.args[0], &eq.args[1]);
        let mut binding = Binding::new();
        binding.insert("x".into(), a.clone());
        binding.insert("y".into(), b.clone());
        let sym = Fact {
            predicate: SAME_AS.into(),
            args: alloc::vec![b.clone(), a.clone()],
        };
        if !facts.contains(&sym) {
            offer(
                out,
                Step {
                    fact: sym,
                    rule: SAME_AS_RULE.into(),
                    binding: binding.clone(),
                    premises: alloc::vec![(*eq).clone()],
                    round,
                },
            );
        }
        for f in facts {
            if core::ptr::eq(f, *eq) || !f.args.contains(a) {
                continue;
            }
            let rewritten = Fact {
                predicate: f.predicate.clone(),
                args: f
                    .args
                    .iter()
                    .map(|t| if t == a { b.clone() } else { t.clone() })
                    .collect(),
            };
            if rewritten.predicate == SAME_AS && rewritten.args[0] == rewritten.args[1] {
                continue;
            }
            if facts.contains(&rewritten) {
                continue;
            }
            offer(
                out,
                Step {
                    fact: rewritten,
                    rule: SAME_AS_RULE.into(),
                    binding: binding.clone(),
                    premises: alloc::vec![f.clone(), (*eq).clone()],
                    round,
                },
            );
        }
    }
}

/// Least fixpoint of `rules` over `base`, capped at `max_depth` rounds.
///
/// A `max_depth` of zero is treated as one.
pub fn saturate(base: &BTreeSet<Fact>, rules: &RuleSet, max_depth: usize) -> Saturation {
    let max_depth = max_depth.max(1);
    let mut facts = base.clone();
    let mut steps = BTreeMap::new();
    let mut rounds = 0;
    let mut truncated = false;
    loop {
        let mut new = BTreeMap::new();
        fire_rules(rules, &facts, rounds + 1, &mut new);
        if new.is_empty() {
            break;
        }
        if rounds == max_depth {
            truncated = true;
            break;
        }
        rounds += 1;
        for (fact, step) in new {
            facts.insert(fact.clone());
            steps.insert(fact, step);
        }
    }
    Saturation {
        facts,
        base: base.clone(),
        steps,
        truncated,
        rounds,
    }
}

/// Maps derived predicates to the privacy parameter their inference reveals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskBinding(BTreeMap<String, PrivacyParameter>);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("risk binding maps predicate {0:?}, which no rule mentions")]
pub struct UnknownPredicate(pub String);

impl RiskBinding {
    /// Validates that every mapped predicate occurs in `rules`.
    pub fn new(
        map: impl IntoIterator<Item = (String, PrivacyParameter)>,
        rules: &RuleSet,
    ) -> Result<RiskBinding, UnknownPredicate> {
        let vocab = rules.vocabulary();
        let map: BTreeMap<_, _> = map.into_iter().collect();
        for predicate in map.keys() {
            if !vocab.contains(predicate.as_str()) {
                return Err(UnknownPredicate(predicate.clone()));
            }
        }
        Ok(RiskBinding(map))
    }

    /// The shipped mapping, restricted to predicates present in `rules`.
    pub fn standard(rules: &RuleSet) -> RiskBinding {
        let vocab = rules.vocabulary();
        let entries = [
            ("useDevice", PrivacyParameter::device_use()),
            ("hasHabit", PrivacyParameter::habits()),
            ("hasDisease", PrivacyParameter::personal_information()),
            ("ExtramaritalAffair", PrivacyParameter::personal_information()),
            ("inferablePresence", PrivacyParameter::presence_absence()),
            ("underSurveillance", PrivacyParameter::realtime_surveillance()),
        ];
        RiskBinding(
            entries
                .into_iter()
                .filter(|(p, _)| vocab.contains(p))
                .map(|(p, f)| (p.to_string(), f))
                .collect(),
        )
    }

    pub fn parameter(&self, predicate: &str) -> Option<&PrivacyParameter> {
        self.0.get(predicate)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PrivacyParameter)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// What a candidate release lets a recipient infer, with the evidence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inference {
    pub parameters: BTreeSet<PrivacyParameter>,
    /// Derived facts that triggered each parameter.
    pub evidence: BTreeMap<PrivacyParameter, Vec<Fact>>,
    pub saturation: Saturation,
}

impl Inference {
    /// Proof trees for every piece of evidence, deduplicated, in fact order.
    pub fn derivations(&self) -> Vec<Derivation> {
        let facts: BTreeSet<&Fact> = self.evidence.values().flatten().collect();
        facts
            .into_iter()
            .filter_map(|f| explain(f, &self.saturation).ok())
            .collect()
    }
}

/// Saturates context and release facts and maps derived facts to parameters.
pub fn infer_risks(
    release: &BTreeSet<Fact>,
    context: &ContextState,
    rules: &RuleSet,
    bindings: &RiskBinding,
    max_depth: usize,
) -> Inference {
    let mut base = context.active_facts.clone();
    base.extend(release.iter().cloned());
    let saturation = saturate(&base, rules, max_depth);
    let mut evidence: BTreeMap<PrivacyParameter, Vec<Fact>> = BTreeMap::new();
    for fact in saturation.derived() {
        if let Some(p) = bindings.parameter(&fact.predicate) {
            evidence.entry(p.clone()).or_default().push(fact.clone());
        }
    }
    Inference {
        parameters: evidence.keys().cloned().collect(),
        evidence,
        saturation,
    }
}

/// The privacy parameters inferable from `release` in `context`.
pub fn inferable_parameters(
    release: &BTreeSet<Fact>,
    context: &ContextState,
    rules: &RuleSet,
    bindings: &RiskBinding,
) -> BTreeSet<PrivacyParameter> {
    infer_risks(release, context, rules, bindings, DEFAULT_MAX_DEPTH).parameters
}
