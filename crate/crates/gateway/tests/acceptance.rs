//! Acceptance suite: one check per criterion, each printing a PASS or FAIL
//! line with its measured runtime. Run with `--nocapture` to see the lines.

mod common;

#[path = "../../core/tests/common/mod.rs"]
mod core_common;

#[path = "../../core/tests/strategies/mod.rs"]
mod strategies;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::TimeDelta;
use pdv_core::inference::{explain, saturate, Saturation, DEFAULT_MAX_DEPTH};
use pdv_core::noise::{apply_noise, seeded_rng};
use pdv_core::query::parse_query;
use pdv_core::rules::{parse_fact, parse_facts, parse_rules, Fact, Rule, RuleError, RuleSet, Term};
use pdv_core::series::{downsample, Accuracy, ResultSet};
use pdv_core::simhome::naive_detect;
use pdv_core::tradeoff::{decide, decide_at, leakage, min_degradation, utility, CounterOffer, LeakageCalibration, LADDER};
use pdv_core::{
    BenefitOffer, Consumer, ContextState, Degradation, Outcome, OwnerPolicy, Period, PrivacyParameter,
    ProfileCategory, Reading, StreamId, Timestamp,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestRng, TestRunner};
use serde_json::Value;

type Check = fn() -> String;

struct Criterion {
    number: u8,
    name: &'static str,
    limit: Option<Duration>,
    check: Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        number: 1,
        name: "leakage calibration",
        limit: Some(Duration::from_secs(1)),
        check: leakage_calibration,
    },
    Criterion {
        number: 2,
        name: "inference chains",
        limit: Some(Duration::from_secs(1)),
        check: chain_inference,
    },
    Criterion {
        number: 3,
        name: "saturation properties",
        limit: Some(Duration::from_secs(30)),
        check: saturation_properties,
    },
    Criterion {
        number: 4,
        name: "utility fixtures",
        limit: None,
        check: utility_fixtures,
    },
    Criterion {
        number: 5,
        name: "min_degradation soundness",
        limit: Some(Duration::from_secs(10)),
        check: min_degradation_soundness,
    },
    Criterion {
        number: 6,
        name: "downsampling and noise",
        limit: None,
        check: downsampling_and_noise,
    },
    Criterion {
        number: 7,
        name: "empirical leakage shape",
        limit: Some(Duration::from_secs(60)),
        check: empirical_leakage,
    },
    Criterion {
        number: 8,
        name: "end-to-end CLI scenario",
        limit: Some(Duration::from_secs(30)),
        check: cli_scenario,
    },
    Criterion {
        number: 9,
        name: "information-flow audit",
        limit: None,
        check: information_flow,
    },
    Criterion {
        number: 10,
        name: "parser suites",
        limit: None,
        check: parser_suites,
    },
];

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    for c in CRITERIA {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let verdict = match result {
            Ok(detail) => match c.limit {
                Some(limit) if elapsed > limit => Err(format!("{detail}; exceeded {limit:?}")),
                _ => Ok(detail),
            },
            Err(panic) => Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS  {} ({detail}) [{elapsed:.2?}]", c.number, c.name),
            Err(why) => {
                println!("criterion {:>2} FAIL  {} ({why}) [{elapsed:.2?}]", c.number, c.name);
                failed.push(c.number);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Deterministic property runner; panics with the minimal failing input.
fn check_all<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) {
    let mut runner = TestRunner::new_with_rng(
        RunnerConfig {
            cases,
            failure_persistence: None,
            max_global_rejects: 100_000,
            ..RunnerConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

fn now() -> Timestamp {
    common::now()
}

fn at(period: Period) -> Degradation {
    Degradation {
        sample_period: period,
        noise_epsilon: None,
    }
}

fn leakage_calibration() -> String {
    let shipped: LeakageCalibration = serde_json::from_str(core_common::CALIBRATION).unwrap();
    assert_eq!(shipped, LeakageCalibration::default());
    let (h, d) = (PrivacyParameter::habits(), PrivacyParameter::device_use());
    assert_eq!(leakage(&h, Period::secs(15), &shipped).unwrap(), 0.59);
    assert_eq!(leakage(&d, Period::secs(15), &shipped).unwrap(), 0.72);
    let h30 = leakage(&h, Period::minutes(30), &shipped).unwrap();
    let d30 = leakage(&d, Period::minutes(30), &shipped).unwrap();
    assert!(h30 <= 0.02 && d30 <= 0.02, "{h30} {d30}");
    format!("habits 0.59 / device_use 0.72 at 15s; {h30} / {d30} at 30m")
}

fn normalize(f: &Fact) -> String {
    let args: Vec<String> = f
        .args
        .iter()
        .map(|t| match t {
            Term::Skolem(sk) => format!("_:{}.{}", sk.rule, sk.var),
            other => other.to_string(),
        })
        .collect();
    format!("{}({})", f.predicate, args.join(", "))
}

fn chain_case(file: &str, expected: &[&str], conclusion: &str, depth: usize) {
    let text = std::fs::read_to_string(common::repo().join("fixtures/chains").join(file)).unwrap();
    let sat: Saturation = saturate(&core_common::facts(&text), &core_common::chain_rules(), DEFAULT_MAX_DEPTH);
    assert!(!sat.truncated);
    let shown: BTreeSet<String> = sat.derived().map(normalize).collect();
    let want: BTreeSet<String> = expected.iter().map(|s| s.to_string()).collect();
    assert_eq!(shown, want, "{file}");
    let fact = sat
        .derived()
        .find(|f| normalize(f) == conclusion)
        .unwrap_or_else(|| panic!("{file}: {conclusion} not derived"));
    let tree = explain(fact, &sat).unwrap();
    assert_eq!(tree.depth(), depth, "{file}: depth of {conclusion}");
}

fn chain_inference() -> String {
    chain_case(
        "rule1.facts",
        &["useDevice(alice, _:Rule-1.d)", "Device(_:Rule-1.d)", r#"isInferable(_:Rule-1.d, "true")"#],
        "useDevice(alice, _:Rule-1.d)",
        1,
    );
    chain_case(
        "rule2.facts",
        &[
            "useDevice(alice, _:Rule-1.d)",
            "Device(_:Rule-1.d)",
            r#"isInferable(_:Rule-1.d, "true")"#,
            "sameAs(_:Rule-1.d, haemodialysis1)",
            "sameAs(haemodialysis1, _:Rule-1.d)",
            "useDevice(alice, haemodialysis1)",
            "Device(haemodialysis1)",
            r#"isInferable(haemodialysis1, "true")"#,
            "ownsDevice(alice, _:Rule-1.d)",
            r#"signatureMatches("energy.consumption", _:Rule-1.d)"#,
            "MedicalDevice(_:Rule-1.d)",
            "cures(_:Rule-1.d, ckd)",
            "hasDisease(alice, ckd)",
        ],
        "hasDisease(alice, ckd)",
        2,
    );
    chain_case(
        "rule3.facts",
        &[
            "has(bob, _:Rule-3.f)",
            "ExtramaritalAffair(_:Rule-3.f)",
            r#"isInferable(_:Rule-3.f, "true")"#,
        ],
        "ExtramaritalAffair(_:Rule-3.f)",
        1,
    );
    "exact fact sets; derivation depths 1, 2, 1".into()
}

fn saturation_properties() -> String {
    use strategies::datalog::*;
    const CASES: u32 = 200;
    check_all(CASES, (ruleset(false), facts(12)), |(rules, base)| {
        let sat = saturate(&base, &rules, DEPTH);
        prop_assert!(!sat.truncated);
        prop_assert_eq!(sat.facts, brute_force(&base, &rules));
        Ok(())
    });
    check_all(CASES, (ruleset(true), facts(8), facts(4)), |(rules, a, b)| {
        let small = saturate(&a, &rules, DEPTH);
        let both: BTreeSet<Fact> = a.union(&b).cloned().collect();
        let large = saturate(&both, &rules, DEPTH);
        prop_assume!(!small.truncated && !large.truncated);
        prop_assert!(small.facts.is_subset(&large.facts));
        Ok(())
    });
    check_all(CASES, (ruleset(true), facts(12)), |(rules, base)| {
        let once = saturate(&base, &rules, DEPTH);
        prop_assume!(!once.truncated);
        let twice = saturate(&once.facts, &rules, DEPTH);
        prop_assert_eq!(&twice.facts, &once.facts);
        Ok(())
    });
    let permuted = ruleset(true).prop_flat_map(|r| {
        let n = r.len();
        (Just(r), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    });
    check_all(CASES, (permuted, facts(12)), |((rules, order), base)| {
        let list: Vec<Rule> = order.iter().map(|&i| rules.rules()[i].clone()).collect();
        let shuffled = RuleSet::new(list).unwrap();
        let a = saturate(&base, &rules, DEPTH);
        let b = saturate(&base, &shuffled, DEPTH);
        prop_assert_eq!(&a.facts, &b.facts);
        prop_assert_eq!(a.steps().collect::<Vec<_>>(), b.steps().collect::<Vec<_>>());
        Ok(())
    });
    format!("brute-force, monotonicity, idempotence, permutation: {CASES} cases each")
}

fn utility_fixtures() -> String {
    assert_eq!(utility(0.0, 0.0, 0.3), 0.0);
    assert!((utility(2.0, 1.0, 0.5) - 0.5).abs() < 1e-12);
    assert!((utility(2.0, 1.0, 0.9) - -0.7).abs() < 1e-12);
    let a = core_common::alice::setup();
    let deny = decide(&a.input(), &a.model, now()).unwrap();
    assert_eq!(deny.outcome, Outcome::Deny);
    assert!((deny.utility - -0.1744).abs() < 1e-9, "{}", deny.utility);
    let answer = decide_at(&a.input(), &a.model, at(Period::minutes(30)), now()).unwrap();
    assert_eq!(answer.outcome, Outcome::Answer);
    assert!((answer.utility - 0.2372).abs() < 1e-9, "{}", answer.utility);
    let violations = std::cell::Cell::new(0u32);
    check_all(1000, (0.0f64..10.0, 0.0f64..10.0, 0.0f64..1.0, 0.0f64..1.0), |(b, r, w, dw)| {
        let w2 = (w + dw * (1.0 - w)).min(1.0);
        prop_assume!(w < w2);
        if Outcome::from_utility(utility(b, r, w)) == Outcome::Deny
            && Outcome::from_utility(utility(b, r, w2)) == Outcome::Answer
        {
            violations.set(violations.get() + 1);
        }
        Ok(())
    });
    assert_eq!(violations.get(), 0);
    format!(
        "0, 0.5, -0.7; Alice U = {:.4} at 15s, {:.4} at 30m; 0 of 1000 bias triples violate monotonicity",
        deny.utility, answer.utility
    )
}

fn random_policy() -> impl Strategy<Value = (OwnerPolicy, ContextState)> {
    (
        prop::collection::vec(0.0f64..=1.0, 5),
        prop::collection::vec(any::<bool>(), 5),
        0.0f64..=1.0,
    )
        .prop_map(|(weights, flags, w)| {
            let mut policy = OwnerPolicy::uniform(0.0);
            policy.tradeoff_bias_w = w;
            let params: Vec<_> = PrivacyParameter::canonical().collect();
            let mut ctx = ContextState::with_flags(&params, false);
            for ((p, weight), flag) in params.iter().zip(weights).zip(flags) {
                policy.parameter_weights.insert(p.clone(), weight);
                ctx.set_flag(p.clone(), flag);
            }
            (policy, ctx)
        })
}

fn min_degradation_soundness() -> String {
    let counters = std::cell::Cell::new(0u32);
    let strategy = (
        random_policy(),
        0.0f64..0.6,
        0.0f64..0.6,
        0usize..3,
        prop::option::of(0.05f64..2.0),
    );
    check_all(500, strategy, |((policy, ctx), trust, value, start, eps)| {
        let mut a = core_common::alice::setup();
        a.policy = policy;
        a.context = ctx.with_facts(a.context.active_facts.clone());
        a.consumer = Consumer::new("m", ProfileCategory::Marketer).with_ratings([trust]);
        a.offer = BenefitOffer::financial(value);
        let requested = [Period::secs(15), Period::minutes(1), Period::minutes(5)][start];
        a.query.sample_period = Some(requested);
        a.query.noise_epsilon = eps;
        let first = decide(&a.input(), &a.model, now()).unwrap();
        prop_assume!(first.outcome == Outcome::Deny);
        let steps = a.input().coarser_steps(requested).unwrap();
        let deg = |p: Period| Degradation {
            sample_period: p,
            noise_epsilon: eps,
        };
        let outcome = |p: Period| decide_at(&a.input(), &a.model, deg(p), now()).unwrap().outcome;
        let coarsest_ok = steps.last().map(|p| outcome(*p) == Outcome::Answer).unwrap_or(false);
        match min_degradation(&a.input(), &a.model, now()).unwrap() {
            CounterOffer::Counter { degradation, .. } => {
                counters.set(counters.get() + 1);
                prop_assert!(coarsest_ok);
                prop_assert_eq!(outcome(degradation.sample_period), Outcome::Answer);
                let idx = steps.iter().position(|p| *p == degradation.sample_period).unwrap();
                let finer = if idx == 0 { requested } else { steps[idx - 1] };
                prop_assert_eq!(outcome(finer), Outcome::Deny);
            }
            CounterOffer::Infeasible => prop_assert!(!coarsest_ok),
        }
        Ok(())
    });
    format!("500 Deny instances, {} countered, {} infeasible", counters.get(), 500 - counters.get())
}

fn downsampling_and_noise() -> String {
    let t0: Timestamp = "2024-01-01T00:00:00Z".parse().unwrap();
    let series = |values: &[f64], period: Period| ResultSet {
        stream_id: StreamId::new("energy.consumption").unwrap(),
        readings: values
            .iter()
            .enumerate()
            .map(|(i, v)| Reading::numeric(t0 + TimeDelta::seconds(period.as_secs() as i64 * i as i64), *v))
            .collect(),
        accuracy: Accuracy::native(period),
    };
    let out = downsample(&series(&[1.0, 2.0, 3.0, 4.0], Period::secs(15)), Period::secs(30)).unwrap();
    assert_eq!(out.values().collect::<Vec<_>>(), vec![1.5, 3.5]);
    assert_eq!(out.accuracy.sample_period, Period::secs(30));

    let zeros = series(&[0.0; 10_000], Period::secs(15));
    let (epsilon, sensitivity) = (1.0f64, 1.0f64);
    let noisy = apply_noise(&zeros, epsilon, sensitivity, &mut seeded_rng(7)).unwrap();
    let v: Vec<f64> = noisy.values().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let expected_var = 2.0 * (sensitivity / epsilon).powi(2);
    assert!(mean.abs() <= 0.05, "mean {mean}");
    assert!((var - expected_var).abs() <= 0.15 * expected_var, "variance {var}");

    let again = apply_noise(&zeros, 1.0, 1.0, &mut seeded_rng(7)).unwrap();
    assert_eq!(serde_json::to_vec(&noisy).unwrap(), serde_json::to_vec(&again).unwrap());
    let head: Vec<u64> = noisy.values().take(3).map(f64::to_bits).collect();
    assert_eq!(head, FROZEN_NOISE_HEAD, "seed 7 draws changed");
    format!("[1.5, 3.5]; Laplace mean {mean:.4}, variance {var:.4} (target 2); seeded output byte-identical")
}

/// Bit patterns of the first three Laplace(1) draws from seed 7
/// (-1.1533044240259376, -1.0907074378562585, 0.5251819444754969), computed
/// by a separate ChaCha8 implementation with the same seed expansion.
const FROZEN_NOISE_HEAD: [u64; 3] = [13831244877401710677, 13830962965638122394, 4602905637964159537];

fn empirical_leakage() -> String {
    let home = core_common::alice_home();
    let ladder: Vec<Period> = std::iter::once(Period::secs(15)).chain(LADDER).collect();
    let i30 = ladder.iter().position(|p| *p == Period::minutes(30)).unwrap();
    let (mut lo15, mut hi30) = (f64::INFINITY, 0.0f64);
    for seed in 0..20 {
        let trace = home.trace(seed);
        let raw = ResultSet {
            stream_id: StreamId::new("energy.consumption").unwrap(),
            readings: trace.readings.clone(),
            accuracy: Accuracy::native(home.period),
        };
        let c: Vec<f64> = ladder
            .iter()
            .map(|p| {
                let r = downsample(&raw, *p).unwrap();
                naive_detect(&r.readings, home.start, &home.appliances, &trace.ground_truth)
                    .into_iter()
                    .find(|d| d.name == "haemodialysis1")
                    .unwrap()
                    .confidence
            })
            .collect();
        assert!(c[0] >= 0.9, "seed {seed}: {c:?}");
        assert!(c[i30] <= 0.2, "seed {seed}: {c:?}");
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert!(c[i] >= c[j] - 0.05, "seed {seed}: {c:?}");
            }
        }
        lo15 = lo15.min(c[0]);
        hi30 = hi30.max(c[i30]);
    }
    format!("20 seeds: min confidence {lo15:.3} at 15s, max {hi30:.3} at 30m, non-increasing")
}

struct Pdv {
    config: std::path::PathBuf,
    store: std::path::PathBuf,
}

impl Pdv {
    fn run(&self, args: &[&str]) -> (i32, Value, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_pdv"))
            .arg("--config")
            .arg(&self.config)
            .arg("--store")
            .arg(&self.store)
            .args(["--now", "2024-01-02T00:00:00Z"])
            .args(args)
            .output()
            .unwrap();
        let stdout = String::from_utf8(out.stdout).unwrap();
        let stderr = String::from_utf8(out.stderr).unwrap();
        let value = serde_json::from_str(&stdout).unwrap_or(Value::Null);
        (out.status.code().unwrap_or(-1), value, stderr)
    }

    fn ok(&self, args: &[&str]) -> Value {
        let (code, value, stderr) = self.run(args);
        assert_eq!(code, 0, "pdv {args:?}: {stderr}");
        value
    }
}

fn cli_scenario() -> String {
    let dir = tempfile::tempdir().unwrap();
    let repo = common::repo();
    let pdv = Pdv {
        config: repo.join("fixtures/alice/gateway.json"),
        store: dir.path().join("vault"),
    };
    let trace = dir.path().join("trace.jsonl");
    let home = repo.join("fixtures/homes/alice_home.json");
    let gen = pdv.ok(&["gen-home", home.to_str().unwrap(), "--out", trace.to_str().unwrap()]);
    assert_eq!(gen["readings"], 5760);
    let ingested = pdv.ok(&["ingest", trace.to_str().unwrap(), "--stream", "energy.consumption"]);
    assert_eq!(ingested["appended"], 5760);

    let query = repo.join("fixtures/alice/request.query");
    let req = pdv.ok(&["request", query.to_str().unwrap(), "--consumer", "marketer", "--offer", "0.035"]);
    assert_eq!(req["state"], "countered");
    assert_eq!(req["counter"]["sample_period"], "30m");
    let id = req["id"].as_u64().unwrap().to_string();
    let accepted = pdv.ok(&["respond", &id, "accept-counter", "--consumer", "marketer"]);
    assert_eq!(accepted["state"], "accepted");
    assert_eq!(accepted["grant"]["sample_period"], "30m");
    assert_eq!(accepted["grant"]["status"], "active");
    let release = pdv.ok(&["fetch", &id, "--consumer", "marketer"]);
    assert_eq!(release["results"][0]["accuracy"]["sample_period"], "30m");
    assert_eq!(release["results"][0]["readings"].as_array().unwrap().len(), 48);

    let events = repo.join("fixtures/alice/events.jsonl");
    let report = pdv.ok(&["replay-events", events.to_str().unwrap()]);
    assert_eq!(report["grants"][0]["action"], "suspend");
    let (code, _, stderr) = pdv.run(&["fetch", &id, "--consumer", "marketer"]);
    assert_eq!(code, 2);
    let err: Value = serde_json::from_str(&stderr).unwrap();
    assert_eq!(err["error"], "grant-inactive");

    let notes = pdv.ok(&["notifications"]);
    let suspended = notes
        .as_array()
        .unwrap()
        .iter()
        .find(|n| n["kind"] == "grant_suspended")
        .expect("grant_suspended notification");
    let record = &suspended["record"];
    let u = record["utility"].as_f64().unwrap();
    assert!(u <= 0.0, "{record}");
    assert_eq!(record["outcome"], "Deny");
    let recomputed = utility(
        record["benefit_value"].as_f64().unwrap(),
        record["risk_magnitude"].as_f64().unwrap(),
        record["tradeoff_bias_w"].as_f64().unwrap(),
    );
    assert_eq!(recomputed, u);
    format!("countered at 30m, accepted, fetched 48 readings; suspended with U = {u:.4}; fetch refused grant-inactive")
}

fn information_flow() -> String {
    use common::http::*;
    use pdv_gateway::api::{Audience, ROUTES};
    let rt = rt();
    let consumer_routes = rt.block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let api = alice_api(dir.path(), true).await;
        let mut bodies = Vec::new();
        for offer in [0.035, 0.5, 3.0, 0.0] {
            let (_, v) = api.call("POST", "/api/requests", Some(MARKETER), Some(submit_body(offer))).await;
            bodies.push(v);
        }
        api.call("POST", "/api/requests/1/respond", Some(MARKETER), Some(serde_json::json!({"action": "accept_counter"})))
            .await;
        let event = serde_json::json!([{"t": "2024-01-01T13:17:00Z", "kind": "device_on", "payload": "haemodialysis1"}]);
        for round in 0..2 {
            for r in ROUTES {
                for id in ["1", "2", "3", "4", "99"] {
                    for token in [MARKETER, UTILITY] {
                        let body = (r.method != "GET").then(|| serde_json::json!({"action": "withdraw"}));
                        let (_, v) = api.call(r.method, &concrete(r.path, id), Some(token), body).await;
                        if r.audience != Audience::Consumer {
                            assert!(v["error"] == "forbidden", "{} {} answered a consumer: {v}", r.method, r.path);
                        }
                        bodies.push(v);
                    }
                }
            }
            if round == 0 {
                api.call("POST", "/api/ingest/events", Some(DEVICE), Some(event.clone())).await;
            }
        }
        for b in &bodies {
            assert_consumer_safe("consumer route", b);
        }
        assert!(bodies.iter().any(has_readings));
        bodies.len()
    });
    let stats = random_walks(32, 120);
    assert!(stats.transitions >= 1000, "{stats:?}");
    assert!(stats.releases > 0, "{stats:?}");
    format!(
        "{consumer_routes} consumer bodies clean over {} routes; {} transitions, {} releases in random walks",
        ROUTES.len(),
        stats.transitions,
        stats.releases
    )
}

fn parser_suites() -> String {
    use strategies::syntax::*;
    check_all(1000, query(), |q| {
        let text = q.to_string();
        prop_assert_eq!(parse_query(&text), Ok(q), "{}", text);
        Ok(())
    });
    let rulesets = std::cell::Cell::new(0u32);
    check_all(1000, ruleset_text(), |text| {
        let rules = match parse_rules(&text) {
            Ok(r) => r,
            Err(RuleError::ArityMismatch { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(format!("{e}: {text}"))),
        };
        rulesets.set(rulesets.get() + 1);
        let printed = rules.to_string();
        prop_assert_eq!(parse_rules(&printed), Ok(rules), "{}", printed);
        Ok(())
    });
    check_all(1000, fact(), |f| {
        prop_assert_eq!(parse_fact(&f.to_string()), Ok(f));
        Ok(())
    });
    assert!(rulesets.get() >= 900, "only {} rule sets parsed", rulesets.get());

    let repo = common::repo();
    let read = |p: &str| std::fs::read_to_string(repo.join(p)).unwrap();
    for p in ["rules/inference_chain.rules", "rules/smart_home.rules"] {
        parse_rules(&read(p)).unwrap_or_else(|e| panic!("{p}: {e}"));
    }
    for p in [
        "fixtures/chains/rule1.facts",
        "fixtures/chains/rule2.facts",
        "fixtures/chains/rule3.facts",
        "fixtures/alice/context.facts",
    ] {
        parse_facts(&read(p)).unwrap_or_else(|e| panic!("{p}: {e}"));
    }
    parse_query(read("fixtures/alice/request.query").trim()).unwrap();

    let rule_at = |text: &str| match parse_rules(text).unwrap_err() {
        RuleError::Syntax { line, col, .. } => (line, col),
        other => panic!("{text}: {other:?}"),
    };
    assert_eq!(rule_at("rule r: p(?x)\n  q(?x)."), (2, 3));
    assert_eq!(rule_at("rule r: p(?x) => q(?x)"), (1, 23));
    assert_eq!(rule_at("rul r: p(?x) => q(?x)."), (1, 1));
    assert_eq!(rule_at("rule r: p(fresh(?x)) => q(?x)."), (1, 11));
    assert_eq!(rule_at("rule r: p(\"open) => q(a)."), (1, 26));
    assert_eq!(rule_at("# comment\nrule r: p(?) => q(a)."), (2, 12));
    assert!(matches!(parse_rules("rule r: p(?x) => q(?y)."), Err(RuleError::UnboundHeadVariable { .. })));
    assert!(matches!(
        parse_rules("rule r: p(?x) => q(?x).\nrule r: p(?x) => s(?x)."),
        Err(RuleError::DuplicateRule(_))
    ));
    assert!(matches!(parse_rules("rule r: p(?x) => p(?x, ?x)."), Err(RuleError::ArityMismatch { .. })));

    use pdv_core::query::QueryError as Q;
    const R: &str = "2024-01-01T00:00:00Z..2024-01-02T00:00:00Z";
    let q = |text: &str| parse_query(text).unwrap_err();
    assert!(matches!(q("SELECT a"), Q::Syntax { line: 1, col: 1, .. }));
    assert!(matches!(q(&format!("GET a RANGE {R} SAMPLE 5d")), Q::UnknownDurationUnit { line: 1, col: 64, .. }));
    assert!(matches!(q(&format!("GET a\nRANGE {R} NOISE eps=x")), Q::Syntax { line: 2, col: 60, .. }));
    assert!(matches!(
        q("GET a RANGE 2024-02-30T00:00:00Z..2024-03-01T00:00:00Z"),
        Q::InvalidTimestamp { line: 1, col: 13, .. }
    ));
    assert_eq!(q("GET a RANGE 2024-01-02T00:00:00Z..2024-01-01T00:00:00Z"), Q::InvalidRange);
    assert!(matches!(q(&format!("GET a.b, a.b RANGE {R}")), Q::DuplicateItem(_)));
    assert_eq!(q(&format!("GET a RANGE {R} NOISE eps=0")), Q::NonPositiveEpsilon);
    format!(
        "1000 queries, {} of 1000 rule sets parse and round-trip, 1000 facts round-trip; fixtures parse; all error classes located",
        rulesets.get()
    )
}
