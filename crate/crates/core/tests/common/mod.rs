#![allow(dead_code)]

use std::collections::BTreeSet;

use pdv_core::rules::{parse_facts, parse_rules, Fact, RuleSet};
use pdv_core::simhome::HomeFixture;

pub const CHAIN_RULES: &str = include_str!("../../../../rules/inference_chain.rules");
pub const SMART_HOME_RULES: &str = include_str!("../../../../rules/smart_home.rules");
pub const ALICE_HOME: &str = include_str!("../../../../fixtures/homes/alice_home.json");
pub const ALICE_CONTEXT: &str = include_str!("../../../../fixtures/alice/context.facts");
pub const CALIBRATION: &str = include_str!("../../../../fixtures/calibration/default.json");

pub fn chain_rules() -> RuleSet {
    parse_rules(CHAIN_RULES).unwrap()
}

pub fn all_rules() -> RuleSet {
    let mut rules = chain_rules();
    rules.extend(parse_rules(SMART_HOME_RULES).unwrap()).unwrap();
    rules
}

pub fn facts(text: &str) -> BTreeSet<Fact> {
    parse_facts(text).unwrap().into_iter().collect()
}

pub fn alice_home() -> HomeFixture {
    serde_json::from_str(ALICE_HOME).unwrap()
}

pub mod alice {
    use std::collections::BTreeMap;

    use pdv_core::query::{parse_query, Query};
    use pdv_core::tradeoff::{DecisionInput, LeakageCalibration, RiskModel};
    use pdv_core::{
        BenefitOffer, Consumer, ContextState, OwnerPolicy, Period, PrivacyParameter, ProfileCategory, Stream,
        StreamId,
    };

    pub const QUERY: &str =
        r#"GET energy.consumption RANGE 2024-01-01T00:00:00Z..2024-01-02T00:00:00Z SAMPLE 15s PURPOSE "targeted offers""#;

    pub struct Alice {
        pub query: Query,
        pub consumer: Consumer,
        pub offer: BenefitOffer,
        pub policy: OwnerPolicy,
        pub context: ContextState,
        pub streams: BTreeMap<StreamId, Stream>,
        pub model: RiskModel,
    }

    impl Alice {
        pub fn input(&self) -> DecisionInput<'_> {
            DecisionInput {
                query: &self.query,
                consumer: &self.consumer,
                offer: &self.offer,
                policy: &self.policy,
                context: &self.context,
                streams: &self.streams,
            }
        }
    }

    pub fn setup() -> Alice {
        let mut policy = OwnerPolicy::uniform(0.5);
        policy.parameter_weights.insert(PrivacyParameter::habits(), 0.7);
        policy.parameter_weights.insert(PrivacyParameter::device_use(), 0.9);
        policy.parameter_weights.insert(PrivacyParameter::personal_information(), 1.0);
        let mut context = ContextState::with_flags(policy.parameters(), true);
        context.set_flag(PrivacyParameter::personal_information(), false);
        let context = context.with_facts(super::facts(super::ALICE_CONTEXT));
        let stream = Stream::numeric("energy.consumption", "kW", Period::secs(15)).unwrap();
        Alice {
            query: parse_query(QUERY).unwrap(),
            consumer: Consumer::new("marketer", ProfileCategory::Marketer).with_ratings([0.2]),
            offer: BenefitOffer::financial(0.5),
            policy,
            context,
            streams: [(stream.id.clone(), stream)].into_iter().collect(),
            model: RiskModel::new(super::all_rules(), serde_json::from_str::<LeakageCalibration>(super::CALIBRATION).unwrap()),
        }
    }
}
