//! Risk/benefit trade-off: sensitivity, trust, information leakage, the
//! utility `U = (1 - w) * b - w * r` and the Answer/Deny decision, plus the
//! search for the least degradation that turns a Deny into an Answer.
//!
//! The risk magnitude of a release is
//!
//! ```text
//! r = (1 - trust) * sum over items i, parameters f inferable from i:
//!         weight(f) * flag(f) * leakage(f, period) * min(1, eps / 1.0)
//! ```
//!
//! and every factor is kept in the [`RiskAssessment`] so `r` can be
//! recomputed from the record alone.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{
    BenefitCategory, BenefitOffer, Consumer, ContextState, DecisionRecord, Degradation, Outcome,
    OwnerPolicy, PrivacyParameter, Stream, StreamId, Timestamp,
};
use crate::inference::{infer_risks, Derivation, RiskBinding, DEFAULT_MAX_DEPTH};
use crate::period::Period;
use crate::query::Query;
use crate::rules::{Fact, RuleSet, Term};

/// Noise level at and above which noise no longer reduces leakage.
pub const REFERENCE_EPSILON: f64 = 1.0;

/// Coarsening steps offered during negotiation, besides the native period.
pub const LADDER: [Period; 5] = [
    Period::minutes(1),
    Period::minutes(5),
    Period::minutes(15),
    Period::minutes(30),
    Period::hours(1),
];

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TradeoffError {
    #[error("unknown privacy parameter: {0}")]
    UnknownParameter(PrivacyParameter),
    #[error("no leakage calibration for parameter: {0}")]
    UncalibratedParameter(PrivacyParameter),
    #[error("no multiplier for benefit category: {0}")]
    UnknownBenefitCategory(BenefitCategory),
    #[error("unknown stream: {0}")]
    UnknownStream(StreamId),
    #[error("sample period {period} is not a multiple of the native period {native} of {item}")]
    InvalidPeriod {
        item: StreamId,
        period: Period,
        native: Period,
    },
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("{parameter}: at least two calibration points are required")]
    TooFewPoints { parameter: PrivacyParameter },
    #[error("{parameter}: periods must be strictly increasing")]
    PeriodsNotIncreasing { parameter: PrivacyParameter },
    #[error("{parameter}: confidence must not increase with the period")]
    ConfidenceIncreasing { parameter: PrivacyParameter },
    #[error("{parameter}: confidence {value} outside [0, 1]")]
    ConfidenceOutOfRange { parameter: PrivacyParameter, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub period: Period,
    pub confidence: f64,
}

/// Calibration curve for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterCalibration {
    pub points: Vec<CalibrationPoint>,
    /// Placeholder numbers rather than measured ones.
    pub uncalibrated: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CalibrationRepr {
    Points(Vec<CalibrationPoint>),
    Flagged {
        points: Vec<CalibrationPoint>,
        #[serde(default)]
        uncalibrated: bool,
    },
}

impl Serialize for ParameterCalibration {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.uncalibrated {
            CalibrationRepr::Flagged {
                points: self.points.clone(),
                uncalibrated: true,
            }
            .serialize(s)
        } else {
            CalibrationRepr::Points(self.points.clone()).serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for ParameterCalibration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match CalibrationRepr::deserialize(d)? {
            CalibrationRepr::Points(points) => ParameterCalibration {
                points,
                uncalibrated: false,
            },
            CalibrationRepr::Flagged {
                points,
                uncalibrated,
            } => ParameterCalibration {
                points,
                uncalibrated,
            },
        })
    }
}

/// Confidence with which each parameter can be inferred at a given
/// sampling period.
///
/// JSON form: `{"habits": [{"period": "15s", "confidence": 0.59}, ...]}`,
/// or `{"points": [...], "uncalibrated": true}` for placeholder curves.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LeakageCalibration(BTreeMap<PrivacyParameter, ParameterCalibration>);

impl<'de> Deserialize<'de> for LeakageCalibration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<PrivacyParameter, ParameterCalibration>::deserialize(d)?;
        LeakageCalibration::new(map).map_err(serde::de::Error::custom)
    }
}

fn point(secs: u64, confidence: f64) -> CalibrationPoint {
    CalibrationPoint {
        period: Period::secs(secs),
        confidence,
    }
}

impl Default for LeakageCalibration {
    /// Device use and habits are measured values for 15 s and 30 min
    /// sampling; the other three curves are placeholders.
    fn default() -> Self {
        let curve = |a: CalibrationPoint, b: CalibrationPoint, uncalibrated| ParameterCalibration {
            points: alloc::vec![a, b],
            uncalibrated,
        };
        let map = [
            (PrivacyParameter::device_use(), curve(point(15, 0.72), point(1800, 0.02), false)),
            (PrivacyParameter::habits(), curve(point(15, 0.59), point(1800, 0.02), false)),
            (PrivacyParameter::presence_absence(), curve(point(15, 0.95), point(1800, 0.30), true)),
            (PrivacyParameter::realtime_surveillance(), curve(point(15, 0.95), point(3600, 0.05), true)),
            (PrivacyParameter::personal_information(), curve(point(15, 0.50), point(1800, 0.02), true)),
        ];
        LeakageCalibration(map.into_iter().collect())
    }
}

impl LeakageCalibration {
    pub fn new(
        map: BTreeMap<PrivacyParameter, ParameterCalibration>,
    ) -> Result<LeakageCalibration, CalibrationError> {
        for (parameter, cal) in &map {
            let parameter = parameter.clone();
            if cal.points.len() < 2 {
                return Err(CalibrationError::TooFewPoints { parameter });
            }
            for p in &cal.points {
                if !(0.0..=1.0).contains(&p.confidence) {
                    return Err(CalibrationError::ConfidenceOutOfRange {
                        parameter,
                        value: p.confidence,
                    });
                }
            }
            for pair in cal.points.windows(2) {
                if pair[1].period <= pair[0].period {
                    return Err(CalibrationError::PeriodsNotIncreasing { parameter });
                }
                if pair[1].confidence > pair[0].confidence {
                    return Err(CalibrationError::ConfidenceIncreasing { parameter });
                }
            }
        }
        Ok(LeakageCalibration(map))
    }

    pub fn get(&self, p: &PrivacyParameter) -> Option<&ParameterCalibration> {
        self.0.get(p)
    }

    pub fn parameters(&self) -> impl Iterator<Item = &PrivacyParameter> {
        self.0.keys()
    }
}

/// Σ weight(f) · flag(f) over `parameters`.
pub fn sensitivity<'a>(
    parameters: impl IntoIterator<Item = &'a PrivacyParameter>,
    policy: &OwnerPolicy,
    context: &ContextState,
) -> Result<f64, TradeoffError> {
    let mut total = 0.0;
    for p in parameters {
        let (w, flag) = weight_and_flag(p, policy, context)?;
        total += w * f64::from(flag);
    }
    Ok(total)
}

fn weight_and_flag(
    p: &PrivacyParameter,
    policy: &OwnerPolicy,
    context: &ContextState,
) -> Result<(f64, u8), TradeoffError> {
    let w = policy
        .weight(p)
        .ok_or_else(|| TradeoffError::UnknownParameter(p.clone()))?;
    let flag = context
        .flag(p)
        .ok_or_else(|| TradeoffError::UnknownParameter(p.clone()))?;
    Ok((w, flag))
}

/// Mean feedback rating, or the policy default for an unrated consumer.
pub fn trust(consumer: &Consumer, policy: &OwnerPolicy) -> f64 {
    if consumer.ratings.is_empty() {
        policy.default_trust
    } else {
        consumer.ratings.iter().sum::<f64>() / consumer.ratings.len() as f64
    }
}

/// Leakage at an arbitrary (possibly fractional) period in seconds.
pub fn leakage_at_secs(
    parameter: &PrivacyParameter,
    secs: f64,
    cal: &LeakageCalibration,
) -> Result<f64, TradeoffError> {
    let points = &cal
        .get(parameter)
        .ok_or_else(|| TradeoffError::UncalibratedParameter(parameter.clone()))?
        .points;
    let first = points[0];
    let last = points[points.len() - 1];
    if secs <= first.period.as_secs_f64() {
        return Ok(first.confidence);
    }
    if secs >= last.period.as_secs_f64() {
        return Ok(last.confidence);
    }
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (pa, pb) = (a.period.as_secs_f64(), b.period.as_secs_f64());
        if secs == pa {
            return Ok(a.confidence);
        }
        if secs < pb {
            let t = (libm::log(secs) - libm::log(pa)) / (libm::log(pb) - libm::log(pa));
            return Ok(a.confidence + t * (b.confidence - a.confidence));
        }
    }
    Ok(last.confidence)
}

/// Confidence of inferring `parameter` from data sampled every `period`.
pub fn leakage(
    parameter: &PrivacyParameter,
    period: Period,
    cal: &LeakageCalibration,
) -> Result<f64, TradeoffError> {
    leakage_at_secs(parameter, period.as_secs_f64(), cal)
}

/// Leakage multiplier for a noisy release.
pub fn noise_factor(epsilon: Option<f64>) -> f64 {
    match epsilon {
        Some(eps) => (eps / REFERENCE_EPSILON).min(1.0),
        None => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRisk {
    pub parameter: PrivacyParameter,
    pub weight: f64,
    pub flag: u8,
    /// Calibrated leakage at the assessed period, before the noise factor.
    pub leakage: f64,
    pub noise_factor: f64,
}

impl ParameterRisk {
    pub fn contribution(&self) -> f64 {
        self.weight * f64::from(self.flag) * self.leakage * self.noise_factor
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRisk {
    pub item: StreamId,
    /// Σ weight · flag over the parameters inferable from this item.
    pub sensitivity: f64,
    pub parameters: Vec<ParameterRisk>,
}

/// Every factor of one risk computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub items: Vec<ItemRisk>,
    pub trust: f64,
    pub degradation: Degradation,
    pub risk_magnitude: f64,
}

impl RiskAssessment {
    /// The risk magnitude implied by the stored factors.
    pub fn recompute(&self) -> f64 {
        let sum: f64 = self
            .items
            .iter()
            .flat_map(|i| &i.parameters)
            .map(ParameterRisk::contribution)
            .sum();
        (1.0 - self.trust) * sum
    }

    pub fn parameters(&self) -> BTreeSet<&PrivacyParameter> {
        self.items
            .iter()
            .flat_map(|i| i.parameters.iter().map(|p| &p.parameter))
            .collect()
    }
}

/// Composes the risk of releasing `items` at `degradation`, given the
/// parameters inferable from each item.
pub fn risk_magnitude(
    items: &[(StreamId, BTreeSet<PrivacyParameter>)],
    degradation: Degradation,
    consumer: &Consumer,
    policy: &OwnerPolicy,
    context: &ContextState,
    cal: &LeakageCalibration,
) -> Result<RiskAssessment, TradeoffError> {
    let trust = trust(consumer, policy);
    let nf = noise_factor(degradation.noise_epsilon);
    let mut out = Vec::with_capacity(items.len());
    for (item, params) in items {
        let mut parameters = Vec::with_capacity(params.len());
        for p in params {
            let (weight, flag) = weight_and_flag(p, policy, context)?;
            parameters.push(ParameterRisk {
                parameter: p.clone(),
                weight,
                flag,
                leakage: leakage(p, degradation.sample_period, cal)?,
                noise_factor: nf,
            });
        }
        out.push(ItemRisk {
            item: item.clone(),
            sensitivity: sensitivity(params, policy, context)?,
            parameters,
        });
    }
    let mut assessment = RiskAssessment {
        items: out,
        trust,
        degradation,
        risk_magnitude: 0.0,
    };
    assessment.risk_magnitude = assessment.recompute();
    Ok(assessment)
}

/// Declared value scaled by the owner's multiplier for its category.
pub fn benefit_value(offer: &BenefitOffer, policy: &OwnerPolicy) -> Result<f64, TradeoffError> {
    policy
        .benefit_multipliers
        .get(&offer.category)
        .map(|m| offer.declared_value * m)
        .ok_or(TradeoffError::UnknownBenefitCategory(offer.category))
}

/// `U = (1 - w) * b - w * r`, with `r` the non-negative risk magnitude.
pub fn utility(b: f64, r: f64, w: f64) -> f64 {
    (1.0 - w) * b - w * r
}

/// Rules, predicate-to-parameter bindings and leakage curves used to
/// assess a release.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskModel {
    pub rules: RuleSet,
    pub bindings: RiskBinding,
    pub calibration: LeakageCalibration,
    pub max_depth: usize,
}

impl RiskModel {
    /// Standard bindings and the default depth.
    pub fn new(rules: RuleSet, calibration: LeakageCalibration) -> RiskModel {
        RiskModel {
            bindings: RiskBinding::standard(&rules),
            rules,
            calibration,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

/// The fact a release of stream `item` adds to the recipient's knowledge.
pub fn release_fact(item: &StreamId) -> Fact {
    Fact {
        predicate: "isShared".into(),
        args: alloc::vec![Term::string(item.as_str()), Term::string("true")],
    }
}

/// Everything a decision is taken over.
#[derive(Clone, Copy, Debug)]
pub struct DecisionInput<'a> {
    pub query: &'a Query,
    pub consumer: &'a Consumer,
    pub offer: &'a BenefitOffer,
    pub policy: &'a OwnerPolicy,
    pub context: &'a ContextState,
    pub streams: &'a BTreeMap<StreamId, Stream>,
}

impl DecisionInput<'_> {
    fn natives(&self) -> Result<Vec<(&StreamId, Period)>, TradeoffError> {
        self.query
            .items
            .iter()
            .map(|i| {
                self.streams
                    .get(i)
                    .map(|s| (i, s.native_period))
                    .ok_or_else(|| TradeoffError::UnknownStream(i.clone()))
            })
            .collect()
    }

    /// Accuracy the query asks for, with the default period resolved.
    pub fn requested(&self) -> Result<Degradation, TradeoffError> {
        let natives = self.natives()?;
        let coarsest = natives.iter().map(|(_, p)| *p).max().expect("queries are non-empty");
        Ok(Degradation {
            sample_period: self.query.sample_period.unwrap_or(coarsest),
            noise_epsilon: self.query.noise_epsilon,
        })
    }

    fn check_period(&self, period: Period) -> Result<(), TradeoffError> {
        for (item, native) in self.natives()? {
            if period < native || !period.is_multiple_of(native) {
                return Err(TradeoffError::InvalidPeriod {
                    item: item.clone(),
                    period,
                    native,
                });
            }
        }
        Ok(())
    }

    /// Ladder periods strictly coarser than `than` that every item supports.
    pub fn coarser_steps(&self, than: Period) -> Result<Vec<Period>, TradeoffError> {
        let natives = self.natives()?;
        let coarsest = natives.iter().map(|(_, p)| *p).max().expect("queries are non-empty");
        let mut steps: Vec<Period> = core::iter::once(coarsest)
            .chain(LADDER)
            .filter(|p| *p > than && natives.iter().all(|(_, n)| p.is_multiple_of(*n)))
            .collect();
        steps.sort();
        steps.dedup();
        Ok(steps)
    }
}

/// Decides the query at its requested accuracy.
pub fn decide(
    input: &DecisionInput<'_>,
    model: &RiskModel,
    now: Timestamp,
) -> Result<DecisionRecord, TradeoffError> {
    decide_at(input, model, input.requested()?, now)
}

/// Decides the query as if released at `degradation`.
pub fn decide_at(
    input: &DecisionInput<'_>,
    model: &RiskModel,
    degradation: Degradation,
    now: Timestamp,
) -> Result<DecisionRecord, TradeoffError> {
    input.check_period(degradation.sample_period)?;
    let mut per_item = Vec::with_capacity(input.query.items.len());
    let mut explanation: BTreeMap<Fact, Derivation> = BTreeMap::new();
    for item in &input.query.items {
        let release: BTreeSet<Fact> = [release_fact(item)].into_iter().collect();
        let inference = infer_risks(&release, input.context, &model.rules, &model.bindings, model.max_depth);
        for d in inference.derivations() {
            explanation.entry(d.fact.clone()).or_insert(d);
        }
        per_item.push((item.clone(), inference.parameters));
    }
    let assessment = risk_magnitude(
        &per_item,
        degradation,
        input.consumer,
        input.policy,
        input.context,
        &model.calibration,
    )?;
    let b = benefit_value(input.offer, input.policy)?;
    let w = input.policy.tradeoff_bias_w;
    let r = assessment.risk_magnitude;
    let u = utility(b, r, w);
    Ok(DecisionRecord {
        query: input.query.clone(),
        consumer_id: input.consumer.id.clone(),
        benefit_value: b,
        risk_magnitude: r,
        tradeoff_bias_w: w,
        utility: u,
        outcome: Outcome::from_utility(u),
        degradation,
        timestamp: now,
        assessment,
        explanation: explanation.into_values().collect(),
    })
}

/// Result of the counter-offer search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CounterOffer {
    Counter {
        degradation: Degradation,
        record: DecisionRecord,
    },
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MinDegradationError {
    #[error("the query is already answered at the requested accuracy")]
    AlreadyAnswered,
    #[error(transparent)]
    Tradeoff(#[from] TradeoffError),
}

/// The finest ladder step coarser than requested at which the utility is
/// positive, keeping the requested noise level.
pub fn min_degradation(
    input: &DecisionInput<'_>,
    model: &RiskModel,
    now: Timestamp,
) -> Result<CounterOffer, MinDegradationError> {
    let requested = input.requested()?;
    if decide_at(input, model, requested, now)?.outcome == Outcome::Answer {
        return Err(MinDegradationError::AlreadyAnswered);
    }
    for period in input.coarser_steps(requested.sample_period)? {
        let degradation = Degradation {
            sample_period: period,
            noise_epsilon: requested.noise_epsilon,
        };
        let record = decide_at(input, model, degradation, now)?;
        if record.outcome == Outcome::Answer {
            return Ok(CounterOffer::Counter { degradation, record });
        }
    }
    Ok(CounterOffer::Infeasible)
}

/// Names of the parameters contributing a non-zero risk, for summaries.
pub fn contributing_parameters(assessment: &RiskAssessment) -> Vec<String> {
    let set: BTreeSet<String> = assessment
        .items
        .iter()
        .flat_map(|i| &i.parameters)
        .filter(|p| p.contribution() > 0.0)
        .map(|p| String::from(p.parameter.as_str()))
        .collect();
    set.into_iter().collect()
}
