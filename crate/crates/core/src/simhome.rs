//! Synthetic smart-home meter traces and a naive step-change appliance
//! detector, used to check empirically that coarser sampling leaks less.

use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Reading, Timestamp};
use crate::noise::seeded_rng;
use crate::period::Period;

/// Half-open interval `[start, end)` in seconds from the trace start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
}

impl Interval {
    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn overlap(&self, other: &Interval) -> u64 {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

/// Periodic on/off pattern inside the scheduled intervals, e.g. a
/// refrigerator compressor. Phase is measured from the trace start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyCycle {
    pub on_secs: u64,
    pub off_secs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSignature {
    pub name: String,
    pub power_kw: f64,
    pub schedule: Vec<Interval>,
    #[serde(default)]
    pub duty_cycle: Option<DutyCycle>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SignatureError {
    #[error("{0}: power must be a non-negative number")]
    NegativePower(String),
    #[error("{0}: schedule intervals must be non-empty, ordered and disjoint")]
    BadSchedule(String),
    #[error("{0}: duty cycle needs a positive on time")]
    BadDutyCycle(String),
}

impl ApplianceSignature {
    pub fn validate(&self) -> Result<(), SignatureError> {
        if !(self.power_kw >= 0.0 && self.power_kw.is_finite()) {
            return Err(SignatureError::NegativePower(self.name.clone()));
        }
        if self.schedule.iter().any(Interval::is_empty)
            || self.schedule.windows(2).any(|w| w[1].start < w[0].end)
        {
            return Err(SignatureError::BadSchedule(self.name.clone()));
        }
        if self.duty_cycle.is_some_and(|d| d.on_secs == 0) {
            return Err(SignatureError::BadDutyCycle(self.name.clone()));
        }
        Ok(())
    }

    pub fn is_on(&self, t: u64) -> bool {
        self.schedule.iter().any(|i| i.start <= t && t < i.end)
            && self
                .duty_cycle
                .is_none_or(|d| t % (d.on_secs + d.off_secs) < d.on_secs)
    }

    /// Exact on-intervals within `[0, duration)`.
    pub fn on_intervals(&self, duration: u64) -> Vec<Interval> {
        let mut out = Vec::new();
        for iv in &self.schedule {
            let end = iv.end.min(duration);
            if iv.start >= end {
                continue;
            }
            match self.duty_cycle {
                None => out.push(Interval { start: iv.start, end }),
                Some(d) => {
                    let cycle = d.on_secs + d.off_secs;
                    let mut k = iv.start / cycle;
                    while k * cycle < end {
                        let on = Interval {
                            start: (k * cycle).max(iv.start),
                            end: (k * cycle + d.on_secs).min(end),
                        };
                        if !on.is_empty() {
                            push_merged(&mut out, on);
                        }
                        k += 1;
                    }
                }
            }
        }
        out
    }
}

fn push_merged(out: &mut Vec<Interval>, iv: Interval) {
    match out.last_mut() {
        Some(last) if last.end >= iv.start => last.end = last.end.max(iv.end),
        _ => out.push(iv),
    }
}

/// A household: its appliances and how its trace is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomeFixture {
    pub name: String,
    pub start: Timestamp,
    pub duration: Period,
    pub period: Period,
    pub seed: u64,
    /// Jitter standard deviation as a fraction of the mean draw.
    pub jitter: f64,
    pub appliances: Vec<ApplianceSignature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub name: String,
    pub intervals: Vec<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub readings: Vec<Reading>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Jitter: standard deviation as a fraction of the mean draw, and a seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub fraction: f64,
    pub seed: u64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter { fraction: 0.0, seed: 0 };
}

/// Samples aggregate consumption (kW) every `period` over `duration`.
pub fn generate_trace(
    signatures: &[ApplianceSignature],
    start: Timestamp,
    duration: Period,
    period: Period,
    jitter: Jitter,
) -> Trace {
    let total = duration.as_secs();
    let step = period.as_secs();
    let clean: Vec<f64> = (0..total)
        .step_by(step as usize)
        .map(|t| {
            signatures
                .iter()
                .filter(|s| s.is_on(t))
                .map(|s| s.power_kw)
                .sum()
        })
        .collect();
    let mean = if clean.is_empty() {
        0.0
    } else {
        clean.iter().sum::<f64>() / clean.len() as f64
    };
    let sigma = jitter.fraction * mean;
    let mut rng = seeded_rng(jitter.seed);
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let readings = clean
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let noise = normal.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            Reading::numeric(start + chrono::TimeDelta::seconds((k as u64 * step) as i64), v + noise)
        })
        .collect();
    let ground_truth = signatures
        .iter()
        .map(|s| GroundTruth {
            name: s.name.clone(),
            intervals: s.on_intervals(total),
        })
        .collect();
    Trace {
        readings,
        ground_truth,
    }
}

impl HomeFixture {
    pub fn trace(&self, seed: u64) -> Trace {
        generate_trace(
            &self.appliances,
            self.start,
            self.duration,
            self.period,
            Jitter {
                fraction: self.jitter,
                seed,
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub name: String,
    pub intervals: Vec<Interval>,
    /// Fraction of the true on-time covered by `intervals`.
    pub confidence: f64,
}

/// Relative tolerance when matching a step to an appliance's draw.
pub const STEP_TOLERANCE: f64 = 0.10;

/// Matches consecutive-sample deltas against each signature's draw and
/// pairs on-edges with the following off-edge.
///
/// Times in the result are seconds from `start`; an on-edge with no
/// matching off-edge runs to the end of the trace.
pub fn naive_detect(
    readings: &[Reading],
    start: Timestamp,
    signatures: &[ApplianceSignature],
    truth: &[GroundTruth],
) -> Vec<Detection> {
    let values: Vec<(u64, f64)> = readings
        .iter()
        .filter_map(|r| {
            let t = (r.timestamp - start).num_seconds();
            r.value.as_f64().map(|v| (t.max(0) as u64, v))
        })
        .collect();
    let trace_end = match (values.first(), values.last()) {
        (Some(_), Some((t, _))) if values.len() > 1 => *t + (values[1].0 - values[0].0),
        (Some((t, _)), _) => *t,
        _ => 0,
    };
    if values.len() < 2 {
        return Vec::new();
    }
    signatures
        .iter()
        .map(|sig| {
            let lo = sig.power_kw * (1.0 - STEP_TOLERANCE);
            let hi = sig.power_kw * (1.0 + STEP_TOLERANCE);
            let mut intervals = Vec::new();
            let mut open: Option<u64> = None;
            for w in values.windows(2) {
                let delta = w[1].1 - w[0].1;
                let t = w[1].0;
                if (lo..=hi).contains(&delta) {
                    open.get_or_insert(t);
                } else if (lo..=hi).contains(&-delta) {
                    if let Some(s) = open.take() {
                        intervals.push(Interval { start: s, end: t });
                    }
                }
            }
            if let Some(s) = open {
                intervals.push(Interval { start: s, end: trace_end });
            }
            let truth = truth
                .iter()
                .find(|g| g.name == sig.name)
                .map(|g| g.intervals.as_slice())
                .unwrap_or(&[]);
            Detection {
                name: sig.name.clone(),
                confidence: recall(&intervals, truth),
                intervals,
            }
        })
        .collect()
}

/// Share of the true on-time covered by `detected`; 0 when nothing was on.
pub fn recall(detected: &[Interval], truth: &[Interval]) -> f64 {
    let on: u64 = truth.iter().map(Interval::len).sum();
    if on == 0 {
        return 0.0;
    }
    let hit: u64 = truth
        .iter()
        .map(|t| detected.iter().map(|d| d.overlap(t)).sum::<u64>().min(t.len()))
        .sum();
    hit as f64 / on as f64
}
