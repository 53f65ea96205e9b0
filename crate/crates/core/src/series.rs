//! Released time series and accuracy reduction by downsampling.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{Reading, Stream, StreamId, Timestamp, Value};
use crate::period::Period;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub sample_period: Period,
    #[serde(default)]
    pub noise_epsilon: Option<f64>,
    #[serde(default)]
    pub generalization_level: Option<u32>,
}

impl Accuracy {
    pub fn native(sample_period: Period) -> Accuracy {
        Accuracy {
            sample_period,
            noise_epsilon: None,
            generalization_level: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub stream_id: StreamId,
    pub readings: Vec<Reading>,
    pub accuracy: Accuracy,
}

impl ResultSet {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().filter_map(|r| r.value.as_f64())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SeriesError {
    #[error("invalid period {target}: must be a multiple of {current} and at least as coarse")]
    InvalidPeriod { target: Period, current: Period },
    #[error("invalid range: start is after end")]
    InvalidRange,
    #[error("unknown stream: {0}")]
    UnknownStream(String),
}

/// Anything that can serve raw readings for a half-open time range.
pub trait ReadingSource {
    type Error;

    fn stream(&self, id: &StreamId) -> Option<Stream>;

    /// Readings with `start <= t < end`, at native accuracy.
    fn range(&self, id: &StreamId, start: Timestamp, end: Timestamp) -> Result<ResultSet, Self::Error>;
}

/// Half-open range filter over timestamp-ordered readings.
pub fn slice_range(readings: &[Reading], start: Timestamp, end: Timestamp) -> &[Reading] {
    let lo = readings.partition_point(|r| r.timestamp < start);
    let hi = readings.partition_point(|r| r.timestamp < end);
    if lo >= hi {
        &[]
    } else {
        &readings[lo..hi]
    }
}

/// Buckets readings into windows of `target` aligned on the first timestamp.
///
/// Each non-empty bucket becomes one reading at the bucket start: the mean of
/// its numeric values, or for categorical values the most frequent label
/// (ties go to the label seen first). A trailing partial bucket is kept.
pub fn downsample(result: &ResultSet, target: Period) -> Result<ResultSet, SeriesError> {
    let current = result.accuracy.sample_period;
    if target < current || !target.is_multiple_of(current) {
        return Err(SeriesError::InvalidPeriod { target, current });
    }
    if target == current {
        return Ok(result.clone());
    }
    let mut out = Vec::new();
    if let Some(first) = result.readings.first() {
        let origin = first.timestamp;
        let width = target.as_secs() as i64;
        let mut i = 0;
        let rs = &result.readings;
        while i < rs.len() {
            let bucket = (rs[i].timestamp - origin).num_seconds().div_euclid(width);
            let start = origin + chrono::TimeDelta::seconds(bucket * width);
            let mut j = i;
            while j < rs.len() && (rs[j].timestamp - origin).num_seconds().div_euclid(width) == bucket {
                j += 1;
            }
            out.push(Reading {
                timestamp: start,
                value: aggregate(&rs[i..j]),
            });
            i = j;
        }
    }
    Ok(ResultSet {
        stream_id: result.stream_id.clone(),
        readings: out,
        accuracy: Accuracy {
            sample_period: target,
            ..result.accuracy
        },
    })
}

fn aggregate(bucket: &[Reading]) -> Value {
    let numeric: Vec<f64> = bucket.iter().filter_map(|r| r.value.as_f64()).collect();
    if numeric.len() == bucket.len() {
        return Value::Numeric(numeric.iter().sum::<f64>() / numeric.len() as f64);
    }
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for r in bucket {
        if let Value::Category(label) = &r.value {
            match counts.iter_mut().find(|(l, _)| *l == label.as_str()) {
                Some((_, n)) => *n += 1,
                None => counts.push((label, 1)),
            }
        }
    }
    // Insertion order is first appearance; the first maximum wins ties.
    let mut best = counts[0];
    for c in &counts[1..] {
        if c.1 > best.1 {
            best = *c;
        }
    }
    Value::Category(best.0.into())
}
