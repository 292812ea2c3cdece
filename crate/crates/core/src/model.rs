//! Shared domain types: the source description, detection-time tuples,
//! per-channel photon streams and slice directions.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Coherence time `2π/Δω` of a flat spectrum of angular width `bandwidth`.
pub fn coherence_time(bandwidth: f64) -> f64 {
    2.0 * PI / bandwidth
}

/// Converts an ordinary frequency in Hz to angular frequency in rad/s.
pub fn hz_to_angular(hz: f64) -> f64 {
    2.0 * PI * hz
}

/// Full description of one simulated experiment.
///
/// `n_stages == 0` describes unscattered laser light: every coherence
/// function is identically 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Number of cascaded rotating-groundglass stages.
    pub n_stages: usize,
    /// Angular bandwidth of each stage, rad/s.
    pub bandwidths: Vec<f64>,
    /// Mean detected rate at each of the three detectors, counts/s.
    pub mean_rate_per_detector: f64,
    /// Simulated acquisition time, s.
    pub duration: f64,
    /// Number of random-frequency modes per stage field.
    pub modes_per_stage: usize,
    /// Intensity sampling interval, s.
    pub sample_dt: f64,
    pub seed: u64,
}

/// A single violated [`SourceConfig`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    BandwidthCountMismatch { n_stages: usize, given: usize },
    NonPositiveBandwidth { stage: usize, value: f64 },
    NonPositiveRate(f64),
    NonPositiveDuration(f64),
    NonPositiveSampleDt(f64),
    TooFewModes(usize),
    UndersampledField { sample_dt: f64, limit: f64 },
    DurationTooShort { duration: f64, minimum: f64 },
    RateTooHighForDt { per_sample: f64 },
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BandwidthCountMismatch { n_stages, given } => write!(
                f,
                "bandwidth count mismatch: n_stages = {n_stages} but {given} bandwidths given"
            ),
            Self::NonPositiveBandwidth { stage, value } => {
                write!(f, "bandwidth of stage {stage} must be > 0 (got {value})")
            }
            Self::NonPositiveRate(r) => write!(f, "mean_rate_per_detector must be > 0 (got {r})"),
            Self::NonPositiveDuration(d) => write!(f, "duration must be > 0 (got {d})"),
            Self::NonPositiveSampleDt(dt) => write!(f, "sample_dt must be > 0 (got {dt})"),
            Self::TooFewModes(m) => write!(
                f,
                "modes_per_stage must be >= {} (got {m})",
                crate::source::MIN_MODES
            ),
            Self::UndersampledField { sample_dt, limit } => write!(
                f,
                "undersampled field: sample_dt {sample_dt:e} s exceeds 0.1 coherence time ({limit:e} s)"
            ),
            Self::DurationTooShort { duration, minimum } => write!(
                f,
                "duration too short: {duration} s < 100 coherence times ({minimum} s)"
            ),
            Self::RateTooHighForDt { per_sample } => write!(
                f,
                "rate too high for sample_dt: {per_sample:.3} expected events per sample (max 0.1); shrink sample_dt"
            ),
        }
    }
}

/// Upper bound on the total (pre-split) expected count per intensity sample.
pub const MAX_EVENTS_PER_SAMPLE: f64 = 0.1;

impl SourceConfig {
    /// Two-stage configuration with the default 5 kHz stage bandwidths.
    pub fn default_two_stage() -> Self {
        let bw = hz_to_angular(5_000.0);
        let tc = coherence_time(bw);
        SourceConfig {
            n_stages: 2,
            bandwidths: vec![bw, bw],
            mean_rate_per_detector: 5_000.0,
            duration: 2_000.0 * tc,
            modes_per_stage: 256,
            sample_dt: tc / 32.0,
            seed: 1,
        }
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(self) -> std::result::Result<Self, Vec<ConfigViolation>> {
        let mut errs = Vec::new();
        if self.bandwidths.len() != self.n_stages {
            errs.push(ConfigViolation::BandwidthCountMismatch {
                n_stages: self.n_stages,
                given: self.bandwidths.len(),
            });
        }
        for (stage, &value) in self.bandwidths.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                errs.push(ConfigViolation::NonPositiveBandwidth { stage, value });
            }
        }
        if !(self.mean_rate_per_detector > 0.0 && self.mean_rate_per_detector.is_finite()) {
            errs.push(ConfigViolation::NonPositiveRate(self.mean_rate_per_detector));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            errs.push(ConfigViolation::NonPositiveDuration(self.duration));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            errs.push(ConfigViolation::NonPositiveSampleDt(self.sample_dt));
        }
        if self.n_stages > 0 && self.modes_per_stage < crate::source::MIN_MODES {
            errs.push(ConfigViolation::TooFewModes(self.modes_per_stage));
        }
        let positive: Vec<f64> = self.bandwidths.iter().copied().filter(|b| *b > 0.0).collect();
        if !positive.is_empty() {
            let max_bw = positive.iter().copied().fold(f64::MIN, f64::max);
            let min_bw = positive.iter().copied().fold(f64::MAX, f64::min);
            let limit = 0.1 * coherence_time(max_bw);
            if self.sample_dt > limit {
                errs.push(ConfigViolation::UndersampledField {
                    sample_dt: self.sample_dt,
                    limit,
                });
            }
            let minimum = 100.0 * coherence_time(min_bw);
            if self.duration < minimum {
                errs.push(ConfigViolation::DurationTooShort {
                    duration: self.duration,
                    minimum,
                });
            }
        }
        let per_sample = 3.0 * self.mean_rate_per_detector * self.sample_dt;
        if per_sample > MAX_EVENTS_PER_SAMPLE {
            errs.push(ConfigViolation::RateTooHighForDt { per_sample });
        }
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(errs)
        }
    }

    /// Longest stage coherence time, or `None` for coherent light.
    pub fn longest_coherence_time(&self) -> Option<f64> {
        self.bandwidths
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b))))
            .map(coherence_time)
    }

    /// Duration in whole picoseconds.
    pub fn duration_ps(&self) -> u64 {
        (self.duration * PS_PER_S).round() as u64
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Detection times at D1, D2, D3 in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeTuple {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl TimeTuple {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Self {
        TimeTuple { t1, t2, t3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.t1, self.t2, self.t3]
    }
}

/// Sorted detection timestamps (integer picoseconds) for one detector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhotonStream {
    channel: u8,
    timestamps: Vec<u64>,
}

impl PhotonStream {
    /// Builds a stream, rejecting anything not strictly ascending.
    pub fn new(channel: u8, timestamps: Vec<u64>) -> Result<Self> {
        if let Some(i) = first_unsorted(&timestamps) {
            return Err(Error::Unsorted {
                channel,
                index: i,
            });
        }
        Ok(PhotonStream {
            channel,
            timestamps,
        })
    }

    pub(crate) fn from_sorted_unchecked(channel: u8, timestamps: Vec<u64>) -> Self {
        debug_assert!(first_unsorted(&timestamps).is_none());
        PhotonStream {
            channel,
            timestamps,
        }
    }

    pub fn empty(channel: u8) -> Self {
        PhotonStream {
            channel,
            timestamps: Vec::new(),
        }
    }

    pub fn channel(&self) -> u8 {
        self.channel
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn into_timestamps(self) -> Vec<u64> {
        self.timestamps
    }

    /// Checks that every timestamp lies below `duration_ps`.
    pub fn check_within(&self, duration_ps: u64) -> Result<()> {
        match self.timestamps.last() {
            Some(&last) if last >= duration_ps => Err(Error::Format(format!(
                "channel {}: timestamp {last} ps beyond duration {duration_ps} ps",
                self.channel
            ))),
            _ => Ok(()),
        }
    }

    /// Merges several streams into one ascending stream on `channel`.
    ///
    /// Fails if any timestamp occurs in more than one input.
    pub fn merge(channel: u8, streams: &[&PhotonStream]) -> Result<Self> {
        let mut all: Vec<u64> = streams
            .iter()
            .flat_map(|s| s.timestamps.iter().copied())
            .collect();
        all.sort_unstable();
        PhotonStream::new(channel, all)
    }
}

fn first_unsorted(ts: &[u64]) -> Option<usize> {
    ts.windows(2).position(|w| w[0] >= w[1]).map(|i| i + 1)
}

/// Direction of a one-dimensional cut through the (t1−t2, t2−t3) plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceDirection {
    /// t1 = t3: the anti-diagonal t1−t2 = −(t2−t3).
    T1EqT3,
    /// t1−t2 = t2−t3: the main diagonal.
    T1t2EqT2t3,
    /// t1 = t2: the vertical line t1−t2 = 0.
    T1EqT2,
}

impl SliceDirection {
    pub const ALL: [SliceDirection; 3] = [
        SliceDirection::T1EqT3,
        SliceDirection::T1t2EqT2t3,
        SliceDirection::T1EqT2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SliceDirection::T1EqT3 => "t1_eq_t3",
            SliceDirection::T1t2EqT2t3 => "t1t2_eq_t2t3",
            SliceDirection::T1EqT2 => "t1_eq_t2",
        }
    }

    /// Grid step `(d12, d23)` per unit of slice position.
    pub fn step(self) -> (i64, i64) {
        match self {
            SliceDirection::T1EqT3 => (1, -1),
            SliceDirection::T1t2EqT2t3 => (1, 1),
            SliceDirection::T1EqT2 => (0, 1),
        }
    }
}

impl std::str::FromStr for SliceDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SliceDirection::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown slice direction '{s}'")))
    }
}

/// A slice direction together with its path-length scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub direction: SliceDirection,
    pub alpha: f64,
}

impl SliceSpec {
    pub fn new(direction: SliceDirection) -> Self {
        let alpha = match direction {
            SliceDirection::T1EqT3 | SliceDirection::T1t2EqT2t3 => SQRT_2,
            SliceDirection::T1EqT2 => 1.0,
        };
        SliceSpec { direction, alpha }
    }
}
