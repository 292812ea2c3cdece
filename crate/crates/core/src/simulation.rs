//! End-to-end source simulation: stage fields → cascade → photons → split.
//!
//! The record is cut into fixed-length segments of intensity samples. Each
//! segment is synthesized and photon-sampled with its own RNG stream, so the
//! output does not depend on how segments are scheduled across threads.
//!
//! Random streams (xoshiro256**, seeded through SplitMix64):
//! - stage `l` modes: `seed ⊕ fnv1a(l as u64 LE)`
//! - photons in segment `j`: `seed ⊕ fnv1a("photons:{j}")`
//! - splitter: `seed ⊕ fnv1a("split")`

use crate::error::{Error, Result};
use crate::model::{PhotonStream, SourceConfig};
use crate::parallel::{map_indexed, Execution};
use crate::source::{
    make_strictly_ascending, poisson_arrivals, rng_from_seed, sample_count, split_three,
    stage_seed, tagged_seed, StageField,
};

/// Intensity samples per independently generated segment.
pub const SEGMENT_SAMPLES: usize = 1 << 16;

/// Three detector streams produced by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub streams: [PhotonStream; 3],
    pub duration_ps: u64,
}

/// Runs the full source model for a validated configuration.
pub fn simulate(config: &SourceConfig, exec: Execution) -> Result<Detection> {
    let config = config.clone().validate().map_err(Error::Config)?;
    let stages: Vec<StageField> = config
        .bandwidths
        .iter()
        .enumerate()
        .map(|(l, &bw)| {
            let mut rng = rng_from_seed(stage_seed(config.seed, l));
            StageField::new(bw, config.sample_dt, config.modes_per_stage, &mut rng)
        })
        .collect::<Result<_>>()?;

    let total = sample_count(config.duration, config.sample_dt);
    let n_segments = total.div_ceil(SEGMENT_SAMPLES);
    let rate = 3.0 * config.mean_rate_per_detector;

    let segments = map_indexed(exec, n_segments, |j| {
        let start = j * SEGMENT_SAMPLES;
        let len = SEGMENT_SAMPLES.min(total - start);
        let mut intensity = vec![1.0; len];
        let mut buf = vec![0.0; len];
        for stage in &stages {
            stage.intensity_into(start as u64, &mut buf);
            for (i, b) in intensity.iter_mut().zip(&buf) {
                *i *= b;
            }
        }
        let mut rng = rng_from_seed(tagged_seed(config.seed, &format!("photons:{j}")));
        let mut events = Vec::new();
        poisson_arrivals(&intensity, start as u64, config.sample_dt, rate, &mut rng, &mut events);
        events
    });

    let mut all: Vec<u64> = segments.into_iter().flatten().collect();
    let duration_ps = config.duration_ps();
    make_strictly_ascending(&mut all, duration_ps);
    let merged = PhotonStream::new(0, all)?;
    let mut rng = rng_from_seed(tagged_seed(config.seed, "split"));
    let (a, b, c) = split_three(&merged, &mut rng);
    Ok(Detection {
        streams: [a, b, c],
        duration_ps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{coherence_time, hz_to_angular};

    fn small(n_stages: usize, seed: u64) -> SourceConfig {
        let bw = hz_to_angular(5_000.0);
        let tc = coherence_time(bw);
        SourceConfig {
            n_stages,
            bandwidths: vec![bw; n_stages],
            mean_rate_per_detector: 10_000.0,
            duration: 300.0 * tc,
            modes_per_stage: 64,
            sample_dt: tc / 64.0,
            seed,
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let c = small(2, 42);
        let a = simulate(&c, Execution::Sequential).unwrap();
        let b = crate::parallel::with_threads(3, || simulate(&c, Execution::Parallel).unwrap());
        assert_eq!(a, b);
        let other = simulate(&small(2, 43), Execution::Sequential).unwrap();
        assert_ne!(a.streams[0], other.streams[0]);
    }

    #[test]
    fn split_statistics() {
        let c = small(0, 5);
        let d = simulate(&c, Execution::Sequential).unwrap();
        let expect = c.mean_rate_per_detector * c.duration;
        for (i, s) in d.streams.iter().enumerate() {
            assert_eq!(s.channel() as usize, i + 1);
            assert!((s.len() as f64 - expect).abs() < 3.0 * expect.sqrt(), "{}", s.len());
            s.check_within(d.duration_ps).unwrap();
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = small(2, 1);
        c.bandwidths.pop();
        assert!(matches!(simulate(&c, Execution::Sequential), Err(Error::Config(_))));
    }
}
