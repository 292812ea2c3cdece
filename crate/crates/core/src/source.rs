//! Monte-Carlo synthesis of cascaded pseudothermal light.
//!
//! Each groundglass stage is a complex baseband field made of `M` equal-weight
//! modes with random phases and frequencies spread over `[−Δω/2, +Δω/2]`.
//! Stage intensities are multiplied to form the cascade, photons are drawn
//! from an inhomogeneous Poisson process driven by the product intensity, and
//! a symmetric three-way splitter assigns each photon to a detector.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::model::{PhotonStream, MAX_EVENTS_PER_SAMPLE, PS_PER_S};

/// Minimum number of modes for near-Gaussian field statistics.
pub const MIN_MODES: usize = 64;

/// Samples between exact re-evaluations of the mode phasors.
const REANCHOR: usize = 2048;

/// The generator used for every random stream in the crate.
pub type SimRng = Xoshiro256StarStar;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for stage `l`: `seed ⊕ fnv1a(l as u64 little-endian)`.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ fnv1a(&(stage as u64).to_le_bytes())
}

/// Seed for a named stream: `seed ⊕ fnv1a(tag)`.
pub fn tagged_seed(seed: u64, tag: &str) -> u64 {
    seed ^ fnv1a(tag.as_bytes())
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Sampled intensity, normalized to unit mean in expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub duration: f64,
}

impl IntensityTrace {
    /// Constant unit intensity (coherent light).
    pub fn constant(duration: f64, dt: f64) -> Self {
        IntensityTrace {
            samples: vec![1.0; sample_count(duration, dt)],
            dt,
            duration,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Empirical `g2(k·dt) = <I(t) I(t+k·dt)> / <I>²` for `k = 0..=max_lag`.
    pub fn g2(&self, max_lag: usize) -> Vec<f64> {
        let m = self.mean();
        let n = self.samples.len();
        (0..=max_lag.min(n.saturating_sub(1)))
            .map(|k| {
                let s: f64 = self.samples[..n - k]
                    .iter()
                    .zip(&self.samples[k..])
                    .map(|(a, b)| a * b)
                    .sum();
                s / (n - k) as f64 / (m * m)
            })
            .collect()
    }

    /// Empirical `<I^order> / <I>^order` at zero delay.
    pub fn moment_ratio(&self, order: i32) -> f64 {
        let m = self.mean();
        let mk = self.samples.iter().map(|x| x.powi(order)).sum::<f64>() / self.samples.len() as f64;
        mk / m.powi(order)
    }
}

/// Number of samples covering `duration` at spacing `dt`.
pub fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize
}

/// One stage's random-frequency field, sampled on a fixed grid `t_i = i·dt`.
///
/// Mode `k` has frequency `−Δω/2 + (k + u_k)·Δω/M` with `u_k` uniform on
/// `[0, 1)`, so the expected power spectrum is exactly flat over the band,
/// and a phase uniform on `[0, 2π)`. The field at a sample depends only on
/// the sample index, so any sub-range can be generated independently.
#[derive(Debug, Clone)]
pub struct StageField {
    bandwidth: f64,
    dt: f64,
    freqs: Vec<f64>,
    phases: Vec<f64>,
    step_re: Vec<f64>,
    step_im: Vec<f64>,
}

impl StageField {
    pub fn new<R: Rng + ?Sized>(bandwidth: f64, dt: f64, modes: usize, rng: &mut R) -> Result<Self> {
        if modes < MIN_MODES {
            return Err(Error::InvalidArgument(format!(
                "modes must be >= {MIN_MODES} (got {modes})"
            )));
        }
        if !(bandwidth > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidArgument(
                "bandwidth and dt must be > 0".into(),
            ));
        }
        let spacing = bandwidth / modes as f64;
        let mut freqs = Vec::with_capacity(modes);
        let mut phases = Vec::with_capacity(modes);
        for k in 0..modes {
            let u: f64 = rng.random();
            freqs.push(-0.5 * bandwidth + (k as f64 + u) * spacing);
            phases.push(TAU * rng.random::<f64>());
        }
        let step_re = freqs.iter().map(|w| (w * dt).cos()).collect();
        let step_im = freqs.iter().map(|w| (w * dt).sin()).collect();
        Ok(StageField {
            bandwidth,
            dt,
            freqs,
            phases,
            step_re,
            step_im,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn modes(&self) -> usize {
        self.freqs.len()
    }

    /// Complex field `(re, im)` at samples `start..start + len`, scaled by
    /// `1/√M` so that `<|E|²> = 1`.
    pub fn field(&self, start: u64, len: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; len];
        let mut im = vec![0.0; len];
        self.fill(start, &mut re, &mut im);
        (re, im)
    }

    /// Intensity `|E|²` at samples `start..start + out.len()`.
    pub fn intensity_into(&self, start: u64, out: &mut [f64]) {
        let mut im = vec![0.0; out.len()];
        self.fill(start, out, &mut im);
        for (r, i) in out.iter_mut().zip(&im) {
            *r = *r * *r + i * i;
        }
    }

    fn fill(&self, start: u64, re_out: &mut [f64], im_out: &mut [f64]) {
        let m = self.freqs.len();
        let scale = 1.0 / (m as f64).sqrt();
        let mut zr = vec![0.0; m];
        let mut zi = vec![0.0; m];
        let mut offset = 0usize;
        while offset < re_out.len() {
            let t0 = (start + offset as u64) as f64 * self.dt;
            for k in 0..m {
                let (s, c) = (self.freqs[k] * t0 + self.phases[k]).sin_cos();
                zr[k] = c;
                zi[k] = s;
            }
            let end = (offset + REANCHOR).min(re_out.len());
            for i in offset..end {
                let (sr, si) = advance(&mut zr, &mut zi, &self.step_re, &self.step_im);
                re_out[i] = sr * scale;
                im_out[i] = si * scale;
            }
            offset = end;
        }
    }
}

/// Sums the phasors, then rotates each by one step. Four independent
/// accumulators keep the loop vectorizable.
#[inline]
fn advance(zr: &mut [f64], zi: &mut [f64], wr: &[f64], wi: &[f64]) -> (f64, f64) {
    let mut ar = [0.0f64; 4];
    let mut ai = [0.0f64; 4];
    let chunks = zr.len() / 4 * 4;
    for base in (0..chunks).step_by(4) {
        for l in 0..4 {
            let k = base + l;
            let (r, i) = (zr[k], zi[k]);
            ar[l] += r;
            ai[l] += i;
            zr[k] = r * wr[k] - i * wi[k];
            zi[k] = r * wi[k] + i * wr[k];
        }
    }
    let mut sr = ar[0] + ar[1] + ar[2] + ar[3];
    let mut si = ai[0] + ai[1] + ai[2] + ai[3];
    for k in chunks..zr.len() {
        let (r, i) = (zr[k], zi[k]);
        sr += r;
        si += i;
        zr[k] = r * wr[k] - i * wi[k];
        zi[k] = r * wi[k] + i * wr[k];
    }
    (sr, si)
}

/// Intensity trace of one pseudothermal stage over `[0, duration)`.
pub fn synthesize_stage_field<R: Rng + ?Sized>(
    bandwidth: f64,
    duration: f64,
    dt: f64,
    modes: usize,
    rng: &mut R,
) -> Result<IntensityTrace> {
    let field = StageField::new(bandwidth, dt, modes, rng)?;
    let mut samples = vec![0.0; sample_count(duration, dt)];
    field.intensity_into(0, &mut samples);
    Ok(IntensityTrace {
        samples,
        dt,
        duration,
    })
}

/// Pointwise product of independent stage intensities.
pub fn cascade(traces: &[IntensityTrace]) -> Result<IntensityTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("cascade of zero traces".into()))?;
    for t in &traces[1..] {
        if t.dt != first.dt || t.duration != first.duration || t.samples.len() != first.samples.len() {
            return Err(Error::InvalidArgument(
                "cascade traces must share dt and duration".into(),
            ));
        }
    }
    let mut out = first.clone();
    for t in &traces[1..] {
        for (o, s) in out.samples.iter_mut().zip(&t.samples) {
            *o *= s;
        }
    }
    Ok(out)
}

fn check_rate(mean_rate: f64, dt: f64) -> Result<()> {
    if !(mean_rate >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mean rate must be >= 0 (got {mean_rate})"
        )));
    }
    let per_sample = mean_rate * dt;
    if per_sample > MAX_EVENTS_PER_SAMPLE {
        return Err(Error::InvalidArgument(format!(
            "rate too high for dt: {per_sample:.3} expected events per sample at mean intensity \
             (max {MAX_EVENTS_PER_SAMPLE}); shrink dt to at most {:e} s",
            MAX_EVENTS_PER_SAMPLE / mean_rate
        )));
    }
    Ok(())
}

/// Appends Poisson arrival times (ps, not yet de-duplicated) for intensity
/// samples whose first sample sits at index `start`.
///
/// Uses time rescaling: arrivals occur where the integrated rate crosses
/// successive unit-exponential thresholds. Within a sample the rate is
/// constant, so arrival positions are uniform inside the sample interval and
/// any number of arrivals per sample is allowed.
pub(crate) fn poisson_arrivals<R: Rng + ?Sized>(
    samples: &[f64],
    start: u64,
    dt: f64,
    mean_rate: f64,
    rng: &mut R,
    out: &mut Vec<u64>,
) {
    let scale = mean_rate * dt;
    let mut need = exp1(rng);
    for (i, &intensity) in samples.iter().enumerate() {
        let weight = scale * intensity;
        if !(weight > 0.0) {
            continue;
        }
        let mut used = 0.0;
        while used + need <= weight {
            used += need;
            let t = ((start + i as u64) as f64 + used / weight) * dt;
            out.push((t * PS_PER_S).floor() as u64);
            need = exp1(rng);
        }
        need -= weight - used;
    }
}

/// Forces strict ascent (a tie moves up by 1 ps) and drops anything at or
/// beyond `limit_ps`.
pub(crate) fn make_strictly_ascending(ts: &mut Vec<u64>, limit_ps: u64) {
    let mut prev: Option<u64> = None;
    ts.retain_mut(|t| {
        if let Some(p) = prev {
            if *t <= p {
                *t = p + 1;
            }
        }
        if *t >= limit_ps {
            return false;
        }
        prev = Some(*t);
        true
    });
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln()
}

/// Photon detections driven by `trace` at average rate `mean_rate`
/// (counts/s at unit intensity), on channel 0 (before splitting).
pub fn sample_photons<R: Rng + ?Sized>(
    trace: &IntensityTrace,
    mean_rate: f64,
    rng: &mut R,
) -> Result<PhotonStream> {
    check_rate(mean_rate, trace.dt)?;
    let mut ts = Vec::new();
    poisson_arrivals(&trace.samples, 0, trace.dt, mean_rate, rng, &mut ts);
    make_strictly_ascending(&mut ts, (trace.duration * PS_PER_S).round() as u64);
    Ok(PhotonStream::from_sorted_unchecked(0, ts))
}

/// 1:1:1 splitter: each event goes to channel 1, 2 or 3 with probability 1/3.
pub fn split_three<R: Rng + ?Sized>(
    stream: &PhotonStream,
    rng: &mut R,
) -> (PhotonStream, PhotonStream, PhotonStream) {
    let mut out: [Vec<u64>; 3] = Default::default();
    for &t in stream.timestamps() {
        let ch: usize = rng.random_range(0..3);
        out[ch].push(t);
    }
    let [a, b, c] = out;
    (
        PhotonStream::from_sorted_unchecked(1, a),
        PhotonStream::from_sorted_unchecked(2, b),
        PhotonStream::from_sorted_unchecked(3, c),
    )
}
