//! Three-fold coincidence counting over the (t1−t2, t2−t3) delay plane.
//!
//! Bins are half-open, `[(k − ½)Δ, (k + ½)Δ)`, so the centre bin straddles
//! zero. Only triples with `|t1 − t2| ≤ max_delay` and `|t2 − t3| ≤ max_delay`
//! are counted; the outermost bins are therefore narrower than `Δ`, and
//! [`normalize`] accounts for that through [`BinGeometry::width`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fitting::ProfilePoint;
use crate::model::{PhotonStream, SliceSpec, PS_PER_S};
use crate::parallel::{map_indexed, Execution};

/// Square, odd-sided delay grid centred on zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinGeometry {
    pub bin_width: u64,
    pub max_delay: u64,
}

impl BinGeometry {
    pub fn new(bin_width: u64, max_delay: u64) -> Result<Self> {
        if bin_width == 0 {
            return Err(Error::InvalidArgument("bin width must be > 0".into()));
        }
        if max_delay % bin_width != 0 {
            return Err(Error::InvalidArgument(format!(
                "max delay {max_delay} ps is not a multiple of bin width {bin_width} ps"
            )));
        }
        if max_delay > i64::MAX as u64 / 4 {
            return Err(Error::InvalidArgument("max delay too large".into()));
        }
        Ok(BinGeometry {
            bin_width,
            max_delay,
        })
    }

    /// Number of bins on each side of the centre.
    pub fn half_bins(&self) -> usize {
        (self.max_delay / self.bin_width) as usize
    }

    /// Grid side length (always odd).
    pub fn side(&self) -> usize {
        2 * self.half_bins() + 1
    }

    /// Bin offset (centre = 0) holding delay `d`, ignoring the window limit.
    #[inline]
    pub fn offset_of(&self, d: i64) -> i64 {
        let w = self.bin_width as i64;
        (2 * d + w).div_euclid(2 * w)
    }

    /// Grid index holding delay `d`; `d` must satisfy `|d| <= max_delay`.
    #[inline]
    pub fn index_of(&self, d: i64) -> usize {
        (self.offset_of(d) + self.half_bins() as i64) as usize
    }

    /// Delay (ps) at the centre of grid index `i`.
    pub fn center(&self, i: usize) -> i64 {
        (i as i64 - self.half_bins() as i64) * self.bin_width as i64
    }

    /// Number of integer-picosecond delays that fall in grid index `i`.
    pub fn width(&self, i: usize) -> u64 {
        let w = self.bin_width as i64;
        let j = i as i64 - self.half_bins() as i64;
        let m = self.max_delay as i64;
        let lo = ceil_half((2 * j - 1) * w).max(-m);
        let hi = ceil_half((2 * j + 1) * w).min(m + 1);
        (hi - lo).max(0) as u64
    }
}

fn ceil_half(x: i64) -> i64 {
    -((-x).div_euclid(2))
}

/// Raw three-fold coincidence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceHistogram {
    pub geometry: BinGeometry,
    /// Row-major: index `i12 * side + i23`.
    pub counts: Vec<u64>,
    /// Events per channel (D1, D2, D3).
    pub totals: [u64; 3],
    pub duration_ps: u64,
}

impl CoincidenceHistogram {
    fn empty(geometry: BinGeometry, streams: [&PhotonStream; 3]) -> Self {
        let side = geometry.side();
        let duration_ps = streams
            .iter()
            .filter_map(|s| s.timestamps().last())
            .max()
            .map_or(0, |t| t + 1);
        CoincidenceHistogram {
            geometry,
            counts: vec![0; side * side],
            totals: streams.map(|s| s.len() as u64),
            duration_ps,
        }
    }

    /// Overrides the acquisition time used for normalization.
    pub fn with_duration(mut self, duration_ps: u64) -> Self {
        self.duration_ps = duration_ps;
        self
    }

    pub fn count(&self, i12: usize, i23: usize) -> u64 {
        self.counts[i12 * self.geometry.side() + i23]
    }

    pub fn total_triples(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another histogram with the same geometry.
    pub fn accumulate(&mut self, other: &CoincidenceHistogram) {
        assert_eq!(self.geometry, other.geometry);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

fn check_sorted(stream: &PhotonStream) -> Result<()> {
    let ts = stream.timestamps();
    match ts.windows(2).position(|w| w[0] >= w[1]) {
        Some(i) => Err(Error::Unsorted {
            channel: stream.channel(),
            index: i + 1,
        }),
        None => Ok(()),
    }
}

/// Counts every triple `(a ∈ s1, b ∈ s2, c ∈ s3)` inside the delay window,
/// binned by `(a − b, b − c)`.
pub fn count_triples(
    s1: &PhotonStream,
    s2: &PhotonStream,
    s3: &PhotonStream,
    bin_width: u64,
    max_delay: u64,
) -> Result<CoincidenceHistogram> {
    count_triples_with(s1, s2, s3, bin_width, max_delay, Execution::Sequential)
}

/// Anchors per shard when counting in parallel.
const SHARD_ANCHORS: usize = 1 << 14;

/// As [`count_triples`], sharding the channel-2 anchors across workers.
/// Shard grids are summed in index order, so the result never depends on
/// the execution mode.
pub fn count_triples_with(
    s1: &PhotonStream,
    s2: &PhotonStream,
    s3: &PhotonStream,
    bin_width: u64,
    max_delay: u64,
    exec: Execution,
) -> Result<CoincidenceHistogram> {
    let geometry = BinGeometry::new(bin_width, max_delay)?;
    for s in [s1, s2, s3] {
        check_sorted(s)?;
    }
    let mut hist = CoincidenceHistogram::empty(geometry, [s1, s2, s3]);
    let anchors = s2.timestamps();
    let n_shards = anchors.len().div_ceil(SHARD_ANCHORS);
    if n_shards <= 1 {
        sweep(&geometry, s1.timestamps(), anchors, s3.timestamps(), &mut hist.counts);
        return Ok(hist);
    }
    let grids = map_indexed(exec, n_shards, |j| {
        let lo = j * SHARD_ANCHORS;
        let hi = (lo + SHARD_ANCHORS).min(anchors.len());
        let mut grid = vec![0u64; hist.counts.len()];
        sweep(&geometry, s1.timestamps(), &anchors[lo..hi], s3.timestamps(), &mut grid);
        grid
    });
    for g in grids {
        for (a, b) in hist.counts.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(hist)
}

/// Single forward pass over `anchors` with monotone windows into `s1`, `s3`.
fn sweep(geometry: &BinGeometry, s1: &[u64], anchors: &[u64], s3: &[u64], counts: &mut [u64]) {
    let Some(&first) = anchors.first() else {
        return;
    };
    let max = geometry.max_delay;
    let side = geometry.side();
    let start = first.saturating_sub(max);
    let (mut lo1, mut lo3) = (s1.partition_point(|&t| t < start), s3.partition_point(|&t| t < start));
    let (mut hi1, mut hi3) = (lo1, lo3);
    let mut cols: Vec<usize> = Vec::new();
    for &b in anchors {
        let lo = b.saturating_sub(max);
        let hi = b.saturating_add(max);
        while lo1 < s1.len() && s1[lo1] < lo {
            lo1 += 1;
        }
        hi1 = hi1.max(lo1);
        while hi1 < s1.len() && s1[hi1] <= hi {
            hi1 += 1;
        }
        while lo3 < s3.len() && s3[lo3] < lo {
            lo3 += 1;
        }
        hi3 = hi3.max(lo3);
        while hi3 < s3.len() && s3[hi3] <= hi {
            hi3 += 1;
        }
        if lo1 == hi1 || lo3 == hi3 {
            continue;
        }
        cols.clear();
        cols.extend(
            s3[lo3..hi3]
                .iter()
                .map(|&c| geometry.index_of(b as i64 - c as i64)),
        );
        for &a in &s1[lo1..hi1] {
            let row = geometry.index_of(a as i64 - b as i64) * side;
            let line = &mut counts[row..row + side];
            for &col in &cols {
                line[col] += 1;
            }
        }
    }
}

/// Event budget for [`brute_force_triples`].
pub const BRUTE_FORCE_LIMIT: usize = 10_000;

/// Reference triple loop with the same binning as [`count_triples`].
pub fn brute_force_triples(
    s1: &PhotonStream,
    s2: &PhotonStream,
    s3: &PhotonStream,
    bin_width: u64,
    max_delay: u64,
) -> Result<CoincidenceHistogram> {
    let total = s1.len() + s2.len() + s3.len();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard(total));
    }
    let geometry = BinGeometry::new(bin_width, max_delay)?;
    let mut hist = CoincidenceHistogram::empty(geometry, [s1, s2, s3]);
    let side = geometry.side();
    let max = max_delay as i64;
    for &a in s1.timestamps() {
        for &b in s2.timestamps() {
            let d12 = a as i64 - b as i64;
            if d12.abs() > max {
                continue;
            }
            for &c in s3.timestamps() {
                let d23 = b as i64 - c as i64;
                if d23.abs() > max {
                    continue;
                }
                hist.counts[geometry.index_of(d12) * side + geometry.index_of(d23)] += 1;
            }
        }
    }
    Ok(hist)
}

/// Background-normalized g3 estimate per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct G3Surface {
    pub geometry: BinGeometry,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl G3Surface {
    /// Noise-free surface from a model `f(τ12, τ23)` (seconds) at bin centres.
    pub fn tabulate(geometry: BinGeometry, f: impl Fn(f64, f64) -> f64) -> Self {
        let side = geometry.side();
        let mut values = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                values.push(f(geometry.center(i) as f64 * 1e-12, geometry.center(j) as f64 * 1e-12));
            }
        }
        G3Surface {
            geometry,
            sigma: vec![0.0; values.len()],
            values,
        }
    }

    pub fn value(&self, i12: usize, i23: usize) -> f64 {
        self.values[i12 * self.geometry.side() + i23]
    }

    pub fn center(&self) -> (f64, f64) {
        let h = self.geometry.half_bins();
        let k = h * self.geometry.side() + h;
        (self.values[k], self.sigma[k])
    }

    /// Mean over bins where every pairwise delay exceeds `threshold_ps`,
    /// with its standard error.
    pub fn background(&self, threshold_ps: f64) -> Option<(f64, f64)> {
        let side = self.geometry.side();
        let (mut sum, mut var, mut n) = (0.0, 0.0, 0usize);
        for i in 0..side {
            for j in 0..side {
                if is_background(self.geometry.center(i), self.geometry.center(j), threshold_ps) {
                    let k = i * side + j;
                    sum += self.values[k];
                    var += self.sigma[k] * self.sigma[k];
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sum / n as f64, var.sqrt() / n as f64))
    }
}

/// `min(|τ12|, |τ23|, |τ12 + τ23|) > threshold`: no pair of detections is
/// within the threshold, so no pair bunching remains.
pub fn is_background(d12: i64, d23: i64, threshold_ps: f64) -> bool {
    let m = d12.abs().min(d23.abs()).min((d12 + d23).abs());
    m as f64 > threshold_ps
}

/// `max(|τ12|, |τ23|, |τ12 + τ23|) > threshold`: the tail of a slice.
pub fn is_slice_tail(d12: i64, d23: i64, threshold_ps: f64) -> bool {
    let m = d12.abs().max(d23.abs()).max((d12 + d23).abs());
    m as f64 > threshold_ps
}

/// Divides each bin by its accidental expectation `r1·r2·r3·T·w12·w23`.
///
/// Errors are Poisson, `√max(count, 1) / expectation`; the one-count floor
/// keeps empty bins from reporting zero uncertainty.
pub fn normalize(hist: &CoincidenceHistogram) -> Result<G3Surface> {
    if hist.duration_ps == 0 {
        return Err(Error::InvalidArgument("duration must be > 0".into()));
    }
    if let Some(ch) = hist.totals.iter().position(|&t| t == 0) {
        return Err(Error::ZeroRate(ch as u8 + 1));
    }
    let t = hist.duration_ps as f64;
    let rates: Vec<f64> = hist.totals.iter().map(|&n| n as f64 / t).collect();
    let base = rates[0] * rates[1] * rates[2] * t;
    let g = hist.geometry;
    let side = g.side();
    let widths: Vec<f64> = (0..side).map(|i| g.width(i) as f64).collect();
    let mut values = Vec::with_capacity(side * side);
    let mut sigma = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let expect = base * widths[i] * widths[j];
            let c = hist.counts[i * side + j] as f64;
            values.push(c / expect);
            sigma.push(c.max(1.0).sqrt() / expect);
        }
    }
    Ok(G3Surface {
        geometry: g,
        values,
        sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlicePoint {
    /// Per-axis delay, ps.
    pub tau_ps: i64,
    pub value: f64,
    pub sigma: f64,
}

/// One-dimensional cut through a surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice {
    pub spec: SliceSpec,
    pub points: Vec<SlicePoint>,
}

impl Slice {
    /// Points as fitter input, delays in seconds.
    pub fn profile(&self) -> Vec<ProfilePoint> {
        self.points
            .iter()
            .filter(|p| p.value.is_finite())
            .map(|p| ProfilePoint {
                tau: p.tau_ps as f64 / PS_PER_S,
                value: p.value,
                sigma: p.sigma,
            })
            .collect()
    }

    /// Centre value divided by the mean of points whose largest pairwise
    /// delay exceeds `threshold_ps`, with a propagated standard error.
    pub fn ratio(&self, threshold_ps: f64) -> Option<(f64, f64)> {
        let (dx, dy) = self.spec.direction.step();
        let center = self.points.iter().find(|p| p.tau_ps == 0)?;
        let tail: Vec<&SlicePoint> = self
            .points
            .iter()
            .filter(|p| is_slice_tail(dx * p.tau_ps, dy * p.tau_ps, threshold_ps))
            .collect();
        if tail.is_empty() {
            return None;
        }
        let n = tail.len() as f64;
        let bg = tail.iter().map(|p| p.value).sum::<f64>() / n;
        let bg_sigma = tail.iter().map(|p| p.sigma * p.sigma).sum::<f64>().sqrt() / n;
        let r = center.value / bg;
        let rel = ((center.sigma / center.value).powi(2) + (bg_sigma / bg).powi(2)).sqrt();
        Some((r, r * rel))
    }
}

/// Extracts the bins along a line through the centre.
pub fn slice(surface: &G3Surface, spec: SliceSpec) -> Slice {
    let g = surface.geometry;
    let h = g.half_bins() as i64;
    let (dx, dy) = spec.direction.step();
    let points = (-h..=h)
        .map(|j| {
            let i12 = (h + dx * j) as usize;
            let i23 = (h + dy * j) as usize;
            let k = i12 * g.side() + i23;
            SlicePoint {
                tau_ps: j * g.bin_width as i64,
                value: surface.values[k],
                sigma: surface.sigma[k],
            }
        })
        .collect();
    Slice { spec, points }
}

/// Peak/background figures reported after an analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceSummary {
    pub center: f64,
    pub center_sigma: f64,
    pub background: f64,
    pub background_sigma: f64,
    pub ratio: f64,
    pub ratio_sigma: f64,
    pub background_threshold_ps: f64,
    pub total_triples: u64,
    pub center_count: u64,
}

/// Summarizes a surface; the background region is every bin whose pairwise
/// delays all exceed three coherence times.
pub fn summarize(hist: &CoincidenceHistogram, surface: &G3Surface, coherence_time_ps: f64) -> Result<SurfaceSummary> {
    let threshold = 3.0 * coherence_time_ps;
    let (center, center_sigma) = surface.center();
    let (background, background_sigma) = surface.background(threshold).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no bins with every pairwise delay beyond {threshold} ps; increase max delay"
        ))
    })?;
    let ratio = center / background;
    let ratio_sigma =
        ratio * ((center_sigma / center).powi(2) + (background_sigma / background).powi(2)).sqrt();
    let h = hist.geometry.half_bins();
    Ok(SurfaceSummary {
        center,
        center_sigma,
        background,
        background_sigma,
        ratio,
        ratio_sigma,
        background_threshold_ps: threshold,
        total_triples: hist.total_triples(),
        center_count: hist.count(h, h),
    })
}

/// Two-fold coincidence histogram over `t_a − t_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHistogram {
    pub geometry: BinGeometry,
    pub counts: Vec<u64>,
    pub totals: [u64; 2],
    pub duration_ps: u64,
}

/// Counts every pair within `max_delay`, binned by `a − b`.
pub fn count_pairs(
    sa: &PhotonStream,
    sb: &PhotonStream,
    bin_width: u64,
    max_delay: u64,
    duration_ps: u64,
) -> Result<PairHistogram> {
    let geometry = BinGeometry::new(bin_width, max_delay)?;
    check_sorted(sa)?;
    check_sorted(sb)?;
    let mut counts = vec![0u64; geometry.side()];
    let a = sa.timestamps();
    let mut lo = 0;
    for &b in sb.timestamps() {
        let start = b.saturating_sub(max_delay);
        while lo < a.len() && a[lo] < start {
            lo += 1;
        }
        let mut k = lo;
        while k < a.len() && a[k] <= b + max_delay {
            counts[geometry.index_of(a[k] as i64 - b as i64)] += 1;
            k += 1;
        }
    }
    Ok(PairHistogram {
        geometry,
        counts,
        totals: [sa.len() as u64, sb.len() as u64],
        duration_ps,
    })
}

impl PairHistogram {
    /// `g2` per bin: counts over `ra·rb·T·w`.
    pub fn g2(&self) -> Result<Vec<f64>> {
        if let Some(ch) = self.totals.iter().position(|&t| t == 0) {
            return Err(Error::ZeroRate(ch as u8 + 1));
        }
        let t = self.duration_ps as f64;
        let base = self.totals[0] as f64 * self.totals[1] as f64 / t;
        Ok(self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / (base * self.geometry.width(i) as f64))
            .collect())
    }
}
