//! Coincidence analysis of three detector streams: histogram, g3 surface,
//! the three named slices and a peak/background summary.

use serde::Serialize;

use crate::coincidence::{
    count_triples_with, normalize, slice, summarize, BinGeometry, CoincidenceHistogram, G3Surface, Slice,
    SurfaceSummary,
};
use crate::error::Result;
use crate::model::{PhotonStream, SliceDirection, SliceSpec, PS_PER_S};
use crate::parallel::Execution;

/// Default binning relative to the coherence time: `τc/20` bins, `5τc` window.
pub fn default_binning(coherence_time_s: f64) -> (u64, u64) {
    let bin = ((coherence_time_s * PS_PER_S / 20.0).round() as u64).max(1);
    (bin, 100 * bin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    pub bin_width_ps: u64,
    pub max_delay_ps: u64,
    /// Used only to choose the background region (three coherence times).
    pub coherence_time_ps: f64,
    /// Acquisition time; defaults to just past the last event when `None`.
    pub duration_ps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceSummary {
    pub direction: SliceDirection,
    pub alpha: f64,
    pub ratio: Option<f64>,
    pub ratio_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub geometry: BinGeometry,
    pub totals: [u64; 3],
    pub duration_ps: u64,
    pub coherence_time_ps: f64,
    pub surface: SurfaceSummary,
    pub slices: Vec<SliceSummary>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub histogram: CoincidenceHistogram,
    pub surface: G3Surface,
    pub slices: Vec<Slice>,
    pub summary: AnalysisSummary,
}

impl Analysis {
    pub fn slice(&self, direction: SliceDirection) -> &Slice {
        self.slices
            .iter()
            .find(|s| s.spec.direction == direction)
            .expect("all directions are extracted")
    }
}

pub fn analyze(streams: [&PhotonStream; 3], params: &AnalysisParams, exec: Execution) -> Result<Analysis> {
    let [s1, s2, s3] = streams;
    let mut histogram = count_triples_with(s1, s2, s3, params.bin_width_ps, params.max_delay_ps, exec)?;
    if let Some(d) = params.duration_ps {
        histogram = histogram.with_duration(d);
    }
    let surface = normalize(&histogram)?;
    let surface_summary = summarize(&histogram, &surface, params.coherence_time_ps)?;
    let threshold = surface_summary.background_threshold_ps;
    let slices: Vec<Slice> = SliceDirection::ALL
        .iter()
        .map(|&d| slice(&surface, SliceSpec::new(d)))
        .collect();
    let slice_summaries = slices
        .iter()
        .map(|s| {
            let r = s.ratio(threshold);
            SliceSummary {
                direction: s.spec.direction,
                alpha: s.spec.alpha,
                ratio: r.map(|x| x.0),
                ratio_sigma: r.map(|x| x.1),
            }
        })
        .collect();
    let summary = AnalysisSummary {
        geometry: histogram.geometry,
        totals: histogram.totals,
        duration_ps: histogram.duration_ps,
        coherence_time_ps: params.coherence_time_ps,
        surface: surface_summary,
        slices: slice_summaries,
    };
    Ok(Analysis {
        histogram,
        surface,
        slices,
        summary,
    })
}
