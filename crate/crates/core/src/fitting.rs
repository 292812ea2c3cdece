//! Weighted least-squares fits of one-dimensional g3 slices.
//!
//! The fitted curve is `f(τ) = B + A·(S(τ; Δω) − 1)`, where `S` is the
//! background-normalized slice shape (tail 1). `B` is the background level and
//! `A` scales the excess, so `g3_zero = f(0)/f(∞) = 1 + A·(S(0) − 1)/B`
//! does not depend on the absolute normalization of the data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coherence::{sinc, sinc_prime};
use crate::error::{Error, Result};

/// Slice shape to fit. The short names `eq4`/`eq5` are the stable interface identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceModel {
    /// t1 = t3: per-stage factor `1 + 2·g1(τ)²`.
    Eq4,
    /// t1 − t2 = t2 − t3: per-stage factor `1 + 2·g1(τ)² + g1(2τ)² + 2·g1(τ)²·g1(2τ)`.
    Eq5,
}

impl std::str::FromStr for SliceModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq4" | "t1-eq-t3" => Ok(SliceModel::Eq4),
            "eq5" | "diagonal" => Ok(SliceModel::Eq5),
            _ => Err(Error::InvalidArgument(format!(
                "unknown model '{s}' (expected eq4 or eq5)"
            ))),
        }
    }
}

impl SliceModel {
    /// Per-stage factor at zero delay.
    pub fn stage_peak(self) -> f64 {
        match self {
            SliceModel::Eq4 => 3.0,
            SliceModel::Eq5 => 6.0,
        }
    }

    /// Per-stage factor and its derivative with respect to the bandwidth.
    fn stage(self, tau: f64, bw: f64) -> (f64, f64) {
        let x1 = 0.5 * bw * tau;
        let s1 = sinc(x1);
        let ds1 = sinc_prime(x1) * 0.5 * tau;
        match self {
            SliceModel::Eq4 => (1.0 + 2.0 * s1 * s1, 4.0 * s1 * ds1),
            SliceModel::Eq5 => {
                let x2 = bw * tau;
                let s2 = sinc(x2);
                let ds2 = sinc_prime(x2) * tau;
                let v = 1.0 + 2.0 * s1 * s1 + s2 * s2 + 2.0 * s1 * s1 * s2;
                let d = 4.0 * s1 * ds1 + 2.0 * s2 * ds2 + 4.0 * s1 * ds1 * s2 + 2.0 * s1 * s1 * ds2;
                (v, d)
            }
        }
    }
}

/// Which bandwidths are free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// One bandwidth shared by all `n` stages.
    Shared { n_stages: usize },
    /// Two stages with independent bandwidths.
    TwoStage,
}

impl BandwidthMode {
    pub fn n_params(self) -> usize {
        match self {
            BandwidthMode::Shared { .. } => 3,
            BandwidthMode::TwoStage => 4,
        }
    }

    pub fn n_stages(self) -> usize {
        match self {
            BandwidthMode::Shared { n_stages } => n_stages,
            BandwidthMode::TwoStage => 2,
        }
    }
}

/// Parameter vector layout: `[A, B, Δω]` or `[A, B, Δω1, Δω2]`.
fn shape_and_grad(model: SliceModel, mode: BandwidthMode, params: &[f64], tau: f64) -> (f64, [f64; 2]) {
    match mode {
        BandwidthMode::Shared { n_stages } => {
            let (b, db) = model.stage(tau, params[2]);
            let n = n_stages as i32;
            let s = b.powi(n);
            let ds = if n == 0 { 0.0 } else { n as f64 * b.powi(n - 1) * db };
            (s, [ds, 0.0])
        }
        BandwidthMode::TwoStage => {
            let (b1, db1) = model.stage(tau, params[2]);
            let (b2, db2) = model.stage(tau, params[3]);
            (b1 * b2, [db1 * b2, b1 * db2])
        }
    }
}

/// Model value `B + A·(S(τ) − 1)`.
pub fn model_value(model: SliceModel, mode: BandwidthMode, params: &[f64], tau: f64) -> f64 {
    let (s, _) = shape_and_grad(model, mode, params, tau);
    params[1] + params[0] * (s - 1.0)
}

/// Analytic Jacobian, one row per delay (seconds), one column per parameter.
pub fn model_jacobian(model: SliceModel, mode: BandwidthMode, params: &[f64], taus: &[f64]) -> DMatrix<f64> {
    let np = mode.n_params();
    let mut j = DMatrix::zeros(taus.len(), np);
    for (row, &tau) in taus.iter().enumerate() {
        let (s, ds) = shape_and_grad(model, mode, params, tau);
        j[(row, 0)] = s - 1.0;
        j[(row, 1)] = 1.0;
        for k in 2..np {
            j[(row, k)] = params[0] * ds[k - 2];
        }
    }
    j
}

/// One profile sample; `tau` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub tau: f64,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub model: SliceModel,
    pub mode: BandwidthMode,
    /// Starting parameters; estimated from the profile when `None`.
    pub init: Option<Vec<f64>>,
    pub max_iterations: usize,
}

impl FitOptions {
    pub fn new(model: SliceModel, n_stages: usize) -> Self {
        FitOptions {
            model,
            mode: BandwidthMode::Shared { n_stages },
            init: None,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: SliceModel,
    pub mode: BandwidthMode,
    pub g3_zero: f64,
    pub g3_zero_sigma: f64,
    /// Fitted bandwidth, rad/s (the first stage's in two-stage mode).
    pub bandwidth: f64,
    pub bandwidth_sigma: f64,
    /// All fitted bandwidths, rad/s.
    pub bandwidths: Vec<f64>,
    pub amplitude: f64,
    pub offset: f64,
    /// Parameter covariance in `[A, B, Δω…]` order.
    pub covariance: Vec<Vec<f64>>,
    /// Root-mean-square of the weighted residuals.
    pub rms_residual: f64,
    pub chi2: f64,
    pub dof: usize,
    /// Factor applied to `(JᵀWJ)⁻¹`: the reduced chi², floored at 1.
    pub covariance_scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

const REL_SSE_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-8;

/// Fits a slice profile with a damped Gauss–Newton (Levenberg–Marquardt)
/// iteration. Accepted steps never increase the weighted SSE.
pub fn fit_slice(profile: &[ProfilePoint], opts: &FitOptions) -> Result<FitResult> {
    if profile.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 profile points (got {})",
            profile.len()
        )));
    }
    if let Some(p) = profile.iter().find(|p| !(p.sigma > 0.0) || !p.value.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "profile point at τ = {} s has sigma {} / value {}",
            p.tau, p.sigma, p.value
        )));
    }
    if let BandwidthMode::Shared { n_stages: 0 } = opts.mode {
        return Err(Error::InvalidArgument("n_stages must be >= 1".into()));
    }
    let (lo, hi) = profile
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.value), hi.max(p.value)));
    if hi - lo <= 1e-12 * hi.abs().max(1e-300) {
        return Err(Error::DegenerateProfile("all values are equal".into()));
    }

    let model = opts.model;
    let mode = opts.mode;
    let np = mode.n_params();
    let mut params = match &opts.init {
        Some(p) if p.len() == np => p.clone(),
        Some(p) => {
            return Err(Error::InvalidArgument(format!(
                "expected {np} initial parameters, got {}",
                p.len()
            )))
        }
        None => initial_guess(profile, model, mode)?,
    };

    let taus: Vec<f64> = profile.iter().map(|p| p.tau).collect();
    let span = taus.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let tc = 2.0 * std::f64::consts::PI / params[2];
    if 2.0 * span < 3.0 * tc {
        return Err(Error::InvalidArgument(format!(
            "profile spans {:.3e} s, less than 3 coherence times ({:.3e} s)",
            2.0 * span,
            3.0 * tc
        )));
    }

    let weights: Vec<f64> = profile.iter().map(|p| 1.0 / p.sigma).collect();
    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(
            profile.len(),
            profile
                .iter()
                .zip(&weights)
                .map(|(pt, w)| (pt.value - model_value(model, mode, p, pt.tau)) * w),
        )
    };
    let weighted_jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut j = model_jacobian(model, mode, p, &taus);
        for (r, w) in weights.iter().enumerate() {
            j.row_mut(r).scale_mut(*w);
        }
        j
    };

    let mut r = residuals(&params);
    let mut sse = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while iterations < opts.max_iterations {
        iterations += 1;
        let j = weighted_jacobian(&params);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        grad_norm = scaled_norm(&g, &params);
        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, d)| p + d).collect();
            if trial[2..].iter().any(|bw| !(*bw > 0.0)) {
                lambda *= 10.0;
                continue;
            }
            let r_trial = residuals(&trial);
            let sse_trial = r_trial.norm_squared();
            if sse_trial <= sse {
                let rel = (sse - sse_trial) / sse.max(f64::MIN_POSITIVE);
                params = trial;
                r = r_trial;
                sse = sse_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < REL_SSE_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            let j = weighted_jacobian(&params);
            grad_norm = scaled_norm(&(j.transpose() * &r), &params);
            break;
        }
        if !accepted {
            // no downhill step at any damping: a minimum to working precision
            converged = grad_norm <= 1e-6 * (1.0 + sse);
            break;
        }
    }

    let j = weighted_jacobian(&params);
    let jtj = j.transpose() * &j;
    let cov = jtj
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    // inflate by the reduced chi² when the scatter exceeds the quoted sigmas
    let dof = profile.len().saturating_sub(np);
    let covariance_scale = if dof > 0 { (sse / dof as f64).max(1.0) } else { 1.0 };
    let cov = (&cov + cov.transpose()) * (0.5 * covariance_scale);

    let (a, b) = (params[0], params[1]);
    let excess = model.stage_peak().powi(mode.n_stages() as i32) - 1.0;
    let g3_zero = 1.0 + a * excess / b;
    let grad = [excess / b, -a * excess / (b * b)];
    let g3_var = grad[0] * grad[0] * cov[(0, 0)] + 2.0 * grad[0] * grad[1] * cov[(0, 1)] + grad[1] * grad[1] * cov[(1, 1)];

    Ok(FitResult {
        model,
        mode,
        g3_zero,
        g3_zero_sigma: g3_var.max(0.0).sqrt(),
        bandwidth: params[2],
        bandwidth_sigma: cov[(2, 2)].max(0.0).sqrt(),
        bandwidths: params[2..].to_vec(),
        amplitude: a,
        offset: b,
        covariance: (0..np).map(|i| (0..np).map(|k| cov[(i, k)]).collect()).collect(),
        rms_residual: (sse / profile.len() as f64).sqrt(),
        chi2: sse,
        dof,
        covariance_scale,
        iterations,
        converged,
        gradient_norm: grad_norm,
    })
}

/// Gradient norm with each component scaled by its parameter's magnitude.
fn scaled_norm(g: &DVector<f64>, params: &[f64]) -> f64 {
    g.iter()
        .zip(params)
        .map(|(gi, p)| (gi * p.abs().max(1e-12)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Background from the outer third, amplitude from the centre, bandwidth
/// from the half-maximum point.
fn initial_guess(profile: &[ProfilePoint], model: SliceModel, mode: BandwidthMode) -> Result<Vec<f64>> {
    let span = profile.iter().fold(0.0f64, |m, p| m.max(p.tau.abs()));
    let mut outer: Vec<f64> = profile
        .iter()
        .filter(|p| p.tau.abs() >= 2.0 * span / 3.0)
        .map(|p| p.value)
        .collect();
    if outer.is_empty() {
        return Err(Error::DegenerateProfile("no outer points".into()));
    }
    outer.sort_by(|a, b| a.total_cmp(b));
    let background = outer[outer.len() / 2];
    let center = profile
        .iter()
        .min_by(|a, b| a.tau.abs().total_cmp(&b.tau.abs()))
        .expect("non-empty profile");
    let peak = center.value;
    if !(peak > background) || !(background > 0.0) {
        return Err(Error::DegenerateProfile(format!(
            "no peak above background (centre {peak}, background {background})"
        )));
    }
    let n = mode.n_stages();
    let excess = model.stage_peak().powi(n as i32) - 1.0;
    let amplitude = (peak - background) / excess;

    // half-maximum delay in the data, averaged over both sides
    let half = background + 0.5 * (peak - background);
    let crossing = |side: f64| -> Option<f64> {
        let mut pts: Vec<&ProfilePoint> = profile.iter().filter(|p| p.tau * side >= 0.0).collect();
        pts.sort_by(|a, b| a.tau.abs().total_cmp(&b.tau.abs()));
        pts.windows(2).find_map(|w| {
            let (p, q) = (w[0], w[1]);
            (p.value >= half && q.value < half).then(|| {
                let f = (p.value - half) / (p.value - q.value);
                p.tau.abs() + f * (q.tau.abs() - p.tau.abs())
            })
        })
    };
    let found: Vec<f64> = [1.0, -1.0].into_iter().filter_map(crossing).collect();
    if found.is_empty() {
        return Err(Error::DegenerateProfile("profile never falls to half maximum".into()));
    }
    let tau_half = found.iter().sum::<f64>() / found.len() as f64;

    // the same point for unit bandwidth, by bisection on the shape
    let unit = BandwidthMode::Shared { n_stages: n };
    let rel = |t: f64| {
        let (s, _) = shape_and_grad(model, unit, &[1.0, 1.0, 1.0], t);
        (s - 1.0) / excess - 0.5
    };
    let (mut a, mut b) = (0.0, std::f64::consts::PI);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if rel(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let bandwidth = 0.5 * (a + b) / tau_half;
    Ok(match mode {
        BandwidthMode::Shared { .. } => vec![amplitude, background, bandwidth],
        BandwidthMode::TwoStage => vec![amplitude, background, 0.9 * bandwidth, 1.1 * bandwidth],
    })
}
