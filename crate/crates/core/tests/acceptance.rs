//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report is printed even when every check
//! passes. Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use superbunch_core::analysis::{analyze, default_binning, Analysis, AnalysisParams};
use superbunch_core::coherence::{
    g3, gn_zero, permanent_oracle, slice_model_diag, slice_model_t1_eq_t3, stage_bracket,
};
use superbunch_core::coincidence::{brute_force_triples, count_triples, count_triples_with, normalize};
use superbunch_core::fitting::{fit_slice, model_jacobian, model_value, BandwidthMode, FitOptions, ProfilePoint, SliceModel};
use superbunch_core::io::write_stream;
use superbunch_core::model::{coherence_time, PS_PER_S};
use superbunch_core::simulation::{simulate, Detection};
use superbunch_core::source::{
    cascade, rng_from_seed, sample_photons, stage_seed, synthesize_stage_field, IntensityTrace, SimRng,
};
use superbunch_core::{Execution, PhotonStream, SliceDirection, SourceConfig, TimeTuple};

const BW: f64 = 2.0 * PI * 5_000.0;

const ORACLE_TOL: f64 = 1e-12;
const C4_TOL: f64 = 0.10;
const C5_CENTER_TOL: f64 = 0.25;
const C5_RATIO_TOL: f64 = 0.15;
const C6_ACCIDENTAL_TOL: f64 = 0.05;
const C7_G2_RMS: f64 = 0.05;
const C7_TWO_STAGE_TOL: f64 = 0.05;
const C8_FD_TOL: f64 = 1e-5;
const C8_INVERSION_TOL: f64 = 1e-3;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tc() -> f64 {
    coherence_time(BW)
}

fn criterion_1() -> Outcome {
    let got: Vec<u128> = (1..=4).map(|n| gn_zero(3, n).unwrap()).collect();
    check(got == [6, 36, 216, 1296], format!("g3(0) for n = 1..4: {got:?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = rng_from_seed(2);
    let tc = tc();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut t = || tc * rng.random_range(-5.0..=5.0);
        let times = TimeTuple::new(t(), t(), t());
        worst = worst.max((stage_bracket(times, BW) - permanent_oracle(times, BW)).abs());
    }
    check(worst < ORACLE_TOL, format!("max |closed form - permutation sum| = {worst:.2e} over 1e4 triples"))
}

fn criterion_3() -> Outcome {
    let bws = [BW, BW];
    let tc = tc();
    // background is the limit at large delay
    let far = 1e6 * tc;
    let r4 = slice_model_t1_eq_t3(0.0, &bws) / slice_model_t1_eq_t3(far, &bws);
    let r5 = slice_model_diag(0.0, &bws) / slice_model_diag(far, &bws);
    let mut worst = 0.0f64;
    let mut rng = rng_from_seed(3);
    for _ in 0..10_000 {
        let t = tc * rng.random_range(-3.0..3.0);
        let tau = tc * rng.random_range(-5.0..5.0);
        let diag = g3(TimeTuple::new(t + tau, t, t - tau), &bws);
        // on t1 = t3 the surface tends to (1 + 1)^n = 4, not 1
        let anti = g3(TimeTuple::new(t + tau, t, t + tau), &bws) / 4.0;
        worst = worst
            .max((slice_model_diag(tau, &bws) - diag).abs())
            .max((slice_model_t1_eq_t3(tau, &bws) - anti).abs());
    }
    let ok = (r4 - 9.0).abs() < 1e-6 && (r5 - 36.0).abs() < 1e-6 && worst < ORACLE_TOL;
    check(ok, format!("t1=t3 ratio {r4:.9}, diagonal ratio {r5:.9}, max pointwise error {worst:.2e}"))
}

fn analysis_params(cfg: &SourceConfig, det: &Detection) -> AnalysisParams {
    let tc = coherence_time(cfg.bandwidths[0]);
    let (bin, max) = default_binning(tc);
    AnalysisParams {
        bin_width_ps: bin,
        max_delay_ps: max,
        coherence_time_ps: tc * PS_PER_S,
        duration_ps: Some(det.duration_ps),
    }
}

fn run_pipeline(cfg: &SourceConfig) -> (Detection, Analysis) {
    let det = simulate(cfg, Execution::Parallel).expect("simulation");
    let params = analysis_params(cfg, &det);
    let [a, b, c] = &det.streams;
    let analysis = analyze([a, b, c], &params, Execution::Parallel).expect("analysis");
    (det, analysis)
}

fn config_n1() -> SourceConfig {
    let tc = tc();
    SourceConfig {
        n_stages: 1,
        bandwidths: vec![BW],
        mean_rate_per_detector: 20_000.0,
        duration: 6.0,
        modes_per_stage: 256,
        sample_dt: tc / 128.0,
        seed: 4,
    }
}

fn config_n2() -> SourceConfig {
    let tc = tc();
    SourceConfig {
        n_stages: 2,
        bandwidths: vec![BW, BW],
        mean_rate_per_detector: 5_000.0,
        duration: 40.0,
        modes_per_stage: 256,
        sample_dt: tc / 32.0,
        seed: 5,
    }
}

fn criterion_4() -> Outcome {
    let (_, a) = run_pipeline(&config_n1());
    let s = &a.summary.surface;
    let ok = s.center_count >= 20_000 && (s.center / 6.0 - 1.0).abs() <= C4_TOL;
    check(
        ok,
        format!(
            "center g3 = {:.3} ± {:.3} (target 6 ± {:.0}%), center triples {}",
            s.center,
            s.center_sigma,
            100.0 * C4_TOL,
            s.center_count
        ),
    )
}

fn criterion_5(a: &Analysis) -> Outcome {
    let s = &a.summary.surface;
    let (r, rs) = a.slice(SliceDirection::T1EqT3).ratio(s.background_threshold_ps).expect("slice background");
    let ok = (s.center / 36.0 - 1.0).abs() <= C5_CENTER_TOL && (r / 9.0 - 1.0).abs() <= C5_RATIO_TOL;
    check(
        ok,
        format!(
            "center g3 = {:.2} ± {:.2} (target 36 ± {:.0}%), t1=t3 ratio = {r:.3} ± {rs:.3} (target 9 ± {:.0}%); surface peak/background {:.2} ± {:.2}",
            s.center,
            s.center_sigma,
            100.0 * C5_CENTER_TOL,
            100.0 * C5_RATIO_TOL,
            s.ratio,
            s.ratio_sigma
        ),
    )
}

fn random_stream(rng: &mut SimRng, channel: u8, n: usize, span: u64) -> PhotonStream {
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v.dedup();
    PhotonStream::new(channel, v).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = rng_from_seed(6);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(0..=3000usize);
        let bin = rng.random_range(1..=50u64);
        let max = bin * rng.random_range(0..=20u64);
        let span = ((n as u64).max(1) * (2 * max + 1) / 4).max(10);
        let s1 = random_stream(&mut rng, 1, n, span);
        let s2 = random_stream(&mut rng, 2, n, span);
        let s3 = random_stream(&mut rng, 3, n, span);
        if count_triples(&s1, &s2, &s3, bin, max).unwrap() != brute_force_triples(&s1, &s2, &s3, bin, max).unwrap() {
            mismatches += 1;
        }
    }

    let (rate, duration) = (1e5, 10.0);
    let trace = IntensityTrace::constant(duration, 1e-6);
    let streams: Vec<PhotonStream> = (0..3u64)
        .map(|k| {
            let s = sample_photons(&trace, rate, &mut rng_from_seed(600 + k)).unwrap();
            PhotonStream::new(k as u8 + 1, s.into_timestamps()).unwrap()
        })
        .collect();
    let (bin, max) = (2_000_000u64, 20_000_000u64);
    let h = count_triples_with(&streams[0], &streams[1], &streams[2], bin, max, Execution::Parallel)
        .unwrap()
        .with_duration((duration * PS_PER_S) as u64);
    let expect = rate.powi(3) * duration * (bin as f64 / PS_PER_S).powi(2);
    let side = h.geometry.side();
    let mut sum = 0.0;
    for i in 1..side - 1 {
        for j in 1..side - 1 {
            sum += h.count(i, j) as f64;
        }
    }
    let mean = sum / ((side - 2) * (side - 2)) as f64;
    let surface = normalize(&h).unwrap();
    let grid = surface.values.iter().sum::<f64>() / surface.values.len() as f64;
    let ok = mismatches == 0 && (mean / expect - 1.0).abs() <= C6_ACCIDENTAL_TOL;
    check(
        ok,
        format!(
            "{mismatches}/100 sweep vs brute-force mismatches; accidentals {mean:.1} vs r³TΔ² = {expect:.1}, normalized grid mean {grid:.4}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let tc = tc();
    let dt = tc / 32.0;
    let mut rng = rng_from_seed(stage_seed(7, 0));
    let single = synthesize_stage_field(BW, 2e4 * tc, dt, 256, &mut rng).unwrap();
    let g2 = single.g2(96);
    let rms = (g2
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = 0.5 * BW * k as f64 * dt;
            let s = if k == 0 { 1.0 } else { x.sin() / x };
            (v - 1.0 - s * s).powi(2)
        })
        .sum::<f64>()
        / g2.len() as f64)
        .sqrt();

    let traces: Vec<IntensityTrace> = (0..2)
        .map(|l| {
            let mut rng = rng_from_seed(stage_seed(70, l));
            synthesize_stage_field(BW, 2e5 * tc, dt, 256, &mut rng).unwrap()
        })
        .collect();
    let two = cascade(&traces).unwrap().moment_ratio(2);
    let ok = rms <= C7_G2_RMS && (two / 4.0 - 1.0).abs() <= C7_TWO_STAGE_TOL;
    check(ok, format!("single-stage g2 RMS error {rms:.4} over |τ| ≤ 3τc; two-stage g2(0) = {two:.3}"))
}

fn criterion_8(a: &Analysis) -> Outcome {
    let tc = tc();
    let mut rng = rng_from_seed(8);
    let modes = [
        BandwidthMode::Shared { n_stages: 1 },
        BandwidthMode::Shared { n_stages: 2 },
        BandwidthMode::TwoStage,
    ];
    let mut worst_fd = 0.0f64;
    for model in [SliceModel::Eq4, SliceModel::Eq5] {
        for mode in modes {
            for _ in 0..100 {
                let mut p = vec![rng.random_range(0.1..50.0), rng.random_range(0.5..2e3)];
                for _ in 2..mode.n_params() {
                    p.push(BW * rng.random_range(0.3..3.0));
                }
                let tau = tc * rng.random_range(-5.0..5.0);
                let j = model_jacobian(model, mode, &p, &[tau]);
                for k in 0..mode.n_params() {
                    let h = 1e-6 * p[k].abs();
                    let (mut up, mut down) = (p.clone(), p.clone());
                    up[k] += h;
                    down[k] -= h;
                    let fd = (model_value(model, mode, &up, tau) - model_value(model, mode, &down, tau)) / (2.0 * h);
                    let scale = j[(0, k)].abs().max(p[1] / p[k].abs() * 1e-3);
                    worst_fd = worst_fd.max((j[(0, k)] - fd).abs() / scale);
                }
            }
        }
    }

    let grid: Vec<f64> = (-100..=100).map(|k| k as f64 * tc / 20.0).collect();
    let mut worst_inv = 0.0f64;
    for (model, f, peak) in [
        (SliceModel::Eq4, slice_model_t1_eq_t3 as fn(f64, &[f64]) -> f64, 9.0),
        (SliceModel::Eq5, slice_model_diag, 36.0),
    ] {
        let profile: Vec<ProfilePoint> =
            grid.iter().map(|&tau| ProfilePoint { tau, value: f(tau, &[BW, BW]), sigma: 1.0 }).collect();
        let fit = fit_slice(&profile, &FitOptions::new(model, 2)).map_err(|e| e.to_string())?;
        worst_inv = worst_inv.max((fit.g3_zero / peak - 1.0).abs()).max((fit.bandwidth / BW - 1.0).abs());
    }

    // The t1 = t3 fit is checked against that slice's direct ratio. The
    // diagonal fit is reported only: its g3_zero divides by the fitted
    // asymptote, while the direct ratio divides by a finite tail that still
    // carries a sinc² residue.
    let thr = a.summary.surface.background_threshold_ps;
    let mut consistent = Vec::new();
    let mut notes = Vec::new();
    for (dir, model) in [(SliceDirection::T1EqT3, SliceModel::Eq4), (SliceDirection::T1t2EqT2t3, SliceModel::Eq5)] {
        let slice = a.slice(dir);
        let (direct, direct_sigma) = slice.ratio(thr).expect("background");
        let fit = fit_slice(&slice.profile(), &FitOptions::new(model, 2)).map_err(|e| e.to_string())?;
        let bound = 3.0 * (fit.g3_zero_sigma.powi(2) + direct_sigma.powi(2)).sqrt();
        if dir == SliceDirection::T1EqT3 {
            consistent.push(fit.converged && (fit.g3_zero - direct).abs() <= bound);
        }
        notes.push(format!(
            "{}{}: fit {:.2} ± {:.2} (chi2/dof {:.2}) vs direct {direct:.2} ± {direct_sigma:.2}",
            dir.name(),
            if dir == SliceDirection::T1EqT3 { "" } else { " (reported)" },
            fit.g3_zero,
            fit.g3_zero_sigma,
            fit.chi2 / fit.dof as f64
        ));
    }
    let ok = worst_fd < C8_FD_TOL && worst_inv < C8_INVERSION_TOL && consistent.iter().all(|&c| c);
    check(
        ok,
        format!(
            "Jacobian max rel err {worst_fd:.1e}; noise-free inversion max rel err {worst_inv:.1e}; {}",
            notes.join("; ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let tc = tc();
    let cfg = SourceConfig {
        n_stages: 2,
        bandwidths: vec![BW, BW],
        mean_rate_per_detector: 5_000.0,
        duration: 500.0 * tc,
        modes_per_stage: 128,
        sample_dt: tc / 32.0,
        seed: 9,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for run in 0..2 {
        let exec = if run == 0 { Execution::Sequential } else { Execution::Parallel };
        let det = simulate(&cfg, exec).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for (k, s) in det.streams.iter().enumerate() {
            let path = dir.path().join(format!("run{run}_ch{}.pstr", k + 1));
            write_stream(&path, s).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        let [a, b, c] = &det.streams;
        let analysis = analyze([a, b, c], &analysis_params(&cfg, &det), exec).map_err(|e| e.to_string())?;
        let json = serde_json::to_string_pretty(&analysis.summary).map_err(|e| e.to_string())?;
        runs.push((bytes, json));
    }
    let streams_equal = runs[0].0 == runs[1].0;
    let json_equal = runs[0].1 == runs[1].1;
    check(
        streams_equal && json_equal,
        format!("stream files identical: {streams_equal}; summary JSON identical: {json_equal}"),
    )
}

fn report(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("[PASS] criterion {n}: {d} ({secs:.1} s)"),
        Err(d) => println!("[FAIL] criterion {n}: {d} ({secs:.1} s)"),
    }
    outcome.is_ok()
}

fn main() {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut all = true;
    all &= report(1, criterion_1);
    all &= report(2, criterion_2);
    all &= report(3, criterion_3);
    all &= report(4, || superbunch_core::parallel::with_threads(threads, criterion_4));
    let n2 = superbunch_core::parallel::with_threads(threads, || run_pipeline(&config_n2()).1);
    all &= report(5, || criterion_5(&n2));
    all &= report(6, || superbunch_core::parallel::with_threads(threads, criterion_6));
    all &= report(7, criterion_7);
    all &= report(8, || criterion_8(&n2));
    all &= report(9, || superbunch_core::parallel::with_threads(threads, criterion_9));
    if !all {
        std::process::exit(1);
    }
}
