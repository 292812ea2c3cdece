use std::f64::consts::PI;

use rand::Rng;
use superbunch_core::coherence::{slice_model_diag, slice_model_t1_eq_t3};
use superbunch_core::fitting::{model_jacobian, model_value, BandwidthMode, SliceModel};
use superbunch_core::source::rng_from_seed;

const BW: f64 = 2.0 * PI * 5_000.0;
const TC: f64 = 2.0 * PI / BW;

fn modes() -> Vec<BandwidthMode> {
    vec![
        BandwidthMode::Shared { n_stages: 1 },
        BandwidthMode::Shared { n_stages: 2 },
        BandwidthMode::Shared { n_stages: 3 },
        BandwidthMode::TwoStage,
    ]
}

fn bandwidths(mode: BandwidthMode, p: &[f64]) -> Vec<f64> {
    match mode {
        BandwidthMode::Shared { n_stages } => vec![p[2]; n_stages],
        BandwidthMode::TwoStage => vec![p[2], p[3]],
    }
}

/// Shape taken from the closed-form slice functions rather than the fitter's own code.
fn reference_value(model: SliceModel, mode: BandwidthMode, p: &[f64], tau: f64) -> f64 {
    let bws = bandwidths(mode, p);
    let s = match model {
        SliceModel::Eq4 => slice_model_t1_eq_t3(tau, &bws),
        SliceModel::Eq5 => slice_model_diag(tau, &bws),
    };
    p[1] + p[0] * (s - 1.0)
}

#[test]
fn model_value_matches_closed_form_slices() {
    let mut rng = rng_from_seed(31);
    for model in [SliceModel::Eq4, SliceModel::Eq5] {
        for mode in modes() {
            for _ in 0..200 {
                let mut p = vec![rng.random_range(0.1..50.0), rng.random_range(0.5..2e3)];
                for _ in 2..mode.n_params() {
                    p.push(BW * rng.random_range(0.3..3.0));
                }
                let tau = TC * rng.random_range(-5.0..5.0);
                let a = model_value(model, mode, &p, tau);
                let b = reference_value(model, mode, &p, tau);
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{model:?} {mode:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = rng_from_seed(47);
    let mut checked = 0;
    for model in [SliceModel::Eq4, SliceModel::Eq5] {
        for mode in modes() {
            for _ in 0..100 {
                let mut p = vec![rng.random_range(0.1..50.0), rng.random_range(0.5..2e3)];
                for _ in 2..mode.n_params() {
                    p.push(BW * rng.random_range(0.3..3.0));
                }
                let tau = TC * rng.random_range(-5.0..5.0);
                let analytic = model_jacobian(model, mode, &p, &[tau]);
                for k in 0..mode.n_params() {
                    let h = 1e-6 * p[k].abs();
                    let mut up = p.clone();
                    let mut down = p.clone();
                    up[k] += h;
                    down[k] -= h;
                    let fd = (reference_value(model, mode, &up, tau) - reference_value(model, mode, &down, tau))
                        / (2.0 * h);
                    // derivative scale: model value change per relative parameter change
                    let scale = (analytic[(0, k)].abs()).max(p[1].abs() / p[k].abs() * 1e-3);
                    let err = (analytic[(0, k)] - fd).abs() / scale;
                    assert!(
                        err < 1e-5,
                        "{model:?} {mode:?} param {k} τ={tau:e}: analytic {} fd {fd}",
                        analytic[(0, k)]
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 800);
}
