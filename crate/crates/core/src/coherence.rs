//! Closed-form temporal coherence of cascaded pseudothermal light.
//!
//! Each rotating-groundglass stage with a flat spectrum of angular width
//! `Δω` contributes a first-order coherence `g1(τ) = sinc(Δω τ / 2)`. For a
//! single stage the N-fold intensity correlation is the permanent of the
//! matrix `M_ij = g1(t_i − t_j)`; independent stages multiply. All values
//! returned here are background-normalized degrees of coherence: they tend
//! to 1 once every pairwise delay is much longer than the coherence time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimeTuple;

/// Largest order accepted by the permutation-sum route.
pub const MAX_PERMANENT_ORDER: usize = 6;

/// `sin(x)/x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Derivative of [`sinc`].
pub fn sinc_prime(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        -x / 3.0 * (1.0 - x2 / 10.0)
    } else {
        (x.cos() - x.sin() / x) / x
    }
}

/// First-order coherence of a flat spectrum of angular width `bandwidth`.
pub fn g1(tau: f64, bandwidth: f64) -> f64 {
    sinc(0.5 * bandwidth * tau)
}

/// One stage's third-order factor:
/// `1 + s12² + s23² + s31² + 2·s12·s23·s31`.
pub fn stage_bracket(times: TimeTuple, bandwidth: f64) -> f64 {
    let s12 = g1(times.t1 - times.t2, bandwidth);
    let s23 = g1(times.t2 - times.t3, bandwidth);
    let s31 = g1(times.t3 - times.t1, bandwidth);
    1.0 + s12 * s12 + s23 * s23 + s31 * s31 + 2.0 * s12 * s23 * s31
}

/// The 3! permutations of three indices.
const PERMUTATIONS_3: [[usize; 3]; 6] = [
    [0, 1, 2],
    [1, 0, 2],
    [2, 1, 0],
    [0, 2, 1],
    [1, 2, 0],
    [2, 0, 1],
];

/// Single-stage third-order factor as an explicit sum over the six ways of
/// routing three photons: `Σ_σ Π_i g1(t_i − t_σ(i))`.
pub fn permanent_oracle(times: TimeTuple, bandwidth: f64) -> f64 {
    let t = times.as_array();
    let m = |i: usize, j: usize| g1(t[i] - t[j], bandwidth);
    PERMUTATIONS_3
        .iter()
        .map(|p| m(0, p[0]) * m(1, p[1]) * m(2, p[2]))
        .sum()
}

/// Permanent of a square row-major matrix by enumeration of all `n!`
/// permutations (Heap's algorithm). Intended for `n <= 6`.
pub fn permanent(matrix: &[f64], n: usize) -> f64 {
    assert_eq!(matrix.len(), n * n, "matrix is not {n}x{n}");
    if n == 0 {
        return 1.0;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let term = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| matrix[i * n + j]).product() };
    let mut sum = term(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            sum += term(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    sum
}

/// Order and stage bandwidths of a cascaded pseudothermal source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceModel {
    pub order: usize,
    /// Per-stage angular bandwidths, rad/s. Empty means coherent light.
    pub bandwidths: Vec<f64>,
}

impl CoherenceModel {
    pub fn new(order: usize, bandwidths: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("order must be >= 1".into()));
        }
        if let Some(b) = bandwidths.iter().find(|b| !(**b > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "bandwidths must be > 0 (got {b})"
            )));
        }
        Ok(CoherenceModel { order, bandwidths })
    }

    pub fn n_stages(&self) -> usize {
        self.bandwidths.len()
    }

    /// Degree of N-th order coherence at arbitrary detection times, via the
    /// per-stage permutation sum. `times.len()` must equal the order.
    pub fn gn(&self, times: &[f64]) -> Result<f64> {
        let n = self.order;
        if times.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} detection times, got {}",
                times.len()
            )));
        }
        if n > MAX_PERMANENT_ORDER {
            return Err(Error::InvalidArgument(format!(
                "order {n} exceeds the permutation-sum limit {MAX_PERMANENT_ORDER}"
            )));
        }
        let mut m = vec![0.0; n * n];
        Ok(self
            .bandwidths
            .iter()
            .map(|&bw| {
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = g1(times[i] - times[j], bw);
                    }
                }
                permanent(&m, n)
            })
            .product())
    }
}

/// Degree of third-order coherence `g3(t1, t2, t3)` for a cascade with the
/// given stage bandwidths.
pub fn g3(times: TimeTuple, bandwidths: &[f64]) -> f64 {
    bandwidths
        .iter()
        .map(|&bw| stage_bracket(times, bw))
        .product()
}

/// Zero-delay degree of N-th order coherence, `(N!)^n`, computed exactly.
pub fn gn_zero(order: u32, n_stages: u32) -> Result<u128> {
    let overflow = || Error::Overflow {
        order,
        stages: n_stages,
    };
    let fact = (1..=order as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .ok_or_else(overflow)?;
    (0..n_stages)
        .try_fold(1u128, |acc, _| acc.checked_mul(fact))
        .ok_or_else(overflow)
}

/// Normalized slice along t1 = t3 (delay `tau = t1 − t2`):
/// `Π_l [2 + 4·g1(τ)²] / 2`. Tail 1, peak `3^n`.
pub fn slice_model_t1_eq_t3(tau: f64, bandwidths: &[f64]) -> f64 {
    bandwidths
        .iter()
        .map(|&bw| {
            let s = g1(tau, bw);
            1.0 + 2.0 * s * s
        })
        .product()
}

/// Normalized slice along t1 − t2 = t2 − t3 = `tau`:
/// `Π_l [1 + 2·g1(τ)² + g1(2τ)² + 2·g1(τ)²·g1(2τ)]`. Tail 1, peak `6^n`.
pub fn slice_model_diag(tau: f64, bandwidths: &[f64]) -> f64 {
    bandwidths
        .iter()
        .map(|&bw| {
            let s1 = g1(tau, bw);
            let s2 = g1(2.0 * tau, bw);
            1.0 + 2.0 * s1 * s1 + s2 * s2 + 2.0 * s1 * s1 * s2
        })
        .product()
}
