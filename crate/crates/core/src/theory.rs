//! Closed-form predictions. Time is measured in interaction steps unless a
//! function name says `rounds` (one round = N steps).
//!
//! Bandwidth arguments `m` are `f64`; pass `f64::INFINITY` (or
//! [`Bandwidth::as_f64`](crate::channel::Bandwidth::as_f64) of a Soft channel)
//! for the unquantized limit.

use serde::{Deserialize, Serialize};

use crate::error::{QsgError, Result};

/// Below this |Γ| the fixation formula returns its neutral limit `p0`.
pub const NEUTRAL_GAMMA: f64 = 1e-8;

/// Tolerance for `(U, V)` consistency checks.
const MOMENT_SLACK: f64 = 1e-9;

/// Expected ΔU split into heterogeneity and quantization parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPrediction {
    pub soft_term: f64,
    pub injection_term: f64,
    pub total: f64,
}

/// Dimensionless finite-size parameters for bias and tempering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverParams {
    pub gamma_h: f64,
    pub gamma_t: f64,
    /// `f64::INFINITY` when `h == 0`.
    pub n_c: f64,
}

fn nf(n: usize) -> f64 {
    n as f64
}

/// `2 α² V / (N² (N-1))`.
pub fn soft_u_drift(v: f64, n: usize, alpha: f64) -> f64 {
    let n = nf(n);
    2.0 * alpha * alpha * v / (n * n * (n - 1.0))
}

/// `α² (1 - q) / (m N²)`.
pub fn injection_u_drift(q: f64, n: usize, m: f64, alpha: f64) -> f64 {
    let n = nf(n);
    alpha * alpha * (1.0 - q) / (m * n * n)
}

fn check_moments(u: f64, v: f64, n: usize, k: usize) -> Result<f64> {
    if n < 2 || k < 2 {
        return Err(QsgError::InvalidArgument(format!("need N >= 2 and K >= 2, got N={n}, K={k}")));
    }
    let q = u + v / nf(n);
    let lo = 1.0 / k as f64;
    let ok = v >= -MOMENT_SLACK
        && u >= lo - MOMENT_SLACK
        && u <= 1.0 + MOMENT_SLACK
        && q >= lo - MOMENT_SLACK
        && q <= 1.0 + MOMENT_SLACK;
    if ok {
        Ok(q)
    } else {
        Err(QsgError::InvalidArgument(format!(
            "inconsistent moments U={u}, V={v} (q={q}) for N={n}, K={k}"
        )))
    }
}

/// Expected one-step ΔU of a Top-m channel in terms of `(U, V)`.
pub fn total_u_drift(u: f64, v: f64, n: usize, k: usize, m: f64, alpha: f64) -> Result<DriftPrediction> {
    let q = check_moments(u, v, n, k)?;
    let soft_term = soft_u_drift(v, n, alpha);
    let injection_term = injection_u_drift(q, n, m, alpha);
    Ok(DriftPrediction {
        soft_term,
        injection_term,
        total: soft_term + injection_term,
    })
}

/// `-(2α/(N-1)) (1 - α + α/N) V`; never positive.
pub fn soft_v_contraction(v: f64, n: usize, alpha: f64) -> f64 {
    let nf = nf(n);
    -(2.0 * alpha / (nf - 1.0)) * (1.0 - alpha + alpha / nf) * v
}

/// Expected one-step ΔV of a Top-m channel.
pub fn topm_v_drift(u: f64, v: f64, n: usize, k: usize, m: f64, alpha: f64) -> Result<f64> {
    let q = check_moments(u, v, n, k)?;
    let nf = nf(n);
    Ok(soft_v_contraction(v, n, alpha) + alpha * alpha * (nf - 1.0) / (m * nf) * (1.0 - q))
}

/// `2 α V / (N (N-1)²)`; independent of the channel.
pub fn s_drift(v: f64, n: usize, alpha: f64) -> f64 {
    let n = nf(n);
    2.0 * alpha * v / (n * (n - 1.0) * (n - 1.0))
}

/// Rate `α²/(m N²)` of the mean-field ODE `dU/dt = rate (1 - U)`.
pub fn meanfield_rate(n: usize, m: f64, alpha: f64) -> f64 {
    let n = nf(n);
    alpha * alpha / (m * n * n)
}

/// Mean-field `U(t)` from the symmetric start.
pub fn meanfield_u(t: f64, n: usize, k: usize, m: f64, alpha: f64) -> f64 {
    meanfield_u_from(1.0 / k as f64, t, n, m, alpha)
}

/// Mean-field `U(t)` from an arbitrary start `U(0) = u0`.
pub fn meanfield_u_from(u0: f64, t: f64, n: usize, m: f64, alpha: f64) -> f64 {
    1.0 - (1.0 - u0) * (-meanfield_rate(n, m, alpha) * t).exp()
}

/// Mean-field `U` after `rounds` population rounds.
pub fn meanfield_u_rounds(rounds: f64, n: usize, k: usize, m: f64, alpha: f64) -> f64 {
    meanfield_u(rounds * nf(n), n, k, m, alpha)
}

/// `(t, U)` grid of the mean-field curve for overlay export.
pub fn meanfield_curve(steps: &[u64], n: usize, k: usize, m: f64, alpha: f64) -> Vec<(u64, f64)> {
    steps.iter().map(|&t| (t, meanfield_u(t as f64, n, k, m, alpha))).collect()
}

/// Mean-field hitting time of `U*` from the symmetric start, in steps.
pub fn consensus_time(u_star: f64, k: usize, n: usize, m: f64, alpha: f64) -> Result<f64> {
    let lo = 1.0 / k as f64;
    if !(u_star > lo && u_star < 1.0) {
        return Err(QsgError::InvalidArgument(format!("U* must lie in (1/K, 1) = ({lo}, 1), got {u_star}")));
    }
    Ok(((1.0 - lo) / (1.0 - u_star)).ln() / meanfield_rate(n, m, alpha))
}

/// [`consensus_time`] in population rounds.
pub fn consensus_time_rounds(u_star: f64, k: usize, n: usize, m: f64, alpha: f64) -> Result<f64> {
    Ok(consensus_time(u_star, k, n, m, alpha)? / nf(n))
}

/// `Γ_h = (mN/α) h`, `Γ_T = (mN/α)|1/T - 1|`, `N_c = α/(m|h|)`.
pub fn crossover(n: usize, m: f64, alpha: f64, h: f64, temperature: f64) -> Result<CrossoverParams> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(QsgError::InvalidRate(alpha));
    }
    if !(m >= 1.0) {
        return Err(QsgError::InvalidArgument(format!("bandwidth must be >= 1, got {m}")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(QsgError::InvalidTemperature(temperature));
    }
    let scale = m * nf(n) / alpha;
    Ok(CrossoverParams {
        gamma_h: scale * h,
        gamma_t: scale * (1.0 / temperature - 1.0).abs(),
        n_c: if h == 0.0 { f64::INFINITY } else { alpha / (m * h.abs()) },
    })
}

/// Diffusion fixation probability `(1 - e^{-2Γ p0}) / (1 - e^{-2Γ})`.
pub fn fixation_probability(p0: f64, gamma: f64) -> f64 {
    let p0 = p0.clamp(0.0, 1.0);
    if gamma.abs() < NEUTRAL_GAMMA {
        return p0;
    }
    if gamma < 0.0 {
        return 1.0 - fixation_probability(1.0 - p0, -gamma);
    }
    let num = -(-2.0 * gamma * p0).exp_m1();
    let den = -(-2.0 * gamma).exp_m1();
    (num / den).clamp(0.0, 1.0)
}

/// `1 / (1 + e^{-Γ})`.
pub fn logistic(gamma: f64) -> f64 {
    1.0 / (1.0 + (-gamma).exp())
}

/// `E[M_∞] = 2 π(1/2) - 1`.
pub fn expected_terminal_magnetization(gamma: f64) -> f64 {
    2.0 * fixation_probability(0.5, gamma) - 1.0
}

/// Per-round growth rate `α (1/T - 1)` of a small asymmetry under tempering.
pub fn tempered_linear_rate(alpha: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(QsgError::InvalidTemperature(temperature));
    }
    Ok(alpha * (1.0 / temperature - 1.0))
}
