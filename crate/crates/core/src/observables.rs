//! Macroscopic order parameters of a population state.
//!
//! `U = ‖x̄‖²` (polarization), `V = Σ‖x_i − x̄‖²` (disagreement energy),
//! `q = (1/N) Σ‖x_i‖²` (mean self-overlap) and the coordination rate
//! `S = U − V / (N(N−1))`, plus entropy and magnetization of the mean.

use serde::{Deserialize, Serialize};

use crate::dynamics::PopulationState;
use crate::error::{QsgError, Result};
use crate::simplex::{SimplexVector, SUM_TOLERANCE};

/// Stabilizer inside the entropy logarithm.
pub const ENTROPY_EPSILON: f64 = 1e-12;

/// All observables at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub mean: SimplexVector,
    pub u: f64,
    pub v: f64,
    pub q: f64,
    pub s: f64,
    pub h: f64,
    pub m: f64,
    pub p_max: f64,
}

impl ObservableRecord {
    /// Record for a state observed only through an estimated mean (no
    /// per-agent information): `V`, `q`, `S` are NaN.
    pub fn from_mean_only(mean: SimplexVector) -> Self {
        let (h, m) = entropy_magnetization(&mean);
        let u = mean.norm_sq();
        let p_max = mean.argmax().1;
        Self {
            mean,
            u,
            v: f64::NAN,
            q: f64::NAN,
            s: f64::NAN,
            h,
            m,
            p_max,
        }
    }
}

/// Population mean `x̄`.
pub fn mean(state: &PopulationState) -> SimplexVector {
    mean_of(state.agents())
}

pub(crate) fn mean_of(agents: &[SimplexVector]) -> SimplexVector {
    let k = agents[0].k();
    let n = agents.len() as f64;
    let mut acc = vec![0.0; k];
    for x in agents {
        for (a, w) in acc.iter_mut().zip(x.weights()) {
            *a += w;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    debug_assert!((acc.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
    SimplexVector::from_raw(acc)
}

/// Polarization `U = ‖x̄‖²`.
pub fn polarization(state: &PopulationState) -> f64 {
    mean(state).norm_sq()
}

/// Disagreement energy `V = Σ_i ‖x_i − x̄‖²`, summed directly.
pub fn disagreement(state: &PopulationState) -> f64 {
    disagreement_about(state.agents(), &mean(state))
}

fn disagreement_about(agents: &[SimplexVector], xbar: &SimplexVector) -> f64 {
    agents
        .iter()
        .map(|x| {
            x.weights()
                .iter()
                .zip(xbar.weights())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Mean self-overlap `q = (1/N) Σ_i ‖x_i‖²`.
pub fn self_overlap(state: &PopulationState) -> f64 {
    state.agents().iter().map(SimplexVector::norm_sq).sum::<f64>() / state.n() as f64
}

/// Coordination rate `S = (1/(N(N−1))) Σ_{i≠j} x_i·x_j`, via `S = U − V/(N(N−1))`.
pub fn coordination(state: &PopulationState) -> Result<f64> {
    let n = state.n();
    if n < 2 {
        return Err(QsgError::InvalidPopulation(format!("coordination needs N >= 2, got {n}")));
    }
    let xbar = mean(state);
    let u = xbar.norm_sq();
    let v = disagreement_about(state.agents(), &xbar);
    Ok(u - v / (n as f64 * (n as f64 - 1.0)))
}

/// Normalized entropy `H = −(1/log K) Σ x̄_k log(x̄_k + ε)` (clamped to [0,1])
/// and magnetization `M = (K p_max − 1)/(K − 1)`.
pub fn entropy_magnetization(mean: &SimplexVector) -> (f64, f64) {
    let k = mean.k() as f64;
    let raw: f64 = mean
        .weights()
        .iter()
        .map(|x| x * (x + ENTROPY_EPSILON).ln())
        .sum::<f64>();
    let h = (-raw / k.ln()).clamp(0.0, 1.0);
    let p = mean.argmax().1;
    let m = (k * p - 1.0) / (k - 1.0);
    (h, m.clamp(0.0, 1.0))
}

/// One-vs-rest ansatz: maps `U` to `(p, M, H)` assuming the mean has one
/// coordinate `p` and the rest equal.
pub fn one_vs_rest_maps(u: f64, k: usize) -> Result<(f64, f64, f64)> {
    if k < 2 {
        return Err(QsgError::InvalidDimension(k));
    }
    let kf = k as f64;
    if !(u >= 1.0 / kf - 1e-12 && u <= 1.0 + 1e-12) {
        return Err(QsgError::InvalidArgument(format!("U={u} outside [1/K, 1] for K={k}")));
    }
    let excess = (kf * u - 1.0).max(0.0);
    let p = ((1.0 + ((kf - 1.0) * excess).sqrt()) / kf).min(1.0);
    let m = (excess / (kf - 1.0)).sqrt().min(1.0);
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    let rest = 1.0 - p;
    let rest_term = if rest > 0.0 { rest * (rest / (kf - 1.0)).ln() } else { 0.0 };
    let h = (-(xlogx(p) + rest_term) / kf.ln()).clamp(0.0, 1.0);
    Ok((p, m, h))
}

/// Computes every observable in one pass over the agents.
pub fn observe(state: &PopulationState) -> ObservableRecord {
    let agents = state.agents();
    let n = agents.len() as f64;
    let xbar = mean_of(agents);
    let u = xbar.norm_sq();
    let v = disagreement_about(agents, &xbar);
    let q = agents.iter().map(SimplexVector::norm_sq).sum::<f64>() / n;
    let s = u - v / (n * (n - 1.0));
    let (h, m) = entropy_magnetization(&xbar);
    let p_max = xbar.argmax().1;
    ObservableRecord {
        mean: xbar,
        u,
        v,
        q,
        s,
        h,
        m,
        p_max,
    }
}
