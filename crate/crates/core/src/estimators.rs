//! Monte Carlo measurements that connect simulations to the closed forms:
//! one-step drifts, early slopes, consensus times, fixation statistics,
//! scaling fits and the shared effective-α fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{effective_bandwidth, emit_into, ChannelSpec, Emitted, Scratch};
use crate::dynamics::{select_pair, EnsembleResult, PopulationState, Trajectory};
use crate::error::{QsgError, Result};
use crate::observables::{mean, self_overlap};
use crate::rng::{purpose, RandomSource};
use crate::simplex::{check_rate, Label};
use crate::theory::{injection_u_drift, meanfield_u};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959963984540054;

const CHUNK: usize = 4096;

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub n: u64,
}

impl EstimateWithError {
    /// Sample mean and standard error of the mean.
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let mut acc = Moments::default();
        xs.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }

    /// Whether `target` lies within `sigmas` standard errors, with a
    /// rounding floor of `1e-12 |target|` for zero-variance estimates.
    pub fn covers(&self, target: f64, sigmas: f64) -> bool {
        (self.value - target).abs() <= sigmas * self.std_error + 1e-12 * target.abs()
    }
}

/// Streaming mean and variance (Welford), mergeable across workers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        Moments {
            n,
            mean: self.mean + d * nb / n as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / n as f64,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 for a single sample.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self) -> Result<EstimateWithError> {
        if self.n == 0 {
            return Err(QsgError::InsufficientData("no samples".into()));
        }
        Ok(EstimateWithError {
            value: self.mean,
            std_error: (self.variance() / self.n as f64).sqrt(),
            n: self.n,
        })
    }
}

/// Precomputed pieces for evaluating ΔU of a single step without copying
/// the population.
struct DriftKernel<'a> {
    state: &'a PopulationState,
    xbar: Vec<f64>,
    scale: f64,
}

impl<'a> DriftKernel<'a> {
    fn new(state: &'a PopulationState, alpha: f64) -> Self {
        Self {
            state,
            xbar: mean(state).into_weights(),
            scale: alpha / state.n() as f64,
        }
    }

    /// ΔU when `listener` moves toward message `y`.
    fn delta_u(&self, listener: usize, y: Message<'_>) -> f64 {
        let x_l = self.state.agents()[listener].weights();
        let mut acc = 0.0;
        for (j, (&xl, &xb)) in x_l.iter().zip(&self.xbar).enumerate() {
            let yj = match y {
                Message::Vertex(v) => (j == v) as u8 as f64,
                Message::Dense(w) => w[j],
            };
            let d = self.scale * (yj - xl);
            acc += d * (2.0 * xb + d);
        }
        acc
    }

    fn emit<'s>(&self, speaker: usize, channel: &ChannelSpec, rng: &mut RandomSource, scratch: &'s mut Scratch) -> Message<'s> {
        match emit_into(self.state.agents()[speaker].weights(), channel, rng, scratch) {
            Emitted::Vertex(v) => Message::Vertex(v),
            Emitted::Dense => Message::Dense(&scratch.message),
        }
    }

    fn soft_delta(&self, speaker: usize, listener: usize) -> f64 {
        self.delta_u(listener, Message::Dense(self.state.agents()[speaker].weights()))
    }
}

#[derive(Clone, Copy)]
enum Message<'a> {
    Vertex(usize),
    Dense(&'a [f64]),
}

fn check_drift_inputs(state: &PopulationState, channel: &ChannelSpec, alpha: f64, samples: u64) -> Result<()> {
    check_rate(alpha)?;
    channel.validate(state.k())?;
    if samples < 1 {
        return Err(QsgError::InvalidArgument("samples must be >= 1".into()));
    }
    Ok(())
}

/// Runs `samples` draws of `f` in parallel chunks, each chunk on its own
/// derived stream, and merges the moments in chunk order.
fn sample_moments<F>(samples: u64, rng: &RandomSource, stream_purpose: u64, f: F) -> Moments
where
    F: Fn(&mut RandomSource, &mut Scratch) -> f64 + Sync,
    {
    let chunks = samples.div_ceil(CHUNK as u64);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut local = rng.derive(stream_purpose, c);
            let mut scratch = Scratch::default();
            let len = (samples - c * CHUNK as u64).min(CHUNK as u64);
            let mut m = Moments::default();
            for _ in 0..len {
                m.push(f(&mut local, &mut scratch));
            }
            m
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Moments::default(), Moments::merge)
}

/// Mean and standard error of ΔU over `samples` independent single steps,
/// all launched from `state`.
pub fn one_step_drift(
    state: &PopulationState,
    channel: &ChannelSpec,
    alpha: f64,
    samples: u64,
    rng: &RandomSource,
) -> Result<EstimateWithError> {
    check_drift_inputs(state, channel, alpha, samples)?;
    let kernel = DriftKernel::new(state, alpha);
    let k = state.k();
    let n = state.n();
    sample_moments(samples, rng, purpose::SAMPLES, |r, scratch| {
        if scratch.message.len() != k {
            *scratch = Scratch::new(k);
        }
        let (s, l) = select_pair(n, r).expect("validated population");
        let y = kernel.emit(s, channel, r, scratch);
        kernel.delta_u(l, y)
    })
    .estimate()
}

/// Mean and standard error of the one-step change of any observable, all
/// steps launched from `state`.
pub fn one_step_change<F>(
    state: &PopulationState,
    channel: &ChannelSpec,
    alpha: f64,
    samples: u64,
    rng: &RandomSource,
    observable: F,
) -> Result<EstimateWithError>
where
    F: Fn(&PopulationState) -> f64 + Sync,
{
    check_drift_inputs(state, channel, alpha, samples)?;
    let before = observable(state);
    let chunks = samples.div_ceil(CHUNK as u64);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut local = rng.derive(purpose::SAMPLES, c);
            let mut work = state.clone();
            let mut scratch = Scratch::new(state.k());
            let len = (samples - c * CHUNK as u64).min(CHUNK as u64);
            let mut m = Moments::default();
            for _ in 0..len {
                let (_, l) = work.advance(alpha, channel, &mut local, &mut scratch);
                m.push(observable(&work) - before);
                work.undo_step(l, &state.agents()[l]);
            }
            m
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Moments::default(), Moments::merge)
        .estimate()
}

/// Quantized drift minus the Soft baseline on the same snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessDrift {
    pub estimate: EstimateWithError,
    /// `α²(1-q)/(mN²)` at the snapshot's `q`.
    pub predicted: f64,
    pub q: f64,
}

impl ExcessDrift {
    /// `(measured - predicted) / std_error`; 0 when both agree exactly.
    pub fn pull(&self) -> f64 {
        let d = self.estimate.value - self.predicted;
        if d == 0.0 {
            0.0
        } else {
            d / self.estimate.std_error
        }
    }
}

fn check_quantized(channel: &ChannelSpec) -> Result<()> {
    if channel.is_quantized() {
        Ok(())
    } else {
        Err(QsgError::InvalidArgument("excess drift is undefined for the Soft channel".into()))
    }
}

fn excess_prediction(state: &PopulationState, channel: &ChannelSpec, alpha: f64) -> (f64, f64) {
    let q = self_overlap(state);
    let m = effective_bandwidth(channel).as_f64();
    (injection_u_drift(q, state.n(), m, alpha), q)
}

/// Excess drift with the Soft baseline evaluated on the same pair draw as
/// the quantized step.
pub fn excess_drift(
    state: &PopulationState,
    channel: &ChannelSpec,
    alpha: f64,
    samples: u64,
    rng: &RandomSource,
) -> Result<ExcessDrift> {
    check_quantized(channel)?;
    check_drift_inputs(state, channel, alpha, samples)?;
    let kernel = DriftKernel::new(state, alpha);
    let (k, n) = (state.k(), state.n());
    let estimate = sample_moments(samples, rng, purpose::SAMPLES, |r, scratch| {
        if scratch.message.len() != k {
            *scratch = Scratch::new(k);
        }
        let (s, l) = select_pair(n, r).expect("validated population");
        let soft = kernel.soft_delta(s, l);
        let y = kernel.emit(s, channel, r, scratch);
        kernel.delta_u(l, y) - soft
    })
    .estimate()?;
    let (predicted, q) = excess_prediction(state, channel, alpha);
    Ok(ExcessDrift { estimate, predicted, q })
}

/// Excess drift with independent pair draws for the two channels.
pub fn excess_drift_unpaired(
    state: &PopulationState,
    channel: &ChannelSpec,
    alpha: f64,
    samples: u64,
    rng: &RandomSource,
) -> Result<ExcessDrift> {
    check_quantized(channel)?;
    let quantized = one_step_drift(state, channel, alpha, samples, rng)?;
    let soft = one_step_drift(state, &ChannelSpec::soft(), alpha, samples, &rng.derive(purpose::SAMPLES, u64::MAX))?;
    let (predicted, q) = excess_prediction(state, channel, alpha);
    Ok(ExcessDrift {
        estimate: EstimateWithError {
            value: quantized.value - soft.value,
            std_error: quantized.std_error.hypot(soft.std_error),
            n: samples,
        },
        predicted,
        q,
    })
}

/// Least-squares line through `(x, y)` with the slope's standard error.
fn ols(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_se = if points.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, slope_se, r2)
}

/// Least-squares slope of U against step over probes `0..=window`.
pub fn early_drift_slope(traj: &Trajectory, window: usize) -> Result<EstimateWithError> {
    if window < 1 {
        return Err(QsgError::InvalidArgument("window must be >= 1".into()));
    }
    if traj.probes.len() < window + 1 {
        return Err(QsgError::InsufficientData(format!(
            "need {} probes for window {window}, trajectory has {}",
            window + 1,
            traj.probes.len()
        )));
    }
    let pts: Vec<(f64, f64)> = traj.probes[..=window]
        .iter()
        .map(|p| (p.step as f64, p.record.u))
        .collect();
    let (slope, _, se, _) = ols(&pts);
    Ok(EstimateWithError {
        value: slope,
        std_error: se,
        n: pts.len() as u64,
    })
}

/// Mean early slope across trajectories, with the across-trial standard error.
pub fn mean_early_drift_slope(trajs: &[Trajectory], window: usize) -> Result<EstimateWithError> {
    let mut acc = Moments::default();
    for t in trajs {
        acc.push(early_drift_slope(t, window)?.value);
    }
    acc.estimate()
}

/// Per-probe ensemble mean of U. All trajectories must share probe steps.
pub fn mean_u_series(trajs: &[Trajectory]) -> Result<Vec<(u64, EstimateWithError)>> {
    let first = trajs
        .first()
        .ok_or_else(|| QsgError::InsufficientData("no trajectories".into()))?;
    let steps: Vec<u64> = first.probes.iter().map(|p| p.step).collect();
    let mut acc = vec![Moments::default(); steps.len()];
    for t in trajs {
        if t.probes.len() != steps.len() || t.probes.iter().zip(&steps).any(|(p, s)| p.step != *s) {
            return Err(QsgError::InvalidArgument("trajectories have different probe steps".into()));
        }
        for (a, p) in acc.iter_mut().zip(&t.probes) {
            a.push(p.record.u);
        }
    }
    steps
        .into_iter()
        .zip(acc)
        .map(|(s, a)| Ok((s, a.estimate()?)))
        .collect()
}

fn check_u_star(u_star: f64, k: usize) -> Result<()> {
    let lo = 1.0 / k as f64;
    if u_star > lo && u_star < 1.0 {
        Ok(())
    } else {
        Err(QsgError::InvalidArgument(format!("U* must lie in (1/K, 1) = ({lo}, 1), got {u_star}")))
    }
}

/// Step of the first probe with `U >= U*`, if any.
pub fn consensus_time_empirical(traj: &Trajectory, u_star: f64) -> Result<Option<u64>> {
    check_u_star(u_star, traj.final_probe().record.mean.k())?;
    Ok(traj.probes.iter().find(|p| p.record.u >= u_star).map(|p| p.step))
}

/// Consensus times aggregated over trials that cross `U*` and also end at
/// or above it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusTimes {
    pub estimate: EstimateWithError,
    pub times: Vec<u64>,
    pub excluded: usize,
}

pub fn consensus_time_ensemble(trajs: &[Trajectory], u_star: f64) -> Result<ConsensusTimes> {
    let mut times = Vec::new();
    let mut excluded = 0;
    for t in trajs {
        match consensus_time_empirical(t, u_star)? {
            Some(step) if t.final_probe().record.u >= u_star => times.push(step),
            _ => excluded += 1,
        }
    }
    let samples: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    let estimate = EstimateWithError::from_samples(&samples)
        .map_err(|_| QsgError::InsufficientData(format!("no trial reached U*={u_star}")))?;
    Ok(ConsensusTimes {
        estimate,
        times,
        excluded,
    })
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Fraction of decided trials won by one label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationEstimate {
    pub estimate: EstimateWithError,
    pub wins: u64,
    pub decided: u64,
    pub undecided: u64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl FixationEstimate {
    pub fn from_counts(wins: u64, decided: u64, undecided: u64) -> Result<Self> {
        if decided == 0 {
            return Err(QsgError::InsufficientData("no decided trials".into()));
        }
        if wins > decided {
            return Err(QsgError::InvalidArgument(format!("{wins} wins out of {decided} decided trials")));
        }
        let p = wins as f64 / decided as f64;
        let (wilson_low, wilson_high) = wilson_interval(wins, decided, Z_95);
        Ok(Self {
            estimate: EstimateWithError {
                value: p,
                std_error: (p * (1.0 - p) / decided as f64).sqrt(),
                n: decided,
            },
            wins,
            decided,
            undecided,
            wilson_low,
            wilson_high,
        })
    }
}

pub fn fixation_estimate(ensemble: &EnsembleResult, label: Label) -> Result<FixationEstimate> {
    let wins = *ensemble
        .winner_counts
        .get(label.index())
        .ok_or(QsgError::LabelOutOfRange {
            index: label.index(),
            k: ensemble.winner_counts.len(),
        })?;
    FixationEstimate::from_counts(wins, ensemble.decided(), ensemble.undecided())
}

/// Ordinary least squares on `(ln x, ln y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub slope_std_error: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn loglog_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(QsgError::InsufficientData(format!("need >= 2 points, got {}", points.len())));
    }
    if let Some(bad) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(QsgError::InvalidArgument(format!("log-log fit needs positive values, got {bad:?}")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.iter().all(|p| p.0 == logs[0].0) {
        return Err(QsgError::InvalidArgument("log-log fit needs at least two distinct x".into()));
    }
    let (slope, intercept, slope_std_error, r_squared) = ols(&logs);
    Ok(ScalingFit {
        slope,
        slope_std_error,
        intercept,
        r_squared,
        points: logs,
    })
}

/// Best shared α and its summed squared residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    pub residual: f64,
    /// True when the coarse scan found several local minima and the dense
    /// grid was used to bracket.
    pub used_dense_grid: bool,
}

const ALPHA_MIN: f64 = 1e-6;

/// The α in (0, 1] minimizing the pooled squared error between probed U(t)
/// and the mean-field curve for each trajectory's N.
pub fn effective_alpha_fit(trajectories: &[(usize, Trajectory)], k: usize, m: f64) -> Result<AlphaFit> {
    if trajectories.is_empty() {
        return Err(QsgError::InsufficientData("no trajectories".into()));
    }
    let series: Vec<(usize, Vec<(f64, f64)>)> = trajectories
        .iter()
        .map(|(n, t)| (*n, t.probes.iter().map(|p| (p.step as f64, p.record.u)).collect()))
        .collect();
    effective_alpha_fit_points(&series, k, m)
}

/// [`effective_alpha_fit`] on raw `(N, [(t, U)])` series.
pub fn effective_alpha_fit_points(series: &[(usize, Vec<(f64, f64)>)], k: usize, m: f64) -> Result<AlphaFit> {
    if series.iter().all(|(_, s)| s.is_empty()) {
        return Err(QsgError::InsufficientData("no probe points".into()));
    }
    let objective = |a: f64| -> f64 {
        series
            .iter()
            .flat_map(|(n, pts)| pts.iter().map(move |(t, u)| (u - meanfield_u(*t, *n, k, m, a)).powi(2)))
            .sum()
    };
    let grid = |count: usize| -> Vec<(f64, f64)> {
        (0..count)
            .map(|i| {
                let a = ALPHA_MIN + (1.0 - ALPHA_MIN) * i as f64 / (count - 1) as f64;
                (a, objective(a))
            })
            .collect()
    };
    let coarse = grid(50);
    let local_minima = (0..coarse.len())
        .filter(|&i| {
            let left = i == 0 || coarse[i - 1].1 > coarse[i].1;
            let right = i + 1 == coarse.len() || coarse[i + 1].1 >= coarse[i].1;
            left && right
        })
        .count();
    let used_dense_grid = local_minima > 1;
    let scan = if used_dense_grid { grid(1000) } else { coarse };
    let best = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap();
    let lo = scan[best.saturating_sub(1)].0;
    let hi = scan[(best + 1).min(scan.len() - 1)].0;
    let alpha = golden_section(&objective, lo, hi, 1e-10);
    let (alpha, residual) = [(alpha, objective(alpha)), scan[best]]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    Ok(AlphaFit {
        alpha,
        residual,
        used_dense_grid,
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `count` distinct integer steps spaced roughly logarithmically in `[1, max]`.
pub fn log_spaced_steps(max: u64, count: usize) -> Vec<u64> {
    if max == 0 || count == 0 {
        return Vec::new();
    }
    let lmax = (max as f64).ln();
    let mut out: Vec<u64> = (0..count)
        .map(|i| {
            let f = if count == 1 { 1.0 } else { i as f64 / (count - 1) as f64 };
            (f * lmax).exp().round().clamp(1.0, max as f64) as u64
        })
        .collect();
    out.dedup();
    out
}

/// Snapshots of one Hard run from the symmetric state, saved at `steps`.
pub fn hard_snapshots(n: usize, k: usize, alpha: f64, steps: &[u64], rng: &RandomSource) -> Result<Vec<PopulationState>> {
    snapshots(n, k, alpha, &ChannelSpec::hard(), steps, rng)
}

/// Snapshots of one run of `channel` from the symmetric state.
pub fn snapshots(
    n: usize,
    k: usize,
    alpha: f64,
    channel: &ChannelSpec,
    steps: &[u64],
    rng: &RandomSource,
) -> Result<Vec<PopulationState>> {
    check_rate(alpha)?;
    channel.validate(k)?;
    if steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(QsgError::InvalidArgument("snapshot steps must be nondecreasing".into()));
    }
    let mut state = PopulationState::symmetric(n, k)?;
    let mut r = rng.derive(purpose::SNAPSHOT, 0);
    let mut scratch = Scratch::new(k);
    let mut out = Vec::with_capacity(steps.len());
    for &target in steps {
        while state.step_count() < target {
            state.advance(alpha, channel, &mut r, &mut scratch);
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Test statistic and p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(QsgError::InsufficientData("KS test needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square goodness of fit against `probs`.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<TestResult> {
    if counts.len() < 2 || counts.len() != probs.len() {
        return Err(QsgError::InvalidArgument("need >= 2 categories with matching probabilities".into()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(QsgError::InsufficientData("no observations".into()));
    }
    let statistic: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| QsgError::InvalidArgument(e.to_string()))?;
    Ok(TestResult {
        statistic,
        p_value: dist.sf(statistic),
    })
}

/// Chi-square test of uniformity across categories.
pub fn chi_square_uniform(counts: &[u64]) -> Result<TestResult> {
    let p = 1.0 / counts.len().max(1) as f64;
    chi_square_gof(counts, &vec![p; counts.len()])
}
