//! Subcommand implementations. Each returns the tables it produced; the
//! caller writes them and the manifest.

use qsg_core::channel::ChannelKind;
use qsg_core::dynamics::DEFAULT_U_STAR;
use qsg_core::estimators::{
    consensus_time_ensemble, excess_drift, fixation_estimate, log_spaced_steps, mean_early_drift_slope, snapshots,
    EstimateWithError,
};
use qsg_core::observables::mean;
use qsg_core::protocol::{run_nnd_ensemble, synthetic_labels};
use qsg_core::rng::purpose;
use qsg_core::theory::{
    consensus_time, consensus_time_rounds, crossover, fixation_probability, injection_u_drift, logistic,
    meanfield_u_from, tempered_linear_rate, total_u_drift,
};
use qsg_core::{
    effective_bandwidth, observe, run_ensemble, run_ensemble_trajectories, run_trial, Label, RandomSource, SimConfig,
    StopRule, Trajectory,
};
use rayon::prelude::*;

use crate::config::{Axis, DriftCheckSection, ExperimentConfig, NndExperiment};
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, observable_cells, observable_header, Estimates, Table};

fn bandwidth(sim: &SimConfig) -> f64 {
    effective_bandwidth(&sim.channel).as_f64()
}

fn u_star_of(stop: StopRule, fallback: f64) -> f64 {
    match stop {
        StopRule::Threshold { u_star } => u_star,
        _ => fallback,
    }
}

fn or_nan<T>(r: qsg_core::Result<T>, f: impl FnOnce(T) -> f64) -> f64 {
    r.map(f).unwrap_or(f64::NAN)
}

fn nan_estimate() -> EstimateWithError {
    EstimateWithError {
        value: f64::NAN,
        std_error: f64::NAN,
        n: 0,
    }
}

fn median(sorted: &[u64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) as f64,
    }
}

fn trajectory_rows(table: &mut Table, prefix: &[String], traj: &Trajectory) {
    for p in &traj.probes {
        let mut row = prefix.to_vec();
        row.push(p.step.to_string());
        row.extend(observable_cells(&p.record));
        table.push(row);
    }
}

/// Single runs: every probe of every trial plus the terminal state.
pub fn cmd_run(cfg: &ExperimentConfig, estimates: &mut Estimates) -> Result<Vec<Table>, CliError> {
    cfg.validate()?;
    let sim = cfg.sim();
    let trajs = run_ensemble_trajectories(&sim, cfg.trials)?;

    let mut header = vec!["trial".to_string(), "step".to_string()];
    header.extend(observable_header(cfg.k));
    let mut traj_table = Table::new("trajectory.csv", header);
    let mut term = Table::new(
        "terminals.csv",
        ["trial", "reason", "winner", "consensus_step", "final_step", "final_U"],
    );
    for (i, t) in trajs.iter().enumerate() {
        trajectory_rows(&mut traj_table, &[i.to_string()], t);
        let last = t.final_probe();
        term.push(vec![
            i.to_string(),
            t.terminal.reason.as_str().to_string(),
            fmt_opt(t.terminal.winner.map(Label::index)),
            fmt_opt(t.terminal.consensus_step),
            last.step.to_string(),
            fmt_f64(last.record.u),
        ]);
    }

    if trajs.len() > 1 {
        let finals: Vec<f64> = trajs.iter().map(|t| t.final_probe().record.u).collect();
        estimates.push("final_U".into(), &EstimateWithError::from_samples(&finals)?);
    }
    let u_star = u_star_of(cfg.stop, DEFAULT_U_STAR);
    if let Some(c) = consensus_time_ensemble(&trajs, u_star).ok().filter(|c| c.times.len() > 1) {
        estimates.push(format!("consensus_step[U*={}]", fmt_f64(u_star)), &c.estimate);
    }
    Ok(vec![traj_table, term])
}

fn integral(axis: Axis, v: f64, min: f64) -> Result<u64, CliError> {
    if v.fract() != 0.0 || v < min || v > u32::MAX as f64 {
        return Err(CliError::field(
            "sweep.values",
            format!("axis {} needs integers >= {min}, got {v}", axis.as_str()),
        ));
    }
    Ok(v as u64)
}

/// The simulation at one sweep point.
pub fn sweep_point(cfg: &ExperimentConfig, axis: Axis, v: f64) -> Result<SimConfig, CliError> {
    let mut sim = cfg.sim();
    match axis {
        Axis::N => sim.n = integral(axis, v, 2.0)? as usize,
        Axis::M => sim.channel.kind = ChannelKind::TopM(integral(axis, v, 1.0)? as u32),
        Axis::T => sim.channel.temperature = Some(v),
        Axis::H => sim.channel.bias_h = Some(v),
        Axis::Alpha => sim.alpha = v,
    }
    sim.validate()
        .map_err(|e| CliError::field("sweep.values", format!("{}={v}: {e}", axis.as_str())))?;
    Ok(sim)
}

/// Long-format sweep over one axis with theory overlay columns.
pub fn cmd_sweep(cfg: &ExperimentConfig, estimates: &mut Estimates) -> Result<Vec<Table>, CliError> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::field("sweep", "the sweep command needs a [sweep] table"))?;
    if sweep.values.is_empty() {
        return Err(CliError::field("sweep.values", "must not be empty"));
    }
    if sweep.early_window < 1 {
        return Err(CliError::field("sweep.early_window", "must be >= 1"));
    }
    let mut values = sweep.values.clone();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::field("sweep.values", "must be finite"));
    }
    values.sort_by(f64::total_cmp);
    if values.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::field("sweep.values", "must not repeat"));
    }
    let axis = sweep.axis;
    let points: Vec<SimConfig> = values
        .iter()
        .map(|&v| sweep_point(cfg, axis, v))
        .collect::<Result<_, _>>()?;
    let u_star = u_star_of(cfg.stop, sweep.u_star);
    if !(u_star > 1.0 / cfg.k as f64 && u_star < 1.0) {
        return Err(CliError::field("sweep.u_star", format!("must lie in (1/K, 1), got {u_star}")));
    }

    let trials = cfg.trials;
    let cells: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|vi| (0..trials).map(move |t| (vi, t)))
        .collect();
    let runs: Vec<Trajectory> = cells
        .par_iter()
        .map(|&(vi, t)| run_trial(&points[vi], t))
        .collect::<qsg_core::Result<_>>()?;

    let mut header: Vec<String> = ["axis", "value", "trial", "step"].iter().map(|s| s.to_string()).collect();
    header.extend(observable_header(cfg.k));
    header.extend(["meanfield_U".to_string(), "predicted_drift".to_string()]);
    let mut rows = Table::new("sweep.csv", header);
    let mut summary = Table::new(
        "sweep_summary.csv",
        [
            "axis",
            "value",
            "trials",
            "m",
            "early_drift",
            "early_drift_std_error",
            "predicted_early_drift",
            "normalized_early_drift",
            "normalized_std_error",
            "u_star",
            "consensus_trials",
            "consensus_excluded",
            "consensus_mean",
            "consensus_std_error",
            "consensus_median",
            "consensus_theory",
        ],
    );

    for (vi, (&v, sim)) in values.iter().zip(&points).enumerate() {
        let trajs = &runs[vi * trials as usize..(vi + 1) * trials as usize];
        let m = bandwidth(sim);
        let (n, k, alpha) = (sim.n, sim.k, sim.alpha);
        let value = fmt_f64(v);
        let mut predicted0 = Vec::with_capacity(trajs.len());
        for (t, traj) in trajs.iter().enumerate() {
            let u0 = traj.probes[0].record.u;
            for p in &traj.probes {
                let r = &p.record;
                let predicted = or_nan(total_u_drift(r.u, r.v, n, k, m, alpha), |d| d.total);
                if p.step == 0 {
                    predicted0.push(predicted);
                }
                let mut row = vec![axis.as_str().to_string(), value.clone(), t.to_string(), p.step.to_string()];
                row.extend(observable_cells(r));
                row.push(fmt_f64(meanfield_u_from(u0, p.step as f64, n, m, alpha)));
                row.push(fmt_f64(predicted));
                rows.push(row);
            }
        }

        let early = mean_early_drift_slope(trajs, sweep.early_window).unwrap_or_else(|_| nan_estimate());
        let scale = (n * n) as f64 / (alpha * alpha);
        let predicted_early = predicted0.iter().sum::<f64>() / predicted0.len() as f64;
        let consensus = consensus_time_ensemble(trajs, u_star).ok();
        let mut times = consensus.as_ref().map(|c| c.times.clone()).unwrap_or_default();
        times.sort_unstable();
        let c_est = consensus.as_ref().map(|c| c.estimate).unwrap_or_else(nan_estimate);
        let excluded = consensus.as_ref().map(|c| c.excluded).unwrap_or(trajs.len());
        summary.push(vec![
            axis.as_str().to_string(),
            value.clone(),
            trials.to_string(),
            fmt_f64(m),
            fmt_f64(early.value),
            fmt_f64(early.std_error),
            fmt_f64(predicted_early),
            fmt_f64(early.value * scale),
            fmt_f64(early.std_error * scale),
            fmt_f64(u_star),
            times.len().to_string(),
            excluded.to_string(),
            fmt_f64(c_est.value),
            fmt_f64(c_est.std_error),
            fmt_f64(median(&times)),
            fmt_f64(or_nan(consensus_time(u_star, k, n, m, alpha), |x| x)),
        ]);
        estimates.push(format!("early_drift[{}={value}]", axis.as_str()), &early);
        if consensus.is_some() {
            estimates.push(format!("consensus_step[{}={value}]", axis.as_str()), &c_est);
        }
    }
    Ok(vec![rows, summary])
}

/// Measured excess drift against the injection term on dynamic snapshots.
pub fn cmd_drift_check(cfg: &ExperimentConfig, estimates: &mut Estimates) -> Result<Vec<Table>, CliError> {
    cfg.validate()?;
    if !cfg.channel.is_quantized() {
        return Err(CliError::field("channel", "drift-check needs a quantized channel (hard or top-m), got soft"));
    }
    let section = cfg.drift_check.clone().unwrap_or_default();
    let DriftCheckSection {
        runs,
        snapshots_per_run,
        max_step,
        samples,
    } = section;
    if runs < 1 || snapshots_per_run < 1 || max_step < 1 || samples < 2 {
        return Err(CliError::field(
            "drift_check",
            "runs, snapshots_per_run and max_step must be >= 1, samples >= 2",
        ));
    }
    let sim = cfg.sim();
    let m = bandwidth(&sim);
    let steps = log_spaced_steps(max_step, snapshots_per_run);
    let master = RandomSource::from_seed(cfg.seed);

    let mut table = Table::new(
        "drift_check.csv",
        [
            "run",
            "step",
            "N",
            "K",
            "m",
            "alpha",
            "q",
            "U",
            "V",
            "measured_excess",
            "predicted_injection",
            "std_error",
            "pull",
            "samples",
        ],
    );
    for run in 0..runs {
        let states = snapshots(cfg.n, cfg.k, cfg.alpha, &cfg.channel, &steps, &master.derive(purpose::SNAPSHOT, run))?;
        let sample_root = master.derive(purpose::SAMPLES, run);
        for (i, state) in states.iter().enumerate() {
            let ex = excess_drift(state, &cfg.channel, cfg.alpha, samples, &sample_root.derive(purpose::SAMPLES, i as u64))?;
            let rec = observe(state);
            table.push(vec![
                run.to_string(),
                state.step_count().to_string(),
                cfg.n.to_string(),
                cfg.k.to_string(),
                fmt_f64(m),
                fmt_f64(cfg.alpha),
                fmt_f64(ex.q),
                fmt_f64(rec.u),
                fmt_f64(rec.v),
                fmt_f64(ex.estimate.value),
                fmt_f64(ex.predicted),
                fmt_f64(ex.estimate.std_error),
                fmt_f64(ex.pull()),
                samples.to_string(),
            ]);
            estimates.push(format!("excess_drift[run={run},step={}]", state.step_count()), &ex.estimate);
        }
    }
    Ok(vec![table])
}

/// Fixation probability of label 0 over an `(N, h)` grid.
pub fn cmd_fixation(cfg: &ExperimentConfig, estimates: &mut Estimates) -> Result<Vec<Table>, CliError> {
    cfg.validate()?;
    if cfg.k != 2 {
        return Err(CliError::field("K", format!("fixation needs K = 2 (the bias field is binary), got {}", cfg.k)));
    }
    let grid = cfg
        .fixation
        .as_ref()
        .ok_or_else(|| CliError::field("fixation", "the fixation command needs a [fixation] table"))?;
    if grid.n.is_empty() {
        return Err(CliError::field("fixation.N", "must not be empty"));
    }
    if grid.h.is_empty() {
        return Err(CliError::field("fixation.h", "must not be empty"));
    }
    let mut ns = grid.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut hs = grid.h.clone();
    if hs.iter().any(|h| !h.is_finite()) {
        return Err(CliError::field("fixation.h", "must be finite"));
    }
    hs.sort_by(f64::total_cmp);
    hs.dedup();

    let mut points = Vec::new();
    for &n in &ns {
        for &h in &hs {
            let mut sim = cfg.sim();
            sim.n = n;
            sim.channel.bias_h = Some(h);
            if sim.stop == StopRule::None {
                sim.stop = StopRule::Absorption;
            }
            sim.validate()
                .map_err(|e| CliError::field("fixation", format!("N={n}, h={h}: {e}")))?;
            points.push((n, h, sim));
        }
    }

    let mut table = Table::new(
        "fixation.csv",
        [
            "N",
            "h",
            "alpha",
            "m",
            "trials",
            "decided",
            "undecided",
            "wins",
            "estimate",
            "std_error",
            "wilson_low",
            "wilson_high",
            "gamma_h",
            "gamma_T",
            "N_c",
            "logistic",
            "diffusion",
        ],
    );
    for (n, h, sim) in points {
        let ens = run_ensemble(&sim, cfg.trials)?;
        let m = bandwidth(&sim);
        let p0 = mean(&sim.initial_state(0)?).weights()[0];
        let cp = crossover(n, m, sim.alpha, h, sim.channel.temperature_or_default())?;
        let fix = fixation_estimate(&ens, Label(0)).ok();
        let est = fix.map(|f| f.estimate).unwrap_or_else(nan_estimate);
        let (lo, hi) = fix.map(|f| (f.wilson_low, f.wilson_high)).unwrap_or((f64::NAN, f64::NAN));
        table.push(vec![
            n.to_string(),
            fmt_f64(h),
            fmt_f64(sim.alpha),
            fmt_f64(m),
            cfg.trials.to_string(),
            ens.decided().to_string(),
            ens.undecided().to_string(),
            ens.winner_counts[0].to_string(),
            fmt_f64(est.value),
            fmt_f64(est.std_error),
            fmt_f64(lo),
            fmt_f64(hi),
            fmt_f64(cp.gamma_h),
            fmt_f64(cp.gamma_t),
            fmt_f64(cp.n_c),
            fmt_f64(logistic(cp.gamma_h)),
            fmt_f64(fixation_probability(p0, cp.gamma_h)),
        ]);
        if fix.is_some() {
            estimates.push(format!("fixation[N={n},h={}]", fmt_f64(h)), &est);
        }
    }
    Ok(vec![table])
}

/// Mean-field overlay curve and scalar predictions for one config.
pub fn cmd_theory(cfg: &ExperimentConfig) -> Result<Vec<Table>, CliError> {
    cfg.validate()?;
    let sim = cfg.sim();
    let (n, k, alpha) = (sim.n, sim.k, sim.alpha);
    let m = bandwidth(&sim);
    let r0 = observe(&sim.initial_state(0)?);

    let mut curve = Table::new("theory.csv", ["step", "rounds", "meanfield_U"]);
    let mut t = 0;
    loop {
        curve.push(vec![
            t.to_string(),
            fmt_f64(t as f64 / n as f64),
            fmt_f64(meanfield_u_from(r0.u, t as f64, n, m, alpha)),
        ]);
        if t == sim.horizon {
            break;
        }
        t = (t + sim.probe_every).min(sim.horizon);
    }

    let u_star = u_star_of(sim.stop, DEFAULT_U_STAR);
    let temperature = sim.channel.temperature_or_default();
    let h = sim.channel.bias_or_default();
    let cp = crossover(n, m, alpha, h, temperature).ok();
    let scalars = [
        ("U0", r0.u),
        ("V0", r0.v),
        ("q0", r0.q),
        ("m", m),
        ("injection_drift_at_start", injection_u_drift(r0.q, n, m, alpha)),
        ("total_drift_at_start", or_nan(total_u_drift(r0.u, r0.v, n, k, m, alpha), |d| d.total)),
        ("u_star", u_star),
        ("consensus_time_steps", or_nan(consensus_time(u_star, k, n, m, alpha), |x| x)),
        ("consensus_time_rounds", or_nan(consensus_time_rounds(u_star, k, n, m, alpha), |x| x)),
        ("gamma_h", cp.map_or(f64::NAN, |c| c.gamma_h)),
        ("gamma_T", cp.map_or(f64::NAN, |c| c.gamma_t)),
        ("N_c", cp.map_or(f64::NAN, |c| c.n_c)),
        ("logistic_gamma_h", cp.map_or(f64::NAN, |c| logistic(c.gamma_h))),
        ("tempered_linear_rate", or_nan(tempered_linear_rate(alpha, temperature), |x| x)),
    ];
    let mut table = Table::new("theory_scalars.csv", ["name", "value"]);
    for (name, v) in scalars {
        table.push(vec![name.to_string(), fmt_f64(v)]);
    }
    Ok(vec![curve, table])
}

/// Naming-drift runs with synthetic agents.
pub fn cmd_nnd(cfg: &NndExperiment, estimates: &mut Estimates) -> Result<Vec<Table>, CliError> {
    cfg.validate()?;
    let c = &cfg.nnd;
    let trajs = run_nnd_ensemble(c, cfg.policy, cfg.trials)?;

    let mut header: Vec<String> = ["trial", "step", "provenance"].iter().map(|s| s.to_string()).collect();
    header.extend(observable_header(c.k));
    header.push("probe_U".into());
    let mut rows = Table::new("nnd_trajectory.csv", header);
    let mut term = Table::new("nnd_terminals.csv", ["trial", "referent", "consensus_step", "winner", "winner_label"]);
    let names = synthetic_labels(c.k, c.seed);
    for (i, t) in trajs.iter().enumerate() {
        for p in &t.probes {
            let mut row = vec![i.to_string(), p.step.to_string(), p.provenance.as_str().to_string()];
            row.extend(observable_cells(&p.record));
            row.push(fmt_f64(p.probe_u));
            rows.push(row);
        }
        term.push(vec![
            i.to_string(),
            t.referent.clone(),
            fmt_opt(t.consensus_step),
            fmt_opt(t.winner.map(Label::index)),
            t.winner.map(|w| names[w.index()].clone()).unwrap_or_default(),
        ]);
    }
    let mut labels = Table::new("labels.csv", ["index", "label"]);
    for (i, name) in names.iter().enumerate() {
        labels.push(vec![i.to_string(), name.clone()]);
    }

    let finals: Vec<f64> = trajs
        .iter()
        .map(|t| t.probes.last().expect("at least one probe").probe_u)
        .collect();
    if let Ok(e) = EstimateWithError::from_samples(&finals) {
        estimates.push("final_probe_U".into(), &e);
    }
    let times: Vec<f64> = trajs.iter().filter_map(|t| t.consensus_step).map(|s| s as f64).collect();
    if let Ok(e) = EstimateWithError::from_samples(&times) {
        estimates.push(format!("consensus_step[U*={}]", fmt_f64(c.u_star)), &e);
    }
    Ok(vec![rows, term, labels])
}
