//! The gossip Markov process on a complete graph: uniform ordered-pair
//! scheduling, single interactions, probed trajectories and ensembles.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{emit_into, ChannelSpec, Emitted, Scratch};
use crate::error::{config_err, QsgError, Result};
use crate::observables::{observe, ObservableRecord};
use crate::rng::{purpose, RandomSource};
use crate::simplex::{check_rate, uniform_vector, Label, SimplexVector};

/// Per-coordinate tolerance when deciding that an agent sits on a vertex.
pub const VERTEX_TOLERANCE: f64 = 1e-12;
/// Consensus threshold used when a config asks for one without a value.
pub const DEFAULT_U_STAR: f64 = 0.9;

/// Beliefs of all N agents plus the interaction counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    agents: Vec<SimplexVector>,
    step_count: u64,
}

impl PopulationState {
    pub fn new(agents: Vec<SimplexVector>) -> Result<Self> {
        if agents.len() < 2 {
            return Err(QsgError::InvalidPopulation(format!("need N >= 2 agents, got {}", agents.len())));
        }
        let k = agents[0].k();
        if let Some(bad) = agents.iter().find(|a| a.k() != k) {
            return Err(QsgError::DimensionMismatch {
                expected: k,
                found: bad.k(),
            });
        }
        Ok(Self { agents, step_count: 0 })
    }

    /// Every agent at `1/K`.
    pub fn symmetric(n: usize, k: usize) -> Result<Self> {
        Self::new(vec![uniform_vector(k)?; n])
    }

    /// Agents drawn i.i.d. from a symmetric Dirichlet(concentration).
    pub fn dirichlet(n: usize, k: usize, concentration: f64, rng: &mut RandomSource) -> Result<Self> {
        if k < 2 {
            return Err(QsgError::InvalidDimension(k));
        }
        let gamma = Gamma::new(concentration, 1.0)
            .map_err(|e| QsgError::InvalidArgument(format!("dirichlet concentration {concentration}: {e}")))?;
        let agents = (0..n)
            .map(|_| loop {
                let masses: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
                if masses.iter().sum::<f64>() > 0.0 {
                    break SimplexVector::from_masses(masses);
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(agents)
    }

    pub fn agents(&self) -> &[SimplexVector] {
        &self.agents
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn k(&self) -> usize {
        self.agents[0].k()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Overwrites agent `i` and rewinds the step counter; undoes an
    /// `advance` whose listener was `i`.
    pub(crate) fn undo_step(&mut self, i: usize, previous: &SimplexVector) {
        self.agents[i].blend_in_place(previous.weights(), 1.0);
        self.step_count -= 1;
    }

    /// One interaction in place. Returns `(speaker, listener)`.
    pub(crate) fn advance(
        &mut self,
        alpha: f64,
        channel: &ChannelSpec,
        rng: &mut RandomSource,
        scratch: &mut Scratch,
    ) -> (usize, usize) {
        let (s, l) = pair_from_draw(self.agents.len(), rng);
        match emit_into(self.agents[s].weights(), channel, rng, scratch) {
            Emitted::Vertex(k) => self.agents[l].blend_toward_vertex(k, alpha),
            Emitted::Dense => self.agents[l].blend_in_place(&scratch.message, alpha),
        }
        self.step_count += 1;
        (s, l)
    }
}

#[inline]
fn pair_from_draw(n: usize, rng: &mut RandomSource) -> (usize, usize) {
    let code = rng.index(n * (n - 1));
    let speaker = code / (n - 1);
    let r = code % (n - 1);
    let listener = if r >= speaker { r + 1 } else { r };
    (speaker, listener)
}

/// Uniform ordered pair `(speaker, listener)` with `speaker != listener`,
/// from exactly one rng event.
pub fn select_pair(n: usize, rng: &mut RandomSource) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(QsgError::InvalidPopulation(format!("pair selection needs N >= 2, got {n}")));
    }
    Ok(pair_from_draw(n, rng))
}

/// One interaction: a uniform pair, a message from the speaker, and the
/// listener update. Only the listener changes.
pub fn step(state: &PopulationState, alpha: f64, channel: &ChannelSpec, rng: &mut RandomSource) -> Result<PopulationState> {
    check_rate(alpha)?;
    channel.validate(state.k())?;
    let mut next = state.clone();
    let mut scratch = Scratch::new(state.k());
    next.advance(alpha, channel, rng, &mut scratch);
    Ok(next)
}

/// The consensus label if every agent is the same vertex (1e-12 per coordinate).
pub fn detect_absorption(state: &PopulationState) -> Option<Label> {
    let first = state.agents[0].as_vertex(VERTEX_TOLERANCE)?;
    state.agents[1..]
        .iter()
        .all(|a| a.as_vertex(VERTEX_TOLERANCE) == Some(first))
        .then_some(first)
}

/// Initial condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    /// All agents at `1/K`.
    Symmetric,
    /// Agents i.i.d. Dirichlet(concentration).
    Dirichlet { concentration: f64 },
    /// Every agent at `1/K` shifted by `+delta` on label 0 and
    /// `-delta/(K-1)` on the others.
    Offset { delta: f64 },
    /// Explicit per-agent weights.
    Explicit { states: Vec<Vec<f64>> },
}

impl InitSpec {
    fn build(&self, n: usize, k: usize, rng: &mut RandomSource) -> Result<PopulationState> {
        match self {
            InitSpec::Symmetric => PopulationState::symmetric(n, k),
            InitSpec::Dirichlet { concentration } => PopulationState::dirichlet(n, k, *concentration, rng),
            InitSpec::Offset { delta } => {
                let base = 1.0 / k as f64;
                let mut w = vec![base - delta / (k as f64 - 1.0); k];
                w[0] = base + delta;
                PopulationState::new(vec![SimplexVector::new(w)?; n])
            }
            InitSpec::Explicit { states } => {
                let agents = states
                    .iter()
                    .map(|w| SimplexVector::new(w.clone()))
                    .collect::<Result<Vec<_>>>()?;
                PopulationState::new(agents)
            }
        }
    }
}

/// Early-stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StopRule {
    /// Run to the horizon.
    #[default]
    None,
    /// Stop at the first probe with `U >= u_star`.
    Threshold {
        #[serde(default = "default_u_star")]
        u_star: f64,
    },
    /// Stop when all agents sit on the same vertex.
    Absorption,
}

fn default_u_star() -> f64 {
    DEFAULT_U_STAR
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub channel: ChannelSpec,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    pub horizon: u64,
    #[serde(default = "default_probe_every")]
    pub probe_every: u64,
    #[serde(default)]
    pub stop: StopRule,
    pub seed: u64,
}

fn default_init() -> InitSpec {
    InitSpec::Symmetric
}

fn default_probe_every() -> u64 {
    1
}

impl SimConfig {
    /// Symmetric start, no early stop, probes every step.
    pub fn new(n: usize, k: usize, alpha: f64, channel: ChannelSpec, horizon: u64, seed: u64) -> Self {
        Self {
            n,
            k,
            alpha,
            channel,
            init: InitSpec::Symmetric,
            horizon,
            probe_every: 1,
            stop: StopRule::None,
            seed,
        }
    }

    pub fn with_init(mut self, init: InitSpec) -> Self {
        self.init = init;
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_probe_every(mut self, every: u64) -> Self {
        self.probe_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(config_err("N", format!("must be >= 2, got {}", self.n)));
        }
        if self.k < 2 {
            return Err(config_err("K", format!("must be >= 2, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        self.channel
            .validate(self.k)
            .map_err(|e| config_err("channel", e.to_string()))?;
        if self.horizon < 1 {
            return Err(config_err("horizon", "must be >= 1"));
        }
        if self.probe_every < 1 {
            return Err(config_err("probe_every", "must be >= 1"));
        }
        if let StopRule::Threshold { u_star } = self.stop {
            let lo = 1.0 / self.k as f64;
            if !(u_star > lo && u_star < 1.0) {
                return Err(config_err("stop.u_star", format!("must lie in (1/K, 1) = ({lo}, 1), got {u_star}")));
            }
        }
        match &self.init {
            InitSpec::Dirichlet { concentration } if !(*concentration > 0.0) => {
                return Err(config_err("init.concentration", format!("must be > 0, got {concentration}")));
            }
            InitSpec::Offset { delta } => {
                let room = 1.0 / self.k as f64;
                if !(delta.abs() <= room * (self.k as f64 - 1.0)) || *delta < -room {
                    return Err(config_err("init.delta", format!("{delta} leaves the simplex for K={}", self.k)));
                }
            }
            InitSpec::Explicit { states } => {
                if states.len() != self.n {
                    return Err(config_err("init.states", format!("expected N={} rows, got {}", self.n, states.len())));
                }
                if let Some(row) = states.iter().find(|r| r.len() != self.k) {
                    return Err(config_err("init.states", format!("expected K={} entries per row, got {}", self.k, row.len())));
                }
                for row in states {
                    SimplexVector::new(row.clone()).map_err(|e| config_err("init.states", e.to_string()))?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Initial population for `trial`.
    pub fn initial_state(&self, trial: u64) -> Result<PopulationState> {
        let mut rng = trial_source(self.seed, trial).derive(purpose::INIT, 0);
        self.init.build(self.n, self.k, &mut rng)
    }
}

/// Master stream of one trial.
pub fn trial_source(seed: u64, trial: u64) -> RandomSource {
    RandomSource::from_seed(seed).derive(purpose::TRIAL, trial)
}

/// One recorded probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub step: u64,
    pub record: ObservableRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Horizon,
    Threshold,
    Absorbed,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Horizon => "horizon",
            TerminationReason::Threshold => "threshold",
            TerminationReason::Absorbed => "absorbed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub reason: TerminationReason,
    pub winner: Option<Label>,
    pub consensus_step: Option<u64>,
}

/// Probe time series of one run and how it ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub probes: Vec<Probe>,
    pub terminal: Terminal,
}

impl Trajectory {
    pub fn final_probe(&self) -> &Probe {
        self.probes.last().expect("trajectory has at least the step-0 probe")
    }

    /// `(step, U)` pairs.
    pub fn u_series(&self) -> Vec<(u64, f64)> {
        self.probes.iter().map(|p| (p.step, p.record.u)).collect()
    }
}

/// Argmax of the mean with lowest-index ties; none when the mean is uniform.
fn threshold_winner(record: &ObservableRecord) -> Option<Label> {
    let (label, top) = record.mean.argmax();
    let k = record.mean.k() as f64;
    (top > 1.0 / k + 1e-15).then_some(label)
}

/// Runs trial 0 of `config`.
pub fn run(config: &SimConfig) -> Result<Trajectory> {
    run_trial(config, 0)
}

/// Runs one trial on its own derived streams. `run_trial(c, 0) == run(c)`.
pub fn run_trial(config: &SimConfig, trial: u64) -> Result<Trajectory> {
    config.validate()?;
    let mut state = config.initial_state(trial)?;
    let mut rng = trial_source(config.seed, trial).derive(purpose::DYNAMICS, 0);
    Ok(simulate(&mut state, config, &mut rng))
}

fn simulate(state: &mut PopulationState, config: &SimConfig, rng: &mut RandomSource) -> Trajectory {
    let mut scratch = Scratch::new(config.k);
    let mut probes = Vec::with_capacity((config.horizon / config.probe_every).min(1 << 16) as usize + 2);

    let probe_here = |state: &PopulationState, probes: &mut Vec<Probe>| {
        let record = observe(state);
        probes.push(Probe {
            step: state.step_count(),
            record,
        });
    };

    let start_terminal = |probes: &Vec<Probe>, state: &PopulationState| -> Option<Terminal> {
        match config.stop {
            StopRule::Threshold { u_star } => {
                let rec = &probes.last().unwrap().record;
                (rec.u >= u_star).then(|| Terminal {
                    reason: TerminationReason::Threshold,
                    winner: threshold_winner(rec),
                    consensus_step: Some(state.step_count()),
                })
            }
            StopRule::Absorption => detect_absorption(state).map(|w| Terminal {
                reason: TerminationReason::Absorbed,
                winner: Some(w),
                consensus_step: Some(state.step_count()),
            }),
            StopRule::None => None,
        }
    };

    probe_here(state, &mut probes);
    if let Some(terminal) = start_terminal(&probes, state) {
        return Trajectory { probes, terminal };
    }

    for t in 1..=config.horizon {
        let (_, listener) = state.advance(config.alpha, &config.channel, rng, &mut scratch);

        if let StopRule::Absorption = config.stop {
            if state.agents[listener].as_vertex(VERTEX_TOLERANCE).is_some() {
                if let Some(w) = detect_absorption(state) {
                    probe_here(state, &mut probes);
                    return Trajectory {
                        probes,
                        terminal: Terminal {
                            reason: TerminationReason::Absorbed,
                            winner: Some(w),
                            consensus_step: Some(t),
                        },
                    };
                }
            }
        }

        if t % config.probe_every == 0 || t == config.horizon {
            probe_here(state, &mut probes);
            if let StopRule::Threshold { u_star } = config.stop {
                let rec = &probes.last().unwrap().record;
                if rec.u >= u_star {
                    let winner = threshold_winner(rec);
                    return Trajectory {
                        probes,
                        terminal: Terminal {
                            reason: TerminationReason::Threshold,
                            winner,
                            consensus_step: Some(t),
                        },
                    };
                }
            }
        }
    }

    Trajectory {
        probes,
        terminal: Terminal {
            reason: TerminationReason::Horizon,
            winner: None,
            consensus_step: None,
        },
    }
}

/// Compact per-trial outcome kept by ensembles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub terminal: Terminal,
    pub final_step: u64,
    pub final_record: ObservableRecord,
    pub probe_count: usize,
}

impl TrialSummary {
    pub fn from_trajectory(trial: u64, traj: &Trajectory) -> Self {
        let last = traj.final_probe();
        Self {
            trial,
            terminal: traj.terminal.clone(),
            final_step: last.step,
            final_record: last.record.clone(),
            probe_count: traj.probes.len(),
        }
    }
}

/// Aggregate over independent trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub trials: Vec<TrialSummary>,
    /// Wins per label over decided trials.
    pub winner_counts: Vec<u64>,
    /// Consensus steps of decided trials, in trial order.
    pub consensus_steps: Vec<u64>,
}

impl EnsembleResult {
    pub fn from_summaries(k: usize, trials: Vec<TrialSummary>) -> Self {
        let mut winner_counts = vec![0u64; k];
        let mut consensus_steps = Vec::new();
        for t in &trials {
            if let Some(w) = t.terminal.winner {
                winner_counts[w.index()] += 1;
            }
            if let (Some(_), Some(c)) = (t.terminal.winner, t.terminal.consensus_step) {
                consensus_steps.push(c);
            }
        }
        Self {
            trials,
            winner_counts,
            consensus_steps,
        }
    }

    pub fn decided(&self) -> u64 {
        self.winner_counts.iter().sum()
    }

    pub fn undecided(&self) -> u64 {
        self.trials.len() as u64 - self.decided()
    }

    pub fn absorbed(&self) -> u64 {
        self.trials
            .iter()
            .filter(|t| t.terminal.reason == TerminationReason::Absorbed)
            .count() as u64
    }
}

/// Runs `trials` independent trajectories in parallel and keeps summaries.
/// Trial `i` always uses the streams derived from `(config.seed, i)`.
pub fn run_ensemble(config: &SimConfig, trials: u64) -> Result<EnsembleResult> {
    if trials < 1 {
        return Err(config_err("trials", "must be >= 1"));
    }
    config.validate()?;
    let summaries = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(config, i).map(|t| TrialSummary::from_trajectory(i, &t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleResult::from_summaries(config.k, summaries))
}

/// Like [`run_ensemble`] but returns the full trajectories.
pub fn run_ensemble_trajectories(config: &SimConfig, trials: u64) -> Result<Vec<Trajectory>> {
    if trials < 1 {
        return Err(config_err("trials", "must be >= 1"));
    }
    config.validate()?;
    (0..trials).into_par_iter().map(|i| run_trial(config, i)).collect()
}
