//! Naming-drift interaction harness: agents with bounded label memories,
//! delayed-reveal updates and measurement-only probes, driven by pluggable
//! synthetic policies.

use std::collections::VecDeque;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{select_pair, trial_source, PopulationState};
use crate::error::{config_err, QsgError, Result};
use crate::observables::{observe, ObservableRecord};
use crate::rng::{purpose, RandomSource};
use crate::simplex::{check_rate, inverse_cdf, listener_update, sample_label, uniform_vector, Label, SimplexVector};

/// Bounded label history, oldest first. Always exactly `H` slots; empty
/// slots hold the PAD sentinel (`None`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMemory {
    slots: VecDeque<Option<Label>>,
}

impl AgentMemory {
    /// All-PAD memory of size `h`.
    pub fn new(h: usize) -> Result<Self> {
        if h < 1 {
            return Err(QsgError::InvalidArgument("memory size H must be >= 1".into()));
        }
        Ok(Self {
            slots: std::iter::repeat_n(None, h).collect(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Appends `label`, evicting the oldest slot.
    pub fn push(&mut self, label: Label) {
        self.slots.pop_front();
        self.slots.push_back(Some(label));
    }

    /// Slots oldest first; `None` is PAD.
    pub fn slots(&self) -> impl ExactSizeIterator<Item = Option<Label>> + '_ {
        self.slots.iter().copied()
    }

    /// Non-PAD labels oldest first.
    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.slots.iter().flatten().copied()
    }

    /// Per-label counts over non-PAD slots.
    pub fn counts(&self, k: usize) -> Vec<u64> {
        let mut c = vec![0u64; k];
        for l in self.labels() {
            if l.index() < k {
                c[l.index()] += 1;
            }
        }
        c
    }
}

impl fmt::Display for AgentMemory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .slots()
            .map(|s| s.map_or_else(|| "<PAD>".to_string(), |l| l.to_string()))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Behaviour of one synthetic agent.
pub trait AgentPolicy: Send + Sync {
    /// Exactly `m` labels. Must not depend on anything the harness has not
    /// passed in, and cannot touch the memory.
    fn speak(&self, memory: &AgentMemory, m: usize, rng: &mut RandomSource) -> Vec<Label>;

    /// Called after the harness has pushed the heard labels into memory.
    fn observe(&mut self, _heard: &[Label]) -> Result<()> {
        Ok(())
    }

    /// Exact internal belief, when the policy has one.
    fn belief(&self) -> Option<&SimplexVector> {
        None
    }

    fn clone_box(&self) -> Box<dyn AgentPolicy>;
}

impl Clone for Box<dyn AgentPolicy> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

impl fmt::Debug for dyn AgentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AgentPolicy")
    }
}

/// Smoothed label frequencies `(count + λ) / (non-PAD + λK)`.
pub fn frequency_distribution(memory: &AgentMemory, k: usize, lambda: f64) -> Vec<f64> {
    let counts = memory.counts(k);
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + lambda * k as f64;
    counts.iter().map(|&c| (c as f64 + lambda) / denom).collect()
}

/// `m` i.i.d. labels from the λ = 1 smoothed memory frequencies.
pub fn frequency_policy(memory: &AgentMemory, k: usize, m: usize, rng: &mut RandomSource) -> Vec<Label> {
    FrequencyPolicy::new(k).speak(memory, m, rng)
}

/// Samples from smoothed memory frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPolicy {
    pub k: usize,
    pub lambda: f64,
}

impl FrequencyPolicy {
    pub fn new(k: usize) -> Self {
        Self { k, lambda: 1.0 }
    }
}

impl AgentPolicy for FrequencyPolicy {
    fn speak(&self, memory: &AgentMemory, m: usize, rng: &mut RandomSource) -> Vec<Label> {
        let dist = frequency_distribution(memory, self.k, self.lambda);
        (0..m).map(|_| Label(inverse_cdf(&dist, rng.uniform()))).collect()
    }

    fn clone_box(&self) -> Box<dyn AgentPolicy> {
        Box::new(self.clone())
    }
}

/// `m` i.i.d. labels from a simplex belief.
pub fn qsg_policy_bridge(state: &SimplexVector, m: usize, rng: &mut RandomSource) -> Vec<Label> {
    (0..m).map(|_| sample_label(state, rng)).collect()
}

/// Holds an exact simplex belief: speaks by sampling it and moves toward the
/// empirical distribution of what it hears.
#[derive(Clone, Debug, PartialEq)]
pub struct QsgBridgePolicy {
    state: SimplexVector,
    alpha: f64,
}

impl QsgBridgePolicy {
    pub fn new(state: SimplexVector, alpha: f64) -> Result<Self> {
        check_rate(alpha)?;
        Ok(Self { state, alpha })
    }

    pub fn state(&self) -> &SimplexVector {
        &self.state
    }
}

impl AgentPolicy for QsgBridgePolicy {
    fn speak(&self, _memory: &AgentMemory, m: usize, rng: &mut RandomSource) -> Vec<Label> {
        qsg_policy_bridge(&self.state, m, rng)
    }

    fn observe(&mut self, heard: &[Label]) -> Result<()> {
        if heard.is_empty() {
            return Ok(());
        }
        let k = self.state.k();
        let mut w = vec![0.0; k];
        for l in heard {
            if l.index() >= k {
                return Err(QsgError::LabelOutOfRange { index: l.index(), k });
            }
            w[l.index()] += 1.0 / heard.len() as f64;
        }
        self.state = listener_update(&self.state, &SimplexVector::from_masses(w)?, self.alpha)?;
        Ok(())
    }

    fn belief(&self) -> Option<&SimplexVector> {
        Some(&self.state)
    }

    fn clone_box(&self) -> Box<dyn AgentPolicy> {
        Box::new(self.clone())
    }
}

/// Which synthetic policy populates a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyKind {
    Frequency,
    QsgBridge { alpha: f64 },
}

/// Settings of one naming-drift run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NndConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub referent: String,
    pub horizon: u64,
    pub probe_every: u64,
    pub probe_samples_per_agent: usize,
    #[serde(rename = "U_star")]
    pub u_star: f64,
    pub seed: u64,
}

impl NndConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(config_err("N", format!("must be >= 2, got {}", self.n)));
        }
        if self.k < 2 {
            return Err(config_err("K", format!("must be >= 2, got {}", self.k)));
        }
        if self.m < 1 {
            return Err(config_err("m", "must be >= 1"));
        }
        if self.h < 1 {
            return Err(config_err("H", "must be >= 1"));
        }
        if self.probe_every < 1 {
            return Err(config_err("probe_every", "must be >= 1"));
        }
        if self.probe_samples_per_agent < 1 {
            return Err(config_err("probe_samples_per_agent", "must be >= 1"));
        }
        if self.horizon < 1 {
            return Err(config_err("horizon", "must be >= 1"));
        }
        let lo = 1.0 / self.k as f64;
        if !(self.u_star > lo && self.u_star < 1.0) {
            return Err(config_err("U_star", format!("must lie in (1/K, 1), got {}", self.u_star)));
        }
        Ok(())
    }
}

/// One agent: its policy and its memory.
#[derive(Clone, Debug)]
pub struct NndAgent {
    pub policy: Box<dyn AgentPolicy>,
    pub memory: AgentMemory,
}

/// All agents of a run.
#[derive(Clone, Debug)]
pub struct NndPopulation {
    pub agents: Vec<NndAgent>,
    pub k: usize,
    pub step_count: u64,
}

impl NndPopulation {
    pub fn new(k: usize, h: usize, policies: Vec<Box<dyn AgentPolicy>>) -> Result<Self> {
        if policies.len() < 2 {
            return Err(QsgError::InvalidPopulation(format!("need N >= 2 agents, got {}", policies.len())));
        }
        let agents = policies
            .into_iter()
            .map(|policy| Ok(NndAgent { policy, memory: AgentMemory::new(h)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { agents, k, step_count: 0 })
    }

    /// Population of `config.n` copies of `kind`, starting from empty
    /// memories (and uniform beliefs for the bridge).
    pub fn from_kind(config: &NndConfig, kind: PolicyKind) -> Result<Self> {
        let policy: Box<dyn AgentPolicy> = match kind {
            PolicyKind::Frequency => Box::new(FrequencyPolicy::new(config.k)),
            PolicyKind::QsgBridge { alpha } => Box::new(QsgBridgePolicy::new(uniform_vector(config.k)?, alpha)?),
        };
        Self::new(config.k, config.h, vec![policy; config.n])
    }

    /// Exact beliefs when every policy exposes one.
    pub fn beliefs(&self) -> Option<PopulationState> {
        let beliefs: Option<Vec<SimplexVector>> = self.agents.iter().map(|a| a.policy.belief().cloned()).collect();
        beliefs.and_then(|b| PopulationState::new(b).ok())
    }

    pub fn memories(&self) -> Vec<AgentMemory> {
        self.agents.iter().map(|a| a.memory.clone()).collect()
    }
}

/// What happened in one interaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub speaker: usize,
    pub listener: usize,
    pub spoken: Vec<Label>,
    /// The listener's own reply, generated before the reveal and never stored.
    pub response: Vec<Label>,
}

fn check_emission(labels: &[Label], m: usize, k: usize, who: usize) -> Result<()> {
    if labels.len() != m {
        return Err(QsgError::ProtocolViolation(format!(
            "agent {who} emitted {} labels, expected {m}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|l| l.index() >= k) {
        return Err(QsgError::ProtocolViolation(format!(
            "agent {who} emitted out-of-vocabulary label {} (K={k})",
            bad.index()
        )));
    }
    Ok(())
}

/// One delayed-reveal interaction. The speaker speaks `m` labels, the
/// listener replies from its pre-step memory, and only then are the
/// speaker's labels pushed into the listener's memory in emission order.
pub fn nnd_step(pop: &mut NndPopulation, config: &NndConfig, rng: &mut RandomSource) -> Result<StepLog> {
    let (s, l) = select_pair(pop.agents.len(), rng)?;
    let speaker = &pop.agents[s];
    let spoken = speaker.policy.speak(&speaker.memory, config.m, rng);
    check_emission(&spoken, config.m, pop.k, s)?;
    let listener = &pop.agents[l];
    let response = listener.policy.speak(&listener.memory, config.m, rng);
    check_emission(&response, config.m, pop.k, l)?;

    let listener = &mut pop.agents[l];
    for &label in &spoken {
        listener.memory.push(label);
    }
    listener.policy.observe(&spoken)?;
    pop.step_count += 1;
    Ok(StepLog {
        step: pop.step_count,
        speaker: s,
        listener: l,
        spoken,
        response,
    })
}

/// Empirical population mean from `probe_samples_per_agent` single-label
/// draws per agent. Memories and policies are left untouched.
pub fn probe(pop: &NndPopulation, config: &NndConfig, rng: &mut RandomSource) -> Result<SimplexVector> {
    if config.probe_samples_per_agent < 1 {
        return Err(config_err("probe_samples_per_agent", "must be >= 1"));
    }
    let mut counts = vec![0.0; pop.k];
    for (i, agent) in pop.agents.iter().enumerate() {
        let scratch = agent.memory.clone();
        for _ in 0..config.probe_samples_per_agent {
            let out = agent.policy.speak(&scratch, 1, rng);
            check_emission(&out, 1, pop.k, i)?;
            counts[out[0].index()] += 1.0;
        }
    }
    SimplexVector::from_masses(counts)
}

/// Where a probed U value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Computed from exact internal beliefs.
    Exact,
    /// Squared norm of the probe frequencies.
    Probe,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::Probe => "probe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NndProbe {
    pub step: u64,
    pub record: ObservableRecord,
    pub provenance: Provenance,
    /// Probe-estimated U, always present.
    pub probe_u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NndTrajectory {
    pub referent: String,
    pub probes: Vec<NndProbe>,
    /// Step of the first probe with U >= U*.
    pub consensus_step: Option<u64>,
    pub winner: Option<Label>,
}

fn take_probe(pop: &NndPopulation, config: &NndConfig, rng: &mut RandomSource) -> Result<NndProbe> {
    let p = probe(pop, config, rng)?;
    let probe_u = p.norm_sq();
    let (record, provenance) = match pop.beliefs() {
        Some(state) => (observe(&state), Provenance::Exact),
        None => (ObservableRecord::from_mean_only(p), Provenance::Probe),
    };
    Ok(NndProbe {
        step: pop.step_count,
        record,
        provenance,
        probe_u,
    })
}

/// Runs one trial until `U >= U*` at a probe or the horizon.
pub fn run_nnd(config: &NndConfig, kind: PolicyKind, trial: u64) -> Result<NndTrajectory> {
    config.validate()?;
    let mut pop = NndPopulation::from_kind(config, kind)?;
    run_nnd_population(&mut pop, config, trial)
}

/// Runs one trial from a caller-built population.
pub fn run_nnd_population(pop: &mut NndPopulation, config: &NndConfig, trial: u64) -> Result<NndTrajectory> {
    config.validate()?;
    if pop.k != config.k || pop.agents.len() != config.n {
        return Err(QsgError::InvalidPopulation(format!(
            "population has N={}, K={} but config says N={}, K={}",
            pop.agents.len(),
            pop.k,
            config.n,
            config.k
        )));
    }
    let master = trial_source(config.seed, trial);
    let mut rng = master.derive(purpose::DYNAMICS, 0);
    let mut probe_index = 0u64;
    let mut probes = Vec::new();
    let mut next_probe = |pop: &NndPopulation, probes: &mut Vec<NndProbe>| -> Result<bool> {
        let mut prng = master.derive(purpose::PROBE, probe_index);
        probe_index += 1;
        let p = take_probe(pop, config, &mut prng)?;
        let hit = p.record.u >= config.u_star;
        probes.push(p);
        Ok(hit)
    };
    let finish = |probes: Vec<NndProbe>, hit: bool| {
        let last = probes.last().expect("at least one probe");
        let (consensus_step, winner) = if hit {
            (Some(last.step), Some(last.record.mean.argmax().0))
        } else {
            (None, None)
        };
        NndTrajectory {
            referent: config.referent.clone(),
            probes,
            consensus_step,
            winner,
        }
    };

    if next_probe(pop, &mut probes)? {
        return Ok(finish(probes, true));
    }
    for t in 1..=config.horizon {
        nnd_step(pop, config, &mut rng)?;
        if (t % config.probe_every == 0 || t == config.horizon) && next_probe(pop, &mut probes)? {
            return Ok(finish(probes, true));
        }
    }
    Ok(finish(probes, false))
}

/// Independent trials in parallel; trial `i` depends only on `(seed, i)`.
pub fn run_nnd_ensemble(config: &NndConfig, kind: PolicyKind, trials: u64) -> Result<Vec<NndTrajectory>> {
    if trials < 1 {
        return Err(config_err("trials", "must be >= 1"));
    }
    config.validate()?;
    (0..trials).into_par_iter().map(|i| run_nnd(config, kind, i)).collect()
}

/// `k` distinct lowercase 5-character display names, fixed by `seed`.
pub fn synthetic_labels(k: usize, seed: u64) -> Vec<String> {
    let mut rng = RandomSource::from_seed(seed).derive(purpose::LABELS, 0);
    let mut out: Vec<String> = Vec::with_capacity(k);
    while out.len() < k {
        let name: String = (0..5).map(|_| (b'a' + rng.index(26) as u8) as char).collect();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}
