//! The speaker's message law.
//!
//! Every channel shares one pipeline: the speaker distribution is tilted by
//! the K=2 bias field (if any), then tempered (if any), then transmitted
//! whole (Soft) or sampled (Hard, Top-m). Listener updates always move toward
//! the emitted message, never toward the tilted belief.

use serde::{Deserialize, Serialize};

use crate::error::{QsgError, Result};
use crate::rng::RandomSource;
use crate::simplex::{bias_tilt, inverse_cdf, temper_in_place, SimplexVector};

/// Message family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Soft,
    Hard,
    TopM(u32),
}

/// Effective bandwidth `m` of a channel; Soft is infinite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bandwidth {
    Finite(u32),
    Infinite,
}

impl Bandwidth {
    /// `m` as a float, `+inf` for Soft. Theory formulas divide by this.
    pub fn as_f64(self) -> f64 {
        match self {
            Bandwidth::Finite(m) => m as f64,
            Bandwidth::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Bandwidth::Finite(_))
    }
}

impl From<u32> for Bandwidth {
    fn from(m: u32) -> Self {
        Bandwidth::Finite(m)
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Finite(m) => write!(f, "{m}"),
            Bandwidth::Infinite => write!(f, "inf"),
        }
    }
}

/// Channel configuration: a kind plus optional temperature and K=2 bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelRepr", into = "ChannelRepr")]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub temperature: Option<f64>,
    pub bias_h: Option<f64>,
}

impl ChannelSpec {
    pub fn soft() -> Self {
        Self::new(ChannelKind::Soft)
    }

    pub fn hard() -> Self {
        Self::new(ChannelKind::Hard)
    }

    pub fn top_m(m: u32) -> Self {
        Self::new(ChannelKind::TopM(m))
    }

    pub fn new(kind: ChannelKind) -> Self {
        Self {
            kind,
            temperature: None,
            bias_h: None,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn with_bias(mut self, h: f64) -> Self {
        self.bias_h = Some(h);
        self
    }

    pub fn is_quantized(&self) -> bool {
        !matches!(self.kind, ChannelKind::Soft)
    }

    /// Effective temperature (1 when absent).
    pub fn temperature_or_default(&self) -> f64 {
        self.temperature.unwrap_or(1.0)
    }

    /// Effective bias field (0 when absent).
    pub fn bias_or_default(&self) -> f64 {
        self.bias_h.unwrap_or(0.0)
    }

    /// Checks the spec on its own and against the label count `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        if let ChannelKind::TopM(0) = self.kind {
            return Err(QsgError::InvalidBandwidth(0));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0) || !t.is_finite() {
                return Err(QsgError::InvalidTemperature(t));
            }
        }
        if let Some(h) = self.bias_h {
            if !h.is_finite() {
                return Err(QsgError::UnsupportedConfiguration(format!("bias h={h} is not finite")));
            }
            if k != 2 {
                return Err(QsgError::UnsupportedConfiguration(format!(
                    "bias field requires K=2, got K={k}"
                )));
            }
        }
        Ok(())
    }

    /// True when the source distribution passes through unmodified.
    fn is_plain(&self) -> bool {
        self.bias_or_default() == 0.0 && self.temperature_or_default() == 1.0
    }
}

/// `m` for the channel: Soft is infinite, Hard is 1, Top-m is m.
pub fn effective_bandwidth(spec: &ChannelSpec) -> Bandwidth {
    match spec.kind {
        ChannelKind::Soft => Bandwidth::Infinite,
        ChannelKind::Hard => Bandwidth::Finite(1),
        ChannelKind::TopM(m) => Bandwidth::Finite(m),
    }
}

/// Result of emitting into a scratch buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Emitted {
    /// One-hot message at this index; the buffer is not written.
    Vertex(usize),
    /// Dense message in `Scratch::message`.
    Dense,
}

/// Reusable buffers for the allocation-free emission path.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch {
    pub dist: Vec<f64>,
    pub message: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize) -> Self {
        Self {
            dist: vec![0.0; k],
            message: vec![0.0; k],
        }
    }
}

/// Writes the modified source distribution (tilt, then temper) into `dist`.
fn modified_source(x_s: &[f64], spec: &ChannelSpec, dist: &mut [f64]) {
    dist.copy_from_slice(x_s);
    if let Some(h) = spec.bias_h {
        let p = bias_tilt(x_s[0], h);
        dist[0] = p;
        dist[1] = 1.0 - p;
    }
    if let Some(t) = spec.temperature {
        temper_in_place(dist, t);
    }
}

/// Hot-path emission. `spec` must already be validated for `x_s.len()`.
#[inline]
pub(crate) fn emit_into(
    x_s: &[f64],
    spec: &ChannelSpec,
    rng: &mut RandomSource,
    scratch: &mut Scratch,
) -> Emitted {
    let plain = spec.is_plain();
    let source: &[f64] = if plain {
        x_s
    } else {
        modified_source(x_s, spec, &mut scratch.dist);
        &scratch.dist
    };
    match spec.kind {
        ChannelKind::Soft => {
            scratch.message.copy_from_slice(source);
            Emitted::Dense
        }
        ChannelKind::Hard | ChannelKind::TopM(1) => Emitted::Vertex(inverse_cdf(source, rng.uniform())),
        ChannelKind::TopM(m) => {
            let mut counts = [0u32; 64];
            let k = source.len();
            if k <= counts.len() {
                for _ in 0..m {
                    counts[inverse_cdf(source, rng.uniform())] += 1;
                }
                for (y, &c) in scratch.message.iter_mut().zip(&counts[..k]) {
                    *y = c as f64 / m as f64;
                }
            } else {
                let mut counts = vec![0u32; k];
                for _ in 0..m {
                    counts[inverse_cdf(source, rng.uniform())] += 1;
                }
                for (y, &c) in scratch.message.iter_mut().zip(&counts) {
                    *y = c as f64 / m as f64;
                }
            }
            Emitted::Dense
        }
    }
}

/// Emits one message from speaker state `x_s`.
pub fn emit_message(x_s: &SimplexVector, spec: &ChannelSpec, rng: &mut RandomSource) -> Result<SimplexVector> {
    spec.validate(x_s.k())?;
    let mut scratch = Scratch::new(x_s.k());
    Ok(match emit_into(x_s.weights(), spec, rng, &mut scratch) {
        Emitted::Vertex(k) => {
            let mut w = vec![0.0; x_s.k()];
            w[k] = 1.0;
            SimplexVector::from_raw(w)
        }
        Emitted::Dense => SimplexVector::from_raw(scratch.message),
    })
}

/// Serialized form: `kind = "soft" | "hard" | "top-m"` plus optional fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias_h: Option<f64>,
}

impl TryFrom<ChannelRepr> for ChannelSpec {
    type Error = String;

    fn try_from(r: ChannelRepr) -> std::result::Result<Self, String> {
        let kind = match (r.kind.as_str(), r.m) {
            ("soft", None) => ChannelKind::Soft,
            ("hard", None) => ChannelKind::Hard,
            ("top-m", Some(m)) if m >= 1 => ChannelKind::TopM(m),
            ("top-m", Some(m)) => return Err(format!("channel.m must be >= 1, got {m}")),
            ("top-m", None) => return Err("channel kind \"top-m\" requires field `m`".into()),
            ("soft" | "hard", Some(_)) => return Err(format!("field `m` is only valid for kind \"top-m\", not \"{}\"", r.kind)),
            (other, _) => return Err(format!("unknown channel kind \"{other}\" (expected soft, hard or top-m)")),
        };
        let spec = ChannelSpec {
            kind,
            temperature: r.temperature,
            bias_h: r.bias_h,
        };
        if let Some(t) = spec.temperature {
            if !(t > 0.0) {
                return Err(format!("channel.temperature must be > 0, got {t}"));
            }
        }
        Ok(spec)
    }
}

impl From<ChannelSpec> for ChannelRepr {
    fn from(s: ChannelSpec) -> Self {
        let (kind, m) = match s.kind {
            ChannelKind::Soft => ("soft", None),
            ChannelKind::Hard => ("hard", None),
            ChannelKind::TopM(m) => ("top-m", Some(m)),
        };
        ChannelRepr {
            kind: kind.to_string(),
            m,
            temperature: s.temperature,
            bias_h: s.bias_h,
        }
    }
}
