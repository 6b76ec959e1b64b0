//! The unified bidirectional-compression SGD engine and its named presets.
//!
//! One round, for each active worker `i`:
//!
//! ```text
//! Δ^i      = g^i(ŵ^i) − h^i
//! ĝ        = mean_i (C_up(Δ^i) + h^i)
//! h^i     += α_up · C_up(Δ^i)
//! w'       = w − γ ĝ
//! ```
//!
//! followed by a downlink that rebuilds each worker's local model `ŵ^i`.
//! The presets differ only in that downlink:
//!
//! | preset            | downlink                                             |
//! |-------------------|------------------------------------------------------|
//! | SGD, Diana        | `ŵ = C_dwn(w')` (SGD also skips `h`)                 |
//! | Artemis           | `w' = w − γ C_dwn(ĝ)` and `ŵ = w'`                   |
//! | ArtemisND         | `ŵ' = ŵ − γ C_dwn(ĝ)`                                |
//! | Ghost             | `ŵ' = w − γ C_dwn(ĝ)`                                |
//! | MCM family        | `ŵ' = H + C_dwn(w' − H)`, `H += α_dwn C_dwn(w' − H)` |
//!
//! Downlink compressions are drawn once per memory group: MCM has one group,
//! Rand-MCM one per worker and Rand-MCM-G an arbitrary number.

mod engine;
pub mod step_size;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use engine::{AlgoState, Engine, Resolved, RunStatus, StepOutcome};
pub use step_size::{gamma_bounds, gamma_max, polyak_ruppert_weighted, GammaBounds, GammaPolicy, StepPolicy};

use crate::compressors::CompressorKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlgoName {
    Sgd,
    Diana,
    Artemis,
    Ghost,
    Mcm,
    RandMcm,
    /// Rand-MCM with `G` memory groups.
    RandMcmG(usize),
    McmAlpha0,
    McmAlpha1,
    ArtemisNd,
}

impl AlgoName {
    pub const ALL_FIXED: [AlgoName; 9] = [
        AlgoName::Sgd,
        AlgoName::Diana,
        AlgoName::Artemis,
        AlgoName::Ghost,
        AlgoName::Mcm,
        AlgoName::RandMcm,
        AlgoName::McmAlpha0,
        AlgoName::McmAlpha1,
        AlgoName::ArtemisNd,
    ];

    pub fn downlink(self) -> Downlink {
        match self {
            AlgoName::Sgd | AlgoName::Diana => Downlink::Direct,
            AlgoName::Artemis => Downlink::Degraded,
            AlgoName::ArtemisNd => Downlink::UpdateOnly,
            AlgoName::Ghost => Downlink::Ghost,
            AlgoName::Mcm | AlgoName::RandMcm | AlgoName::RandMcmG(_) | AlgoName::McmAlpha0 | AlgoName::McmAlpha1 => {
                Downlink::Memory
            }
        }
    }

    pub fn update_mode(self) -> UpdateMode {
        match self {
            AlgoName::Artemis => UpdateMode::Degraded,
            _ => UpdateMode::NonDegraded,
        }
    }

    pub fn default_memory_mode(self) -> DwnMemoryMode {
        match self {
            AlgoName::RandMcm => DwnMemoryMode::PerWorker,
            AlgoName::RandMcmG(g) => DwnMemoryMode::Grouped { groups: g },
            _ => DwnMemoryMode::Shared,
        }
    }

    /// Whether the uplink keeps memories `h`.
    pub fn uses_uplink_memory(self) -> bool {
        !matches!(self, AlgoName::Sgd)
    }

    /// The preset's downlink compressor when a run configures only the
    /// bidirectional one: SGD and Diana broadcast uncompressed models.
    pub fn preset_compressors(self, up: CompressorKind, dwn: CompressorKind) -> (CompressorKind, CompressorKind) {
        match self {
            AlgoName::Sgd => (CompressorKind::Identity, CompressorKind::Identity),
            AlgoName::Diana => (up, CompressorKind::Identity),
            _ => (up, dwn),
        }
    }
}

impl fmt::Display for AlgoName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgoName::Sgd => f.write_str("SGD"),
            AlgoName::Diana => f.write_str("Diana"),
            AlgoName::Artemis => f.write_str("Artemis"),
            AlgoName::Ghost => f.write_str("Ghost"),
            AlgoName::Mcm => f.write_str("MCM"),
            AlgoName::RandMcm => f.write_str("RandMCM"),
            AlgoName::RandMcmG(g) => write!(f, "RandMCM_G({g})"),
            AlgoName::McmAlpha0 => f.write_str("MCM_alpha0"),
            AlgoName::McmAlpha1 => f.write_str("MCM_alpha1"),
            AlgoName::ArtemisNd => f.write_str("ArtemisND"),
        }
    }
}

impl FromStr for AlgoName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).collect::<String>().to_ascii_lowercase();
        let name = match key.as_str() {
            "sgd" => AlgoName::Sgd,
            "diana" => AlgoName::Diana,
            "artemis" => AlgoName::Artemis,
            "ghost" => AlgoName::Ghost,
            "mcm" => AlgoName::Mcm,
            "randmcm" => AlgoName::RandMcm,
            "mcmalpha0" => AlgoName::McmAlpha0,
            "mcmalpha1" => AlgoName::McmAlpha1,
            "artemisnd" => AlgoName::ArtemisNd,
            other => {
                let groups = other
                    .strip_prefix("randmcmg")
                    .map(|g| g.trim_start_matches('(').trim_end_matches(')'))
                    .and_then(|g| g.parse::<usize>().ok())
                    .filter(|g| *g >= 1);
                match groups {
                    Some(g) => AlgoName::RandMcmG(g),
                    None => return Err(Error::Unknown { what: "algorithm", name: s.into() }),
                }
            }
        };
        Ok(name)
    }
}

impl TryFrom<String> for AlgoName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlgoName> for String {
    fn from(n: AlgoName) -> String {
        n.to_string()
    }
}

/// How local models are rebuilt after the global update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downlink {
    /// Compress the new model itself.
    Direct,
    /// Apply the compressed aggregate to the global model too.
    Degraded,
    /// Apply the compressed aggregate to the previous local model.
    UpdateOnly,
    /// Apply the compressed aggregate to the previous global model.
    Ghost,
    /// Compress the difference to a downlink memory.
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Degraded,
    NonDegraded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DwnMemoryMode {
    Shared,
    PerWorker,
    Grouped {
        groups: usize,
    },
    /// Per-worker memories with a single server-side average; workers reset
    /// their memories to the average every `reset_every` rounds (never when
    /// absent).
    SingleAveraged {
        #[serde(default)]
        reset_every: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Participation {
    #[default]
    Full,
    /// Each worker joins a round independently with probability `q`.
    Bernoulli { q: f64 },
}

/// A named algorithm with optional overrides of its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub name: AlgoName,
    pub up: CompressorKind,
    pub dwn: CompressorKind,
    /// Defaults to `1/(2(1+ω_up))`; SGD forces zero.
    #[serde(default)]
    pub alpha_up: Option<f64>,
    /// Defaults to `1/(2(1+ω_dwn))`; the α ablations force 0 or 1.
    #[serde(default)]
    pub alpha_dwn: Option<f64>,
    #[serde(default)]
    pub update_mode: Option<UpdateMode>,
    #[serde(default)]
    pub dwn_memory_mode: Option<DwnMemoryMode>,
    #[serde(default)]
    pub participation: Participation,
}

impl AlgoConfig {
    pub fn new(name: AlgoName, up: CompressorKind, dwn: CompressorKind) -> Self {
        Self {
            name,
            up,
            dwn,
            alpha_up: None,
            alpha_dwn: None,
            update_mode: None,
            dwn_memory_mode: None,
            participation: Participation::Full,
        }
    }

    /// Preset with its usual compressors, see
    /// [`AlgoName::preset_compressors`].
    pub fn preset(name: AlgoName, up: CompressorKind, dwn: CompressorKind) -> Self {
        let (up, dwn) = name.preset_compressors(up, dwn);
        Self::new(name, up, dwn)
    }

    pub fn with_alpha_up(mut self, a: f64) -> Self {
        self.alpha_up = Some(a);
        self
    }

    pub fn with_alpha_dwn(mut self, a: f64) -> Self {
        self.alpha_dwn = Some(a);
        self
    }

    pub fn with_memory_mode(mut self, m: DwnMemoryMode) -> Self {
        self.dwn_memory_mode = Some(m);
        self
    }

    pub fn with_participation(mut self, p: Participation) -> Self {
        self.participation = p;
        self
    }
}
