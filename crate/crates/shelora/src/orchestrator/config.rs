//! Experiment configuration, read and written as JSON.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::crypto::HeParams;

/// Default local gradient steps per round.
pub const DEFAULT_LOCAL_STEPS: usize = 5;

fn default_poly_degree() -> usize {
    2048
}

fn default_moduli() -> Vec<u32> {
    vec![60, 40, 40, 60]
}

/// Homomorphic encryption settings in config form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeConfig {
    #[serde(default = "default_poly_degree")]
    pub poly_degree: usize,
    #[serde(default = "default_moduli")]
    pub moduli_bits: Vec<u32>,
}

impl Default for HeConfig {
    fn default() -> Self {
        HeConfig {
            poly_degree: default_poly_degree(),
            moduli_bits: default_moduli(),
        }
    }
}

impl HeConfig {
    pub fn to_params(&self) -> Result<HeParams, OrchestratorError> {
        Ok(HeParams::new(self.poly_degree, self.moduli_bits.clone())?)
    }
}

/// One row of the device table: a hardware class and how many clients
/// belong to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub type_id: u32,
    pub rank: usize,
    /// Fraction of columns this class can afford to encrypt.
    pub gamma: f64,
    pub count: usize,
    pub gflops: f64,
}

/// Which aggregation pipeline a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The full protocol: negotiated selective encryption.
    SheLora,
    /// Everything in the clear, uniform averaging.
    PlainFedavgOracle,
    /// Every column encrypted.
    FullEncryptOracle,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "she_lora" => Ok(Strategy::SheLora),
            "plain_fedavg_oracle" => Ok(Strategy::PlainFedavgOracle),
            "full_encrypt_oracle" => Ok(Strategy::FullEncryptOracle),
            other => Err(format!(
                "unknown strategy {other:?}; expected she_lora, plain_fedavg_oracle \
                 or full_encrypt_oracle"
            )),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::SheLora => "she_lora",
            Strategy::PlainFedavgOracle => "plain_fedavg_oracle",
            Strategy::FullEncryptOracle => "full_encrypt_oracle",
        };
        f.write_str(name)
    }
}

fn default_negotiation_period() -> usize {
    1
}

fn default_n_opt() -> usize {
    50
}

fn default_strategy() -> Strategy {
    Strategy::SheLora
}

fn default_rounds() -> usize {
    50
}

fn default_clusters() -> usize {
    4
}

fn default_samples_per_client() -> usize {
    16
}

fn default_local_steps() -> usize {
    DEFAULT_LOCAL_STEPS
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_teacher_rank() -> usize {
    4
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Output dimension of the adapted layer.
    pub m: usize,
    /// Input dimension (the negotiated column space).
    pub n: usize,
    pub profiles: Vec<ProfileEntry>,
    /// Non-IID concentration of the data partition.
    pub dirichlet_rho: f64,
    #[serde(default = "default_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_samples_per_client")]
    pub samples_per_client: usize,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Rank of the planted teacher perturbation.
    #[serde(default = "default_teacher_rank")]
    pub teacher_rank: usize,
    #[serde(default)]
    pub he: HeConfig,
    /// Overrides the derived cipher block width when set.
    #[serde(default)]
    pub chunk_override: Option<usize>,
    /// Rounds between renegotiations of the encrypted column set.
    #[serde(default = "default_negotiation_period")]
    pub negotiation_period: usize,
    /// Proposal budget for the negotiation coefficient optimizer.
    #[serde(default = "default_n_opt")]
    pub n_opt: usize,
    /// Root seed; all randomness streams derive from it.
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Compute the leakage MI every this many rounds when set.
    #[serde(default)]
    pub mi_period: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let fail = |msg: String| Err(OrchestratorError::Validation(msg));
        if self.n_clients == 0 {
            return fail("n_clients must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.m == 0 || self.n == 0 {
            return fail(format!("model dims {}x{} must be positive", self.m, self.n));
        }
        let counted: usize = self.profiles.iter().map(|p| p.count).sum();
        if counted != self.n_clients {
            return fail(format!(
                "profile counts sum to {counted}, not n_clients {}",
                self.n_clients
            ));
        }
        for p in &self.profiles {
            if p.rank == 0 {
                return fail(format!("profile {} has zero rank", p.type_id));
            }
            if !(0.0..=1.0).contains(&p.gamma) || p.gamma.is_nan() {
                return fail(format!("profile {} gamma {} outside [0, 1]", p.type_id, p.gamma));
            }
        }
        if !self.dirichlet_rho.is_finite() || self.dirichlet_rho <= 0.0 {
            return fail(format!("dirichlet_rho {} must be positive", self.dirichlet_rho));
        }
        if self.n_clusters == 0 {
            return fail("n_clusters must be at least 1".into());
        }
        if self.samples_per_client == 0 {
            return fail("samples_per_client must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.teacher_rank == 0 || self.teacher_rank > self.m.min(self.n) {
            return fail(format!(
                "teacher_rank {} outside 1..={}",
                self.teacher_rank,
                self.m.min(self.n)
            ));
        }
        if self.negotiation_period == 0 {
            return fail("negotiation_period must be at least 1".into());
        }
        if self.n_opt == 0 {
            return fail("n_opt must be at least 1".into());
        }
        if let Some(period) = self.mi_period {
            if period == 0 {
                return fail("mi_period must be at least 1 when set".into());
            }
        }
        self.effective_chunk()?;
        Ok(())
    }

    /// Widest usable cipher block: every client's `r x chunk` block
    /// must pack, and so must the server's `m x chunk` product blocks.
    pub fn effective_chunk(&self) -> Result<usize, OrchestratorError> {
        let params = self.he.to_params()?;
        let tallest = self
            .profiles
            .iter()
            .map(|p| p.rank)
            .max()
            .unwrap_or(1)
            .max(self.m);
        let derived = params.slots() / tallest;
        let chunk = match self.chunk_override {
            Some(c) => c,
            None => derived,
        };
        if chunk == 0 || chunk > derived {
            return Err(OrchestratorError::Validation(format!(
                "chunk {chunk} unusable: {tallest}-row blocks allow at most {derived}"
            )));
        }
        Ok(chunk)
    }

    /// The per-client device assignment, client ids ascending within
    /// the profile table order.
    pub fn client_profiles(&self) -> Vec<ProfileEntry> {
        let mut out = Vec::with_capacity(self.n_clients);
        for p in &self.profiles {
            for _ in 0..p.count {
                out.push(p.clone());
            }
        }
        out
    }

    pub fn n_samples(&self) -> usize {
        self.n_clients * self.samples_per_client
    }

    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, OrchestratorError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// The four-class device table used throughout the experiments:
/// ranks 8/16/16/32, budgets 0.4%/0.4%/0.8%/1.6%, 50 clients total.
pub fn default_profiles() -> Vec<ProfileEntry> {
    vec![
        ProfileEntry {
            type_id: 1,
            rank: 8,
            gamma: 0.004,
            count: 20,
            gflops: 105.2,
        },
        ProfileEntry {
            type_id: 2,
            rank: 16,
            gamma: 0.004,
            count: 15,
            gflops: 165.5,
        },
        ProfileEntry {
            type_id: 3,
            rank: 16,
            gamma: 0.008,
            count: 10,
            gflops: 216.9,
        },
        ProfileEntry {
            type_id: 4,
            rank: 32,
            gamma: 0.016,
            count: 5,
            gflops: 243.1,
        },
    ]
}
