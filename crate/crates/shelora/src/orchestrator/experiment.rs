//! The federated round loop and its reports.
//!
//! One coordinator drives all clients through sensitivity assessment,
//! negotiation, local training, selective encryption, aggregation and
//! reparameterization. Everything is seeded from the config's root
//! seed, so runs are bit-reproducible; wall-clock timings go to a
//! separate record so the primary report files stay byte-identical
//! across same-seed runs.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use super::config::{ExperimentConfig, ProfileEntry, Strategy};
use super::task::ToyTask;
use super::OrchestratorError;
use crate::client::{
    apply_swap, build_bid, encrypt_update, local_train, reparameterize, task_loss, AdapterPair,
    ClientUpdate, Dataset, DeviceProfile, SwapPlan,
};
use crate::crypto::{
    he_keygen, splitmix64, CipherBlockList, HeParams, HePublicKey, HeSecretKey, OpeKey,
};
use crate::linalg::Matrix;
use crate::metrics::{kde_mutual_info, DEFAULT_BANDWIDTH, DEFAULT_SAMPLE_CAP};
use crate::sensitivity::channel_importance;
use crate::server::{
    aggregate_cipher, aggregate_plain, coverage_and_risk, materialize_update, negotiate_with,
    svd_and_slice, truncate_cipher, NegotiationOptions, SensitivityBid,
};

// Randomness streams derived from the root seed.
const STREAM_TASK: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_HE: u64 = 4;
const STREAM_OPE: u64 = 5;
const STREAM_NEGOTIATION: u64 = 6;

fn stream_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ stream.wrapping_mul(0xa076_1d64_78bd_642f))
}

// ── Reports ──────────────────────────────────────────────────────────

/// Wall-clock milliseconds per round phase. Informational only; these
/// never enter assertions or the deterministic report files.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseTimes {
    pub negotiate_ms: f64,
    pub train_ms: f64,
    pub encrypt_ms: f64,
    pub aggregate_ms: f64,
    pub reparameterize_ms: f64,
}

/// One round's record.
#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub round: usize,
    /// Mean toy-task loss of the clients' post-round models over the
    /// full sample pool.
    pub loss: f64,
    /// Columns each client encrypted this round, ascending client id.
    pub encrypted_columns: Vec<usize>,
    /// Modeled ciphertext bytes uploaded per client.
    pub cipher_bytes: Vec<u64>,
    pub total_cipher_bytes: u64,
    /// Cipher blocks uploaded per client.
    pub blocks: Vec<usize>,
    /// Worst per-client coverage of proposed columns by `Res`.
    pub coverage: f64,
    /// Worst per-client sensitivity mass left outside `Res`.
    pub risk: f64,
    pub negotiation_score: f64,
    pub shortfall: usize,
    /// Whether the column set was (re)negotiated this round.
    pub renegotiated: bool,
    /// Leakage MI between the mean update and its masked form, when
    /// the config asks for it.
    pub mi: Option<f64>,
    /// Diagnostic for an aborted round.
    pub error: Option<String>,
    #[serde(skip)]
    pub wall: PhaseTimes,
}

impl RoundReport {
    fn diagnostic(round: usize, message: String) -> Self {
        RoundReport {
            round,
            loss: f64::NAN,
            encrypted_columns: Vec::new(),
            cipher_bytes: Vec::new(),
            total_cipher_bytes: 0,
            blocks: Vec::new(),
            coverage: 0.0,
            risk: 0.0,
            negotiation_score: 0.0,
            shortfall: 0,
            renegotiated: false,
            mi: None,
            error: Some(message),
            wall: PhaseTimes::default(),
        }
    }
}

/// Everything a run produces.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub reports: Vec<RoundReport>,
    /// Each client's final adapter update `B A`, ascending client id.
    pub final_deltas: Vec<Matrix>,
    /// Set when a module error aborted the run; the matching
    /// diagnostic is the last report entry.
    pub failure: Option<String>,
}

// ── Non-IID partitioning ─────────────────────────────────────────────

/// Splits sample indices `0..n_samples` across clients with per-client
/// cluster preferences drawn from a symmetric Dirichlet with
/// concentration `rho`. Sample `s` belongs to cluster
/// `s % n_clusters`; the partition is exhaustive and disjoint, with
/// client sizes equal up to the remainder and the last client taking
/// the leftovers.
pub fn partition_noniid(
    n_samples: usize,
    n_clients: usize,
    n_clusters: usize,
    rho: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>, OrchestratorError> {
    if n_clients == 0 {
        return Err(OrchestratorError::Validation("no clients".into()));
    }
    if n_clients > n_samples {
        return Err(OrchestratorError::Validation(format!(
            "{n_clients} clients cannot split {n_samples} samples"
        )));
    }
    if n_clusters == 0 {
        return Err(OrchestratorError::Validation("no clusters".into()));
    }
    if !rho.is_finite() || rho <= 0.0 {
        return Err(OrchestratorError::Validation(format!(
            "rho {rho} must be positive"
        )));
    }
    let gamma = Gamma::new(rho, 1.0)
        .map_err(|e| OrchestratorError::Validation(format!("bad rho {rho}: {e}")))?;
    let mut pools: Vec<VecDeque<usize>> = (0..n_clusters)
        .map(|c| (c..n_samples).step_by(n_clusters).collect())
        .collect();
    let base = n_samples / n_clients;
    let extra = n_samples % n_clients;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        if i == n_clients - 1 {
            let mut rest: Vec<usize> = pools.iter_mut().flat_map(|p| p.drain(..)).collect();
            rest.sort_unstable();
            out.push(rest);
            break;
        }
        let quota = base + usize::from(i < extra);
        let mut theta: Vec<f64> = (0..n_clusters).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = theta.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            theta = vec![1.0; n_clusters];
        }
        let counts = apportion(quota, &theta, &pools);
        let mut picks = Vec::with_capacity(quota);
        for (c, count) in counts.iter().enumerate() {
            for _ in 0..*count {
                picks.push(pools[c].pop_front().expect("apportionment respects pools"));
            }
        }
        picks.sort_unstable();
        out.push(picks);
    }
    Ok(out)
}

/// Splits `quota` across clusters proportional to `theta` by largest
/// remainder, then reassigns any excess over the pool sizes to the
/// clusters with spare capacity, highest preference first.
fn apportion(quota: usize, theta: &[f64], pools: &[VecDeque<usize>]) -> Vec<usize> {
    let total: f64 = theta.iter().sum();
    let ideal: Vec<f64> = theta.iter().map(|t| quota as f64 * t / total).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for c in order.iter().cycle().take(quota - assigned) {
        counts[*c] += 1;
    }
    let mut excess = 0;
    for (c, count) in counts.iter_mut().enumerate() {
        if *count > pools[c].len() {
            excess += *count - pools[c].len();
            *count = pools[c].len();
        }
    }
    let mut refill: Vec<usize> = (0..theta.len()).collect();
    refill.sort_by(|&a, &b| theta[b].partial_cmp(&theta[a]).unwrap().then(a.cmp(&b)));
    for c in refill {
        if excess == 0 {
            break;
        }
        let spare = pools[c].len() - counts[c];
        let take = spare.min(excess);
        counts[c] += take;
        excess -= take;
    }
    debug_assert_eq!(excess, 0, "pools cannot cover the quota");
    counts
}

// ── The federation ───────────────────────────────────────────────────

struct Standing {
    res: Vec<usize>,
    plan: SwapPlan,
    score: f64,
    shortfall: usize,
}

struct Federation {
    config: ExperimentConfig,
    chunk: usize,
    params: HeParams,
    pk: HePublicKey,
    sk: HeSecretKey,
    ope: OpeKey,
    task: ToyTask,
    full_data: Dataset,
    datasets: Vec<Dataset>,
    profiles: Vec<ProfileEntry>,
    adapters: Vec<AdapterPair>,
    standing: Option<Standing>,
    negotiation_seed: u64,
}

impl Federation {
    fn new(config: &ExperimentConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let root = config.seed;
        let params = config.he.to_params()?;
        let chunk = config.effective_chunk()?;
        let task = ToyTask::generate(
            config.m,
            config.n,
            config.teacher_rank,
            config.n_clusters,
            config.n_samples(),
            stream_seed(root, STREAM_TASK),
        )?;
        let parts = partition_noniid(
            config.n_samples(),
            config.n_clients,
            config.n_clusters,
            config.dirichlet_rho,
            stream_seed(root, STREAM_PARTITION),
        )?;
        let datasets = parts
            .iter()
            .map(|idx| task.data.subset(idx))
            .collect::<Result<Vec<_>, _>>()?;
        let full_data = task.data.as_dataset()?;
        let profiles = config.client_profiles();
        let init_root = stream_seed(root, STREAM_INIT);
        let adapters = profiles
            .iter()
            .enumerate()
            .map(|(i, p)| {
                AdapterPair::init(config.m, config.n, p.rank, stream_seed(init_root, i as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (pk, sk) = he_keygen(&params, stream_seed(root, STREAM_HE))?;
        let ope = OpeKey::with_default_bits(stream_seed(root, STREAM_OPE));
        let standing = match config.strategy {
            Strategy::SheLora => None,
            Strategy::PlainFedavgOracle => Some(Standing {
                res: Vec::new(),
                plan: SwapPlan::new(config.n, &[])?,
                score: 1.0,
                shortfall: 0,
            }),
            Strategy::FullEncryptOracle => {
                let all: Vec<usize> = (0..config.n).collect();
                Some(Standing {
                    plan: SwapPlan::new(config.n, &all)?,
                    res: all,
                    score: 1.0,
                    shortfall: 0,
                })
            }
        };
        Ok(Federation {
            config: config.clone(),
            chunk,
            params,
            pk,
            sk,
            ope,
            task,
            full_data,
            datasets,
            profiles,
            adapters,
            standing,
            negotiation_seed: stream_seed(root, STREAM_NEGOTIATION),
        })
    }

    fn she_lora_bids(&self) -> Result<Vec<SensitivityBid>, OrchestratorError> {
        let mut bids = Vec::with_capacity(self.adapters.len());
        for (i, adapter) in self.adapters.iter().enumerate() {
            let effective = self.task.w0.add(&adapter.delta())?;
            let activations = self.datasets[i].x.transpose();
            let scores = channel_importance(&effective, &activations)?;
            let device = DeviceProfile {
                type_id: self.profiles[i].type_id,
                rank: self.profiles[i].rank,
                gamma: self.profiles[i].gamma,
                gflops: self.profiles[i].gflops,
            };
            bids.push(build_bid(i as u64, &scores, &device, &self.ope)?);
        }
        Ok(bids)
    }

    fn run_round(&mut self, round: usize) -> Result<RoundReport, OrchestratorError> {
        let n = self.config.n;
        let mut wall = PhaseTimes::default();

        // Sensitivity, bidding and (periodic) negotiation.
        let clock = Instant::now();
        let mut renegotiated = false;
        let (bids, coverage, risk) = match self.config.strategy {
            Strategy::SheLora => {
                let bids = self.she_lora_bids()?;
                if self.standing.is_none() || round % self.config.negotiation_period == 0 {
                    let opts = NegotiationOptions {
                        n_opt: self.config.n_opt,
                        seed: stream_seed(self.negotiation_seed, round as u64),
                    };
                    let outcome = negotiate_with(&bids, &opts)?;
                    self.standing = Some(Standing {
                        plan: SwapPlan::new(n, &outcome.res)?,
                        res: outcome.res,
                        score: outcome.score,
                        shortfall: outcome.shortfall,
                    });
                    renegotiated = true;
                }
                let standing = self.standing.as_ref().expect("negotiated above");
                let (cov, risk) = coverage_and_risk(&standing.res, &bids);
                (bids, cov, risk)
            }
            Strategy::PlainFedavgOracle | Strategy::FullEncryptOracle => {
                (Vec::new(), 1.0, 0.0)
            }
        };
        wall.negotiate_ms = clock.elapsed().as_secs_f64() * 1000.0;
        let standing = self.standing.as_ref().expect("standing set by now");

        let budgets: Vec<usize> = match self.config.strategy {
            Strategy::SheLora => bids.iter().map(|b| b.k.min(standing.res.len())).collect(),
            Strategy::PlainFedavgOracle => vec![0; self.adapters.len()],
            Strategy::FullEncryptOracle => vec![n; self.adapters.len()],
        };

        // Local training.
        let clock = Instant::now();
        for (i, adapter) in self.adapters.iter_mut().enumerate() {
            *adapter = local_train(
                adapter,
                &self.task.w0,
                &self.datasets[i],
                self.config.local_steps,
                self.config.learning_rate,
            )?;
        }
        wall.train_ms = clock.elapsed().as_secs_f64() * 1000.0;

        // Swap and selectively encrypt; updates travel in wire form.
        let clock = Instant::now();
        let mut updates = Vec::with_capacity(self.adapters.len());
        for (i, adapter) in self.adapters.iter().enumerate() {
            let swapped = apply_swap(adapter, &standing.plan)?;
            let update = encrypt_update(
                i as u64,
                round as u64,
                &swapped,
                budgets[i],
                self.chunk,
                &self.pk,
            )?;
            debug_assert_eq!(update.a_plain.cols() + update.k, n);
            let wire = update.to_bytes();
            updates.push(ClientUpdate::from_bytes(&wire)?);
        }
        let cipher_bytes: Vec<u64> = updates.iter().map(|u| u.cipher_bytes()).collect();
        let blocks: Vec<usize> = updates.iter().map(|u| u.cipher_blocks.blocks.len()).collect();
        let total_cipher_bytes: u64 = cipher_bytes.iter().sum();
        wall.encrypt_ms = clock.elapsed().as_secs_f64() * 1000.0;

        // Server side: materialize, aggregate both paths, slice, truncate.
        let clock = Instant::now();
        let mut plains = Vec::with_capacity(updates.len());
        let mut ciphers = Vec::with_capacity(updates.len());
        for update in &updates {
            let (plain, cipher) = materialize_update(
                &update.b_plain,
                &update.a_plain,
                &update.cipher_blocks,
                &self.params,
            )?;
            plains.push(plain);
            ciphers.push(cipher);
        }
        let agg_plain = aggregate_plain(&plains)?;
        let agg_cipher = aggregate_cipher(&ciphers)?;
        let ranks: Vec<usize> = self.profiles.iter().map(|p| p.rank).collect();
        let factors = svd_and_slice(&agg_plain, &ranks)?;
        let truncated: Vec<CipherBlockList> = budgets
            .iter()
            .map(|&k| truncate_cipher(&agg_cipher, k))
            .collect::<Result<Vec<_>, _>>()?;
        wall.aggregate_ms = clock.elapsed().as_secs_f64() * 1000.0;

        // Downlink and reparameterization.
        let clock = Instant::now();
        for (i, factor) in factors.iter().enumerate() {
            self.adapters[i] = reparameterize(
                factor,
                &truncated[i],
                &self.sk,
                &standing.plan,
                self.profiles[i].rank,
            )?;
        }
        wall.reparameterize_ms = clock.elapsed().as_secs_f64() * 1000.0;

        // Metrics on the post-round state.
        let mut loss = 0.0;
        for adapter in &self.adapters {
            loss += task_loss(adapter, &self.task.w0, &self.full_data)?;
        }
        loss /= self.adapters.len() as f64;

        let mi = match self.config.mi_period {
            Some(period) if round % period == 0 => {
                let mut mean = Matrix::zeros(self.config.m, n);
                for adapter in &self.adapters {
                    mean = mean.add(&adapter.delta())?;
                }
                let mean = mean.scale(1.0 / self.adapters.len() as f64);
                let mut masked = mean.clone();
                for &c in &standing.res {
                    for r in 0..masked.rows() {
                        masked.set(r, c, 0.0);
                    }
                }
                let estimate = kde_mutual_info(
                    mean.data(),
                    masked.data(),
                    DEFAULT_BANDWIDTH,
                    DEFAULT_SAMPLE_CAP,
                )?;
                Some(estimate.value)
            }
            _ => None,
        };

        Ok(RoundReport {
            round,
            loss,
            encrypted_columns: budgets,
            cipher_bytes,
            total_cipher_bytes,
            blocks,
            coverage,
            risk,
            negotiation_score: standing.score,
            shortfall: standing.shortfall,
            renegotiated,
            mi,
            error: None,
            wall,
        })
    }
}

/// Builds round-zero bids for the configured clients and negotiates a
/// column set, without training anything.
pub fn negotiate_only(
    config: &ExperimentConfig,
) -> Result<crate::server::NegotiationResult, OrchestratorError> {
    let federation = Federation::new(config)?;
    let bids = federation.she_lora_bids()?;
    let opts = NegotiationOptions {
        n_opt: config.n_opt,
        seed: stream_seed(federation.negotiation_seed, 0),
    };
    Ok(negotiate_with(&bids, &opts)?)
}

/// Runs the configured experiment. A module error inside a round stops
/// the run; the failure message lands both in the last (diagnostic)
/// report entry and in the output's `failure` field.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, OrchestratorError> {
    let mut federation = Federation::new(config)?;
    let mut reports = Vec::with_capacity(config.rounds);
    let mut failure = None;
    for round in 0..config.rounds {
        match federation.run_round(round) {
            Ok(report) => reports.push(report),
            Err(err) => {
                let message = err.to_string();
                log::error!("round {round} aborted: {message}");
                reports.push(RoundReport::diagnostic(round, message.clone()));
                failure = Some(message);
                break;
            }
        }
    }
    let final_deltas = federation.adapters.iter().map(|a| a.delta()).collect();
    Ok(ExperimentOutput {
        reports,
        final_deltas,
        failure,
    })
}

// ── Report files ─────────────────────────────────────────────────────

#[derive(Serialize)]
struct TimingRecord {
    round: usize,
    #[serde(flatten)]
    wall: PhaseTimes,
}

/// Writes `config.json`, `rounds.jsonl`, `summary.csv` and
/// `timings.jsonl` under `dir`. Everything except the timings is a
/// pure function of config and seeds.
pub fn write_reports(
    dir: &Path,
    config: &ExperimentConfig,
    output: &ExperimentOutput,
) -> Result<(), OrchestratorError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config.to_json() + "\n")?;

    let mut rounds = String::new();
    let mut timings = String::new();
    let mut summary = String::from("round,loss,total_cipher_bytes,coverage,risk,negotiation_score\n");
    for report in &output.reports {
        rounds.push_str(&serde_json::to_string(report)?);
        rounds.push('\n');
        timings.push_str(&serde_json::to_string(&TimingRecord {
            round: report.round,
            wall: report.wall,
        })?);
        timings.push('\n');
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            report.round,
            report.loss,
            report.total_cipher_bytes,
            report.coverage,
            report.risk,
            report.negotiation_score
        ));
    }
    fs::write(dir.join("rounds.jsonl"), rounds)?;
    fs::write(dir.join("timings.jsonl"), timings)?;
    fs::write(dir.join("summary.csv"), summary)?;
    Ok(())
}
