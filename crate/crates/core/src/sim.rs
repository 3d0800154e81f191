//! Multi-stage game loop, simulated LLM service, metric collection, and the
//! strategy comparison harness.
//!
//! Every stage runs in a fixed order: users refresh their own beliefs from
//! last stage's responses, users pick edge servers, tasks are generated and
//! queued per edge, each edge's defender picks prompts to detect, flagged
//! prompts are dropped with the blocked response, survivors get simulated
//! LLM responses, and metrics are collected. Defender beliefs fold in the
//! response class a player earned last stage and the vector similarity of
//! the prompt sitting in the current queue.
//!
//! GPU metrics are proxies computed from the cost model, fixed as:
//!
//! - `gpu_mem_proxy_bytes` = 2 bytes per detector parameter on every edge
//!   that ran a detection this stage, plus 2 bytes per LLM parameter when
//!   any prompt was answered, plus a KV proxy of `2*2*n_layer*d_attn` bytes
//!   per live (prompt + output) token across answered prompts.
//! - `gpu_util_proxy` = total FLOPs consumed (detection + LLM forward
//!   passes) divided by the stage wall budget times the summed GPU capacity
//!   of all servers, clamped to `[0, 1]`.
//!
//! Each stochastic event draws from a stream keyed by (master seed, purpose,
//! stage, player), so strategies can be compared under common random
//! numbers: changing the defender's strategy does not perturb workload
//! draws, LLM output lengths, or detector verdicts of unrelated prompts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::{
    update_belief, BeliefParams, BeliefState, ObservationContext, ResponseClass,
};
use crate::cost::{
    flops_per_token, memory_latency, objective_value, ModelProfile, ObjectiveWeights, ServerSpec,
    TaskCostRecord,
};
use crate::defender::{
    default_u_cost, ga_allocate, gmdra_decide, predict_malicious_count, prompt_cost_coefficient,
    CostMode, GaParams, PromptCost,
};
use crate::detector::{detect, ConfusionRates, BLOCKED_RESPONSE};
use crate::error::Error;
use crate::game::user_select_edge;
use crate::rng::{purpose, stream, SimRng};
use crate::vdb::{embed, SimilarityPair, VectorStore};
use crate::workload::{
    build_population, count_tokens, generate_stage_tasks, load_dataset, Corpus, Label, Player,
    PlayerId, PlayerKind, Task, TaskSizer, TokenMode,
};
use crate::Result;

/// Detection strategy run by every edge defender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Never detect.
    None,
    /// Detect every prompt.
    Full,
    /// Detect each prompt independently with probability `p`.
    Random(f64),
    /// Marginal-analysis budget, genetic allocation.
    Genetic,
    /// Marginal-analysis budget, exact allocation, vector-store similarity.
    Gmdra,
    /// Same, but with the similarity signal replaced by a neutral pair.
    GmdraNoVdb,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::None => write!(f, "none"),
            Strategy::Full => write!(f, "full"),
            Strategy::Random(p) => write!(f, "random({p})"),
            Strategy::Genetic => write!(f, "genetic"),
            Strategy::Gmdra => write!(f, "gmdra"),
            Strategy::GmdraNoVdb => write!(f, "gmdra-novdb"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Strategy::None),
            "full" => Ok(Strategy::Full),
            "genetic" => Ok(Strategy::Genetic),
            "gmdra" => Ok(Strategy::Gmdra),
            "gmdra-novdb" => Ok(Strategy::GmdraNoVdb),
            other => {
                if let Some(inner) = other.strip_prefix("random(").and_then(|r| r.strip_suffix(')'))
                {
                    let p: f64 = inner.parse().map_err(|_| {
                        Error::InvalidInput(format!("bad probability in strategy {other:?}"))
                    })?;
                    return Ok(Strategy::Random(p));
                }
                Err(Error::InvalidInput(format!(
                    "unknown strategy {other:?}; expected none, full, random(p), genetic, \
                     gmdra, or gmdra-novdb"
                )))
            }
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One edge server: compute spec plus its detector shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub server: ServerSpec,
    pub detector: ModelProfile,
}

/// The cloud server and its LLM shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudConfig {
    pub server: ServerSpec,
    pub llm: ModelProfile,
}

/// Truncated log-normal output-length model: `round(exp(N(mu_log,
/// sigma_log)))` clamped into `[1, n_ctx]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputLengthConfig {
    pub mu_log: f64,
    pub sigma_log: f64,
}

/// Workload and vector-store dataset locations, resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub benign: String,
    pub malicious: String,
}

/// Vector-store shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VdbConfig {
    pub dimension: usize,
    pub top_k: usize,
}

impl Default for VdbConfig {
    fn default() -> Self {
        Self { dimension: 4096, top_k: 5 }
    }
}

fn default_stage_wall() -> f64 {
    75.0
}

/// Full simulation configuration. The JSON config file mirrors these field
/// names exactly; unknown keys are hard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub stages: u32,
    pub benign_players: u32,
    pub malicious_players: u32,
    pub malicious_send_count: u32,
    pub edges: Vec<EdgeConfig>,
    pub cloud: CloudConfig,
    pub weights: ObjectiveWeights,
    pub belief: BeliefParams,
    /// Marginal-cost threshold for the budget prediction. When absent, each
    /// queue defaults to `alpha4 * mean(o_k * cf)`.
    #[serde(default)]
    pub u_cost: Option<f64>,
    pub detector_rates: ConfusionRates,
    pub strategy: Strategy,
    pub output_length: OutputLengthConfig,
    pub expected_output_tokens: u32,
    #[serde(default)]
    pub token_mode: TokenMode,
    #[serde(default)]
    pub cost_mode: CostMode,
    pub datasets: DatasetPaths,
    pub vdb_datasets: DatasetPaths,
    #[serde(default)]
    pub vdb: VdbConfig,
    #[serde(default = "default_stage_wall")]
    pub stage_wall_seconds: f64,
    #[serde(default)]
    pub ga: GaParams,
    pub seed: u64,
}

impl SimConfig {
    /// Validate everything up front, reporting the full list of violations.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.stages < 1 {
            problems.push("stages must be at least 1".to_string());
        }
        if self.malicious_send_count > self.malicious_players {
            problems.push(format!(
                "malicious_send_count {} exceeds malicious_players {}",
                self.malicious_send_count, self.malicious_players
            ));
        }
        if self.edges.is_empty() {
            problems.push("at least one edge server is required".to_string());
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        for (i, edge) in self.edges.iter().enumerate() {
            if !positive(edge.server.gpu_flops) {
                problems.push(format!("edges[{i}].server.gpu_flops must be positive"));
            }
            if !positive(edge.server.gpu_bandwidth) {
                problems.push(format!("edges[{i}].server.gpu_bandwidth must be positive"));
            }
        }
        if !positive(self.cloud.server.gpu_flops) {
            problems.push("cloud.server.gpu_flops must be positive".to_string());
        }
        if !positive(self.cloud.server.gpu_bandwidth) {
            problems.push("cloud.server.gpu_bandwidth must be positive".to_string());
        }
        if self.cloud.llm.n_ctx < 1 {
            problems.push("cloud.llm.n_ctx must be at least 1".to_string());
        }
        if let Err(e) = self.weights.validate() {
            problems.push(format!("weights: {e}"));
        }
        if let Err(e) = self.belief.validate() {
            problems.push(format!("belief: {e}"));
        }
        if let Some(u) = self.u_cost {
            if !u.is_finite() {
                problems.push(format!("u_cost must be finite, got {u}"));
            }
        }
        if let Err(e) = self.detector_rates.validate() {
            problems.push(format!("detector_rates: {e}"));
        }
        if let Strategy::Random(p) = self.strategy {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("random strategy probability must be in [0,1], got {p}"));
            }
        }
        if !self.output_length.mu_log.is_finite() {
            problems.push("output_length.mu_log must be finite".to_string());
        }
        if !(self.output_length.sigma_log >= 0.0 && self.output_length.sigma_log.is_finite()) {
            problems.push("output_length.sigma_log must be non-negative".to_string());
        }
        if self.expected_output_tokens < 1 {
            problems.push("expected_output_tokens must be at least 1".to_string());
        }
        if self.vdb.dimension < crate::vdb::MIN_DIMENSION {
            problems.push(format!(
                "vdb.dimension must be at least {}",
                crate::vdb::MIN_DIMENSION
            ));
        }
        if self.vdb.top_k < 1 {
            problems.push("vdb.top_k must be at least 1".to_string());
        }
        if !positive(self.stage_wall_seconds) {
            problems.push("stage_wall_seconds must be positive".to_string());
        }
        if self.ga.population < 2 {
            problems.push("ga.population must be at least 2".to_string());
        }
        if self.ga.generations < 1 {
            problems.push("ga.generations must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.ga.mutation_rate) {
            problems.push("ga.mutation_rate must be in [0,1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigValidation(problems))
        }
    }

    /// Hex SHA-256 of the canonical serialized config. Stable across
    /// platforms for identical config content.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-stage metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u32,
    pub strategy: String,
    /// Mean latency per (prompt + output) token over benign players' tasks.
    pub avg_latency_per_token_s: f64,
    /// Running mean of the stage averages up to and including this stage.
    pub cum_avg_latency_per_token_s: f64,
    pub gpu_mem_proxy_bytes: f64,
    pub gpu_util_proxy: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub detected: u64,
    pub dropped: u64,
    pub answered: u64,
    pub objective: f64,
    /// Response latency per player this stage, seconds.
    pub per_player_latency_s: BTreeMap<u32, f64>,
}

/// Whole-run aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeReport {
    pub avg_latency_per_token_s: f64,
    pub gpu_mem_proxy_bytes: f64,
    pub gpu_util_proxy: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub detected: u64,
    pub dropped: u64,
    pub answered: u64,
    pub objective: f64,
}

/// Full run output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub strategy: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub cumulative: CumulativeReport,
}

impl RunReport {
    /// Canonical pretty JSON; parsing and re-serializing yields identical
    /// bytes.
    pub fn to_json_pretty(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

/// Simulated LLM call: draws an output length from the truncated log-normal
/// model and prices the forward pass on the cloud spec. Returns (output
/// tokens, LLM latency seconds).
pub fn simulate_llm_response(
    task: &Task,
    cloud: &CloudConfig,
    dist: &OutputLengthConfig,
    rng: &mut SimRng,
) -> Result<(u64, f64)> {
    let raw = if dist.sigma_log == 0.0 {
        dist.mu_log.exp()
    } else {
        // Box-Muller; 1-u keeps the log argument strictly positive.
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        (dist.mu_log + dist.sigma_log * z).exp()
    };
    let output = (raw.round() as i64).clamp(1, self_max(cloud.llm.n_ctx).max(1)) as u64;
    let t_mem = memory_latency(&cloud.llm, &cloud.server)?;
    let t_com = crate::cost::compute_latency(flops_per_token(&cloud.llm), &cloud.server)?;
    let per_token = t_mem.max(t_com);
    let d_llm = (task.o_k + output) as f64 * per_token;
    Ok((output, d_llm))
}

fn self_max(n_ctx: u64) -> i64 {
    n_ctx.min(i64::MAX as u64) as i64
}

/// What one player carries between stages.
#[derive(Debug, Clone)]
struct UserState {
    belief: BeliefState,
    has_history: bool,
    last_blocked: bool,
    last_latency: f64,
    last_resp_tokens: u64,
    last_prompt_tokens: u64,
    last_f_k: f64,
    /// Per-edge latency-per-token estimates (benign edge selection).
    latency_est: Vec<f64>,
    /// Per-edge attempts and observed blocks (attacker edge selection).
    attempts: Vec<u64>,
    blocks: Vec<u64>,
}

impl UserState {
    fn new(edges: usize) -> Self {
        Self {
            belief: BeliefState::uniform(),
            has_history: false,
            last_blocked: false,
            last_latency: 0.0,
            last_resp_tokens: 0,
            last_prompt_tokens: 0,
            last_f_k: 0.0,
            latency_est: vec![0.0; edges],
            attempts: vec![0; edges],
            blocks: vec![0; edges],
        }
    }
}

/// Defender-side view of one player at one edge.
#[derive(Debug, Clone, Copy)]
struct DefenderView {
    mu: f64,
    last_blocked: Option<bool>,
}

/// Mutable simulation state threaded across stages.
pub struct SimState {
    config: SimConfig,
    population: Vec<Player>,
    corpus: Corpus,
    store: VectorStore,
    sizer: TaskSizer,
    edge_flops_per_token: Vec<f64>,
    llm_flops_per_token: f64,
    users: BTreeMap<PlayerId, UserState>,
    defender_views: Vec<BTreeMap<PlayerId, DefenderView>>,
    stage: u32,
}

impl SimState {
    /// Load datasets relative to `base_dir` and assemble the initial state.
    pub fn new(config: &SimConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let benign = load_dataset(&base_dir.join(&config.datasets.benign))?;
        let malicious = load_dataset(&base_dir.join(&config.datasets.malicious))?;
        let corpus = Corpus::new(benign, malicious)?;

        let mut store = VectorStore::new(config.vdb.dimension)?;
        for prompt in load_dataset(&base_dir.join(&config.vdb_datasets.benign))? {
            store.insert_text(&prompt.text, prompt.label)?;
        }
        for prompt in load_dataset(&base_dir.join(&config.vdb_datasets.malicious))? {
            store.insert_text(&prompt.text, prompt.label)?;
        }
        Self::from_parts(config, corpus, store)
    }

    /// Assemble state from in-memory parts (fixtures, tests).
    pub fn from_parts(config: &SimConfig, corpus: Corpus, store: VectorStore) -> Result<Self> {
        config.validate()?;
        if store.dimension() != config.vdb.dimension {
            return Err(Error::DimensionMismatch {
                expected: config.vdb.dimension,
                got: store.dimension(),
            });
        }
        let population = build_population(config.benign_players, config.malicious_players);
        let sizer = TaskSizer::new(
            &config.cloud.llm,
            u64::from(config.expected_output_tokens),
            config.token_mode,
        );
        let edge_flops_per_token =
            config.edges.iter().map(|e| flops_per_token(&e.detector)).collect();
        let users = population
            .iter()
            .map(|p| (p.id, UserState::new(config.edges.len())))
            .collect();
        let defender_views = vec![BTreeMap::new(); config.edges.len()];
        Ok(Self {
            llm_flops_per_token: flops_per_token(&config.cloud.llm),
            config: config.clone(),
            population,
            corpus,
            store,
            sizer,
            edge_flops_per_token,
            users,
            defender_views,
            stage: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Detector effectiveness parameter shared by utility computations: the
    /// expected F1 of the configured rates on this run's workload balance.
    pub fn detector_effectiveness(&self) -> Result<f64> {
        let users = self.config.benign_players + self.config.malicious_players;
        if users == 0 {
            return Err(Error::InvalidInput("no players, no workload balance".into()));
        }
        let balance = f64::from(self.config.malicious_send_count) / f64::from(users);
        crate::detector::analytic_f1(&self.config.detector_rates, balance)
    }

    /// Pin defender beliefs to ground truth (benign players safe, malicious
    /// players unsafe). Extreme beliefs are absorbing, so they persist for
    /// the rest of the run. Calibration fixture for dominance checks.
    pub fn seed_ground_truth_beliefs(&mut self) {
        for views in &mut self.defender_views {
            for player in &self.population {
                let mu = match player.kind {
                    PlayerKind::Benign => 1.0,
                    _ => 0.0,
                };
                views.insert(player.id, DefenderView { mu, last_blocked: None });
            }
        }
    }

    /// Run the remaining stages and assemble the report.
    pub fn run(&mut self) -> Result<RunReport> {
        let mut stages = Vec::with_capacity(self.config.stages as usize);
        while self.stage < self.config.stages {
            stages.push(self.step()?);
        }

        let mut latency_sum = 0.0;
        for (i, stage) in stages.iter_mut().enumerate() {
            latency_sum += stage.avg_latency_per_token_s;
            stage.cum_avg_latency_per_token_s = latency_sum / (i + 1) as f64;
        }

        let n = stages.len().max(1) as f64;
        let cumulative = CumulativeReport {
            avg_latency_per_token_s: stages
                .iter()
                .map(|s| s.avg_latency_per_token_s)
                .sum::<f64>()
                / n,
            gpu_mem_proxy_bytes: stages.iter().map(|s| s.gpu_mem_proxy_bytes).sum::<f64>() / n,
            gpu_util_proxy: stages.iter().map(|s| s.gpu_util_proxy).sum::<f64>() / n,
            tp: stages.iter().map(|s| s.tp).sum(),
            fp: stages.iter().map(|s| s.fp).sum(),
            tn: stages.iter().map(|s| s.tn).sum(),
            fn_: stages.iter().map(|s| s.fn_).sum(),
            detected: stages.iter().map(|s| s.detected).sum(),
            dropped: stages.iter().map(|s| s.dropped).sum(),
            answered: stages.iter().map(|s| s.answered).sum(),
            objective: stages.iter().map(|s| s.objective).sum(),
        };
        Ok(RunReport {
            config_digest: self.config.digest(),
            strategy: self.config.strategy.to_string(),
            seed: self.config.seed,
            stages,
            cumulative,
        })
    }

    /// Execute one stage.
    pub fn step(&mut self) -> Result<StageReport> {
        let stage = self.stage;
        let seed = self.config.seed;
        let edge_count = self.config.edges.len();

        // (1) Users refresh their own beliefs from last stage's outcome.
        if stage > 0 {
            self.update_user_beliefs()?;
        }

        // (2) Edge selection.
        let mut chosen_edges: BTreeMap<PlayerId, usize> = BTreeMap::new();
        for player in &self.population {
            let user = &self.users[&player.id];
            let scores = match player.kind {
                PlayerKind::Benign => user.latency_est.clone(),
                PlayerKind::Malicious => self.attacker_edge_scores(user),
                PlayerKind::Defender => continue,
            };
            let spread = scores.iter().map(|s| s.abs()).sum::<f64>() / edge_count as f64;
            let temperature = if spread > 0.0 { 0.1 * spread } else { 1.0 };
            let mut rng = stream(seed, &[purpose::EDGE_CHOICE, u64::from(stage), u64::from(player.id.0)]);
            let (edge, _) = user_select_edge(player.kind, &scores, temperature, &mut rng)?;
            chosen_edges.insert(player.id, edge);
        }

        // (3) Task generation.
        let mut task_rng = stream(seed, &[purpose::TASKS, u64::from(stage)]);
        let tasks = generate_stage_tasks(
            &self.population,
            &self.corpus,
            stage,
            self.config.malicious_send_count,
            &self.sizer,
            &mut task_rng,
        )?;

        // (4) Queue per edge, in task (= player) order.
        let mut queues: Vec<Vec<usize>> = vec![Vec::new(); edge_count];
        for (idx, task) in tasks.iter().enumerate() {
            queues[chosen_edges[&task.source_player]].push(idx);
        }

        // (5) Defender decisions per edge.
        let mut selected = vec![false; tasks.len()];
        for (edge, queue) in queues.iter().enumerate() {
            for &idx in self.decide_edge(edge, queue, &tasks)?.iter() {
                selected[idx] = true;
            }
        }

        // (6) Detection and responses.
        let blocked_tokens = count_tokens(BLOCKED_RESPONSE, self.config.token_mode);
        let mut outcomes: Vec<TaskOutcome> = Vec::with_capacity(tasks.len());
        for (idx, task) in tasks.iter().enumerate() {
            let player = task.source_player;
            let edge = chosen_edges[&player];
            let d_det = if selected[idx] {
                crate::cost::detection_time(
                    task.o_k,
                    &self.config.edges[edge].detector,
                    &self.config.edges[edge].server,
                )?
            } else {
                0.0
            };
            let flagged = if selected[idx] {
                let mut rng =
                    stream(seed, &[purpose::DETECTOR, u64::from(stage), u64::from(player.0)]);
                detect(task.prompt.label, &self.config.detector_rates, &mut rng).malicious
            } else {
                false
            };
            let (output_tokens, d_llm) = if flagged {
                (0u64, 0.0)
            } else {
                let mut rng =
                    stream(seed, &[purpose::LLM_OUTPUT, u64::from(stage), u64::from(player.0)]);
                simulate_llm_response(task, &self.config.cloud, &self.config.output_length, &mut rng)?
            };
            let record =
                TaskCostRecord::new(selected[idx], flagged, task.o_k, task.f_k, d_det, d_llm)?;
            outcomes.push(TaskOutcome {
                task_idx: idx,
                edge,
                record,
                output_tokens,
                resp_tokens: if flagged { blocked_tokens } else { output_tokens },
            });
        }

        // (7) Metrics.
        let report = self.collect_metrics(stage, &tasks, &outcomes)?;

        // (8) Carry outcomes into user and defender state.
        self.absorb_outcomes(&tasks, &outcomes, &chosen_edges);

        self.stage += 1;
        Ok(report)
    }

    fn update_user_beliefs(&mut self) -> Result<()> {
        let params = self.config.belief;
        for player in &self.population {
            let user = self.users.get_mut(&player.id).expect("user state exists");
            if !user.has_history {
                continue;
            }
            let ctx = ObservationContext {
                role: player.kind,
                response_class: if user.last_blocked {
                    ResponseClass::Blocked
                } else {
                    ResponseClass::Benign
                },
                d_prev: user.last_latency,
                o_prompt_prev: user.last_prompt_tokens,
                o_resp_prev: user.last_resp_tokens,
                o_pred: u64::from(self.config.expected_output_tokens),
                sim: SimilarityPair::NEUTRAL,
            };
            match update_belief(&user.belief, &ctx, &params) {
                Ok(next) => user.belief = next,
                // Degenerate observation: keep the prior.
                Err(Error::DegenerateObservation(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Attacker's per-edge utility estimate: expected surviving demand plus
    /// the detection compute it would burn. Falls back to the player's own
    /// detection belief on edges it has not probed.
    fn attacker_edge_scores(&self, user: &UserState) -> Vec<f64> {
        let f_est = if user.last_f_k > 0.0 {
            user.last_f_k
        } else {
            f64::from(self.config.expected_output_tokens) * self.llm_flops_per_token
        };
        let o_est = if user.last_prompt_tokens > 0 {
            user.last_prompt_tokens
        } else {
            u64::from(self.config.expected_output_tokens)
        };
        (0..self.config.edges.len())
            .map(|edge| {
                let pd = if user.attempts[edge] > 0 {
                    user.blocks[edge] as f64 / user.attempts[edge] as f64
                } else {
                    1.0 - user.belief.mu
                };
                (1.0 - pd) * f_est + o_est as f64 * self.edge_flops_per_token[edge]
            })
            .collect()
    }

    /// Run this edge's defender over its queue; returns queue-relative task
    /// indices to detect.
    fn decide_edge(&mut self, edge: usize, queue: &[usize], tasks: &[Task]) -> Result<Vec<usize>> {
        if queue.is_empty() {
            return Ok(Vec::new());
        }
        let stage = self.stage;
        let seed = self.config.seed;
        match self.config.strategy {
            Strategy::None => Ok(Vec::new()),
            Strategy::Full => Ok(queue.to_vec()),
            Strategy::Random(p) => {
                let mut picked = Vec::new();
                for &idx in queue {
                    let player = tasks[idx].source_player;
                    let mut rng = stream(
                        seed,
                        &[purpose::RANDOM_STRATEGY, u64::from(stage), u64::from(player.0)],
                    );
                    if rng.random::<f64>() < p {
                        picked.push(idx);
                    }
                }
                Ok(picked)
            }
            Strategy::Genetic | Strategy::Gmdra | Strategy::GmdraNoVdb => {
                let queue_tasks: Vec<Task> = queue.iter().map(|&i| tasks[i].clone()).collect();
                let beliefs = self.refresh_defender_beliefs(edge, &queue_tasks)?;
                let weights = self.config.weights;
                let detector = self.config.edges[edge].detector;
                let server = self.config.edges[edge].server;
                let u_cost = self.config.u_cost.unwrap_or_else(|| {
                    default_u_cost(&queue_tasks, &weights, &detector)
                });
                let mode = self.config.cost_mode;

                let picked_local: Vec<usize> = if self.config.strategy == Strategy::Genetic {
                    let costs: Vec<PromptCost> = queue_tasks
                        .iter()
                        .zip(&beliefs)
                        .enumerate()
                        .map(|(i, (task, &mu))| {
                            Ok(PromptCost {
                                task_ref: i,
                                coefficient: prompt_cost_coefficient(
                                    task, mu, &weights, &detector, &server, mode,
                                )?,
                                belief_mu: mu,
                            })
                        })
                        .collect::<Result<_>>()?;
                    let budget = predict_malicious_count(&costs, u_cost)?;
                    let mut rng =
                        stream(seed, &[purpose::GA, u64::from(stage), edge as u64]);
                    let alloc = ga_allocate(&costs, budget, &self.config.ga, &mut rng)?;
                    alloc
                        .pi
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p == 1.0)
                        .map(|(i, _)| i)
                        .collect()
                } else {
                    gmdra_decide(&queue_tasks, &beliefs, &weights, &detector, &server, u_cost, mode)?
                        .selected
                };
                Ok(picked_local.into_iter().map(|local| queue[local]).collect())
            }
        }
    }

    /// Defender belief refresh for the tasks sitting in this edge's queue:
    /// base likelihoods from the response class the source earned last time
    /// it was seen here, similarity factor from the current prompt. The
    /// refreshed belief is stored as the new prior.
    fn refresh_defender_beliefs(&mut self, edge: usize, queue_tasks: &[Task]) -> Result<Vec<f64>> {
        let params = self.config.belief;
        let use_store = self.config.strategy != Strategy::GmdraNoVdb;
        let top_k = self.config.vdb.top_k;
        let mut beliefs = Vec::with_capacity(queue_tasks.len());
        for task in queue_tasks {
            let sim = if use_store {
                let query = embed(&task.prompt.text, self.store.dimension())?;
                self.store.similarity_scores(&query, top_k)?
            } else {
                SimilarityPair::NEUTRAL
            };
            let view = self
                .defender_views[edge]
                .entry(task.source_player)
                .or_insert(DefenderView { mu: 0.5, last_blocked: None });
            let ctx = ObservationContext {
                role: PlayerKind::Defender,
                response_class: match view.last_blocked {
                    Some(true) => ResponseClass::Blocked,
                    _ => ResponseClass::Benign,
                },
                d_prev: 0.0,
                o_prompt_prev: 0,
                o_resp_prev: 0,
                o_pred: 0,
                sim,
            };
            let prior = BeliefState::new(view.mu);
            let next = update_belief(&prior, &ctx, &params)?;
            view.mu = next.mu;
            beliefs.push(next.mu);
        }
        Ok(beliefs)
    }

    fn collect_metrics(
        &self,
        stage: u32,
        tasks: &[Task],
        outcomes: &[TaskOutcome],
    ) -> Result<StageReport> {
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        let mut detected = 0u64;
        let mut dropped = 0u64;
        let mut per_player_latency = BTreeMap::new();
        let mut benign_latency_per_token = Vec::new();

        let benign_ids: std::collections::BTreeSet<PlayerId> = self
            .population
            .iter()
            .filter(|p| p.kind == PlayerKind::Benign)
            .map(|p| p.id)
            .collect();

        for outcome in outcomes {
            let task = &tasks[outcome.task_idx];
            let rec = &outcome.record;
            if rec.detected {
                detected += 1;
                match (task.prompt.label, rec.flagged) {
                    (Label::Malicious, true) => tp += 1,
                    (Label::Malicious, false) => fn_ += 1,
                    (Label::Benign, true) => fp += 1,
                    (Label::Benign, false) => tn += 1,
                }
            }
            if rec.flagged {
                dropped += 1;
            }
            let latency = crate::cost::task_latency(rec);
            per_player_latency.insert(task.source_player.0, latency);
            if benign_ids.contains(&task.source_player) {
                let tokens = (task.o_k + outcome.output_tokens).max(1);
                benign_latency_per_token.push(latency / tokens as f64);
            }
        }
        let answered = tasks.len() as u64 - dropped;

        let avg_latency_per_token_s = if benign_latency_per_token.is_empty() {
            0.0
        } else {
            benign_latency_per_token.iter().sum::<f64>() / benign_latency_per_token.len() as f64
        };

        // Objective, summed edge by edge so each edge prices detection with
        // its own detector.
        let mut objective = 0.0;
        for edge in 0..self.config.edges.len() {
            let records: Vec<(bool, TaskCostRecord)> = outcomes
                .iter()
                .filter(|o| o.edge == edge)
                .map(|o| {
                    (tasks[o.task_idx].prompt.label == Label::Benign, o.record)
                })
                .collect();
            if !records.is_empty() {
                objective += objective_value(
                    &records,
                    self.edge_flops_per_token[edge],
                    &self.config.weights,
                )?;
            }
        }

        // GPU proxies, as documented on the module.
        let mut mem_bytes = 0.0;
        for edge in 0..self.config.edges.len() {
            let edge_detected = outcomes
                .iter()
                .any(|o| o.edge == edge && o.record.detected);
            if edge_detected {
                mem_bytes += 2.0 * self.config.edges[edge].detector.params as f64;
            }
        }
        let live_tokens: u64 = outcomes
            .iter()
            .filter(|o| !o.record.flagged)
            .map(|o| tasks[o.task_idx].o_k + o.output_tokens)
            .sum();
        if answered > 0 {
            mem_bytes += 2.0 * self.config.cloud.llm.params as f64;
            mem_bytes +=
                4.0 * (self.config.cloud.llm.n_layer * self.config.cloud.llm.d_attn) as f64
                    * live_tokens as f64;
        }

        let detection_flops: f64 = outcomes
            .iter()
            .filter(|o| o.record.detected)
            .map(|o| tasks[o.task_idx].o_k as f64 * self.edge_flops_per_token[o.edge])
            .sum();
        let llm_flops: f64 = outcomes
            .iter()
            .filter(|o| !o.record.flagged)
            .map(|o| (tasks[o.task_idx].o_k + o.output_tokens) as f64 * self.llm_flops_per_token)
            .sum();
        let capacity: f64 = self.config.edges.iter().map(|e| e.server.gpu_flops).sum::<f64>()
            + self.config.cloud.server.gpu_flops;
        let gpu_util_proxy = if tasks.is_empty() {
            0.0
        } else {
            ((detection_flops + llm_flops) / (self.config.stage_wall_seconds * capacity))
                .clamp(0.0, 1.0)
        };

        Ok(StageReport {
            stage,
            strategy: self.config.strategy.to_string(),
            avg_latency_per_token_s,
            cum_avg_latency_per_token_s: avg_latency_per_token_s,
            gpu_mem_proxy_bytes: mem_bytes,
            gpu_util_proxy,
            tp,
            fp,
            tn,
            fn_,
            detected,
            dropped,
            answered,
            objective,
            per_player_latency_s: per_player_latency,
        })
    }

    fn absorb_outcomes(
        &mut self,
        tasks: &[Task],
        outcomes: &[TaskOutcome],
        chosen_edges: &BTreeMap<PlayerId, usize>,
    ) {
        for outcome in outcomes {
            let task = &tasks[outcome.task_idx];
            let player = task.source_player;
            let edge = chosen_edges[&player];
            let latency = crate::cost::task_latency(&outcome.record);
            let user = self.users.get_mut(&player).expect("user state exists");
            user.has_history = true;
            user.last_blocked = outcome.record.flagged;
            user.last_latency = latency;
            user.last_resp_tokens = outcome.resp_tokens;
            user.last_prompt_tokens = task.o_k;
            user.last_f_k = task.f_k;
            let tokens = (task.o_k + outcome.output_tokens).max(1);
            user.latency_est[edge] = latency / tokens as f64;
            user.attempts[edge] += 1;
            if outcome.record.flagged {
                user.blocks[edge] += 1;
            }
            if let Some(view) = self.defender_views[edge].get_mut(&player) {
                view.last_blocked = Some(outcome.record.flagged);
            }
        }
    }
}

struct TaskOutcome {
    task_idx: usize,
    edge: usize,
    record: TaskCostRecord,
    output_tokens: u64,
    /// Token count of what the user saw (LLM output, or the blocked
    /// response text).
    resp_tokens: u64,
}

/// Execute one stage of an initialized simulation.
pub fn run_stage(state: &mut SimState) -> Result<StageReport> {
    state.step()
}

/// Run a full simulation from a config, loading datasets relative to
/// `base_dir`.
pub fn run_simulation(config: &SimConfig, base_dir: &Path) -> Result<RunReport> {
    SimState::new(config, base_dir)?.run()
}

/// Side-by-side strategy comparison under common random numbers: identical
/// seeds and workloads, varying only the strategy.
pub fn compare_strategies(
    config: &SimConfig,
    base_dir: &Path,
    strategies: &[Strategy],
) -> Result<Vec<(Strategy, RunReport)>> {
    let mut out = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let run_config = SimConfig { strategy, ..config.clone() };
        out.push((strategy, run_simulation(&run_config, base_dir)?));
    }
    Ok(out)
}
