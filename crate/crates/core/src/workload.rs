//! Dataset ingestion, token counting, player population construction, and
//! per-stage task generation.
//!
//! Datasets are UTF-8 JSON-lines, one `{"text": <string>, "label": 0|1}`
//! object per line. Token counting approximates a real tokenizer; the
//! default `bytes4` mode charges one token per 4 bytes of UTF-8.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{flops_per_token, ModelProfile};
use crate::error::Error;
use crate::rng::SimRng;
use crate::Result;

/// Safety label of a prompt: 0 benign, 1 malicious.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        matches!(self, Label::Malicious)
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(match self {
            Label::Benign => 0,
            Label::Malicious => 1,
        })
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u64::deserialize(d)?;
        match v {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Malicious),
            other => Err(serde::de::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One prompt with its ground-truth safety label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPrompt {
    pub text: String,
    pub label: Label,
}

/// Player identifier, stable for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Player type, fixed for the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayerKind {
    Benign,
    Malicious,
    Defender,
}

/// One participant in the game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Player {
    pub id: PlayerId,
    pub kind: PlayerKind,
}

/// Build a user population: benign players first, then malicious, with
/// contiguous ids.
pub fn build_population(benign: u32, malicious: u32) -> Vec<Player> {
    let mut players = Vec::with_capacity((benign + malicious) as usize);
    for i in 0..benign {
        players.push(Player { id: PlayerId(i), kind: PlayerKind::Benign });
    }
    for i in 0..malicious {
        players.push(Player { id: PlayerId(benign + i), kind: PlayerKind::Malicious });
    }
    players
}

/// Token counting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    /// Maximal non-whitespace runs.
    Whitespace,
    /// `ceil(byte_length / 4)` — roughly 4 bytes per token.
    #[default]
    Bytes4,
}

/// Count tokens in `text` under the given mode. Deterministic and
/// platform-independent.
pub fn count_tokens(text: &str, mode: TokenMode) -> u64 {
    match mode {
        TokenMode::Whitespace => text.split_whitespace().count() as u64,
        TokenMode::Bytes4 => (text.len() as u64).div_ceil(4),
    }
}

/// One prompt instance flowing through the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub prompt: LabeledPrompt,
    pub source_player: PlayerId,
    /// LLM processing demand in FLOPs.
    pub f_k: f64,
    /// Prompt token count under the run's token mode.
    pub o_k: u64,
    pub stage: u32,
}

/// Derives task sizes from the serving model: `f_k` charges the LLM's
/// per-token cost for the prompt plus the expected response length.
#[derive(Debug, Clone, Copy)]
pub struct TaskSizer {
    pub llm_flops_per_token: f64,
    pub expected_output_tokens: u64,
    pub token_mode: TokenMode,
}

impl TaskSizer {
    pub fn new(llm: &ModelProfile, expected_output_tokens: u64, token_mode: TokenMode) -> Self {
        Self {
            llm_flops_per_token: flops_per_token(llm),
            expected_output_tokens,
            token_mode,
        }
    }

    fn task(&self, prompt: LabeledPrompt, source: PlayerId, stage: u32) -> Task {
        let o_k = count_tokens(&prompt.text, self.token_mode);
        let f_k = (o_k + self.expected_output_tokens) as f64 * self.llm_flops_per_token;
        Task { prompt, source_player: source, f_k, o_k, stage }
    }
}

/// Load a JSON-lines dataset, reporting the first malformed line by number
/// (1-based). Blank lines are ignored.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledPrompt>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::DatasetIo {
        path: display.clone(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut prompts = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::DatasetIo {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let prompt: LabeledPrompt =
            serde_json::from_str(&line).map_err(|e| Error::DatasetRecord {
                path: display.clone(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if prompt.text.is_empty() {
            return Err(Error::DatasetRecord {
                path: display.clone(),
                line: line_no,
                reason: "text must be non-empty".into(),
            });
        }
        prompts.push(prompt);
    }
    Ok(prompts)
}

/// Prompt pools split by label, drawn without replacement within a stage
/// and with replacement across stages.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub benign: Vec<LabeledPrompt>,
    pub malicious: Vec<LabeledPrompt>,
}

impl Corpus {
    pub fn new(benign: Vec<LabeledPrompt>, malicious: Vec<LabeledPrompt>) -> Result<Self> {
        if benign.iter().any(|p| p.label.is_malicious()) {
            return Err(Error::InvalidInput("benign pool contains malicious labels".into()));
        }
        if malicious.iter().any(|p| !p.label.is_malicious()) {
            return Err(Error::InvalidInput("malicious pool contains benign labels".into()));
        }
        Ok(Self { benign, malicious })
    }
}

/// Generate one stage of tasks: every benign player emits a benign prompt;
/// exactly `malicious_send_count` malicious players (chosen by `rng`) emit
/// malicious prompts and the rest emit benign prompts. Tasks come back in
/// player order. Deterministic given the rng stream.
pub fn generate_stage_tasks(
    population: &[Player],
    corpus: &Corpus,
    stage: u32,
    malicious_send_count: u32,
    sizer: &TaskSizer,
    rng: &mut SimRng,
) -> Result<Vec<Task>> {
    let malicious_players: Vec<PlayerId> = population
        .iter()
        .filter(|p| p.kind == PlayerKind::Malicious)
        .map(|p| p.id)
        .collect();
    if (malicious_send_count as usize) > malicious_players.len() {
        return Err(Error::InvalidInput(format!(
            "malicious_send_count {} exceeds malicious player count {}",
            malicious_send_count,
            malicious_players.len()
        )));
    }

    // Which malicious players act maliciously this stage.
    let mut shuffled = malicious_players.clone();
    shuffled.shuffle(rng);
    let mut senders: Vec<PlayerId> = shuffled[..malicious_send_count as usize].to_vec();
    senders.sort_unstable();

    let benign_needed = population
        .iter()
        .filter(|p| p.kind != PlayerKind::Defender)
        .count()
        - senders.len();
    let malicious_needed = senders.len();

    let mut benign_draw = draw_without_replacement(&corpus.benign, benign_needed, "benign", rng)?;
    let mut malicious_draw =
        draw_without_replacement(&corpus.malicious, malicious_needed, "malicious", rng)?;

    let mut tasks = Vec::with_capacity(benign_needed + malicious_needed);
    for player in population.iter().filter(|p| p.kind != PlayerKind::Defender) {
        let sends_malicious =
            player.kind == PlayerKind::Malicious && senders.binary_search(&player.id).is_ok();
        let prompt = if sends_malicious {
            malicious_draw.pop().expect("sized above")
        } else {
            benign_draw.pop().expect("sized above")
        };
        tasks.push(sizer.task(prompt, player.id, stage));
    }
    Ok(tasks)
}

fn draw_without_replacement(
    pool: &[LabeledPrompt],
    n: usize,
    name: &str,
    rng: &mut SimRng,
) -> Result<Vec<LabeledPrompt>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if pool.len() < n {
        return Err(Error::PoolExhausted(format!(
            "{name} pool has {} prompts, stage needs {n}",
            pool.len()
        )));
    }
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    // Partial Fisher-Yates: only the first n slots are needed.
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    Ok(indices[..n].iter().map(|&i| pool[i].clone()).collect())
}
