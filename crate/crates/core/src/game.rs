//! Game layer: type assignment, prior consistency, the three utility
//! functions, softmin edge-selection strategies, and best-response
//! diagnostics.
//!
//! Utilities follow the cost conventions of the rest of the crate: benign
//! users and defenders minimize, the attacker maximizes. All utilities are
//! affine in each strategy coordinate, which is what makes the exact
//! allocation solver and the pure-deviation equilibrium checks sound.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cost::ObjectiveWeights;
use crate::defender::PromptCost;
use crate::error::Error;
use crate::rng::SimRng;
use crate::workload::PlayerKind;
use crate::Result;

/// Common prior over player types plus its split across information sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBeliefs {
    /// Prior probability of each type; must sum to 1.
    pub type_probs: BTreeMap<PlayerKind, f64>,
    /// Joint weight of (information set, type); for each type the weights
    /// must sum back to the type prior.
    pub tau: BTreeMap<(String, PlayerKind), f64>,
}

impl PriorBeliefs {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.type_probs.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "type priors must sum to 1, got {total}"
            )));
        }
        if self.type_probs.values().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidInput("type priors must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Result of the prior-consistency diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub pass: bool,
    /// Per-type residual `sum_h tau(h, type) - prior(type)`.
    pub residuals: BTreeMap<PlayerKind, f64>,
}

/// Verify that the information-set weights marginalize back to the type
/// priors, within 1e-9. Diagnostic only; never errors.
pub fn prior_consistency_check(priors: &PriorBeliefs) -> ConsistencyReport {
    let mut residuals = BTreeMap::new();
    for (&kind, &p) in &priors.type_probs {
        let marginal: f64 = priors
            .tau
            .iter()
            .filter(|((_, k), _)| *k == kind)
            .map(|(_, &w)| w)
            .sum();
        residuals.insert(kind, marginal - p);
    }
    let pass = residuals.values().all(|r| r.abs() <= 1e-9);
    ConsistencyReport { pass, residuals }
}

/// Nature's move: draw each player's type i.i.d. from the prior.
/// Deterministic under the rng stream.
pub fn nature_assign_types(
    player_count: usize,
    priors: &PriorBeliefs,
    rng: &mut SimRng,
) -> Result<Vec<PlayerKind>> {
    priors.validate()?;
    let kinds: Vec<(PlayerKind, f64)> =
        priors.type_probs.iter().map(|(&k, &p)| (k, p)).collect();
    let mut out = Vec::with_capacity(player_count);
    for _ in 0..player_count {
        let mut u: f64 = rng.random();
        let mut chosen = kinds.last().expect("validated non-empty").0;
        for &(kind, p) in &kinds {
            if u < p {
                chosen = kind;
                break;
            }
            u -= p;
        }
        out.push(chosen);
    }
    Ok(out)
}

/// A probability vector over a finite action set.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedStrategy {
    pub weights: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("strategy over an empty action set".into()));
        }
        if weights.iter().any(|&w| !(0.0..=1.0 + 1e-12).contains(&w)) {
            return Err(Error::InvalidInput("strategy weights must lie in [0,1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "strategy weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn pure(action: usize, n: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[action] = 1.0;
        Self { weights }
    }

    /// Sample an action index. Deterministic under the rng stream.
    pub fn sample(&self, rng: &mut SimRng) -> usize {
        let mut u: f64 = rng.random();
        for (i, &w) in self.weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        self.weights.len() - 1
    }
}

/// Expected latency of a benign user mixing over edges with per-edge
/// latencies `latencies`.
pub fn benign_utility(pi: &MixedStrategy, latencies: &[f64]) -> Result<f64> {
    if pi.weights.len() != latencies.len() {
        return Err(Error::InvalidInput(format!(
            "strategy has {} weights but {} latencies were supplied",
            pi.weights.len(),
            latencies.len()
        )));
    }
    Ok(pi.weights.iter().zip(latencies).map(|(w, d)| w * d).sum())
}

/// Attacker utility, expanded form: each edge contributes
/// `pi_m*((1-pd)*f_k + o_k*cf) + (1-pi_m)*f_k`.
pub fn malicious_utility_expanded(pi: &[f64], pd: f64, f_k: f64, o_k: u64, cf: f64) -> f64 {
    pi.iter()
        .map(|&p| p * ((1.0 - pd) * f_k + o_k as f64 * cf) + (1.0 - p) * f_k)
        .sum()
}

/// Attacker utility, rearranged form: `sum_m [pi_m*(o_k*cf - pd*f_k) + f_k]`.
/// Identical to the expanded form by algebra; both are kept so the identity
/// stays checkable.
pub fn malicious_utility_linear(pi: &[f64], pd: f64, f_k: f64, o_k: u64, cf: f64) -> f64 {
    pi.iter().map(|&p| p * (o_k as f64 * cf - pd * f_k) + f_k).sum()
}

/// Attacker utility for a mixed strategy over edges; `pd` is the detector
/// effectiveness (its expected F1 on the workload).
pub fn malicious_utility(
    pi: &MixedStrategy,
    pd: f64,
    f_k: f64,
    o_k: u64,
    cf: f64,
    edge_count: usize,
) -> Result<f64> {
    if pi.weights.len() != edge_count {
        return Err(Error::InvalidInput(format!(
            "strategy has {} weights but there are {} edges",
            pi.weights.len(),
            edge_count
        )));
    }
    Ok(malicious_utility_expanded(&pi.weights, pd, f_k, o_k, cf))
}

/// Defender utility: selected coefficient mass plus the strategy-independent
/// per-prompt demand `sum f_k`, reported so utilities line up with the
/// stage objective.
pub fn defender_utility(
    pi: &[f64],
    costs: &[PromptCost],
    f_ks: &[f64],
    weights: &ObjectiveWeights,
) -> Result<f64> {
    weights.validate()?;
    if pi.len() != costs.len() || pi.len() != f_ks.len() {
        return Err(Error::InvalidInput(format!(
            "defender utility dimension mismatch: {} pi, {} costs, {} demands",
            pi.len(),
            costs.len(),
            f_ks.len()
        )));
    }
    let selected: f64 = pi.iter().zip(costs).map(|(&p, c)| p * c.coefficient).sum();
    let base: f64 = f_ks.iter().sum();
    Ok(selected + base)
}

/// Softmin strategy over per-edge scores where lower is better: weight
/// proportional to `exp(-score / temperature)`. As temperature goes to 0
/// this recovers the pure best response; ties split evenly.
pub fn softmin_strategy(scores: &[f64], temperature: f64) -> Result<MixedStrategy> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("softmin over an empty edge set".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = scores.iter().map(|s| (-(s - min) / temperature).exp()).collect();
    let total: f64 = raw.iter().sum();
    MixedStrategy::new(raw.iter().map(|w| w / total).collect())
}

/// Objective direction for utilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Pick an edge for a user: benign users softmin over estimated latencies,
/// the attacker softmins over negated estimated utilities (it maximizes).
/// Returns the sampled edge and the mixed strategy it came from.
pub fn user_select_edge(
    role: PlayerKind,
    scores: &[f64],
    temperature: f64,
    rng: &mut SimRng,
) -> Result<(usize, MixedStrategy)> {
    let strategy = match role {
        PlayerKind::Benign => softmin_strategy(scores, temperature)?,
        PlayerKind::Malicious => {
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            softmin_strategy(&negated, temperature)?
        }
        PlayerKind::Defender => {
            return Err(Error::InvalidInput("defenders do not select edges".into()))
        }
    };
    let choice = strategy.sample(rng);
    Ok((choice, strategy))
}

/// Outcome of a best-response diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponseReport {
    pub pass: bool,
    /// Largest utility improvement any deviation achieves.
    pub gap: f64,
}

/// Check that no listed deviation improves on `current_value` by more than
/// `epsilon` in the player's own objective direction.
pub fn epsilon_best_response_check(
    current_value: f64,
    deviation_values: &[f64],
    direction: Direction,
    epsilon: f64,
) -> BestResponseReport {
    let gap = deviation_values
        .iter()
        .map(|&d| match direction {
            Direction::Minimize => current_value - d,
            Direction::Maximize => d - current_value,
        })
        .fold(0.0f64, f64::max);
    BestResponseReport { pass: gap <= epsilon, gap }
}
