//! Per-player Bayesian belief updates.
//!
//! Each observer tracks a safety probability `mu` per subject and refreshes
//! it once per stage from what it saw last: response class and latency for
//! users, response class and vector similarity for defenders. The update
//! computes a pair of likelihood weights (`p_ld`, `p_nld`) from the
//! observation and folds them into the prior with Bayes' rule.
//!
//! Branch semantics:
//!
//! - **Benign user** — base weights from the response class, then scaled by
//!   how far the observed per-token latency sits from the ideal `d_epsilon`.
//!   Slower than ideal shifts weight toward "likely detected".
//! - **Malicious user** — base weights from the response class, then scaled
//!   by the ratio of expected to observed response length and by how much of
//!   the response merely echoes the prompt. A short response relative to
//!   expectation reads as likely detected.
//! - **Defender** — base weights from the response class, then scaled by the
//!   normalized safe/unsafe vector similarity of the subject's prompt.
//!
//! Likelihood weights are capped into `[0, 1]` wherever a scale factor could
//! push them outside; the negative-latency-multiplier corner pins
//! (`p_ld`, `p_nld`) to `(0, 1)` since arbitrarily slow responses should
//! saturate, not go negative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::vdb::SimilarityPair;
use crate::workload::{PlayerId, PlayerKind};
use crate::Result;

/// Belief about one subject: the safety probability `mu` plus the scratch
/// likelihood weights from the most recent update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub mu: f64,
    pub p_ld: f64,
    pub p_nld: f64,
}

impl BeliefState {
    pub fn new(mu: f64) -> Self {
        Self { mu, p_ld: 0.0, p_nld: 0.0 }
    }

    /// Uninformed prior.
    pub fn uniform() -> Self {
        Self::new(0.5)
    }
}

/// Static parameters of the update: per-role base likelihoods and the ideal
/// per-token latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub gamma6: f64,
    /// Ideal latency per response token, seconds.
    pub d_epsilon: f64,
}

impl BeliefParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("gamma4", self.gamma4),
            ("gamma5", self.gamma5),
            ("gamma6", self.gamma6),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie strictly inside (0,1), got {v}"
                )));
            }
        }
        if !(self.d_epsilon > 0.0 && self.d_epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "d_epsilon must be positive, got {}",
                self.d_epsilon
            )));
        }
        Ok(())
    }
}

/// How the previous response read to the observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseClass {
    /// Normal LLM answer.
    Benign,
    /// Blocked / flagged-malicious response.
    Blocked,
}

/// One observation feeding a belief update. Only the fields relevant to the
/// observer's role need to carry meaningful values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationContext {
    pub role: PlayerKind,
    pub response_class: ResponseClass,
    /// Previous response latency, seconds (benign branch).
    pub d_prev: f64,
    /// Token count of the previous prompt (malicious branch).
    pub o_prompt_prev: u64,
    /// Token count of the previous response (benign and malicious branches).
    pub o_resp_prev: u64,
    /// Expected response length in tokens (malicious branch).
    pub o_pred: u64,
    /// Safe/unsafe similarity of the subject's prompt (defender branch).
    pub sim: SimilarityPair,
}

fn cap(v: f64) -> f64 {
    v.min(1.0)
}

/// One belief update. Returns the posterior state; a division by a zero
/// observation is a degenerate-observation error and the caller keeps the
/// prior.
pub fn update_belief(
    prior: &BeliefState,
    ctx: &ObservationContext,
    params: &BeliefParams,
) -> Result<BeliefState> {
    params.validate()?;
    if !(0.0..=1.0).contains(&prior.mu) {
        return Err(Error::InvalidInput(format!(
            "prior mu must be in [0,1], got {}",
            prior.mu
        )));
    }

    let blocked = ctx.response_class == ResponseClass::Blocked;
    let (p_ld, p_nld) = match ctx.role {
        PlayerKind::Benign => {
            let (mut p_ld, mut p_nld) = if blocked {
                (1.0 - params.gamma1, 1.0 - params.gamma2)
            } else {
                (params.gamma1, params.gamma2)
            };
            if ctx.o_resp_prev == 0 {
                return Err(Error::DegenerateObservation(
                    "benign branch divides by zero response tokens".into(),
                ));
            }
            let diff = ctx.d_prev / ctx.o_resp_prev as f64 - params.d_epsilon;
            if diff > 0.0 {
                let scale = 1.0 + 100.0 * diff;
                p_ld = cap(p_ld * scale);
                p_nld /= scale;
            } else {
                let scale = 1.0 - 100.0 * diff.abs();
                if scale <= 0.0 {
                    // Outside the formula's domain: saturate toward
                    // "likely detected".
                    p_ld = 0.0;
                    p_nld = 1.0;
                } else {
                    p_ld *= scale;
                    p_nld = cap(p_nld / scale);
                }
            }
            (p_ld, p_nld)
        }
        PlayerKind::Malicious => {
            let (p_ld, p_nld) = if blocked {
                (params.gamma3, params.gamma4)
            } else {
                (1.0 - params.gamma3, 1.0 - params.gamma4)
            };
            if ctx.o_resp_prev == 0 {
                return Err(Error::DegenerateObservation(
                    "malicious branch divides by zero response tokens".into(),
                ));
            }
            let resp = ctx.o_resp_prev as f64;
            let ld_ratio = (ctx.o_pred as f64 / resp).clamp(0.0, 1.0);
            let nld_ratio = (1.0 - ctx.o_prompt_prev as f64 / resp).clamp(0.0, 1.0);
            (cap(p_ld * ld_ratio), cap(p_nld * nld_ratio))
        }
        PlayerKind::Defender => {
            let (p_ld, p_nld) = if blocked {
                (params.gamma5, params.gamma6)
            } else {
                (1.0 - params.gamma5, 1.0 - params.gamma6)
            };
            let denom = ctx.sim.p_safe + ctx.sim.p_unsafe;
            let (safe_w, unsafe_w) = if denom == 0.0 {
                (0.5, 0.5)
            } else {
                (ctx.sim.p_safe / denom, ctx.sim.p_unsafe / denom)
            };
            (p_ld * safe_w, p_nld * unsafe_w)
        }
    };

    let denom = p_ld * prior.mu + p_nld * (1.0 - prior.mu);
    let mu = if denom == 0.0 {
        prior.mu
    } else {
        p_ld * prior.mu / denom
    };
    Ok(BeliefState { mu, p_ld, p_nld })
}

/// Per-player degenerate observations reported by [`update_population`].
pub type DegenerateObservations = Vec<(PlayerId, Error)>;

/// Update a whole population independently. Subjects without an observation
/// this stage keep their prior; degenerate observations keep the prior and
/// are reported back to the caller.
pub fn update_population(
    beliefs: &BTreeMap<PlayerId, BeliefState>,
    observations: &BTreeMap<PlayerId, ObservationContext>,
    params: &BeliefParams,
) -> Result<(BTreeMap<PlayerId, BeliefState>, DegenerateObservations)> {
    let mut updated = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (player, obs) in observations {
        if !beliefs.contains_key(player) {
            return Err(Error::InvalidInput(format!(
                "observation for {player} without a prior belief"
            )));
        }
        let prior = &beliefs[player];
        match update_belief(prior, obs, params) {
            Ok(state) => {
                updated.insert(*player, state);
            }
            Err(e @ Error::DegenerateObservation(_)) => {
                degenerate.push((*player, e));
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = beliefs.clone();
    for (player, state) in updated {
        out.insert(player, state);
    }
    Ok((out, degenerate))
}
