//! Inference cost and latency arithmetic for detectors and LLMs, plus the
//! global latency/resource objective.
//!
//! All latencies are held in seconds and all compute in FLOPs; unit
//! conversion happens only at I/O boundaries. Batch size is fixed at 1.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Transformer shape constants for a detector or LLM.
///
/// `params` is the total parameter count; `n_layer`, `n_ctx` and `d_attn`
/// are the layer count, maximum input tokens, and attention output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub params: u64,
    pub n_layer: u64,
    pub n_ctx: u64,
    pub d_attn: u64,
}

impl ModelProfile {
    pub fn new(params: u64, n_layer: u64, n_ctx: u64, d_attn: u64) -> Self {
        Self { params, n_layer, n_ctx, d_attn }
    }
}

/// GPU compute capacity (FLOPs/s) and memory bandwidth (bytes/s) of one
/// server. Both must be strictly positive before any latency math runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub gpu_flops: f64,
    pub gpu_bandwidth: f64,
}

impl ServerSpec {
    pub fn new(gpu_flops: f64, gpu_bandwidth: f64) -> Self {
        Self { gpu_flops, gpu_bandwidth }
    }

    fn check_bandwidth(&self) -> Result<()> {
        if self.gpu_bandwidth > 0.0 && self.gpu_bandwidth.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "gpu_bandwidth must be positive, got {}",
                self.gpu_bandwidth
            )))
        }
    }

    fn check_flops(&self) -> Result<()> {
        if self.gpu_flops > 0.0 && self.gpu_flops.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "gpu_flops must be positive, got {}",
                self.gpu_flops
            )))
        }
    }
}

/// Outcome record for one task's detection decision.
///
/// `detected` is the detection decision, `flagged` the detector verdict
/// (only meaningful when detected). A flagged prompt never reaches the LLM,
/// so `d_llm` must be zero in that case; `flagged` is false whenever
/// `detected` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskCostRecord {
    pub detected: bool,
    pub flagged: bool,
    pub o_k: u64,
    pub f_k: f64,
    pub d_det: f64,
    pub d_llm: f64,
}

impl TaskCostRecord {
    /// Build a record, enforcing the decision/verdict invariants.
    pub fn new(
        detected: bool,
        flagged: bool,
        o_k: u64,
        f_k: f64,
        d_det: f64,
        d_llm: f64,
    ) -> Result<Self> {
        if flagged && !detected {
            return Err(Error::InvalidInput(
                "verdict flagged without a detection decision".into(),
            ));
        }
        if flagged && d_llm != 0.0 {
            return Err(Error::InvalidInput(
                "flagged prompt must not accrue LLM latency".into(),
            ));
        }
        if !(f_k >= 0.0 && d_det >= 0.0 && d_llm >= 0.0) {
            return Err(Error::InvalidInput(
                "cost record magnitudes must be non-negative".into(),
            ));
        }
        Ok(Self { detected, flagged, o_k, f_k, d_det, d_llm })
    }
}

/// Weights balancing latency against resource consumption in the global
/// objective and in the defender's per-prompt cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// FLOPs required per token for one transformer forward pass:
/// `2*params + 2*n_layer*n_ctx*d_attn`.
pub fn flops_per_token(profile: &ModelProfile) -> f64 {
    let weights = 2u128 * profile.params as u128;
    let attn = 2u128 * profile.n_layer as u128 * profile.n_ctx as u128 * profile.d_attn as u128;
    (weights + attn) as f64
}

/// Time to stream the model weights over GPU memory bandwidth, in seconds.
/// Each parameter is 2 bytes.
pub fn memory_latency(profile: &ModelProfile, spec: &ServerSpec) -> Result<f64> {
    spec.check_bandwidth()?;
    Ok(2.0 * profile.params as f64 / spec.gpu_bandwidth)
}

/// Time to execute `flops` on the server's GPU, in seconds.
pub fn compute_latency(flops: f64, spec: &ServerSpec) -> Result<f64> {
    spec.check_flops()?;
    Ok(flops / spec.gpu_flops)
}

/// Detection time for a prompt of `o_k` tokens: per-token latency is the
/// larger of the memory-bound and compute-bound costs.
pub fn detection_time(o_k: u64, profile: &ModelProfile, spec: &ServerSpec) -> Result<f64> {
    let t_mem = memory_latency(profile, spec)?;
    let t_com = compute_latency(flops_per_token(profile), spec)?;
    Ok(o_k as f64 * t_mem.max(t_com))
}

/// End-to-end latency for one task after the detection step.
pub fn task_latency(rec: &TaskCostRecord) -> f64 {
    let z = if rec.detected { 1.0 } else { 0.0 };
    z * rec.d_det + rec.d_llm
}

/// Compute consumed by one task after the detection step, in FLOPs:
/// detection spends `o_k * flops_per_tok`, and a flagged prompt saves its
/// LLM demand `f_k`.
pub fn post_detection_resource(rec: &TaskCostRecord, flops_per_tok: f64) -> f64 {
    let z = if rec.detected { 1.0 } else { 0.0 };
    let eta = if rec.flagged { 1.0 } else { 0.0 };
    z * (rec.o_k as f64 * flops_per_tok - eta * rec.f_k) + rec.f_k
}

/// Global objective over one batch of task records:
/// `alpha1 * sum(benign latency) + alpha2 * sum(all post-detection compute)`.
///
/// Only records marked benign contribute latency; every record contributes
/// compute. The value is additive over any partition of the records.
pub fn objective_value(
    records: &[(bool, TaskCostRecord)],
    flops_per_tok: f64,
    weights: &ObjectiveWeights,
) -> Result<f64> {
    weights.validate()?;
    let latency: f64 = records
        .iter()
        .filter(|(is_benign, _)| *is_benign)
        .map(|(_, rec)| task_latency(rec))
        .sum();
    let resources: f64 = records
        .iter()
        .map(|(_, rec)| post_detection_resource(rec, flops_per_tok))
        .sum();
    Ok(weights.alpha1 * latency + weights.alpha2 * resources)
}
