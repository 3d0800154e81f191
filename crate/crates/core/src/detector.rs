//! Prompt-safety verdict sources: a calibrated simulated detector and a
//! client for an external detection service.
//!
//! The simulated backend realizes configured true/false-positive rates with
//! seeded draws, so its long-run confusion matrix converges to the configured
//! rates. The remote backend speaks `POST /v1/detect` with the JSON body
//! `{"prompt": <string>}` and expects `{"malicious": <bool>, "score": <number
//! in [0,1]>}` back. Remote failures surface as distinct error kinds;
//! schedulers are expected to degrade them to "no verdict" rather than fail
//! the stage.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::SimRng;
use crate::workload::Label;
use crate::Result;

/// Verbatim response returned to the user in place of LLM output when a
/// prompt is flagged malicious.
pub const BLOCKED_RESPONSE: &str = "This prompt is unsafe.";

/// Score threshold above which a verdict is malicious.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// One detector verdict. `malicious` holds exactly when `score` is at or
/// above [`DECISION_THRESHOLD`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub malicious: bool,
    pub score: f64,
}

/// Calibration of the simulated detector: recall on malicious prompts and
/// false-alarm rate on benign prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionRates {
    pub tpr: f64,
    pub fpr: f64,
}

impl ConfusionRates {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tpr", self.tpr), ("fpr", self.fpr)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} must be in [0,1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Simulated detection: a malicious prompt is flagged with probability
/// `tpr`, a benign one with probability `fpr`. Pure given the rng stream.
pub fn detect(ground_truth: Label, rates: &ConfusionRates, rng: &mut SimRng) -> DetectorVerdict {
    let rate = match ground_truth {
        Label::Malicious => rates.tpr,
        Label::Benign => rates.fpr,
    };
    let u: f64 = rng.random();
    let malicious = u < rate;
    // Second independent draw places the score on the right side of the
    // threshold without biasing the verdict stream.
    let u2: f64 = rng.random();
    let score = if malicious {
        DECISION_THRESHOLD + (1.0 - DECISION_THRESHOLD) * u2
    } else {
        DECISION_THRESHOLD * u2
    };
    DetectorVerdict { malicious, score }
}

/// F1 = 2tp / (2tp + fp + fn). Errors when all counts are zero.
pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> Result<f64> {
    if tp + fp + fn_ == 0 {
        return Err(Error::InvalidInput("f1 is undefined for all-zero counts".into()));
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64))
}

/// Expected F1 of a detector with the given rates on a workload whose
/// malicious fraction is `malicious_fraction`. This is the single source of
/// truth for the detector-effectiveness parameter used inside the malicious
/// utility.
pub fn analytic_f1(rates: &ConfusionRates, malicious_fraction: f64) -> Result<f64> {
    rates.validate()?;
    if !(0.0..=1.0).contains(&malicious_fraction) {
        return Err(Error::InvalidInput(format!(
            "malicious_fraction must be in [0,1], got {malicious_fraction}"
        )));
    }
    let tp = malicious_fraction * rates.tpr;
    let fp = (1.0 - malicious_fraction) * rates.fpr;
    let fn_ = malicious_fraction * (1.0 - rates.tpr);
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Err(Error::InvalidInput(
            "analytic f1 undefined: no positives in expectation".into(),
        ));
    }
    Ok(2.0 * tp / denom)
}

#[derive(Serialize)]
struct DetectRequest<'a> {
    prompt: &'a str,
}

/// Client for an external detection service.
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteDetector {
    /// `endpoint` is the base URL of the service; the client posts to
    /// `<endpoint>/v1/detect` with the given overall timeout.
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.trim_end_matches('/').to_string(), agent }
    }

    /// Request a verdict for one prompt.
    pub fn detect(&self, prompt: &str) -> Result<DetectorVerdict> {
        let url = format!("{}/v1/detect", self.endpoint);
        let body = serde_json::to_string(&DetectRequest { prompt })
            .map_err(|e| Error::RemoteTransport(e.to_string()))?;
        let result = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body.as_bytes());
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Error::RemoteTimeout),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(Error::RemoteTimeout)
            }
            Err(e) => return Err(Error::RemoteTransport(e.to_string())),
        };
        if response.status() != 200 {
            return Err(Error::RemoteStatus(response.status().as_u16()));
        }
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => Error::RemoteTimeout,
                other => Error::RemoteTransport(other.to_string()),
            })?;
        parse_verdict_body(&text)
    }

    /// Verdict with outage degradation: failures come back as `None` plus
    /// the error, and the caller treats the prompt as undetected.
    pub fn detect_lenient(&self, prompt: &str) -> (Option<DetectorVerdict>, Option<Error>) {
        match self.detect(prompt) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e)),
        }
    }
}

fn parse_verdict_body(text: &str) -> Result<DetectorVerdict> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::RemoteMalformedBody(e.to_string()))?;
    let malicious = value
        .get("malicious")
        .and_then(|v| v.as_bool())
        .ok_or_else(|| Error::RemoteMalformedBody("missing boolean field \"malicious\"".into()))?;
    let score = value
        .get("score")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::RemoteMalformedBody("missing numeric field \"score\"".into()))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::RemoteMalformedBody(format!(
            "score must be in [0,1], got {score}"
        )));
    }
    Ok(DetectorVerdict { malicious, score })
}
