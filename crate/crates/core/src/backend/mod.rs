//! The agent backend interface.
//!
//! Every model-dependent step (responses, stance labels, memory summaries,
//! fact-check decisions, questionnaire answers, template revision,
//! credibility scoring, persuasion text) goes through [`AgentBackend`].
//! Two implementations ship: [`ReferenceBackend`], a deterministic
//! trait-driven model, and [`RemoteChatBackend`], a chat-completion client.

pub mod prompts;
mod reference;
mod remote;

pub use reference::{ReferenceBackend, ReferenceParams};
pub use remote::{ChatMessage, RemoteChatBackend, RemoteConfig, API_KEY_ENV};

use serde::{Deserialize, Serialize};

use crate::calibration::{DiagnosticItem, TraitPair};
use crate::claims::{Claim, ExposurePayload};
use crate::community::{PersonaSpec, PersonaTemplate};
use crate::engine::{MemoryEntry, PeerMessage, ResponseTuple};
use crate::error::BackendError;
use crate::interventions::InterventionSignal;

/// Attempts per backend call before the caller's fallback applies.
pub const DEFAULT_ATTEMPTS: usize = 3;

/// Everything an agent observes when producing its round response.
#[derive(Debug, Clone, Copy)]
pub struct ResponseContext<'a> {
    pub persona: &'a PersonaSpec,
    pub claim: &'a Claim,
    pub round: usize,
    /// Chronological memory `H_{t-1}`.
    pub memory: &'a [MemoryEntry],
    pub history_summary: &'a str,
    pub round_summary: &'a str,
    pub exposure: Option<&'a ExposurePayload>,
    pub peers: &'a [PeerMessage],
    pub signal: Option<&'a InterventionSignal>,
}

impl ResponseContext<'_> {
    /// Trust at the end of the previous round (0 before any round).
    pub fn previous_trust(&self) -> f64 {
        self.memory.last().map_or(0.0, |m| m.record.trust)
    }
}

/// Inputs to the fact-check request decision.
#[derive(Debug, Clone, Copy)]
pub struct FactCheckContext<'a> {
    pub persona: &'a PersonaSpec,
    pub claim: &'a Claim,
    pub round: usize,
    pub memory: &'a [MemoryEntry],
    pub history_summary: &'a str,
    pub exposure: Option<&'a ExposurePayload>,
    pub peers: &'a [PeerMessage],
    /// Availability notice shown to the agent.
    pub offer: &'a str,
}

impl FactCheckContext<'_> {
    pub fn previous_trust(&self) -> f64 {
        self.memory.last().map_or(0.0, |m| m.record.trust)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCheckDecision {
    pub want_fact_check: bool,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemorySummary {
    pub updated_history: String,
    pub round_only: String,
}

/// A template revision request after one calibration pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionRequest {
    pub current_template: PersonaTemplate,
    /// Target and realized traits of the worst-aligned cohort member.
    pub target: TraitPair,
    pub observed: TraitPair,
    pub loss: f64,
    pub iteration: usize,
    /// Every `(target, realized)` pair from the pass.
    pub pairs: Vec<(TraitPair, TraitPair)>,
}

pub trait AgentBackend: Send + Sync {
    /// Identifier recorded in run logs.
    fn id(&self) -> &str;

    /// Whether the engine should maintain rolling text summaries for
    /// this backend.
    fn uses_summaries(&self) -> bool {
        false
    }

    /// In-process and cheap: independent runs may share it across threads
    /// without an external concurrency limit.
    fn is_local(&self) -> bool {
        false
    }

    /// Cheap reachability check run before a sweep.
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn respond(&self, ctx: &ResponseContext<'_>) -> Result<ResponseTuple, BackendError>;

    /// `new_messages` are preformatted `source_id: content` lines.
    fn summarize(&self, history_summary: &str, new_messages: &[String]) -> Result<MemorySummary, BackendError>;

    /// Raw stance label for a posted message.
    fn classify_stance(&self, message: &str, claim: &Claim) -> Result<String, BackendError>;

    fn decide_fact_check(&self, ctx: &FactCheckContext<'_>) -> Result<FactCheckDecision, BackendError>;

    /// Raw reply to one diagnostic questionnaire item.
    fn answer_item(&self, persona: &PersonaSpec, item: &DiagnosticItem) -> Result<String, BackendError>;

    /// Revised template body.
    fn revise_template(&self, request: &RevisionRequest) -> Result<String, BackendError>;

    /// Raw credibility reply (`{"score": .., "reason": ..}`).
    fn score_claim(&self, claim: &Claim) -> Result<String, BackendError>;

    /// Corrective persuasive reply, evidence-grounded when `evidence` is given.
    fn compose_persuasion(&self, claim: &Claim, evidence: Option<&str>) -> Result<String, BackendError>;
}

/// Run `call` up to `attempts` times (at least once), returning the first
/// success or the last error.
pub fn with_retries<T>(
    attempts: usize,
    mut call: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let attempts = attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::debug!("backend attempt {}/{attempts} failed: {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}
