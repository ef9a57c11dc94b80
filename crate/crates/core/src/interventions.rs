//! Intervention arms as per-agent context signals.
//!
//! An operator never touches personas or backend parameters; it only
//! decides which signal, if any, an agent sees in a round.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::backend::{with_retries, AgentBackend, FactCheckContext};
use crate::claims::{Claim, ExposurePayload};
use crate::community::PersonaSpec;
use crate::engine::{MemoryEntry, PeerMessage};
use crate::error::{Error, Result};

/// Cue appended to exposures under the accuracy-prompt arm.
pub const ACCURACY_CUE: &str = "Note: this claim may be false. Consider its accuracy before sharing.";

pub const FACT_CHECK_OFFER: &str =
    "A professional fact-check of this claim is available. You may request it before responding.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    Control,
    AccuracyPrompt,
    Persuasion,
    FactCheck,
    SourceWarning,
}

impl ArmKind {
    pub const ALL: [ArmKind; 5] = [
        ArmKind::Control,
        ArmKind::AccuracyPrompt,
        ArmKind::Persuasion,
        ArmKind::FactCheck,
        ArmKind::SourceWarning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArmKind::Control => "control",
            ArmKind::AccuracyPrompt => "accuracy_prompt",
            ArmKind::Persuasion => "persuasion",
            ArmKind::FactCheck => "fact_check",
            ArmKind::SourceWarning => "source_warning",
        }
    }

    pub fn parse(s: &str) -> Option<ArmKind> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        ArmKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ArmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersuasionRegister {
    /// Evidence-grounded correction.
    #[default]
    Evidence,
    /// Evidence-free neutral correction.
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmParameters {
    #[serde(default)]
    pub persuasion_register: PersuasionRegister,
    /// Overrides the default fact-check availability notice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_check_offer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub kind: ArmKind,
    #[serde(default = "default_start")]
    pub start_round: usize,
    #[serde(default)]
    pub parameters: ArmParameters,
}

fn default_start() -> usize {
    1
}

impl ArmConfig {
    pub fn new(kind: ArmKind) -> Self {
        ArmConfig {
            kind,
            start_round: 1,
            parameters: ArmParameters::default(),
        }
    }

    pub fn control() -> Self {
        Self::new(ArmKind::Control)
    }

    /// Identifier written to run logs.
    pub fn id(&self) -> String {
        let mut id = self.kind.as_str().to_string();
        if self.kind == ArmKind::Persuasion && self.parameters.persuasion_register == PersuasionRegister::Neutral {
            id.push_str("_neutral");
        }
        if self.start_round > 1 {
            id.push_str(&format!("@{}", self.start_round));
        }
        id
    }

    /// Inverse of [`ArmConfig::id`]: `kind[_neutral][@start]`.
    pub fn from_id(id: &str) -> Option<Self> {
        let (body, start) = match id.trim().split_once('@') {
            Some((b, s)) => (b, s.parse::<usize>().ok().filter(|&s| s >= 1)?),
            None => (id.trim(), 1),
        };
        let (kind, neutral) = match ArmKind::parse(body) {
            Some(k) => (k, false),
            None => {
                let base = body.strip_suffix("_neutral").or_else(|| body.strip_suffix("-neutral"))?;
                (ArmKind::parse(base).filter(|k| *k == ArmKind::Persuasion)?, true)
            }
        };
        let mut arm = ArmConfig::new(kind);
        arm.start_round = start;
        if neutral {
            arm.parameters.persuasion_register = PersuasionRegister::Neutral;
        }
        Some(arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    AccuracyPrompt,
    Persuasion,
    FactCheckOffer,
    FactCheckEvidence,
    SourceWarning,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSignal {
    pub kind: SignalKind,
    pub text: String,
    pub target: usize,
    pub round: usize,
}

impl InterventionSignal {
    pub fn new(kind: SignalKind, text: impl Into<String>, target: usize, round: usize) -> Self {
        let text = if kind == SignalKind::Empty { String::new() } else { text.into() };
        InterventionSignal { kind, text, target, round }
    }

    pub fn is_empty(&self) -> bool {
        self.kind == SignalKind::Empty
    }
}

/// Drop empty signals so that records carry `None` for "no signal".
fn non_empty(signal: InterventionSignal) -> Option<InterventionSignal> {
    (!signal.is_empty()).then_some(signal)
}

pub fn accuracy_prompt(agent: usize, t: usize, exposed: bool) -> InterventionSignal {
    if exposed {
        InterventionSignal::new(SignalKind::AccuracyPrompt, ACCURACY_CUE, agent, t)
    } else {
        InterventionSignal::new(SignalKind::Empty, "", agent, t)
    }
}

/// Corrective message text for a claim; falls back to the neutral form
/// when the claim has no evidence, and to a local template when the
/// backend fails.
pub fn compose_persuasion(
    claim: &Claim,
    register: PersuasionRegister,
    backend: &dyn AgentBackend,
    attempts: usize,
) -> String {
    let evidence = match register {
        PersuasionRegister::Evidence if !claim.gold_evidence.trim().is_empty() => Some(claim.gold_evidence.as_str()),
        PersuasionRegister::Evidence => {
            log::warn!("claim {} has no gold evidence; using the neutral persuasion form", claim.id);
            None
        }
        PersuasionRegister::Neutral => None,
    };
    match with_retries(attempts, || backend.compose_persuasion(claim, evidence)) {
        Ok(text) if !text.trim().is_empty() => text,
        Ok(_) | Err(_) => {
            log::warn!("persuasion message for claim {} fell back to the local template", claim.id);
            templated_persuasion(claim, evidence)
        }
    }
}

/// Fixed corrective template, embedding the evidence verbatim when given.
pub fn templated_persuasion(claim: &Claim, evidence: Option<&str>) -> String {
    match evidence {
        Some(evidence) => format!(
            "Correction: the claim \"{}\" is not supported by verified sources. {} \
             Please check official information before believing or sharing it.",
            claim.content, evidence
        ),
        None => format!(
            "Correction: the claim \"{}\" has been reviewed and is likely misleading. \
             Please check official information before believing or sharing it.",
            claim.content
        ),
    }
}

pub fn persuasion(message: &str, agent: usize, t: usize, exposed: bool) -> InterventionSignal {
    if exposed {
        InterventionSignal::new(SignalKind::Persuasion, message, agent, t)
    } else {
        InterventionSignal::new(SignalKind::Empty, "", agent, t)
    }
}

pub fn fact_check_evidence_text(claim: &Claim) -> String {
    format!("Fact-check result: {}", claim.gold_evidence)
}

/// Two-phase fact check: offer, then evidence if the agent asks for it.
/// A failed decision counts as a refusal.
pub fn fact_check(
    claim: &Claim,
    ctx: &FactCheckContext<'_>,
    agent: usize,
    backend: &dyn AgentBackend,
    attempts: usize,
) -> InterventionSignal {
    let wants = match with_retries(attempts, || backend.decide_fact_check(ctx)) {
        Ok(decision) => decision.want_fact_check,
        Err(e) => {
            log::warn!("agent {agent} round {}: fact-check decision failed ({e}); treated as no", ctx.round);
            false
        }
    };
    if wants {
        InterventionSignal::new(SignalKind::FactCheckEvidence, fact_check_evidence_text(claim), agent, ctx.round)
    } else {
        InterventionSignal::new(SignalKind::FactCheckOffer, ctx.offer, agent, ctx.round)
    }
}

pub fn source_warning_text(claim: &Claim) -> String {
    format!(
        "Source warning: the account spreading this claim has been identified as {}.",
        claim.source
    )
}

pub fn source_warning(claim: &Claim, agent: usize, t: usize, received: bool) -> InterventionSignal {
    if received {
        InterventionSignal::new(SignalKind::SourceWarning, source_warning_text(claim), agent, t)
    } else {
        InterventionSignal::new(SignalKind::Empty, "", agent, t)
    }
}

/// Per-agent inputs for signal generation.
pub struct SignalRequest<'a> {
    pub persona: &'a PersonaSpec,
    pub claim: &'a Claim,
    pub agent: usize,
    pub t: usize,
    pub exposed: bool,
    /// Directly exposed so far, or saw a post from a directly exposed
    /// neighbor.
    pub reached: bool,
    pub memory: &'a [MemoryEntry],
    pub history_summary: &'a str,
    pub exposure: Option<&'a ExposurePayload>,
    pub peers: &'a [PeerMessage],
    pub backend: &'a dyn AgentBackend,
    pub attempts: usize,
}

/// A validated arm bound to one claim.
#[derive(Debug)]
pub struct InterventionOperator {
    arm: ArmConfig,
    persuasion_text: OnceLock<String>,
}

impl InterventionOperator {
    pub fn new(arm: ArmConfig, claim: &Claim) -> Result<Self> {
        if arm.start_round == 0 {
            return Err(Error::Config("intervention start_round must be at least 1".into()));
        }
        match arm.kind {
            ArmKind::SourceWarning if claim.source.trim().is_empty() => {
                return Err(Error::Config(format!(
                    "source warning arm needs a source identity for claim {}",
                    claim.id
                )))
            }
            ArmKind::FactCheck if claim.gold_evidence.trim().is_empty() => {
                return Err(Error::Config(format!(
                    "fact-check arm needs gold evidence for claim {}",
                    claim.id
                )))
            }
            _ => {}
        }
        Ok(InterventionOperator {
            arm,
            persuasion_text: OnceLock::new(),
        })
    }

    pub fn arm(&self) -> &ArmConfig {
        &self.arm
    }

    /// Signal for one agent-round; `None` means no signal.
    pub fn signal(&self, req: &SignalRequest<'_>) -> Option<InterventionSignal> {
        if self.arm.kind == ArmKind::Control || req.t < self.arm.start_round {
            return None;
        }
        let signal = match self.arm.kind {
            ArmKind::Control => unreachable!(),
            ArmKind::AccuracyPrompt => accuracy_prompt(req.agent, req.t, req.exposed),
            ArmKind::Persuasion => {
                if !req.exposed {
                    return None;
                }
                let text = self.persuasion_text.get_or_init(|| {
                    compose_persuasion(req.claim, self.arm.parameters.persuasion_register, req.backend, req.attempts)
                });
                persuasion(text, req.agent, req.t, true)
            }
            ArmKind::FactCheck => {
                if !req.reached {
                    return None;
                }
                let offer = self.arm.parameters.fact_check_offer.as_deref().unwrap_or(FACT_CHECK_OFFER);
                let ctx = FactCheckContext {
                    persona: req.persona,
                    claim: req.claim,
                    round: req.t,
                    memory: req.memory,
                    history_summary: req.history_summary,
                    exposure: req.exposure,
                    peers: req.peers,
                    offer,
                };
                fact_check(req.claim, &ctx, req.agent, req.backend, req.attempts)
            }
            ArmKind::SourceWarning => source_warning(req.claim, req.agent, req.t, req.reached),
        };
        non_empty(signal)
    }
}
