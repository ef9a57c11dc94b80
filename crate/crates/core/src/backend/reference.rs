use serde::{Deserialize, Serialize};

use crate::backend::{
    AgentBackend, FactCheckContext, FactCheckDecision, MemorySummary, ResponseContext, RevisionRequest,
};
use crate::calibration::DiagnosticItem;
use crate::claims::Claim;
use crate::community::{PersonaSpec, TraitKind};
use crate::engine::{Decision, Emotion, ResponseTuple, Stance};
use crate::error::BackendError;
use crate::interventions::{templated_persuasion, SignalKind};

/// Constants of the deterministic trait-driven response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceParams {
    /// Social conformity pull toward peers' implied trust.
    pub eta: f64,
    pub support_threshold: f64,
    pub deny_threshold: f64,
    /// AOT at or above which undecided agents query instead of comment.
    pub query_aot: f64,
    pub fact_check_aot: f64,
    /// Open interval of previous trust in which fact checks are requested.
    pub fact_check_band: (f64, f64),
    pub accuracy_weight: f64,
    pub persuasion_weight: f64,
    pub fact_check_weight: f64,
    pub offer_weight: f64,
    pub source_warning_weight: f64,
    /// Rolling summary cap in words.
    pub summary_words: usize,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        ReferenceParams {
            eta: 0.3,
            support_threshold: 0.65,
            deny_threshold: 0.30,
            query_aot: 0.5,
            fact_check_aot: 0.5,
            fact_check_band: (0.3, 0.65),
            accuracy_weight: 1.0,
            persuasion_weight: 1.0,
            fact_check_weight: 1.0,
            offer_weight: 0.0,
            source_warning_weight: 1.0,
            summary_words: 500,
        }
    }
}

/// Pure, deterministic backend: no randomness, no I/O.
#[derive(Debug, Clone, Default)]
pub struct ReferenceBackend {
    pub params: ReferenceParams,
}

const SUPPORT_POST: &str = "I believe this is true and worth passing on.";
const DENY_POST: &str = "This is false; it has already been debunked.";
const QUERY_POST: &str = "Is there a reliable source for this?";
const COMMENT_POST: &str = "Interesting, people around me are discussing this.";

impl ReferenceBackend {
    pub fn new(params: ReferenceParams) -> Self {
        ReferenceBackend { params }
    }

    /// Corrective strength `d_t` of the round's signal.
    fn decay(&self, ctx: &ResponseContext<'_>, previous: f64) -> f64 {
        let p = &self.params;
        match ctx.signal.map(|s| s.kind) {
            None | Some(SignalKind::Empty) => 0.0,
            Some(SignalKind::AccuracyPrompt) => p.accuracy_weight,
            Some(SignalKind::Persuasion) => p.persuasion_weight,
            Some(SignalKind::FactCheckEvidence) => p.fact_check_weight,
            Some(SignalKind::FactCheckOffer) => p.offer_weight,
            Some(SignalKind::SourceWarning) if previous > 0.0 => p.source_warning_weight,
            Some(SignalKind::SourceWarning) => 0.0,
        }
    }

    /// Trust after one round.
    pub fn update_trust(&self, ctx: &ResponseContext<'_>) -> f64 {
        let prev = ctx.previous_trust();
        let alpha = ctx.persona.aot.value();
        let pi = ctx.persona.pi.value();
        let c = ctx.claim.avg_credibility;
        let mut next = prev;
        if ctx.exposure.is_some() {
            let g = (1.0 - alpha) * (0.5 + 0.5 * (1.0 - (pi - ctx.claim.valence).abs()));
            next += g * (c / 10.0) * (1.0 - prev);
        }
        if !ctx.peers.is_empty() {
            let implied: f64 = ctx
                .peers
                .iter()
                .map(|m| match m.stance {
                    Some(Stance::Support) => 1.0,
                    Some(Stance::Deny) => 0.0,
                    Some(Stance::Query) => 0.5,
                    Some(Stance::Comment) | None => prev,
                })
                .sum();
            let mean = implied / ctx.peers.len() as f64;
            next += self.params.eta * (mean - prev);
        }
        next -= self.decay(ctx, prev) * alpha * prev;
        next.clamp(0.0, 1.0)
    }

    pub fn stance_for(&self, ctx: &ResponseContext<'_>, trust: f64) -> Stance {
        let p = &self.params;
        let exceeded = ctx.memory.iter().any(|m| m.record.trust > p.deny_threshold);
        if trust >= p.support_threshold {
            Stance::Support
        } else if trust <= p.deny_threshold && exceeded {
            Stance::Deny
        } else if ctx.persona.aot.value() >= p.query_aot {
            Stance::Query
        } else {
            Stance::Comment
        }
    }
}

fn post_text(stance: Stance) -> &'static str {
    match stance {
        Stance::Support => SUPPORT_POST,
        Stance::Deny => DENY_POST,
        Stance::Query => QUERY_POST,
        Stance::Comment => COMMENT_POST,
    }
}

/// Keyword stance rule.
pub fn keyword_stance(message: &str) -> Stance {
    let text = message.to_lowercase();
    let any = |words: &[&str]| words.iter().any(|w| text.contains(w));
    if any(&["false", "fake", "debunk", "misleading", "not true", "hoax", "rumor", "rumour"]) {
        Stance::Deny
    } else if text.contains('?') || any(&["source for", "verify", "not sure", "unclear"]) {
        Stance::Query
    } else if any(&["true", "believe", "agree", "share", "passing on", "confirmed"]) {
        Stance::Support
    } else {
        Stance::Comment
    }
}

fn last_words(text: &str, limit: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let start = words.len().saturating_sub(limit);
    words[start..].join(" ")
}

/// Credibility rubric on surface features of the claim text, in `[0, 10]`.
pub fn rubric_score(claim: &Claim) -> f64 {
    let text = claim.content.to_lowercase();
    let mut score: f64 = 5.0;
    if text.chars().any(|c| c.is_ascii_digit()) {
        score += 1.0;
    }
    let authority = ["official", "study", "scientist", "doctor", "government", "report", "expert", "research"];
    if authority.iter().any(|w| text.contains(w)) {
        score += 1.5;
    }
    if matches!(claim.domain, crate::claims::Domain::Health | crate::claims::Domain::Science) {
        score += 0.5;
    }
    if text.contains('!') {
        score -= 1.0;
    }
    score.clamp(0.0, 10.0)
}

impl AgentBackend for ReferenceBackend {
    fn id(&self) -> &str {
        "reference"
    }

    fn is_local(&self) -> bool {
        true
    }

    fn respond(&self, ctx: &ResponseContext<'_>) -> Result<ResponseTuple, BackendError> {
        let trust = self.update_trust(ctx);
        let stance = self.stance_for(ctx, trust);
        let posts = ctx.exposure.is_some() || !ctx.peers.is_empty();
        let (decision, post_text, stance_hint) = if posts {
            (Decision::PostOnly, post_text(stance).to_string(), Some(stance))
        } else {
            (Decision::None, String::new(), None)
        };
        let emotion = match stance {
            Stance::Support => Emotion::Surprise,
            Stance::Deny => Emotion::Anger,
            Stance::Query | Stance::Comment => Emotion::None,
        };
        Ok(ResponseTuple {
            trust,
            opinion: format!("trust {trust:.3} in claim {}", ctx.claim.id),
            emotion,
            emotion_reason: String::new(),
            decision,
            post_text,
            stance_hint,
        })
    }

    fn summarize(&self, history_summary: &str, new_messages: &[String]) -> Result<MemorySummary, BackendError> {
        let round_only = new_messages.join("\n");
        let combined = if history_summary.is_empty() {
            round_only.clone()
        } else if round_only.is_empty() {
            history_summary.to_string()
        } else {
            format!("{history_summary}\n{round_only}")
        };
        Ok(MemorySummary {
            updated_history: last_words(&combined, self.params.summary_words),
            round_only,
        })
    }

    fn classify_stance(&self, message: &str, _claim: &Claim) -> Result<String, BackendError> {
        Ok(keyword_stance(message).as_str().to_string())
    }

    fn decide_fact_check(&self, ctx: &FactCheckContext<'_>) -> Result<FactCheckDecision, BackendError> {
        let (lo, hi) = self.params.fact_check_band;
        let trust = ctx.previous_trust();
        let want = ctx.persona.aot.value() >= self.params.fact_check_aot && trust > lo && trust < hi;
        Ok(FactCheckDecision {
            want_fact_check: want,
            reason: if want { "undecided and inclined to verify" } else { "no verification needed" }.to_string(),
        })
    }

    fn answer_item(&self, persona: &PersonaSpec, item: &DiagnosticItem) -> Result<String, BackendError> {
        let score = match item.target_trait {
            TraitKind::Aot => persona.aot,
            TraitKind::Pi => persona.pi,
        };
        Ok(["A", "B", "C", "D", "E"][score.band()].to_string())
    }

    fn revise_template(&self, request: &RevisionRequest) -> Result<String, BackendError> {
        Ok(request.current_template.body.clone())
    }

    fn score_claim(&self, claim: &Claim) -> Result<String, BackendError> {
        let score = rubric_score(claim);
        Ok(serde_json::json!({"score": score, "reason": "surface-feature rubric"}).to_string())
    }

    fn compose_persuasion(&self, claim: &Claim, evidence: Option<&str>) -> Result<String, BackendError> {
        Ok(templated_persuasion(claim, evidence))
    }
}
