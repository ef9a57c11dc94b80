//! Message templates for the remote backend.
//!
//! The template bodies are bundled verbatim as assets; rendering fills the
//! named `{slot}`s in a single pass so that substituted values are never
//! rescanned.

use crate::backend::{FactCheckContext, ResponseContext, RevisionRequest};
use crate::calibration::DiagnosticItem;
use crate::claims::Claim;
use crate::community::{PersonaSpec, TraitKind};
use crate::interventions::SignalKind;

pub const PERSONA_TEMPLATE: &str = include_str!("../../assets/prompts/A1.txt");
pub const QUESTIONNAIRE_WRAPPER: &str = include_str!("../../assets/prompts/A3.txt");
pub const TEMPLATE_REVISION: &str = include_str!("../../assets/prompts/A4.txt");
pub const PERSONA_INSTANTIATION: &str = include_str!("../../assets/prompts/A5.txt");
pub const CREDIBILITY_ASSESSMENT: &str = include_str!("../../assets/prompts/B1.txt");
pub const SUMMARY_UPDATE: &str = include_str!("../../assets/prompts/C1.txt");
pub const DUAL_SUMMARY: &str = include_str!("../../assets/prompts/C2.txt");
pub const COGNITIVE_RESPONSE: &str = include_str!("../../assets/prompts/C3.txt");
pub const PERSUASION_NEUTRAL: &str = include_str!("../../assets/prompts/D1.txt");
pub const PERSUASION_EVIDENCE: &str = include_str!("../../assets/prompts/D2.txt");
pub const FACT_CHECK_DECISION: &str = include_str!("../../assets/prompts/D3.txt");
pub const STANCE_ANNOTATION: &str = include_str!("../../assets/prompts/stance.txt");

/// Replace each `{key}` occurring in `template` with its value.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        for (key, value) in slots {
            if tail.starts_with(key) && tail[key.len()..].starts_with('}') {
                out.push_str(value);
                rest = &tail[key.len() + 1..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = tail;
    }
    out.push_str(rest);
    out
}

pub fn persona_system(persona: &PersonaSpec) -> String {
    fill(PERSONA_INSTANTIATION, &[("persona_description", &persona.persona_text)])
}

fn trait_name(kind: TraitKind) -> &'static str {
    match kind {
        TraitKind::Aot => "Actively Open-minded Thinking (AOT)",
        TraitKind::Pi => "Political Ideology (PI)",
    }
}

pub fn questionnaire_item(item: &DiagnosticItem) -> String {
    let mut question = item.question_text.clone();
    for (letter, option) in ["A", "B", "C", "D", "E"].iter().zip(&item.options) {
        question.push_str(&format!("\n{letter}. {option}"));
    }
    fill(
        QUESTIONNAIRE_WRAPPER,
        &[
            ("Scenario_Text", &item.scenario_text),
            ("Question_Text", &question),
            ("Target_Trait", trait_name(item.target_trait)),
        ],
    )
}

pub fn template_revision(request: &RevisionRequest) -> String {
    fill(
        TEMPLATE_REVISION,
        &[
            ("target_aot", &format!("{:.2}", request.target.aot)),
            ("target_pi", &format!("{:.2}", request.target.pi)),
            ("observed_aot", &format!("{:.2}", request.observed.aot)),
            ("observed_pi", &format!("{:.2}", request.observed.pi)),
            ("current_template", &request.current_template.body),
        ],
    )
}

pub fn credibility_assessment(claim: &Claim) -> String {
    fill(CREDIBILITY_ASSESSMENT, &[("misinformation", &claim.content)])
}

pub fn dual_summary(history_summary: &str, new_messages: &[String]) -> String {
    fill(
        DUAL_SUMMARY,
        &[("history_summary", history_summary), ("new_messages", &new_messages.join("\n"))],
    )
}

/// `source_id: content` lines for the exposure and peer posts of a round.
pub fn input_lines(ctx: &ResponseContext<'_>) -> Vec<String> {
    let mut lines = Vec::new();
    if let Some(exposure) = ctx.exposure {
        let mut content = exposure.content.clone();
        if let Some(signal) = ctx.signal.filter(|s| s.kind == SignalKind::AccuracyPrompt) {
            content.push(' ');
            content.push_str(&signal.text);
        }
        lines.push(format!("{}: {}", exposure.source_id, content));
    }
    for peer in ctx.peers {
        lines.push(format!("{}: {}", peer.source, peer.content));
    }
    lines
}

pub fn cognitive_response(ctx: &ResponseContext<'_>) -> String {
    let bg = &ctx.persona.background;
    let mut history: Vec<String> = ctx
        .memory
        .iter()
        .filter_map(|m| m.record.intervention.as_ref())
        .map(|s| format!("round {}: {}", s.round, s.text))
        .collect();
    if let Some(signal) = ctx.signal {
        history.push(format!("round {}: {}", signal.round, signal.text));
    }
    let history = if history.is_empty() { "none".to_string() } else { history.join("\n") };
    fill(
        COGNITIVE_RESPONSE,
        &[
            ("gender", &bg.gender),
            ("age", &bg.age_group),
            ("occupation", &bg.occupation),
            ("background_story", &bg.background_story),
            ("preference_appendix", &bg.communication_preference),
            ("history_summary", ctx.history_summary),
            ("new_messages", &input_lines(ctx).join("\n")),
            ("message_summary", ctx.round_summary),
            ("intervention_history", &history),
        ],
    )
}

pub fn persuasion(claim: &Claim, evidence: Option<&str>) -> String {
    match evidence {
        Some(evidence) => fill(
            PERSUASION_EVIDENCE,
            &[("gold_evidence", evidence), ("misinformation_origin", &claim.content)],
        ),
        None => fill(PERSUASION_NEUTRAL, &[("misinformation_origin", &claim.content)]),
    }
}

pub fn fact_check_decision(ctx: &FactCheckContext<'_>) -> String {
    let last = ctx.memory.last().map(|m| &m.record);
    let opinion = last.map_or("no opinion yet", |r| r.opinion.as_str());
    let emotion = last.map_or("none", |r| r.emotion.as_str());
    fill(
        FACT_CHECK_DECISION,
        &[
            ("misinformation", &ctx.claim.content),
            ("history_summary", ctx.history_summary),
            ("opinion", opinion),
            ("emotion", emotion),
        ],
    )
}

pub fn stance_annotation(message: &str, claim: &Claim) -> String {
    fill(STANCE_ANNOTATION, &[("claim", &claim.content), ("message", message)])
}
