use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::prompts;
use crate::backend::{
    AgentBackend, FactCheckContext, FactCheckDecision, MemorySummary, ResponseContext, RevisionRequest,
};
use crate::calibration::DiagnosticItem;
use crate::claims::{json_object_span, Claim};
use crate::community::PersonaSpec;
use crate::engine::{Decision, Emotion, ResponseTuple};
use crate::error::BackendError;

/// Environment variable holding the bearer token for the remote endpoint.
pub const API_KEY_ENV: &str = "RESIM_API_KEY";

/// Appended after the response template: the template has no trust slot.
const TRUST_INSTRUCTION: &str = "In addition to the fields above, include a field \"trust\": a number between 0 and 1 giving how much you currently believe the claim is true (0 = not at all, 1 = completely).";

const JSON_REMINDER: &str =
    "Your previous reply could not be parsed. Output only the JSON object described above, with no other text.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full chat-completion URL.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_temperature() -> f64 {
    0.5
}
fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}
fn default_attempts() -> usize {
    crate::backend::DEFAULT_ATTEMPTS
}
fn default_in_flight() -> usize {
    8
}
fn default_timeout() -> u64 {
    60
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: default_temperature(),
            api_key_env: default_key_env(),
            max_attempts: default_attempts(),
            in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

/// Chat-completion client speaking the common `choices[0].message.content`
/// wire format.
pub struct RemoteChatBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    id: String,
}

impl std::fmt::Debug for RemoteChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteChatBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl RemoteChatBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: RemoteConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: RemoteConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let id = format!("remote:{}", config.model);
        RemoteChatBackend {
            config,
            api_key,
            agent,
            id,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// One chat-completion round trip; returns the reply text.
    pub fn chat(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            messages,
        };
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 503 || status == 429 {
            return Err(BackendError::Unavailable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Transport(format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }

    /// Ask for a JSON object and parse it, re-prompting on malformed output
    /// up to the configured attempts. Transport errors are returned at once
    /// so the caller's retry policy applies.
    fn chat_json<T>(&self, messages: Vec<ChatMessage>, parse: impl Fn(&Value) -> Option<T>) -> Result<T, BackendError> {
        let mut messages = messages;
        let mut last = String::new();
        for _ in 0..self.config.max_attempts.max(1) {
            let reply = self.chat(&messages)?;
            let parsed = json_object_span(&reply)
                .and_then(|span| serde_json::from_str::<Value>(span).ok())
                .and_then(|v| parse(&v));
            if let Some(v) = parsed {
                return Ok(v);
            }
            last = reply.clone();
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(JSON_REMINDER));
        }
        Err(BackendError::Malformed(format!(
            "no parseable JSON after {} attempts: {}",
            self.config.max_attempts.max(1),
            truncate(&last, 200)
        )))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn str_field(v: &Value, key: &str) -> Option<String> {
    v.get(key).and_then(Value::as_str).map(str::to_string)
}

fn parse_emotion(s: &str) -> Option<Emotion> {
    serde_json::from_value(Value::String(s.trim().to_ascii_lowercase())).ok()
}

fn parse_response(v: &Value) -> Option<ResponseTuple> {
    let trust = v.get("trust").and_then(Value::as_f64)?;
    let decision = match v.get("decision").and_then(Value::as_str)?.trim() {
        "post_only" => Decision::PostOnly,
        "none" => Decision::None,
        _ => return None,
    };
    Some(ResponseTuple {
        trust,
        opinion: str_field(v, "opinion").unwrap_or_default(),
        emotion: v
            .get("emotion")
            .and_then(Value::as_str)
            .and_then(parse_emotion)
            .unwrap_or(Emotion::None),
        emotion_reason: str_field(v, "emotion_reason").unwrap_or_default(),
        decision,
        post_text: str_field(v, "post_text").unwrap_or_default(),
        stance_hint: None,
    })
}

impl AgentBackend for RemoteChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn uses_summaries(&self) -> bool {
        true
    }

    fn probe(&self) -> Result<(), BackendError> {
        self.chat(&[ChatMessage::user("Reply with OK.")]).map(|_| ())
    }

    fn respond(&self, ctx: &ResponseContext<'_>) -> Result<ResponseTuple, BackendError> {
        let messages = vec![
            ChatMessage::system(prompts::persona_system(ctx.persona)),
            ChatMessage::user(format!("{}\n\n{TRUST_INSTRUCTION}", prompts::cognitive_response(ctx))),
        ];
        self.chat_json(messages, parse_response)
    }

    fn summarize(&self, history_summary: &str, new_messages: &[String]) -> Result<MemorySummary, BackendError> {
        if history_summary.is_empty() && new_messages.is_empty() {
            return Ok(MemorySummary::default());
        }
        let messages = vec![ChatMessage::user(prompts::dual_summary(history_summary, new_messages))];
        self.chat_json(messages, |v| {
            Some(MemorySummary {
                updated_history: str_field(v, "updated_history")?,
                round_only: str_field(v, "round_only")?,
            })
        })
    }

    fn classify_stance(&self, message: &str, claim: &Claim) -> Result<String, BackendError> {
        self.chat(&[ChatMessage::user(prompts::stance_annotation(message, claim))])
    }

    fn decide_fact_check(&self, ctx: &FactCheckContext<'_>) -> Result<FactCheckDecision, BackendError> {
        let messages = vec![
            ChatMessage::system(prompts::persona_system(ctx.persona)),
            ChatMessage::user(format!("{}\n\n{}", ctx.offer, prompts::fact_check_decision(ctx))),
        ];
        self.chat_json(messages, |v| {
            Some(FactCheckDecision {
                want_fact_check: v.get("want_fact_check").and_then(Value::as_bool)?,
                reason: str_field(v, "reason").unwrap_or_default(),
            })
        })
    }

    fn answer_item(&self, persona: &PersonaSpec, item: &DiagnosticItem) -> Result<String, BackendError> {
        self.chat(&[
            ChatMessage::system(prompts::persona_system(persona)),
            ChatMessage::user(prompts::questionnaire_item(item)),
        ])
    }

    fn revise_template(&self, request: &RevisionRequest) -> Result<String, BackendError> {
        self.chat(&[ChatMessage::user(prompts::template_revision(request))])
    }

    fn score_claim(&self, claim: &Claim) -> Result<String, BackendError> {
        self.chat(&[ChatMessage::user(prompts::credibility_assessment(claim))])
    }

    fn compose_persuasion(&self, claim: &Claim, evidence: Option<&str>) -> Result<String, BackendError> {
        self.chat_json(vec![ChatMessage::user(prompts::persuasion(claim, evidence))], |v| {
            str_field(v, "reply").filter(|r| !r.trim().is_empty())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_parsing() {
        let v: Value = serde_json::from_str(
            r#"{"emotion":"Fear","emotion_reason":"r","opinion":"o","why_opinion":"w","decision":"post_only","post_text":"p","trust":0.4}"#,
        )
        .unwrap();
        let r = parse_response(&v).unwrap();
        assert_eq!(r.emotion, Emotion::Fear);
        assert_eq!(r.decision, Decision::PostOnly);
        assert_eq!(r.trust, 0.4);
        let missing_trust: Value = serde_json::from_str(r#"{"decision":"none"}"#).unwrap();
        assert!(parse_response(&missing_trust).is_none());
        let bad_decision: Value = serde_json::from_str(r#"{"decision":"dm","trust":0.1}"#).unwrap();
        assert!(parse_response(&bad_decision).is_none());
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let mut config = RemoteConfig::new("http://127.0.0.1:9/v1/chat/completions", "m");
        config.timeout_secs = 2;
        let backend = RemoteChatBackend::with_key(config, None);
        assert!(matches!(backend.probe(), Err(BackendError::Transport(_))));
    }
}
