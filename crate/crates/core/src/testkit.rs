//! Test doubles: a biased questionnaire responder and a minimal
//! chat-completion HTTP stub.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::backend::{
    AgentBackend, FactCheckContext, FactCheckDecision, MemorySummary, ReferenceBackend, ResponseContext,
    RevisionRequest,
};
use crate::calibration::DiagnosticItem;
use crate::claims::Claim;
use crate::community::{band_index, PersonaSpec, PersonaTemplate, TraitKind, BAND_COUNT};
use crate::engine::ResponseTuple;
use crate::error::BackendError;

const BIAS_OPEN: &str = "[[bias:";
const BIAS_CLOSE: &str = "]]";

/// Read the bias marker from a template or persona text.
pub fn bias_of(text: &str) -> Option<f64> {
    let start = text.find(BIAS_OPEN)? + BIAS_OPEN.len();
    let len = text[start..].find(BIAS_CLOSE)?;
    text[start..start + len].parse().ok()
}

/// Replace (or append) the bias marker.
pub fn with_bias(text: &str, bias: f64) -> String {
    let marker = format!("{BIAS_OPEN}{bias}{BIAS_CLOSE}");
    match text.find(BIAS_OPEN) {
        Some(start) => {
            let end = start + text[start..].find(BIAS_CLOSE).map(|l| l + BIAS_CLOSE.len()).unwrap_or(0);
            format!("{}{marker}{}", &text[..start], &text[end..])
        }
        None => format!("{text}\n{marker}"),
    }
}

/// The standard template carrying a bias marker.
pub fn biased_template(bias: f64) -> PersonaTemplate {
    let standard = PersonaTemplate::standard();
    PersonaTemplate {
        body: with_bias(&standard.body, bias),
        version: 0,
    }
}

/// Questionnaire responder whose answers overshoot each agent's target
/// trait by the bias written in its persona text, and whose template
/// revision halves that bias.
///
/// A bias `b` becomes `round(b * k * BAND_COUNT)` single-band shifts spread
/// over the `k` items of a trait, so the realized score moves by exactly
/// that many `1/(k * BAND_COUNT)` steps before clamping at the top band.
/// Everything else delegates to the reference backend.
#[derive(Debug, Clone)]
pub struct BiasedResponder {
    items: Vec<DiagnosticItem>,
    inner: ReferenceBackend,
}

impl BiasedResponder {
    pub fn new(items: &[DiagnosticItem]) -> Self {
        BiasedResponder {
            items: items.to_vec(),
            inner: ReferenceBackend::default(),
        }
    }

    fn shift(&self, item: &DiagnosticItem, bias: f64) -> usize {
        let same: Vec<&DiagnosticItem> = self.items.iter().filter(|i| i.target_trait == item.target_trait).collect();
        let k = same.len().max(1);
        let j = same.iter().position(|i| *i == item).unwrap_or(0);
        let units = (bias.max(0.0) * (k * BAND_COUNT) as f64).round() as usize;
        units / k + usize::from(j < units % k)
    }
}

impl AgentBackend for BiasedResponder {
    fn id(&self) -> &str {
        "biased"
    }

    fn is_local(&self) -> bool {
        true
    }

    fn respond(&self, ctx: &ResponseContext<'_>) -> Result<ResponseTuple, BackendError> {
        self.inner.respond(ctx)
    }

    fn summarize(&self, history_summary: &str, new_messages: &[String]) -> Result<MemorySummary, BackendError> {
        self.inner.summarize(history_summary, new_messages)
    }

    fn classify_stance(&self, message: &str, claim: &Claim) -> Result<String, BackendError> {
        self.inner.classify_stance(message, claim)
    }

    fn decide_fact_check(&self, ctx: &FactCheckContext<'_>) -> Result<FactCheckDecision, BackendError> {
        self.inner.decide_fact_check(ctx)
    }

    fn answer_item(&self, persona: &PersonaSpec, item: &DiagnosticItem) -> Result<String, BackendError> {
        let target = match item.target_trait {
            TraitKind::Aot => persona.aot.value(),
            TraitKind::Pi => persona.pi.value(),
        };
        let bias = bias_of(&persona.persona_text).unwrap_or(0.0);
        let band = (band_index(target) + self.shift(item, bias)).min(BAND_COUNT - 1);
        Ok(["A", "B", "C", "D", "E"][band].to_string())
    }

    fn revise_template(&self, request: &RevisionRequest) -> Result<String, BackendError> {
        let body = &request.current_template.body;
        let bias = bias_of(body).unwrap_or(0.0);
        Ok(with_bias(body, bias / 2.0))
    }

    fn score_claim(&self, claim: &Claim) -> Result<String, BackendError> {
        self.inner.score_claim(claim)
    }

    fn compose_persuasion(&self, claim: &Claim, evidence: Option<&str>) -> Result<String, BackendError> {
        self.inner.compose_persuasion(claim, evidence)
    }
}

/// One HTTP request received by [`StubServer`].
#[derive(Debug, Clone)]
pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl StubRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Handler = dyn Fn(&StubRequest) -> (u16, String) + Send + Sync;

/// Single-threaded HTTP/1.1 server on localhost that answers every request
/// with the handler's `(status, body)` and records what it received. One
/// request per connection.
pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<StubRequest>>>,
    _thread: JoinHandle<()>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&StubRequest) -> (u16, String) + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                if let Ok(request) = read_request(&stream) {
                    let (status, body) = handler(&request);
                    log.lock().expect("request log").push(request);
                    let _ = write_response(stream, status, &body);
                }
            }
        });
        Ok(StubServer {
            addr,
            requests,
            _thread: thread,
        })
    }

    /// A server replying with `content` as the assistant message.
    pub fn chat_reply(content: &str) -> std::io::Result<Self> {
        let body = chat_completion_body(content);
        Self::start(move |_| (200, body.clone()))
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn requests(&self) -> Vec<StubRequest> {
        self.requests.lock().expect("request log").clone()
    }
}

/// Minimal chat-completion response body.
pub fn chat_completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

fn read_request(stream: &TcpStream) -> std::io::Result<StubRequest> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((k, v)) = trimmed.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let length = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    Ok(StubRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_marker_round_trips() {
        let t = with_bias("body", 0.4);
        assert_eq!(bias_of(&t), Some(0.4));
        let t = with_bias(&t, 0.2);
        assert_eq!(bias_of(&t), Some(0.2));
        assert_eq!(t.matches(BIAS_OPEN).count(), 1);
        assert!(biased_template(0.1).validate().is_ok());
    }
}
