use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use resilience_core::backend::{AgentBackend, ChatMessage, RemoteChatBackend, RemoteConfig};
use resilience_core::claims::desk_pool;
use resilience_core::community::{build_community, default_backgrounds, DistributionProfile, PersonaTemplate, ProfileName};
use resilience_core::engine::{run_simulation, Decision, SimulationParams, Stance};
use resilience_core::error::BackendError;
use resilience_core::interventions::ArmConfig;
use resilience_core::network::watts_strogatz;
use resilience_core::testkit::{chat_completion_body, StubRequest, StubServer};

fn backend(server: &StubServer, key: Option<&str>) -> RemoteChatBackend {
    let mut config = RemoteConfig::new(server.url("/v1/chat/completions"), "stub-model");
    config.timeout_secs = 5;
    RemoteChatBackend::with_key(config, key.map(str::to_string))
}

fn body_json(req: &StubRequest) -> serde_json::Value {
    serde_json::from_str(&req.body).unwrap()
}

#[test]
fn request_carries_model_temperature_and_key() {
    let server = StubServer::chat_reply("OK").unwrap();
    let client = backend(&server, Some("secret"));
    let reply = client.chat(&[ChatMessage::user("hello")]).unwrap();
    assert_eq!(reply, "OK");
    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let req = &requests[0];
    assert_eq!(req.method, "POST");
    assert_eq!(req.path, "/v1/chat/completions");
    assert_eq!(req.header("authorization"), Some("Bearer secret"));
    let body = body_json(req);
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.5);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "hello");
}

#[test]
fn status_codes_map_to_error_kinds() {
    for (status, want_unavailable) in [(503u16, true), (429, true), (500, false), (404, false)] {
        let server = StubServer::start(move |_| (status, "{}".into())).unwrap();
        match backend(&server, None).probe() {
            Err(BackendError::Unavailable(_)) => assert!(want_unavailable, "{status}"),
            Err(BackendError::Transport(_)) => assert!(!want_unavailable, "{status}"),
            other => panic!("{status}: {other:?}"),
        }
    }
    let server = StubServer::start(|_| (200, "{\"choices\": []}".into())).unwrap();
    assert!(matches!(backend(&server, None).probe(), Err(BackendError::Malformed(_))));
}

#[test]
fn malformed_json_replies_are_reprompted() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let server = StubServer::start(move |_| {
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let content = if n == 0 { "sure, here you go" } else { "```json\n{\"reply\": \"Check the ministry notice.\"}\n```" };
        (200, chat_completion_body(content))
    })
    .unwrap();
    let claim = desk_pool().remove(0);
    let text = backend(&server, None).compose_persuasion(&claim, Some("evidence")).unwrap();
    assert_eq!(text, "Check the ministry notice.");
    let requests = server.requests();
    assert_eq!(requests.len(), 2);
    let second = body_json(&requests[1]);
    let messages = second["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 3);
    assert_eq!(messages[1]["role"], "assistant");
    assert_eq!(messages[1]["content"], "sure, here you go");
}

#[test]
fn small_simulation_runs_against_the_stub() {
    let server = StubServer::start(|req| {
        let content = if req.body.contains("annotating the stance") {
            "query".to_string()
        } else if req.body.contains("updated_history") {
            "{\"updated_history\": \"h\", \"round_only\": \"r\"}".to_string()
        } else {
            "{\"emotion\": \"fear\", \"emotion_reason\": \"r\", \"opinion\": \"unsure\", \"decision\": \"post_only\", \"post_text\": \"Is this confirmed?\", \"trust\": 0.35}".to_string()
        };
        (200, chat_completion_body(&content))
    })
    .unwrap();
    let client = backend(&server, None);
    assert!(client.uses_summaries());
    let community = build_community(
        "custom",
        &DistributionProfile::standard(ProfileName::AotCenter),
        &DistributionProfile::standard(ProfileName::PiCenter),
        8,
        default_backgrounds(),
        &PersonaTemplate::standard(),
        1,
    )
    .unwrap();
    let graph = watts_strogatz(8, 2, 0.0, 1).unwrap();
    let params = SimulationParams {
        rounds: 2,
        rho: 0.25,
        in_flight: 2,
        attempts: 1,
    };
    let claim = desk_pool().remove(11);
    let out = run_simulation(&community, &graph, &claim, &params, &ArmConfig::control(), &client, 9).unwrap();
    assert_eq!(out.log.header.backend_id, "remote:stub-model");
    assert_eq!(out.log.records.len(), 16);
    for r in &out.log.records {
        assert!(r.failure.is_none());
        assert_eq!(r.trust, 0.35);
        assert_eq!(r.decision, Decision::PostOnly);
        assert_eq!(r.stance, Some(Stance::Query));
    }
    assert!(server.requests().iter().all(|r| body_json(r)["temperature"] == 0.5));
}
