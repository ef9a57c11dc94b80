use std::sync::Mutex;

use resilience_core::backend::{
    AgentBackend, FactCheckContext, FactCheckDecision, MemorySummary, ReferenceBackend, ResponseContext,
    RevisionRequest,
};
use resilience_core::calibration::DiagnosticItem;
use resilience_core::claims::{desk_pool, Claim};
use resilience_core::community::{
    build_community, community_type, default_backgrounds, Community, DistributionProfile, PersonaSpec,
    PersonaTemplate,
};
use resilience_core::engine::{
    peer_context, run_simulation, Decision, PeerMessage, ResponseTuple, RoundRecord, SimulationParams, Stance,
};
use resilience_core::error::BackendError;
use resilience_core::interventions::{ArmConfig, ArmKind};
use resilience_core::metrics::stance_shares;
use resilience_core::network::{watts_strogatz, SocialGraph};
use resilience_core::seed::{stream_seed, Purpose};

fn setup(id: &str, n: usize, seed: u64) -> (Community, SocialGraph, u64) {
    let (a, p) = community_type(id).unwrap();
    let community = build_community(
        id,
        &DistributionProfile::standard(a),
        &DistributionProfile::standard(p),
        n,
        default_backgrounds(),
        &PersonaTemplate::standard(),
        stream_seed(7, id, seed, Purpose::Traits),
    )
    .unwrap();
    let graph = watts_strogatz(n, 6, 0.1, stream_seed(7, id, seed, Purpose::Graph)).unwrap();
    (community, graph, stream_seed(7, id, seed, Purpose::Exposure))
}

fn claim() -> Claim {
    desk_pool().into_iter().find(|c| c.id == "M12").unwrap()
}

const POISON: &str = "POISON-MESSAGE";

/// Reference behavior, plus a marked post from agent 0 in round 1, while
/// recording every peer context it is shown.
struct Recorder {
    inner: ReferenceBackend,
    seen: Mutex<Vec<(usize, usize, Vec<PeerMessage>)>>,
}

impl AgentBackend for Recorder {
    fn id(&self) -> &str {
        "recorder"
    }
    fn respond(&self, ctx: &ResponseContext<'_>) -> Result<ResponseTuple, BackendError> {
        self.seen
            .lock()
            .unwrap()
            .push((ctx.round, ctx.persona.agent_id, ctx.peers.to_vec()));
        let mut r = self.inner.respond(ctx)?;
        if ctx.round == 1 && ctx.persona.agent_id == 0 {
            r.decision = Decision::PostOnly;
            r.post_text = POISON.to_string();
            r.stance_hint = Some(Stance::Deny);
        }
        Ok(r)
    }
    fn summarize(&self, h: &str, m: &[String]) -> Result<MemorySummary, BackendError> {
        self.inner.summarize(h, m)
    }
    fn classify_stance(&self, m: &str, c: &Claim) -> Result<String, BackendError> {
        self.inner.classify_stance(m, c)
    }
    fn decide_fact_check(&self, ctx: &FactCheckContext<'_>) -> Result<FactCheckDecision, BackendError> {
        self.inner.decide_fact_check(ctx)
    }
    fn answer_item(&self, p: &PersonaSpec, i: &DiagnosticItem) -> Result<String, BackendError> {
        self.inner.answer_item(p, i)
    }
    fn revise_template(&self, r: &RevisionRequest) -> Result<String, BackendError> {
        self.inner.revise_template(r)
    }
    fn score_claim(&self, c: &Claim) -> Result<String, BackendError> {
        self.inner.score_claim(c)
    }
    fn compose_persuasion(&self, c: &Claim, e: Option<&str>) -> Result<String, BackendError> {
        self.inner.compose_persuasion(c, e)
    }
}

/// Peer context recomputed by scanning the whole previous round.
fn brute_force_peers(graph: &SocialGraph, previous: &[&RoundRecord], i: usize) -> Vec<PeerMessage> {
    let mut out: Vec<PeerMessage> = previous
        .iter()
        .filter(|r| r.decision == Decision::PostOnly && graph.has_edge(i, r.agent_id))
        .map(|r| PeerMessage {
            source: r.agent_id as i64,
            content: r.message.clone(),
            stance: r.stance,
        })
        .collect();
    out.sort_by_key(|m| m.source);
    out
}

#[test]
fn peers_see_only_the_previous_round() {
    let (community, graph, es) = setup("G06", 40, 0);
    let backend = Recorder {
        inner: ReferenceBackend::default(),
        seen: Mutex::new(Vec::new()),
    };
    let params = SimulationParams {
        rounds: 4,
        ..SimulationParams::default()
    };
    let out = run_simulation(&community, &graph, &claim(), &params, &ArmConfig::control(), &backend, es).unwrap();
    let seen = backend.seen.into_inner().unwrap();
    assert_eq!(seen.len(), 40 * 4);
    for (t, i, peers) in &seen {
        if *t == 1 {
            assert!(peers.is_empty(), "round 1 has no peer posts");
            continue;
        }
        let previous: Vec<&RoundRecord> = out.log.records.iter().filter(|r| r.t == t - 1).collect();
        assert_eq!(peers, &brute_force_peers(&graph, &previous, *i), "agent {i} round {t}");
        let poisoned = peers.iter().any(|m| m.content == POISON);
        assert_eq!(poisoned, *t == 2 && graph.has_edge(0, *i), "agent {i} round {t}");
    }
}

#[test]
fn peer_context_matches_brute_force_on_small_graph() {
    let graph = watts_strogatz(10, 4, 0.3, 17).unwrap();
    let records: Vec<RoundRecord> = (0..10)
        .map(|i| RoundRecord {
            agent_id: i,
            t: 1,
            exposed: false,
            trust: 0.1 * i as f64,
            opinion: String::new(),
            emotion: resilience_core::engine::Emotion::None,
            decision: if i % 3 == 0 { Decision::None } else { Decision::PostOnly },
            message: if i % 3 == 0 { String::new() } else { format!("post {i}") },
            stance: (i % 3 != 0).then_some(Stance::ALL[i % 4]),
            intervention: None,
            failure: None,
        })
        .collect();
    let refs: Vec<&RoundRecord> = records.iter().collect();
    for i in 0..10 {
        assert_eq!(peer_context(&records, &graph, i).unwrap(), brute_force_peers(&graph, &refs, i));
    }
    assert!(peer_context(&records, &graph, 10).is_err());
}

#[test]
fn runs_are_deterministic_and_independent_of_concurrency() {
    let (community, graph, es) = setup("G11", 60, 2);
    let backend = ReferenceBackend::default();
    let arm = ArmConfig::new(ArmKind::FactCheck);
    let serial = SimulationParams::default();
    let parallel = SimulationParams {
        in_flight: 4,
        ..serial.clone()
    };
    let a = run_simulation(&community, &graph, &claim(), &serial, &arm, &backend, es).unwrap();
    let b = run_simulation(&community, &graph, &claim(), &serial, &arm, &backend, es).unwrap();
    let c = run_simulation(&community, &graph, &claim(), &parallel, &arm, &backend, es).unwrap();
    assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
    assert_eq!(a.log.to_jsonl().unwrap(), c.log.to_jsonl().unwrap());
}

/// First record (in `(t, agent)` order) where two logs differ.
fn first_divergence<'a>(a: &'a [RoundRecord], b: &'a [RoundRecord]) -> Option<(&'a RoundRecord, &'a RoundRecord)> {
    a.iter().zip(b).find(|(x, y)| x != y)
}

#[test]
fn arms_diverge_first_at_a_signaled_agent_round() {
    let backend = ReferenceBackend::default();
    let params = SimulationParams::default();
    for (id, seed) in [("G01", 0), ("G10", 1), ("G16", 3)] {
        let (community, graph, es) = setup(id, 80, seed);
        let control = run_simulation(&community, &graph, &claim(), &params, &ArmConfig::control(), &backend, es).unwrap();
        for kind in [ArmKind::SourceWarning, ArmKind::AccuracyPrompt, ArmKind::Persuasion, ArmKind::FactCheck] {
            let treated = run_simulation(&community, &graph, &claim(), &params, &ArmConfig::new(kind), &backend, es).unwrap();
            let exposed = |log: &[RoundRecord]| -> Vec<(usize, usize)> {
                log.iter().filter(|r| r.exposed).map(|r| (r.t, r.agent_id)).collect()
            };
            assert_eq!(exposed(&control.log.records), exposed(&treated.log.records), "shared exposure");
            let (c, t) = first_divergence(&control.log.records, &treated.log.records).expect("arm has an effect");
            assert_eq!((c.t, c.agent_id), (t.t, t.agent_id));
            assert!(c.intervention.is_none());
            let signal = t.intervention.as_ref().expect("first divergence carries a signal");
            assert_eq!((signal.target, signal.round), (t.agent_id, t.t));
        }
    }
}

#[test]
fn delayed_arms_match_control_before_their_start() {
    let backend = ReferenceBackend::default();
    let (community, graph, es) = setup("G07", 60, 0);
    let params = SimulationParams::default();
    let control = run_simulation(&community, &graph, &claim(), &params, &ArmConfig::control(), &backend, es).unwrap();
    let mut arm = ArmConfig::new(ArmKind::Persuasion);
    arm.start_round = 5;
    let treated = run_simulation(&community, &graph, &claim(), &params, &arm, &backend, es).unwrap();
    assert_eq!(treated.log.header.intervention_id, "persuasion@5");
    let (_, t) = first_divergence(&control.log.records, &treated.log.records).unwrap();
    assert!(t.t >= 5);
}

#[test]
fn control_trust_never_moves_without_exposure() {
    let backend = ReferenceBackend::default();
    let (community, graph, es) = setup("G03", 30, 0);
    let params = SimulationParams {
        rho: 0.0,
        ..SimulationParams::default()
    };
    let out = run_simulation(&community, &graph, &claim(), &params, &ArmConfig::control(), &backend, es).unwrap();
    assert!(out.trajectory.values.iter().all(|v| *v == 0.0));
    assert!(out.log.records.iter().all(|r| r.decision == Decision::None && r.stance.is_none()));
}

#[test]
fn stance_shares_match_direct_counts() {
    let backend = ReferenceBackend::default();
    let (community, graph, es) = setup("G14", 80, 1);
    let out = run_simulation(&community, &graph, &claim(), &SimulationParams::default(), &ArmConfig::control(), &backend, es).unwrap();
    for window in [1..=3usize, 4..=10, 1..=10] {
        let mut counts = [0usize; 4];
        for r in &out.log.records {
            if window.contains(&r.t) && r.decision == Decision::PostOnly {
                let s = r.stance.expect("posts are labelled");
                counts[Stance::ALL.iter().position(|x| *x == s).unwrap()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let shares = stance_shares(&out.log.records, window.clone());
        assert_eq!(shares.count, total);
        for (k, stance) in Stance::ALL.iter().enumerate() {
            let want = if total == 0 { 0.0 } else { 100.0 * counts[k] as f64 / total as f64 };
            assert!((shares.get(*stance) - want).abs() < 1e-12, "{stance:?} in {window:?}");
        }
    }
}

#[test]
fn trajectory_is_the_community_mean() {
    let backend = ReferenceBackend::default();
    let (community, graph, es) = setup("G09", 50, 4);
    let out = run_simulation(&community, &graph, &claim(), &SimulationParams::default(), &ArmConfig::control(), &backend, es).unwrap();
    assert_eq!(out.trajectory.values.len(), 11);
    assert_eq!(out.trajectory.values[0], 0.0);
    for t in 1..=10 {
        let mean: f64 = out.log.records.iter().filter(|r| r.t == t).map(|r| r.trust).sum::<f64>() / 50.0;
        assert!((out.trajectory.values[t] - mean).abs() < 1e-12);
    }
}
