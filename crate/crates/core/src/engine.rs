//! Round-synchronous simulation loop and run logs.
//!
//! Each round every agent sees only round `t - 1` posts from its graph
//! neighbors, its own memory, its direct exposure and its intervention
//! signal. Responses are collected for the whole community before any of
//! them become visible, so agent order never matters.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{with_retries, AgentBackend, ResponseContext, DEFAULT_ATTEMPTS};
use crate::claims::{exposure_input, schedule_exposure, Claim, ExposurePayload, ExposureSchedule};
use crate::community::Community;
use crate::error::{Error, Result};
use crate::interventions::{ArmConfig, InterventionOperator, InterventionSignal, SignalRequest};
use crate::network::SocialGraph;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Support,
    Deny,
    Query,
    Comment,
}

impl Stance {
    pub const ALL: [Stance; 4] = [Stance::Support, Stance::Deny, Stance::Query, Stance::Comment];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Support => "support",
            Stance::Deny => "deny",
            Stance::Query => "query",
            Stance::Comment => "comment",
        }
    }

    /// Accepts a bare label, optionally quoted or followed by punctuation.
    pub fn parse_label(reply: &str) -> Option<Stance> {
        let word = reply
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphabetic())
            .to_ascii_lowercase();
        Stance::ALL.into_iter().find(|s| s.as_str() == word)
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Joy,
    Anger,
    Fear,
    Sadness,
    Disgust,
    Surprise,
    None,
}

impl Emotion {
    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Joy => "joy",
            Emotion::Anger => "anger",
            Emotion::Fear => "fear",
            Emotion::Sadness => "sadness",
            Emotion::Disgust => "disgust",
            Emotion::Surprise => "surprise",
            Emotion::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    PostOnly,
    None,
}

/// One agent's response for a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTuple {
    pub trust: f64,
    pub opinion: String,
    pub emotion: Emotion,
    #[serde(default)]
    pub emotion_reason: String,
    pub decision: Decision,
    #[serde(default)]
    pub post_text: String,
    /// Stance supplied by backends that label their own posts.
    #[serde(skip)]
    pub stance_hint: Option<Stance>,
}

impl ResponseTuple {
    /// Enforce the tuple invariants: trust in `[0, 1]`, no text without a
    /// post, no post without text.
    pub fn normalized(mut self) -> Self {
        self.trust = if self.trust.is_finite() { self.trust.clamp(0.0, 1.0) } else { 0.0 };
        if self.decision == Decision::PostOnly && self.post_text.trim().is_empty() {
            self.decision = Decision::None;
        }
        if self.decision == Decision::None {
            self.post_text.clear();
            self.stance_hint = None;
        }
        self
    }
}

/// A neighbor's post as seen in peer context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerMessage {
    pub source: i64,
    pub content: String,
    pub stance: Option<Stance>,
}

/// One agent's record for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub agent_id: usize,
    pub t: usize,
    pub exposed: bool,
    pub trust: f64,
    pub opinion: String,
    pub emotion: Emotion,
    pub decision: Decision,
    pub message: String,
    pub stance: Option<Stance>,
    pub intervention: Option<InterventionSignal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Memory element: the inputs of a round plus the agent's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub exposure: Option<ExposurePayload>,
    pub peers: Vec<PeerMessage>,
    pub record: RoundRecord,
}

/// Community-mean trust for rounds `0..=T`; index 0 is the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustTrajectory {
    pub values: Vec<f64>,
}

impl TrustTrajectory {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Metric("trajectory is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Metric(format!("trajectory value {v} outside [0, 1]")));
        }
        Ok(TrustTrajectory { values })
    }

    /// Number of simulated rounds `T`.
    pub fn rounds(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// Mean trust per round from a record log (`baseline` at index 0).
    pub fn from_records(records: &[RoundRecord], rounds: usize, baseline: f64) -> Result<Self> {
        let mut sums = vec![0.0; rounds + 1];
        let mut counts = vec![0usize; rounds + 1];
        for r in records {
            if r.t == 0 || r.t > rounds {
                return Err(Error::Schema(format!("record round {} outside 1..={rounds}", r.t)));
            }
            sums[r.t] += r.trust;
            counts[r.t] += 1;
        }
        let mut values = vec![baseline];
        for t in 1..=rounds {
            if counts[t] == 0 {
                return Err(Error::Schema(format!("no records for round {t}")));
            }
            values.push(sums[t] / counts[t] as f64);
        }
        TrustTrajectory::new(values)
    }
}

/// Run metadata written as the first line of a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub community_id: String,
    pub claim_id: String,
    pub seed: u64,
    pub backend_id: String,
    pub intervention_id: String,
    pub n: usize,
    pub rounds: usize,
    pub rho: f64,
    pub baseline_trust: f64,
    #[serde(default)]
    pub config_hash: String,
    pub version: String,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    run: RunHeader,
}

/// A complete run: header plus all records ordered by `(t, agent_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<RoundRecord>,
}

impl RunLog {
    pub fn trajectory(&self) -> Result<TrustTrajectory> {
        TrustTrajectory::from_records(&self.records, self.header.rounds, self.header.baseline_trust)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&HeaderLine {
            run: self.header.clone(),
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Strict parse: any malformed line is an error.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (log, skipped) = Self::parse_lenient(text)?;
        if let Some((line, err)) = skipped.into_iter().next() {
            return Err(Error::Schema(format!("log line {line}: {err}")));
        }
        Ok(log)
    }

    /// Parse, skipping malformed record lines; returns the skipped line
    /// numbers with their errors. A bad header is still fatal.
    pub fn parse_lenient(text: &str) -> Result<(Self, Vec<(usize, String)>)> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Schema("empty run log".into()))?;
        let header: HeaderLine =
            serde_json::from_str(first).map_err(|e| Error::Schema(format!("log header: {e}")))?;
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (i, line) in lines {
            match serde_json::from_str::<RoundRecord>(line) {
                Ok(r) => records.push(r),
                Err(e) => skipped.push((i + 1, e.to_string())),
            }
        }
        Ok((
            RunLog {
                header: header.run,
                records,
            },
            skipped,
        ))
    }

    /// Records of one agent in round order.
    pub fn agent_history(&self, agent: usize) -> Vec<&RoundRecord> {
        self.records.iter().filter(|r| r.agent_id == agent).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub rounds: usize,
    pub rho: f64,
    /// Concurrent backend calls within a round.
    pub in_flight: usize,
    pub attempts: usize,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            rounds: 10,
            rho: 0.1,
            in_flight: 1,
            attempts: DEFAULT_ATTEMPTS,
        }
    }
}

/// Messages visible to agent `i`: neighbors' posts from the previous round,
/// in ascending neighbor id.
pub fn peer_context(previous: &[RoundRecord], graph: &SocialGraph, i: usize) -> Result<Vec<PeerMessage>> {
    let neighbors = graph.neighbors(i)?;
    let mut out = Vec::new();
    for &j in neighbors {
        // Records of a round are indexed by agent id.
        if let Some(r) = previous.get(j).filter(|r| r.agent_id == j) {
            if r.decision == Decision::PostOnly {
                out.push(PeerMessage {
                    source: j as i64,
                    content: r.message.clone(),
                    stance: r.stance,
                });
            }
        }
    }
    Ok(out)
}

/// Per-agent mutable state carried between rounds.
#[derive(Debug, Clone, Default)]
pub struct AgentState {
    pub memory: Vec<MemoryEntry>,
    pub history_summary: String,
    pub round_summary: String,
    /// Has been directly exposed in some round so far.
    pub ever_exposed: bool,
    /// Has received the claim directly or via a post from a directly
    /// exposed neighbor.
    pub reached: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub round: usize,
    pub agents: Vec<AgentState>,
    pub last_records: Vec<RoundRecord>,
}

impl SimulationState {
    pub fn new(n: usize) -> Self {
        SimulationState {
            round: 0,
            agents: vec![AgentState::default(); n],
            last_records: Vec::new(),
        }
    }
}

/// Everything fixed over a run.
pub struct RoundInputs<'a> {
    pub community: &'a Community,
    pub graph: &'a SocialGraph,
    pub claim: &'a Claim,
    pub schedule: &'a ExposureSchedule,
    pub operator: &'a InterventionOperator,
    pub backend: &'a dyn AgentBackend,
    pub params: &'a SimulationParams,
}

struct AgentStep {
    entry: MemoryEntry,
    summary: Option<(String, String)>,
    ever_exposed: bool,
    reached: bool,
}

fn step_agent(inputs: &RoundInputs<'_>, state: &SimulationState, i: usize, t: usize) -> Result<AgentStep> {
    let persona = &inputs.community.agents[i];
    let agent = &state.agents[i];
    let exposure = exposure_input(inputs.claim, i, t, inputs.schedule);
    let peers = peer_context(&state.last_records, inputs.graph, i)?;
    let exposed = exposure.is_some();
    let ever_exposed = agent.ever_exposed || exposed;
    let reached = agent.reached
        || exposed
        || peers
            .iter()
            .any(|m| m.source >= 0 && state.agents[m.source as usize].ever_exposed);

    let signal = inputs.operator.signal(&SignalRequest {
        persona,
        claim: inputs.claim,
        agent: i,
        t,
        exposed,
        reached,
        memory: &agent.memory,
        history_summary: &agent.history_summary,
        exposure: exposure.as_ref(),
        peers: &peers,
        backend: inputs.backend,
        attempts: inputs.params.attempts,
    });

    let mut summary = None;
    if inputs.backend.uses_summaries() {
        let mut lines = Vec::new();
        if let Some(e) = &exposure {
            lines.push(format!("{}: {}", e.source_id, e.content));
        }
        lines.extend(peers.iter().map(|m| format!("{}: {}", m.source, m.content)));
        match with_retries(inputs.params.attempts, || inputs.backend.summarize(&agent.history_summary, &lines)) {
            Ok(s) => summary = Some((s.updated_history, s.round_only)),
            Err(e) => log::warn!("agent {i} round {t}: summary failed, keeping previous ({e})"),
        }
    }
    let (history_summary, round_summary) = match &summary {
        Some((history, round_only)) => (history.as_str(), round_only.as_str()),
        None => (agent.history_summary.as_str(), agent.round_summary.as_str()),
    };

    let ctx = ResponseContext {
        persona,
        claim: inputs.claim,
        round: t,
        memory: &agent.memory,
        history_summary,
        round_summary,
        exposure: exposure.as_ref(),
        peers: &peers,
        signal: signal.as_ref(),
    };
    let previous_trust = ctx.previous_trust();
    let record = match with_retries(inputs.params.attempts, || inputs.backend.respond(&ctx)) {
        Ok(response) => {
            let response = response.normalized();
            let stance = match response.decision {
                Decision::None => None,
                Decision::PostOnly => Some(match response.stance_hint {
                    Some(s) => s,
                    None => classify_stance(&response.post_text, inputs.claim, inputs.backend, inputs.params.attempts),
                }),
            };
            RoundRecord {
                agent_id: i,
                t,
                exposed,
                trust: response.trust,
                opinion: response.opinion,
                emotion: response.emotion,
                decision: response.decision,
                message: response.post_text,
                stance,
                intervention: signal.clone(),
                failure: None,
            }
        }
        Err(e) => {
            log::warn!("agent {i} round {t}: response failed after retries ({e}); carrying trust forward");
            RoundRecord {
                agent_id: i,
                t,
                exposed,
                trust: previous_trust,
                opinion: agent.memory.last().map(|m| m.record.opinion.clone()).unwrap_or_default(),
                emotion: Emotion::None,
                decision: Decision::None,
                message: String::new(),
                stance: None,
                intervention: signal.clone(),
                failure: Some(e.to_string()),
            }
        }
    };
    Ok(AgentStep {
        entry: MemoryEntry {
            exposure,
            peers,
            record,
        },
        summary,
        ever_exposed,
        reached,
    })
}

/// Label a posted message through the backend; unparseable labels fall
/// back to `comment`.
pub fn classify_stance(message: &str, claim: &Claim, backend: &dyn AgentBackend, attempts: usize) -> Stance {
    let outcome = with_retries(attempts, || {
        let raw = backend.classify_stance(message, claim)?;
        Stance::parse_label(&raw)
            .ok_or_else(|| crate::error::BackendError::Malformed(format!("unknown stance label {raw:?}")))
    });
    outcome.unwrap_or_else(|e| {
        log::warn!("stance classification fell back to comment: {e}");
        Stance::Comment
    })
}

/// Advance the simulation by one round and return that round's records.
pub fn step_round(inputs: &RoundInputs<'_>, state: &mut SimulationState) -> Result<Vec<RoundRecord>> {
    let t = state.round + 1;
    let n = inputs.community.n();
    let steps: Vec<AgentStep> = if inputs.params.in_flight > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(inputs.params.in_flight)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let snapshot = &*state;
        pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| step_agent(inputs, snapshot, i, t))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..n).map(|i| step_agent(inputs, state, i, t)).collect::<Result<Vec<_>>>()?
    };

    let mut records = Vec::with_capacity(n);
    for (agent, step) in state.agents.iter_mut().zip(steps) {
        agent.ever_exposed = step.ever_exposed;
        agent.reached = step.reached;
        if let Some((history, round_only)) = step.summary {
            agent.history_summary = history;
            agent.round_summary = round_only;
        }
        records.push(step.entry.record.clone());
        agent.memory.push(step.entry);
    }
    state.round = t;
    state.last_records = records.clone();
    Ok(records)
}

/// Output of [`run_simulation`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: RunLog,
    pub trajectory: TrustTrajectory,
    pub state: SimulationState,
}

/// Baseline trust before any exposure.
pub const BASELINE_TRUST: f64 = 0.0;

/// Exposure schedule shared by all arms of one run seed.
pub fn run_schedule(n: usize, params: &SimulationParams, exposure_seed: u64) -> Result<ExposureSchedule> {
    if params.rho == 0.0 {
        return Ok(ExposureSchedule::empty(n, params.rounds));
    }
    schedule_exposure(n, params.rho, params.rounds, &mut seed::rng_from(exposure_seed))
}

/// Run `T` rounds. `exposure_seed` drives the exposure schedule only, so
/// arms sharing it see identical exposures.
pub fn run_simulation(
    community: &Community,
    graph: &SocialGraph,
    claim: &Claim,
    params: &SimulationParams,
    arm: &ArmConfig,
    backend: &dyn AgentBackend,
    exposure_seed: u64,
) -> Result<RunOutput> {
    if graph.n() != community.n() {
        return Err(Error::Config(format!(
            "graph has {} nodes but community {} has {} agents",
            graph.n(),
            community.id,
            community.n()
        )));
    }
    if !(0.0..=1.0).contains(&params.rho) {
        return Err(Error::Config(format!("exposure ratio {} outside [0, 1]", params.rho)));
    }
    let schedule = run_schedule(community.n(), params, exposure_seed)?;
    let operator = InterventionOperator::new(arm.clone(), claim)?;
    let inputs = RoundInputs {
        community,
        graph,
        claim,
        schedule: &schedule,
        operator: &operator,
        backend,
        params,
    };
    let mut state = SimulationState::new(community.n());
    let mut records = Vec::with_capacity(community.n() * params.rounds);
    for _ in 0..params.rounds {
        records.extend(step_round(&inputs, &mut state)?);
    }
    let header = RunHeader {
        community_id: community.id.clone(),
        claim_id: claim.id.clone(),
        seed: exposure_seed,
        backend_id: backend.id().to_string(),
        intervention_id: arm.id(),
        n: community.n(),
        rounds: params.rounds,
        rho: params.rho,
        baseline_trust: BASELINE_TRUST,
        config_hash: String::new(),
        version: crate::VERSION.to_string(),
    };
    let log = RunLog { header, records };
    let trajectory = log.trajectory()?;
    Ok(RunOutput { log, trajectory, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(agent: usize, decision: Decision, msg: &str) -> RoundRecord {
        RoundRecord {
            agent_id: agent,
            t: 1,
            exposed: false,
            trust: 0.5,
            opinion: String::new(),
            emotion: Emotion::None,
            decision,
            message: msg.to_string(),
            stance: (decision == Decision::PostOnly).then_some(Stance::Deny),
            intervention: None,
            failure: None,
        }
    }

    #[test]
    fn stance_labels_parse() {
        assert_eq!(Stance::parse_label("deny"), Some(Stance::Deny));
        assert_eq!(Stance::parse_label(" \"Query\".\n"), Some(Stance::Query));
        assert_eq!(Stance::parse_label("SUPPORT"), Some(Stance::Support));
        assert_eq!(Stance::parse_label("it is a query"), None);
        assert_eq!(Stance::parse_label(""), None);
    }

    #[test]
    fn normalization_enforces_tuple_invariants() {
        let r = ResponseTuple {
            trust: 1.7,
            opinion: "o".into(),
            emotion: Emotion::Fear,
            emotion_reason: String::new(),
            decision: Decision::None,
            post_text: "leftover".into(),
            stance_hint: Some(Stance::Support),
        }
        .normalized();
        assert_eq!(r.trust, 1.0);
        assert!(r.post_text.is_empty());
        assert_eq!(r.stance_hint, None);

        let empty_post = ResponseTuple {
            trust: -0.2,
            decision: Decision::PostOnly,
            post_text: "  ".into(),
            ..r
        }
        .normalized();
        assert_eq!(empty_post.trust, 0.0);
        assert_eq!(empty_post.decision, Decision::None);
    }

    #[test]
    fn peer_context_reads_posting_neighbors_only() {
        let g = SocialGraph::ring_lattice(6, 2).unwrap();
        let prev = vec![
            record(0, Decision::None, ""),
            record(1, Decision::PostOnly, "claim looks fake"),
            record(2, Decision::PostOnly, "far away"),
            record(3, Decision::None, ""),
            record(4, Decision::None, ""),
            record(5, Decision::None, ""),
        ];
        let ctx = peer_context(&prev, &g, 0).unwrap();
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx[0].source, 1);
        assert_eq!(ctx[0].content, "claim looks fake");
        assert!(peer_context(&prev, &g, 4).unwrap().is_empty());
        assert!(peer_context(&[], &g, 0).unwrap().is_empty());
        assert!(peer_context(&prev, &g, 9).is_err());
    }

    #[test]
    fn trajectory_from_records() {
        let mut rs = vec![record(0, Decision::None, ""), record(1, Decision::None, "")];
        rs[1].trust = 0.1;
        let traj = TrustTrajectory::from_records(&rs, 1, 0.0).unwrap();
        assert_eq!(traj.values, vec![0.0, 0.3]);
        assert_eq!(traj.rounds(), 1);
        assert!(TrustTrajectory::from_records(&rs, 2, 0.0).is_err());
        assert!(TrustTrajectory::new(vec![0.2, 1.2]).is_err());
    }
}
