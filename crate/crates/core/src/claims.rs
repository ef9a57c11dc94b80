//! Misinformation pool, credibility scoring, and exposure scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{with_retries, AgentBackend};
use crate::error::{BackendError, Error, Result};

/// Source id used for messages injected by the exogenous spreader.
pub const SPREADER_ID: i64 = -1;

/// Default retention threshold on average credibility (strict).
pub const CREDIBILITY_THRESHOLD: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Health,
    Society,
    Life,
    Disaster,
    Science,
    Politics,
}

fn neutral_valence() -> f64 {
    0.5
}

/// An externally refuted claim with credibility ratings and gold evidence.
///
/// Unknown JSON fields are kept in `extra` and written back on
/// serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub content: String,
    pub domain: Domain,
    pub year: i32,
    pub credibility_scores: BTreeMap<String, f64>,
    pub avg_credibility: f64,
    pub gold_evidence: String,
    /// True identity of the spreading account.
    pub source: String,
    /// Position on the PI axis the claim is congenial to.
    #[serde(default = "neutral_valence")]
    pub valence: f64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Claim {
    pub fn mean_score(&self) -> Option<f64> {
        if self.credibility_scores.is_empty() {
            None
        } else {
            Some(self.credibility_scores.values().sum::<f64>() / self.credibility_scores.len() as f64)
        }
    }

    /// Record a score under `rater` and refresh the average.
    pub fn set_score(&mut self, rater: &str, score: f64) {
        self.credibility_scores.insert(rater.to_string(), score);
        self.avg_credibility = self.mean_score().unwrap_or(0.0);
    }

    pub fn validate(&self) -> Result<()> {
        if self.content.trim().is_empty() {
            return Err(Error::Schema(format!("claim {}: empty content", self.id)));
        }
        if let Some(mean) = self.mean_score() {
            if (mean - self.avg_credibility).abs() > 1e-9 {
                return Err(Error::Schema(format!(
                    "claim {}: avg_credibility {} differs from mean of scores {mean}",
                    self.id, self.avg_credibility
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.valence) {
            return Err(Error::Schema(format!("claim {}: valence {} outside [0, 1]", self.id, self.valence)));
        }
        Ok(())
    }
}

pub fn parse_pool(text: &str) -> Result<Vec<Claim>> {
    let claims: Vec<Claim> = serde_json::from_str(text)?;
    for claim in &claims {
        claim.validate()?;
    }
    Ok(claims)
}

pub fn pool_to_json(claims: &[Claim]) -> Result<String> {
    let mut text = serde_json::to_string_pretty(claims)?;
    text.push('\n');
    Ok(text)
}

pub fn load_pool(path: &Path) -> Result<Vec<Claim>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pool(&text)
}

pub const DESK_POOL_JSON: &str = include_str!("../assets/desk_pool.json");

/// The bundled twelve-claim synthetic pool.
pub fn desk_pool() -> Vec<Claim> {
    parse_pool(DESK_POOL_JSON).expect("bundled pool parses")
}

/// Keep claims whose average credibility is strictly above `threshold`.
pub fn filter_pool(claims: &[Claim], threshold: f64) -> Vec<Claim> {
    claims
        .iter()
        .filter(|c| c.avg_credibility > threshold)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibilityAssessment {
    pub score: f64,
    pub reason: String,
    /// Set when the reply's score was outside `[0, 10]` and was clamped.
    pub clamped: bool,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
    #[serde(default)]
    reason: String,
}

/// Slice from the first `{` to the last `}`, tolerating surrounding prose
/// or code fences.
pub(crate) fn json_object_span(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

pub fn parse_credibility_reply(reply: &str) -> std::result::Result<CredibilityAssessment, BackendError> {
    let span = json_object_span(reply).ok_or_else(|| BackendError::Malformed("no JSON object in reply".into()))?;
    let parsed: ScoreReply =
        serde_json::from_str(span).map_err(|e| BackendError::Malformed(format!("credibility reply: {e}")))?;
    if !parsed.score.is_finite() {
        return Err(BackendError::Malformed("non-finite credibility score".into()));
    }
    let clamped = !(0.0..=10.0).contains(&parsed.score);
    if clamped {
        log::warn!("credibility score {} outside [0, 10]; clamped", parsed.score);
    }
    Ok(CredibilityAssessment {
        score: parsed.score.clamp(0.0, 10.0),
        reason: parsed.reason,
        clamped,
    })
}

pub fn score_credibility(claim: &Claim, backend: &dyn AgentBackend, attempts: usize) -> Result<CredibilityAssessment> {
    with_retries(attempts, || {
        backend
            .score_claim(claim)
            .and_then(|reply| parse_credibility_reply(&reply))
    })
    .map_err(|source| Error::Scoring {
        claim: claim.id.clone(),
        source,
    })
}

/// Size of each round's exposed set: `ceil(rho * n)`.
///
/// The product is nudged down by a tiny tolerance so that values like
/// `0.1 * 30 = 3.0000000000000004` do not round up to the next integer.
pub fn exposure_size(n: usize, rho: f64) -> usize {
    ((rho * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Directly exposed agent ids for rounds `1..=T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureSchedule {
    pub n: usize,
    /// `sets[t - 1]` is the sorted exposed set of round `t`.
    pub sets: Vec<Vec<usize>>,
}

impl ExposureSchedule {
    /// A schedule that exposes nobody.
    pub fn empty(n: usize, rounds: usize) -> Self {
        ExposureSchedule {
            n,
            sets: vec![Vec::new(); rounds],
        }
    }

    pub fn rounds(&self) -> usize {
        self.sets.len()
    }

    pub fn is_exposed(&self, agent: usize, t: usize) -> bool {
        t >= 1
            && self
                .sets
                .get(t - 1)
                .is_some_and(|set| set.binary_search(&agent).is_ok())
    }
}

pub fn schedule_exposure<R: Rng + ?Sized>(n: usize, rho: f64, rounds: usize, rng: &mut R) -> Result<ExposureSchedule> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("exposure ratio must lie in (0, 1], got {rho}")));
    }
    let size = exposure_size(n, rho);
    if size > n {
        return Err(Error::Config(format!("exposed set of {size} exceeds community size {n}")));
    }
    let mut sets = Vec::with_capacity(rounds);
    let mut ids: Vec<usize> = (0..n).collect();
    for _ in 0..rounds {
        ids.sort_unstable();
        // Partial Fisher–Yates: the first `size` slots become a uniform
        // size-`size` subset.
        for i in 0..size {
            let j = rng.random_range(i..n);
            ids.swap(i, j);
        }
        let mut chosen = ids[..size].to_vec();
        chosen.sort_unstable();
        sets.push(chosen);
    }
    Ok(ExposureSchedule { n, sets })
}

/// What a directly exposed agent receives from the spreader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposurePayload {
    pub claim_id: String,
    pub content: String,
    pub source_id: i64,
    pub source_label: String,
}

pub fn exposure_input(claim: &Claim, agent: usize, t: usize, schedule: &ExposureSchedule) -> Option<ExposurePayload> {
    schedule.is_exposed(agent, t).then(|| ExposurePayload {
        claim_id: claim.id.clone(),
        content: claim.content.clone(),
        source_id: SPREADER_ID,
        source_label: "spreader".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn claim_with(avg: f64) -> Claim {
        let mut c = desk_pool().remove(0);
        c.credibility_scores = BTreeMap::from([("r".to_string(), avg)]);
        c.avg_credibility = avg;
        c
    }

    #[test]
    fn desk_pool_is_well_formed() {
        let pool = desk_pool();
        assert_eq!(pool.len(), 12);
        let domains: std::collections::BTreeSet<_> = pool.iter().map(|c| c.domain).collect();
        assert_eq!(domains.len(), 6);
        let strata = |lo: f64, hi: f64| pool.iter().filter(|c| c.avg_credibility >= lo && c.avg_credibility <= hi).count();
        assert_eq!(strata(6.0, 6.95), 4);
        assert_eq!(strata(7.0, 8.0), 4);
        assert_eq!(strata(8.1, 10.0), 4);
        assert!(pool.iter().all(|c| !c.gold_evidence.is_empty() && !c.source.is_empty()));
    }

    #[test]
    fn bundled_pool_round_trips_byte_identically() {
        let pool = desk_pool();
        assert_eq!(pool_to_json(&pool).unwrap(), DESK_POOL_JSON);
    }

    #[test]
    fn unknown_fields_survive() {
        let text = r#"[{"id":"x","content":"c","domain":"life","year":2020,"credibility_scores":{"a":7.0},
            "avg_credibility":7.0,"gold_evidence":"e","source":"s","length_chars":21,"note":{"k":1}}]"#;
        let pool = parse_pool(text).unwrap();
        assert_eq!(pool[0].valence, 0.5);
        assert_eq!(pool[0].extra["length_chars"], Value::from(21));
        let once = pool_to_json(&pool).unwrap();
        let twice = pool_to_json(&parse_pool(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
        assert!(once.contains("\"note\""));
    }

    #[test]
    fn inconsistent_average_is_rejected() {
        let mut c = claim_with(7.0);
        c.avg_credibility = 7.5;
        let text = serde_json::to_string(&vec![c]).unwrap();
        assert!(matches!(parse_pool(&text), Err(Error::Schema(_))));
    }

    #[test]
    fn filter_is_strict() {
        let pool = vec![claim_with(5.9), claim_with(6.0), claim_with(6.1)];
        let kept = filter_pool(&pool, CREDIBILITY_THRESHOLD);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].avg_credibility, 6.1);
        assert_eq!(filter_pool(&kept, CREDIBILITY_THRESHOLD), kept);
    }

    #[test]
    fn credibility_reply_parsing() {
        let a = parse_credibility_reply(r#"{"score": 6.7, "reason": "some basis"}"#).unwrap();
        assert_eq!(a.score, 6.7);
        assert_eq!(a.reason, "some basis");
        assert!(!a.clamped);

        let hi = parse_credibility_reply("```json\n{\"score\": 12, \"reason\": \"x\"}\n```").unwrap();
        assert_eq!(hi.score, 10.0);
        assert!(hi.clamped);

        assert!(parse_credibility_reply("about seven").is_err());
        assert!(parse_credibility_reply(r#"{"reason": "no score"}"#).is_err());
    }

    #[test]
    fn exposure_size_uses_ceiling() {
        assert_eq!(exposure_size(200, 0.1), 20);
        assert_eq!(exposure_size(5, 0.1), 1);
        assert_eq!(exposure_size(30, 0.1), 3);
        assert_eq!(exposure_size(201, 0.1), 21);
        assert_eq!(exposure_size(7, 1.0), 7);
    }

    #[test]
    fn schedules_have_exact_sizes() {
        let mut rng = seed::rng_from(9);
        let s = schedule_exposure(200, 0.1, 10, &mut rng).unwrap();
        assert_eq!(s.rounds(), 10);
        assert!(s.sets.iter().all(|e| e.len() == 20 && e.iter().all(|&i| i < 200)));
        let tiny = schedule_exposure(5, 0.1, 3, &mut rng).unwrap();
        assert!(tiny.sets.iter().all(|e| e.len() == 1));
    }

    #[test]
    fn invalid_rho_is_configuration_error() {
        let mut rng = seed::rng_from(1);
        assert!(matches!(schedule_exposure(10, 0.0, 1, &mut rng), Err(Error::Config(_))));
        assert!(matches!(schedule_exposure(10, -0.5, 1, &mut rng), Err(Error::Config(_))));
        assert!(matches!(schedule_exposure(10, 1.5, 1, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn schedule_is_seed_deterministic() {
        let a = schedule_exposure(50, 0.2, 5, &mut seed::rng_from(3)).unwrap();
        let b = schedule_exposure(50, 0.2, 5, &mut seed::rng_from(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exposure_payload_follows_schedule() {
        let claim = desk_pool().remove(0);
        let schedule = ExposureSchedule {
            n: 3,
            sets: vec![vec![1]],
        };
        let p = exposure_input(&claim, 1, 1, &schedule).unwrap();
        assert_eq!(p.content, claim.content);
        assert_eq!(p.source_id, SPREADER_ID);
        assert_eq!(exposure_input(&claim, 0, 1, &schedule), None);
        assert_eq!(exposure_input(&claim, 1, 2, &schedule), None);

        let all = schedule_exposure(4, 1.0, 2, &mut seed::rng_from(0)).unwrap();
        assert!((0..4).all(|i| exposure_input(&claim, i, 2, &all).is_some()));
    }
}
