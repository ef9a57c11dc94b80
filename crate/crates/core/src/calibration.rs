//! Persona template calibration against a diagnostic questionnaire.

use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{with_retries, AgentBackend, RevisionRequest, DEFAULT_ATTEMPTS};
use crate::community::{band_index, band_midpoint, instantiate_persona, Background, PersonaSpec, PersonaTemplate, TraitKind, TraitScore, BAND_COUNT};
use crate::error::{BackendError, Error, Result};
use crate::seed;

/// Target or realized trait scores of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitPair {
    pub aot: f64,
    pub pi: f64,
}

impl TraitPair {
    pub fn new(aot: f64, pi: f64) -> Self {
        TraitPair { aot, pi }
    }

    pub fn get(&self, kind: TraitKind) -> f64 {
        match kind {
            TraitKind::Aot => self.aot,
            TraitKind::Pi => self.pi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticItem {
    pub scenario_id: String,
    pub scenario_text: String,
    pub question_text: String,
    pub target_trait: TraitKind,
    /// Choices A..E in ascending trait level.
    pub options: [String; 5],
}

#[derive(Deserialize)]
struct QuestionnaireFile {
    scenarios: Vec<ScenarioEntry>,
}

#[derive(Deserialize)]
struct ScenarioEntry {
    id: String,
    target_trait: TraitKind,
    scenario: String,
    questions: Vec<QuestionEntry>,
}

#[derive(Deserialize)]
struct QuestionEntry {
    question: String,
    options: [String; 5],
}

pub fn parse_questionnaire(text: &str) -> Result<Vec<DiagnosticItem>> {
    let file: QuestionnaireFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("questionnaire: {e}")))?;
    let items: Vec<DiagnosticItem> = file
        .scenarios
        .into_iter()
        .flat_map(|s| {
            let ScenarioEntry {
                id,
                target_trait,
                scenario,
                questions,
            } = s;
            questions.into_iter().map(move |q| DiagnosticItem {
                scenario_id: id.clone(),
                scenario_text: scenario.clone(),
                question_text: q.question,
                target_trait,
                options: q.options,
            })
        })
        .collect();
    if items.is_empty() {
        return Err(Error::Schema("questionnaire has no items".into()));
    }
    Ok(items)
}

static STANDARD_ITEMS: LazyLock<Vec<DiagnosticItem>> = LazyLock::new(|| {
    parse_questionnaire(include_str!("../assets/questionnaire.json")).expect("bundled questionnaire is valid")
});

/// The bundled four-scenario, twelve-item questionnaire.
pub fn standard_items() -> &'static [DiagnosticItem] {
    &STANDARD_ITEMS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionLetter {
    A,
    B,
    C,
    D,
    E,
}

impl OptionLetter {
    pub const ALL: [OptionLetter; 5] = [OptionLetter::A, OptionLetter::B, OptionLetter::C, OptionLetter::D, OptionLetter::E];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Band midpoint of the option: A = 0.1 .. E = 0.9.
    pub fn score(self) -> f64 {
        band_midpoint(self.index())
    }

    pub fn from_char(c: char) -> Option<Self> {
        "ABCDE".find(c).map(|i| Self::ALL[i])
    }
}

/// Extract the single option letter from a reply. Tokens are split on
/// non-alphanumerics; exactly one token must be one of `A`..`E`.
pub fn parse_option_letter(reply: &str) -> Option<OptionLetter> {
    let mut found = None;
    for token in reply.split(|c: char| !c.is_ascii_alphanumeric()) {
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if let Some(letter) = OptionLetter::from_char(c) {
                if found.is_some() {
                    return None;
                }
                found = Some(letter);
            }
        }
    }
    found
}

/// One letter per item, in item order.
pub fn administer(
    items: &[DiagnosticItem],
    persona: &PersonaSpec,
    backend: &dyn AgentBackend,
    attempts: usize,
) -> Result<Vec<OptionLetter>> {
    if items.is_empty() {
        return Err(Error::Config("questionnaire is empty".into()));
    }
    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            with_retries(attempts, || {
                let reply = backend.answer_item(persona, item)?;
                parse_option_letter(&reply)
                    .ok_or_else(|| BackendError::Malformed(format!("no single option letter in {reply:?}")))
            })
            .map_err(|source| Error::CalibrationItem { index, source })
        })
        .collect()
}

/// Mean option score per trait.
///
/// Scores are summed as integer tenths and divided once, so uniform
/// answers reproduce the band midpoint exactly.
pub fn score_responses(responses: &[OptionLetter], items: &[DiagnosticItem]) -> Result<TraitPair> {
    if responses.len() != items.len() {
        return Err(Error::LengthMismatch(format!("{} vs {}", responses.len(), items.len())));
    }
    let mean = |kind: TraitKind| -> Result<f64> {
        let tenths: Vec<usize> = responses
            .iter()
            .zip(items)
            .filter(|(_, item)| item.target_trait == kind)
            .map(|(r, _)| 2 * r.index() + 1)
            .collect();
        if tenths.is_empty() {
            return Err(Error::UndefinedTrait(kind));
        }
        Ok(tenths.iter().sum::<usize>() as f64 / (10 * tenths.len()) as f64)
    };
    Ok(TraitPair {
        aot: mean(TraitKind::Aot)?,
        pi: mean(TraitKind::Pi)?,
    })
}

/// `(1/N) Σ (|α − α̂| + |π − π̂|)`.
pub fn diagnostic_loss(targets: &[TraitPair], realized: &[TraitPair]) -> Result<f64> {
    if targets.len() != realized.len() {
        return Err(Error::LengthMismatch(format!("{} vs {}", targets.len(), realized.len())));
    }
    if targets.is_empty() {
        return Err(Error::Metric("diagnostic loss needs at least one agent".into()));
    }
    let total: f64 = targets
        .iter()
        .zip(realized)
        .map(|(t, r)| (t.aot - r.aot).abs() + (t.pi - r.pi).abs())
        .sum();
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub iterations: usize,
    pub attempts: usize,
    pub in_flight: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            iterations: 10,
            attempts: DEFAULT_ATTEMPTS,
            in_flight: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedTraits {
    pub agent_id: usize,
    pub target: TraitPair,
    pub realized: TraitPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub selected_template: PersonaTemplate,
    /// Zero-based iteration whose template was selected.
    pub selected_iteration: usize,
    pub per_iteration_loss: Vec<f64>,
    /// Realized traits measured under the selected template.
    pub realized: Vec<RealizedTraits>,
    /// Iterations after which the proposed revision was rejected.
    pub rejected_revisions: Vec<usize>,
}

impl CalibrationResult {
    pub fn selected_loss(&self) -> f64 {
        self.per_iteration_loss[self.selected_iteration]
    }
}

fn cohort_personas(
    template: &PersonaTemplate,
    cohort: &[TraitPair],
    backgrounds: &[Background],
) -> Result<Vec<PersonaSpec>> {
    cohort
        .iter()
        .enumerate()
        .map(|(i, t)| {
            instantiate_persona(
                i,
                TraitScore::new(t.aot)?,
                TraitScore::new(t.pi)?,
                &backgrounds[i % backgrounds.len()],
                template,
            )
        })
        .collect()
}

fn measure(
    personas: &[PersonaSpec],
    items: &[DiagnosticItem],
    backend: &dyn AgentBackend,
    config: &CalibrationConfig,
) -> Result<Vec<TraitPair>> {
    let one = |p: &PersonaSpec| administer(items, p, backend, config.attempts).and_then(|r| score_responses(&r, items));
    if config.in_flight > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.in_flight)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| personas.par_iter().map(one).collect())
    } else {
        personas.iter().map(one).collect()
    }
}

/// Iterate measure → revise for `config.iterations` passes and keep the
/// template with the lowest loss (earliest on ties).
///
/// The seed fixes the background assignment order of the cohort.
pub fn calibrate(
    initial: &PersonaTemplate,
    cohort: &[TraitPair],
    items: &[DiagnosticItem],
    backgrounds: &[Background],
    backend: &dyn AgentBackend,
    config: &CalibrationConfig,
    seed_value: u64,
) -> Result<CalibrationResult> {
    if config.iterations == 0 {
        return Err(Error::Config("calibration needs at least one iteration".into()));
    }
    if cohort.is_empty() {
        return Err(Error::Config("calibration cohort is empty".into()));
    }
    if backgrounds.is_empty() {
        return Err(Error::Config("background pool is empty".into()));
    }
    initial.validate()?;
    let mut order: Vec<Background> = backgrounds.to_vec();
    order.shuffle(&mut seed::rng_from(seed::stream_seed(
        seed_value,
        "calibration",
        seed_value,
        seed::Purpose::Calibration,
    )));

    let mut template = initial.clone();
    let mut losses = Vec::with_capacity(config.iterations);
    let mut rejected = Vec::new();
    let mut best: Option<(usize, PersonaTemplate, Vec<TraitPair>)> = None;

    for s in 0..config.iterations {
        let personas = cohort_personas(&template, cohort, &order)?;
        let realized = measure(&personas, items, backend, config)?;
        let loss = diagnostic_loss(cohort, &realized)?;
        log::info!("calibration iteration {s}: loss {loss:.4}");
        losses.push(loss);
        if best.as_ref().is_none_or(|(i, _, _)| loss < losses[*i]) {
            best = Some((s, template.clone(), realized.clone()));
        }
        if s + 1 == config.iterations {
            break;
        }

        let (worst, _) = cohort
            .iter()
            .zip(&realized)
            .map(|(t, r)| (t.aot - r.aot).abs() + (t.pi - r.pi).abs())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        let request = RevisionRequest {
            current_template: template.clone(),
            target: cohort[worst],
            observed: realized[worst],
            loss,
            iteration: s,
            pairs: cohort.iter().copied().zip(realized.iter().copied()).collect(),
        };
        let revised = with_retries(config.attempts, || backend.revise_template(&request))
            .map_err(Error::Backend)
            .and_then(|body| PersonaTemplate::new(body.trim().to_string(), s + 1));
        match revised {
            Ok(next) => template = next,
            Err(e) => {
                log::warn!("revision after iteration {s} rejected: {e}");
                rejected.push(s);
                template.version = s + 1;
            }
        }
    }

    let (selected_iteration, selected_template, realized) = best.expect("at least one iteration");
    Ok(CalibrationResult {
        selected_template,
        selected_iteration,
        per_iteration_loss: losses,
        realized: cohort
            .iter()
            .zip(realized)
            .enumerate()
            .map(|(agent_id, (target, realized))| RealizedTraits {
                agent_id,
                target: *target,
                realized,
            })
            .collect(),
        rejected_revisions: rejected,
    })
}

/// `per_cell` agents at each of the 5×5 band-midpoint cells.
pub fn desk_cohort(per_cell: usize) -> Vec<TraitPair> {
    let mut out = Vec::with_capacity(per_cell * BAND_COUNT * BAND_COUNT);
    for a in 0..BAND_COUNT {
        for p in 0..BAND_COUNT {
            for _ in 0..per_cell {
                out.push(TraitPair::new(band_midpoint(a), band_midpoint(p)));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitAlignment {
    pub rmse: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub aot: TraitAlignment,
    pub pi: TraitAlignment,
    /// Mean of the two traits.
    pub mean: TraitAlignment,
}

fn trait_alignment(targets: &[f64], realized: &[f64]) -> TraitAlignment {
    let n = targets.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut confusion = [[0usize; BAND_COUNT]; BAND_COUNT];
    for (&t, &r) in targets.iter().zip(realized) {
        sq += (t - r).powi(2);
        abs += (t - r).abs();
        confusion[band_index(t)][band_index(r)] += 1;
    }
    let correct: usize = (0..BAND_COUNT).map(|k| confusion[k][k]).sum();
    let mut f1s = Vec::new();
    for (k, row) in confusion.iter().enumerate() {
        let tp = row[k] as f64;
        let actual: usize = row.iter().sum();
        let predicted: usize = (0..BAND_COUNT).map(|j| confusion[j][k]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        let denom = (actual + predicted) as f64;
        f1s.push(2.0 * tp / denom);
    }
    TraitAlignment {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        accuracy: correct as f64 / n,
        macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
    }
}

/// Per-trait RMSE, MAE, five-band accuracy and macro-F1.
pub fn alignment_metrics(targets: &[TraitPair], realized: &[TraitPair]) -> Result<AlignmentReport> {
    if targets.len() != realized.len() {
        return Err(Error::LengthMismatch(format!("{} vs {}", targets.len(), realized.len())));
    }
    if targets.is_empty() {
        return Err(Error::Metric("alignment needs at least one agent".into()));
    }
    let per = |kind: TraitKind| {
        let t: Vec<f64> = targets.iter().map(|p| p.get(kind)).collect();
        let r: Vec<f64> = realized.iter().map(|p| p.get(kind)).collect();
        trait_alignment(&t, &r)
    };
    let aot = per(TraitKind::Aot);
    let pi = per(TraitKind::Pi);
    let mean = TraitAlignment {
        rmse: (aot.rmse + pi.rmse) / 2.0,
        mae: (aot.mae + pi.mae) / 2.0,
        accuracy: (aot.accuracy + pi.accuracy) / 2.0,
        macro_f1: (aot.macro_f1 + pi.macro_f1) / 2.0,
    };
    Ok(AlignmentReport { aot, pi, mean })
}

/// Calibration output written by the `calibrate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub backend_id: String,
    pub seed: u64,
    pub cohort_size: usize,
    pub per_iteration_loss: Vec<f64>,
    pub selected_iteration: usize,
    pub selected_loss: f64,
    pub rejected_revisions: Vec<usize>,
    pub selected_template: PersonaTemplate,
    pub alignment: AlignmentReport,
}

impl CalibrationReport {
    pub fn new(result: &CalibrationResult, backend_id: &str, seed: u64) -> Result<Self> {
        let targets: Vec<TraitPair> = result.realized.iter().map(|r| r.target).collect();
        let realized: Vec<TraitPair> = result.realized.iter().map(|r| r.realized).collect();
        Ok(CalibrationReport {
            backend_id: backend_id.to_string(),
            seed,
            cohort_size: targets.len(),
            per_iteration_loss: result.per_iteration_loss.clone(),
            selected_iteration: result.selected_iteration,
            selected_loss: result.selected_loss(),
            rejected_revisions: result.rejected_revisions.clone(),
            selected_template: result.selected_template.clone(),
            alignment: alignment_metrics(&targets, &realized)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letter_parser_contract() {
        assert_eq!(parse_option_letter("C"), Some(OptionLetter::C));
        assert_eq!(parse_option_letter("maybe C"), Some(OptionLetter::C));
        assert_eq!(parse_option_letter("Answer: (E)."), Some(OptionLetter::E));
        assert_eq!(parse_option_letter("B or D"), None);
        assert_eq!(parse_option_letter("none of these"), None);
        assert_eq!(parse_option_letter("F"), None);
        assert_eq!(parse_option_letter("c"), None);
    }

    #[test]
    fn bundled_questionnaire_shape() {
        let items = standard_items();
        assert_eq!(items.len(), 12);
        assert_eq!(items.iter().filter(|i| i.target_trait == TraitKind::Aot).count(), 6);
        let scenarios: std::collections::BTreeSet<_> = items.iter().map(|i| i.scenario_id.as_str()).collect();
        assert_eq!(scenarios.len(), 4);
    }

    #[test]
    fn option_scores_are_band_midpoints() {
        let scores: Vec<f64> = OptionLetter::ALL.iter().map(|l| l.score()).collect();
        for (s, e) in scores.iter().zip([0.1, 0.3, 0.5, 0.7, 0.9]) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_errors() {
        assert!(diagnostic_loss(&[TraitPair::new(0.1, 0.1)], &[]).is_err());
        assert!(diagnostic_loss(&[], &[]).is_err());
    }

    #[test]
    fn desk_cohort_covers_grid() {
        let c = desk_cohort(20);
        assert_eq!(c.len(), 500);
        assert_eq!(c[0], TraitPair::new(band_midpoint(0), band_midpoint(0)));
    }
}
