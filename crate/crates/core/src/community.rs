//! Community construction: trait sampling, description bands, persona
//! instantiation.

use std::fmt;
use std::sync::LazyLock;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Upper band boundaries. A score belongs to the first band whose boundary
/// it does not reach; 1.0 falls into the last band.
const BAND_BOUNDARIES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

pub const BAND_COUNT: usize = 5;

/// A trait score on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TraitScore(f64);

impl TraitScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(TraitScore(value))
        } else {
            Err(Error::Config(format!("trait score {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Index of the description band containing this score.
    pub fn band(self) -> usize {
        band_index(self.0)
    }
}

impl TryFrom<f64> for TraitScore {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        TraitScore::new(value)
    }
}

impl From<TraitScore> for f64 {
    fn from(score: TraitScore) -> f64 {
        score.0
    }
}

/// Band index in `0..5` using lower-inclusive intervals.
pub fn band_index(value: f64) -> usize {
    BAND_BOUNDARIES.iter().filter(|&&b| value >= b).count()
}

/// Midpoint of band `index` (0.1, 0.3, ..., 0.9).
pub fn band_midpoint(index: usize) -> f64 {
    [0.1, 0.3, 0.5, 0.7, 0.9][index.min(BAND_COUNT - 1)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitKind {
    Aot,
    Pi,
}

impl fmt::Display for TraitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraitKind::Aot => f.write_str("AOT"),
            TraitKind::Pi => f.write_str("PI"),
        }
    }
}

#[derive(Debug, Deserialize)]
struct BandTable {
    aot: BandSet,
    pi: BandSet,
}

#[derive(Debug, Deserialize)]
struct BandSet {
    #[allow(dead_code)]
    preamble: String,
    bands: Vec<Band>,
}

#[derive(Debug, Deserialize)]
struct Band {
    #[allow(dead_code)]
    interval: String,
    text: String,
}

static BANDS: LazyLock<BandTable> = LazyLock::new(|| {
    let table: BandTable = serde_json::from_str(include_str!("../assets/trait_bands.json"))
        .expect("bundled band table parses");
    assert_eq!(table.aot.bands.len(), BAND_COUNT);
    assert_eq!(table.pi.bands.len(), BAND_COUNT);
    table
});

/// Verbatim description for the band containing `score`.
pub fn trait_band(score: TraitScore, kind: TraitKind) -> &'static str {
    let set = match kind {
        TraitKind::Aot => &BANDS.aot,
        TraitKind::Pi => &BANDS.pi,
    };
    &set.bands[score.band()].text
}

/// Named trait distribution profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    AotLow,
    AotCenter,
    AotHigh,
    AotPolarized,
    PiLiberal,
    PiCenter,
    PiConservative,
    PiPolarized,
}

impl ProfileName {
    pub fn trait_kind(self) -> TraitKind {
        match self {
            ProfileName::AotLow
            | ProfileName::AotCenter
            | ProfileName::AotHigh
            | ProfileName::AotPolarized => TraitKind::Aot,
            _ => TraitKind::Pi,
        }
    }

    /// Short label used in community tables ("Low", "Center", ...).
    pub fn label(self) -> &'static str {
        match self {
            ProfileName::AotLow => "Low",
            ProfileName::AotCenter | ProfileName::PiCenter => "Center",
            ProfileName::AotHigh => "High",
            ProfileName::AotPolarized | ProfileName::PiPolarized => "Polarized",
            ProfileName::PiLiberal => "Liberal",
            ProfileName::PiConservative => "Conservative",
        }
    }
}

/// One Beta component of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaComponent {
    pub alpha: f64,
    pub beta: f64,
    pub weight: f64,
}

impl BetaComponent {
    pub const fn new(alpha: f64, beta: f64, weight: f64) -> Self {
        BetaComponent { alpha, beta, weight }
    }
}

/// A trait distribution: a weighted mixture of Beta components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile {
    pub name: ProfileName,
    pub components: Vec<BetaComponent>,
}

impl DistributionProfile {
    /// Default shape for each named profile: low/liberal Beta(2,5),
    /// center Beta(5,5), high/conservative Beta(5,2), polarized an equal
    /// mixture of Beta(8,2) and Beta(2,8).
    pub fn standard(name: ProfileName) -> Self {
        let components = match name {
            ProfileName::AotLow | ProfileName::PiLiberal => vec![BetaComponent::new(2.0, 5.0, 1.0)],
            ProfileName::AotCenter | ProfileName::PiCenter => vec![BetaComponent::new(5.0, 5.0, 1.0)],
            ProfileName::AotHigh | ProfileName::PiConservative => {
                vec![BetaComponent::new(5.0, 2.0, 1.0)]
            }
            ProfileName::AotPolarized | ProfileName::PiPolarized => vec![
                BetaComponent::new(8.0, 2.0, 0.5),
                BetaComponent::new(2.0, 8.0, 0.5),
            ],
        };
        DistributionProfile { name, components }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config(format!("profile {:?} has no components", self.name)));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.alpha > 0.0 && c.beta > 0.0 && c.alpha.is_finite() && c.beta.is_finite()) {
                return Err(Error::Config(format!(
                    "profile {:?}: Beta shape parameters must be positive, got ({}, {})",
                    self.name, c.alpha, c.beta
                )));
            }
            if c.weight.is_nan() || c.weight < 0.0 {
                return Err(Error::Config(format!(
                    "profile {:?}: negative mixture weight {}",
                    self.name, c.weight
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "profile {:?}: mixture weights sum to {total}, expected 1",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn sample_trait<R: Rng + ?Sized>(profile: &DistributionProfile, rng: &mut R) -> Result<TraitScore> {
    profile.validate()?;
    let component = if profile.components.len() == 1 {
        &profile.components[0]
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = profile.components.last().expect("validated non-empty");
        for c in &profile.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        chosen
    };
    let beta = Beta::new(component.alpha, component.beta)
        .map_err(|e| Error::Config(format!("profile {:?}: {e}", profile.name)))?;
    let value: f64 = beta.sample(rng);
    TraitScore::new(value.clamp(0.0, 1.0))
}

/// Controlled background attributes slotted into the response prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Background {
    pub gender: String,
    pub age_group: String,
    pub occupation: String,
    pub background_story: String,
    pub communication_preference: String,
}

static BACKGROUNDS: LazyLock<Vec<Background>> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../assets/backgrounds.json")).expect("bundled background pool parses")
});

/// The bundled pool of neutral background profiles.
pub fn default_backgrounds() -> &'static [Background] {
    &BACKGROUNDS
}

pub const AOT_PLACEHOLDER: &str = "{Description_AOT}";
pub const PI_PLACEHOLDER: &str = "{Description_Political_Ideology}";

/// A persona template with trait placeholders, tagged by calibration iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaTemplate {
    pub body: String,
    pub version: usize,
}

impl PersonaTemplate {
    pub fn new(body: impl Into<String>, version: usize) -> Result<Self> {
        let template = PersonaTemplate {
            body: body.into(),
            version,
        };
        template.validate()?;
        Ok(template)
    }

    /// The bundled persona generation template.
    pub fn standard() -> Self {
        PersonaTemplate {
            body: include_str!("../assets/prompts/A1.txt").trim_end().to_string(),
            version: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for placeholder in [AOT_PLACEHOLDER, PI_PLACEHOLDER] {
            if !self.body.contains(placeholder) {
                return Err(Error::Template(format!("template is missing {placeholder}")));
            }
        }
        Ok(())
    }
}

/// One agent's persona: target traits, background, rendered prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub agent_id: usize,
    pub aot: TraitScore,
    pub pi: TraitScore,
    pub background: Background,
    pub persona_text: String,
}

/// Find the first `{identifier}` left in `text`.
pub(crate) fn find_placeholder(text: &str) -> Option<&str> {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        if let Some(close) = tail.find('}') {
            let name = &tail[..close];
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Some(&rest[open..open + close + 2]);
            }
        }
        rest = tail;
    }
    None
}

pub fn instantiate_persona(
    agent_id: usize,
    aot: TraitScore,
    pi: TraitScore,
    background: &Background,
    template: &PersonaTemplate,
) -> Result<PersonaSpec> {
    template.validate()?;
    let text = template
        .body
        .replace(AOT_PLACEHOLDER, trait_band(aot, TraitKind::Aot))
        .replace(PI_PLACEHOLDER, trait_band(pi, TraitKind::Pi))
        .replace("{gender}", &background.gender)
        .replace("{age}", &background.age_group)
        .replace("{occupation}", &background.occupation)
        .replace("{background_story}", &background.background_story)
        .replace("{preference_appendix}", &background.communication_preference);
    if let Some(unresolved) = find_placeholder(&text) {
        return Err(Error::Template(format!("unresolved placeholder {unresolved}")));
    }
    if text.trim().is_empty() {
        return Err(Error::Template("persona text is empty".into()));
    }
    Ok(PersonaSpec {
        agent_id,
        aot,
        pi,
        background: background.clone(),
        persona_text: text,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityProfiles {
    pub aot: DistributionProfile,
    pub pi: DistributionProfile,
}

/// A community of agents with dense ids `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: String,
    pub profiles: CommunityProfiles,
    pub agents: Vec<PersonaSpec>,
}

impl Community {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let community: Community = serde_json::from_str(text)?;
        for (i, agent) in community.agents.iter().enumerate() {
            if agent.agent_id != i {
                return Err(Error::Schema(format!(
                    "community {}: agent at position {i} has id {}",
                    community.id, agent.agent_id
                )));
            }
        }
        Ok(community)
    }
}

pub fn build_community(
    id: &str,
    aot_profile: &DistributionProfile,
    pi_profile: &DistributionProfile,
    n: usize,
    background_pool: &[Background],
    template: &PersonaTemplate,
    seed: u64,
) -> Result<Community> {
    if n == 0 {
        return Err(Error::Config("community size must be at least 1".into()));
    }
    if background_pool.is_empty() {
        return Err(Error::Config("background pool is empty".into()));
    }
    aot_profile.validate()?;
    pi_profile.validate()?;
    let mut rng = seed::rng_from(seed);
    let agents = (0..n)
        .map(|i| {
            let aot = sample_trait(aot_profile, &mut rng)?;
            let pi = sample_trait(pi_profile, &mut rng)?;
            instantiate_persona(i, aot, pi, &background_pool[i % background_pool.len()], template)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Community {
        id: id.to_string(),
        profiles: CommunityProfiles {
            aot: aot_profile.clone(),
            pi: pi_profile.clone(),
        },
        agents,
    })
}

/// The sixteen community types, AOT-major: G01 = Low/Liberal ... G16 =
/// Polarized/Conservative.
pub fn community_grid() -> Vec<(String, ProfileName, ProfileName)> {
    const AOT: [ProfileName; 4] = [
        ProfileName::AotLow,
        ProfileName::AotCenter,
        ProfileName::AotHigh,
        ProfileName::AotPolarized,
    ];
    const PI: [ProfileName; 4] = [
        ProfileName::PiLiberal,
        ProfileName::PiCenter,
        ProfileName::PiPolarized,
        ProfileName::PiConservative,
    ];
    let mut grid = Vec::with_capacity(16);
    for (a, aot) in AOT.iter().enumerate() {
        for (p, pi) in PI.iter().enumerate() {
            grid.push((format!("G{:02}", a * 4 + p + 1), *aot, *pi));
        }
    }
    grid
}

/// Look up a community type by id.
pub fn community_type(id: &str) -> Option<(ProfileName, ProfileName)> {
    community_grid()
        .into_iter()
        .find(|(gid, _, _)| gid == id)
        .map(|(_, a, p)| (a, p))
}
