//! TOML run configuration.
//!
//! A single file determines a run completely; the only external input is
//! the remote API key, read from the environment. Relative paths resolve
//! against the directory of the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{AgentBackend, ReferenceBackend, ReferenceParams, RemoteChatBackend, RemoteConfig};
use crate::claims::{self, Claim, CREDIBILITY_THRESHOLD};
use crate::community::{community_type, default_backgrounds, Background, DistributionProfile, PersonaTemplate};
use crate::engine::SimulationParams;
use crate::error::{Error, Result};
use crate::interventions::ArmConfig;

pub const DESK_CONFIG: &str = include_str!("../assets/configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: String,
    #[serde(default)]
    pub master_seed: u64,
    pub community: CommunitySection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub claims: ClaimSection,
    #[serde(default = "default_arms")]
    pub arms: Vec<ArmConfig>,
    #[serde(default)]
    pub calibration: CalibrationSection,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_arms() -> Vec<ArmConfig> {
    vec![ArmConfig::control()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunitySection {
    /// Grid ids (`G01`..`G16`); empty selects all sixteen.
    #[serde(default)]
    pub ids: Vec<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    /// JSON array of background profiles; bundled pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backgrounds: Option<String>,
    /// Persona template text file; bundled template when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Communities with explicit trait distributions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub custom: Vec<CustomCommunity>,
}

fn default_n() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCommunity {
    pub id: String,
    pub aot: DistributionProfile,
    pub pi: DistributionProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub k: usize,
    pub p_rewire: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection { k: 6, p_rewire: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub rounds: usize,
    pub rho: f64,
    pub seeds: Vec<u64>,
    /// Concurrent backend calls within a round.
    #[serde(default = "one")]
    pub in_flight: usize,
    #[serde(default = "default_attempts")]
    pub attempts: usize,
}

fn one() -> usize {
    1
}
fn default_attempts() -> usize {
    crate::backend::DEFAULT_ATTEMPTS
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            rounds: 10,
            rho: 0.1,
            seeds: vec![0, 1, 2, 3, 4],
            in_flight: 1,
            attempts: default_attempts(),
        }
    }
}

impl SimulationSection {
    pub fn params(&self) -> SimulationParams {
        SimulationParams {
            rounds: self.rounds,
            rho: self.rho,
            in_flight: self.in_flight,
            attempts: self.attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Reference,
    Remote,
}

impl BackendKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reference" => Some(BackendKind::Reference),
            "remote" => Some(BackendKind::Remote),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

impl BackendSection {
    pub fn build(&self) -> Result<Box<dyn AgentBackend>> {
        match self.kind {
            BackendKind::Reference => Ok(Box::new(ReferenceBackend::new(self.reference.clone().unwrap_or_default()))),
            BackendKind::Remote => {
                let remote = self
                    .remote
                    .clone()
                    .ok_or_else(|| Error::Config("backend.kind = \"remote\" needs a [backend.remote] table".into()))?;
                Ok(Box::new(RemoteChatBackend::new(remote)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSection {
    /// Claim pool JSON; bundled desk pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
    /// Claim to inject; when absent, the highest-credibility retained claim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_id: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    CREDIBILITY_THRESHOLD
}

impl Default for ClaimSection {
    fn default() -> Self {
        ClaimSection {
            pool: None,
            claim_id: None,
            threshold: CREDIBILITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub iterations: usize,
    /// Agents per 5×5 trait cell.
    pub per_cell: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub in_flight: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            iterations: 10,
            per_cell: 20,
            seed: 0,
            in_flight: 1,
        }
    }
}

impl RunConfig {
    /// Parse and validate, resolving paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    /// The bundled desk configuration.
    pub fn desk() -> Self {
        Self::from_toml(DESK_CONFIG, Path::new(".")).expect("bundled desk config is valid")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    /// SHA-256 of the canonical serialization, excluding the output
    /// directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir.clear();
        let text = canonical.to_toml().unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.output_dir.trim().is_empty() {
            return cfg("output_dir is empty".into());
        }
        for id in &self.community.ids {
            if community_type(id).is_none() && !self.community.custom.iter().any(|c| &c.id == id) {
                return cfg(format!("unknown community id {id}"));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &self.community.custom {
            c.aot.validate()?;
            c.pi.validate()?;
            if community_type(&c.id).is_some() || !seen.insert(c.id.as_str()) {
                return cfg(format!("custom community id {} collides with another community", c.id));
            }
        }
        if self.community.n <= self.graph.k {
            return cfg(format!(
                "community size {} must exceed ring degree {}",
                self.community.n, self.graph.k
            ));
        }
        if self.graph.k < 2 || !self.graph.k.is_multiple_of(2) {
            return cfg(format!("graph.k must be even and at least 2, got {}", self.graph.k));
        }
        if !(0.0..=1.0).contains(&self.graph.p_rewire) {
            return cfg(format!("graph.p_rewire {} outside [0, 1]", self.graph.p_rewire));
        }
        let sim = &self.simulation;
        if sim.rounds == 0 {
            return cfg("simulation.rounds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&sim.rho) {
            return cfg(format!("simulation.rho {} outside [0, 1]", sim.rho));
        }
        if sim.seeds.is_empty() {
            return cfg("simulation.seeds is empty".into());
        }
        if sim.seeds.iter().collect::<BTreeSet<_>>().len() != sim.seeds.len() {
            return cfg("simulation.seeds has duplicates".into());
        }
        if sim.in_flight == 0 {
            return cfg("simulation.in_flight must be at least 1".into());
        }
        if self.backend.kind == BackendKind::Remote {
            let Some(remote) = &self.backend.remote else {
                return cfg("backend.kind = \"remote\" needs a [backend.remote] table".into());
            };
            if remote.endpoint.trim().is_empty() || remote.model.trim().is_empty() {
                return cfg("backend.remote needs endpoint and model".into());
            }
            if !(0.0..=2.0).contains(&remote.temperature) {
                return cfg(format!("backend.remote.temperature {} outside [0, 2]", remote.temperature));
            }
        }
        if self.arms.is_empty() {
            return cfg("at least one arm is required".into());
        }
        let ids: BTreeSet<String> = self.arms.iter().map(ArmConfig::id).collect();
        if ids.len() != self.arms.len() {
            return cfg("arms contain duplicates".into());
        }
        if self.arms.iter().any(|a| a.start_round == 0) {
            return cfg("arm start_round must be at least 1".into());
        }
        if self.calibration.iterations == 0 || self.calibration.per_cell == 0 {
            return cfg("calibration.iterations and calibration.per_cell must be at least 1".into());
        }
        for (key, path) in [
            ("community.backgrounds", &self.community.backgrounds),
            ("community.template", &self.community.template),
            ("claims.pool", &self.claims.pool),
        ] {
            if let Some(p) = path {
                let resolved = self.resolve(p);
                if !resolved.is_file() {
                    return cfg(format!("{key}: file {} does not exist", resolved.display()));
                }
            }
        }
        Ok(())
    }

    /// `(id, aot profile, pi profile)` for each selected community.
    pub fn communities(&self) -> Vec<(String, DistributionProfile, DistributionProfile)> {
        let mut ids = self.community.ids.clone();
        if ids.is_empty() {
            ids = crate::community::community_grid().into_iter().map(|(id, _, _)| id).collect();
            ids.extend(self.community.custom.iter().map(|c| c.id.clone()));
        }
        ids.into_iter()
            .map(|id| match community_type(&id) {
                Some((a, p)) => {
                    let (a, p) = (DistributionProfile::standard(a), DistributionProfile::standard(p));
                    (id, a, p)
                }
                None => {
                    let c = self.community.custom.iter().find(|c| c.id == id).expect("validated id");
                    (id, c.aot.clone(), c.pi.clone())
                }
            })
            .collect()
    }

    pub fn backgrounds(&self) -> Result<Vec<Background>> {
        match &self.community.backgrounds {
            None => Ok(default_backgrounds().to_vec()),
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let pool: Vec<Background> = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if pool.is_empty() {
                    return Err(Error::Config(format!("{}: background pool is empty", path.display())));
                }
                Ok(pool)
            }
        }
    }

    pub fn template(&self) -> Result<PersonaTemplate> {
        match &self.community.template {
            None => Ok(PersonaTemplate::standard()),
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                PersonaTemplate::new(text.trim_end().to_string(), 0)
            }
        }
    }

    pub fn pool(&self) -> Result<Vec<Claim>> {
        match &self.claims.pool {
            None => Ok(claims::desk_pool()),
            Some(p) => claims::load_pool(&self.resolve(p)),
        }
    }

    /// The claim to inject: `claim_id` if set, else the retained claim
    /// with the highest average credibility (ties by id).
    pub fn claim(&self) -> Result<Claim> {
        let pool = self.pool()?;
        if let Some(id) = &self.claims.claim_id {
            return pool
                .into_iter()
                .find(|c| &c.id == id)
                .ok_or_else(|| Error::Config(format!("claim {id} not found in pool")));
        }
        let retained = claims::filter_pool(&pool, self.claims.threshold);
        retained
            .into_iter()
            .max_by(|a, b| {
                a.avg_credibility
                    .total_cmp(&b.avg_credibility)
                    .then_with(|| b.id.cmp(&a.id))
            })
            .ok_or_else(|| Error::Config("no claim passes the credibility threshold".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid_and_round_trips() {
        let config = RunConfig::desk();
        let text = config.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(config.communities().len(), 16);
        assert_eq!(config.claim().unwrap().id, "M12");
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = Path::new(".");
        let ok = "output_dir = \"o\"\n[community]\nn = 20\n";
        assert!(RunConfig::from_toml(ok, base).is_ok());
        for bad in [
            "output_dir = \"o\"\n[community]\nn = 4\n",
            "output_dir = \"o\"\n[community]\nids = [\"G99\"]\n",
            "output_dir = \"o\"\n[community]\n[simulation]\nrounds = 10\nrho = 1.5\nseeds = [0]\n",
            "output_dir = \"o\"\n[community]\n[simulation]\nrounds = 10\nrho = 0.1\nseeds = [1, 1]\n",
            "output_dir = \"o\"\n[community]\n[backend]\nkind = \"remote\"\n",
            "output_dir = \"o\"\n[community]\n[claims]\npool = \"missing.json\"\n",
            "output_dir = \"o\"\n[community]\nunknown = 1\n",
            "output_dir = \"o\"\n[community]\n[[arms]]\nkind = \"control\"\n[[arms]]\nkind = \"control\"\n",
        ] {
            assert!(matches!(RunConfig::from_toml(bad, base), Err(Error::Config(_))), "{bad}");
        }
    }
}
