//! Run configuration: one JSON document, every section optional.

use std::path::Path;

use anyhow::{Context, Result};
use quadhook::hyperopt::{default_scenarios, Method, SearchSpace, SwarmSettings};
use quadhook::model::SystemParams;
use quadhook::planner::MissionSpec;
use quadhook::sim::SimConfig;
use quadhook::verify::{BoundSettings, OperatingRegion, RoaSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Platform parameters; `m_L` here is ignored in favor of `payload_mass`.
    pub params: SystemParams,
    /// Mass of the payload picked up during the mission [kg].
    pub payload_mass: f64,
    pub mission: MissionSpec,
    pub sim: SimConfig,
    pub bounds: BoundsConfig,
    pub roa: RoaConfig,
    pub tune: TuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::hook_platform(),
            payload_mass: 0.075,
            mission: MissionSpec::nominal(),
            sim: SimConfig::default(),
            bounds: BoundsConfig::default(),
            roa: RoaConfig::default(),
            tune: TuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// State box with inputs near hover: thrust within 10% of hover, |tau| <= 0.01 N m.
    HoverInputs,
    /// State box with thrust in [0, 4 (m + m_L) g] and torques within 0.05 N m.
    Standard,
}

impl RegionKind {
    pub fn region(self, p: &SystemParams) -> OperatingRegion {
        match self {
            RegionKind::HoverInputs => OperatingRegion::hover_inputs(p),
            RegionKind::Standard => OperatingRegion::standard(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub region: RegionKind,
    pub settings: BoundSettings,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { region: RegionKind::HoverInputs, settings: BoundSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoaConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub settings: RoaSettings,
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self { n: 1000, beta: 1e-6, settings: RoaSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub method: Method,
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    pub grid: [usize; 4],
    pub swarm: SwarmSettings,
    /// Explicit scenarios; when absent the seeded default set is used.
    pub scenarios: Option<Vec<MissionSpec>>,
    pub scenario_seed: u64,
    /// Number of default scenarios to use (at most 6).
    pub scenario_count: usize,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        let s = SearchSpace::standard(Vec::new());
        Self {
            method: Method::Grid,
            lower: s.lower,
            upper: s.upper,
            grid: s.grid,
            swarm: s.swarm,
            scenarios: None,
            scenario_seed: 2024,
            scenario_count: 6,
            seed: 0,
        }
    }
}

impl TuneConfig {
    pub fn space(&self) -> SearchSpace {
        let scenarios = match &self.scenarios {
            Some(list) => list.clone(),
            None => default_scenarios(self.scenario_seed).into_iter().take(self.scenario_count).collect(),
        };
        SearchSpace { lower: self.lower, upper: self.upper, grid: self.grid, swarm: self.swarm, scenarios }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Platform parameters with the mission payload attached.
    pub fn loaded_params(&self) -> SystemParams {
        self.params.with_payload(self.payload_mass)
    }

    /// Overrides every seed in the configuration.
    pub fn apply_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.bounds.settings.seed = seed;
        self.roa.settings.seed = seed;
        self.tune.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"payload": 1}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(99);
        assert_eq!([cfg.sim.seed, cfg.bounds.settings.seed, cfg.roa.settings.seed, cfg.tune.seed], [99; 4]);
    }
}
