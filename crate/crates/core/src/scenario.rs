//! Experiment descriptions and their TOML file format.
//!
//! A scenario file describes client groups (count, hardware class,
//! cardinality range, reliability), the synthetic task, the strategy and the
//! run parameters. [`parse_scenario_str`] expands it into one fully resolved
//! [`Scenario`] per seed; [`Scenario::to_file`] writes a resolved scenario
//! back out with one entry per client, so the round trip is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::model::{ClientId, ClientProfile, HardwareClass};
use crate::strategy::{ApodotikoConfig, FedBuffConfig, FedLesScanConfig, StrategyKind, SyncConfig};
use crate::task::TaskOptions;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown bundled scenario {0:?}")]
    UnknownBundled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    fn invalid(msg: impl Into<String>) -> Self {
        ScenarioError::Validation(msg.into())
    }
}

/// Local learning rate, absolute or as a fraction of `1 / λ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    Absolute(f64),
    RelativeToCurvature(f64),
}

/// Stopping target on the global loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTarget {
    Absolute(f64),
    /// `L* + gap · (L(w₀) − L*)`.
    RelativeGap(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
    pub lr: LearningRate,
    pub options: TaskOptions,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyParams {
    pub apodotiko: ApodotikoConfig,
    pub fedlesscan: FedLesScanConfig,
    pub fedbuff: FedBuffConfig,
    pub fedprox: SyncConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub clients: Vec<ClientProfile>,
    pub task: TaskParams,
    pub strategy: StrategyKind,
    pub params: StrategyParams,
    pub clients_per_round: usize,
    pub max_rounds: u64,
    pub target: Option<LossTarget>,
    pub round_timeout: f64,
    pub idle_threshold: f64,
    pub per_invocation_cost: f64,
}

pub const DEFAULT_IDLE_THRESHOLD: f64 = 600.0;
pub const DEFAULT_ROUND_TIMEOUT: f64 = 600.0;
pub const DEFAULT_MAX_ROUNDS: u64 = 500;
pub const DEFAULT_PER_INVOCATION_COST: f64 = 4e-7;

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.clients.is_empty() {
            return Err(ScenarioError::invalid("scenario has no clients"));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.id.index() != i {
                return Err(ScenarioError::invalid(format!("client {i} has id {}", c.id)));
            }
            c.validate().map_err(|e| ScenarioError::invalid(e.to_string()))?;
        }
        if self.clients_per_round == 0 {
            return Err(ScenarioError::invalid("clients_per_round must be at least 1"));
        }
        if self.clients_per_round > self.clients.len() {
            return Err(ScenarioError::invalid(format!(
                "clients_per_round {} exceeds pool size {}",
                self.clients_per_round,
                self.clients.len()
            )));
        }
        if self.max_rounds == 0 {
            return Err(ScenarioError::invalid("max_rounds must be at least 1"));
        }
        if !(self.round_timeout > 0.0 && self.round_timeout.is_finite()) {
            return Err(ScenarioError::invalid("round_timeout must be positive"));
        }
        if !(self.idle_threshold >= 0.0) {
            return Err(ScenarioError::invalid("idle_threshold must be non-negative"));
        }
        if !(self.per_invocation_cost >= 0.0) {
            return Err(ScenarioError::invalid("per_invocation_cost must be non-negative"));
        }
        if self.task.dim == 0 {
            return Err(ScenarioError::invalid("task dim must be at least 1"));
        }
        if !(self.task.spread >= 0.0) {
            return Err(ScenarioError::invalid("task spread must be non-negative"));
        }
        match self.task.lr {
            LearningRate::Absolute(v) | LearningRate::RelativeToCurvature(v) if !(v > 0.0) => {
                return Err(ScenarioError::invalid("learning rate must be positive"))
            }
            _ => {}
        }
        match self.target {
            Some(LossTarget::Absolute(v)) if !(v >= 0.0) => {
                return Err(ScenarioError::invalid("target_loss must be non-negative"))
            }
            Some(LossTarget::RelativeGap(v)) if !(v >= 0.0) => {
                return Err(ScenarioError::invalid("target_gap must be non-negative"))
            }
            _ => {}
        }
        self.task
            .options
            .validate()
            .map_err(|e| ScenarioError::invalid(e.to_string()))?;
        let p = &self.params;
        p.apodotiko.validate().map_err(|e| ScenarioError::invalid(e.to_string()))?;
        p.fedlesscan.validate().map_err(|e| ScenarioError::invalid(e.to_string()))?;
        p.fedbuff.validate().map_err(|e| ScenarioError::invalid(e.to_string()))?;
        p.fedprox.validate().map_err(|e| ScenarioError::invalid(e.to_string()))?;
        Ok(())
    }

    pub fn with_strategy(&self, strategy: StrategyKind) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.clients.iter().map(|c| c.cardinality).collect()
    }

    /// Writes the scenario as a file with one client entry per client.
    pub fn to_file(&self) -> ScenarioFile {
        let mut hardware: Vec<HardwareEntry> = Vec::new();
        for c in &self.clients {
            if !hardware.iter().any(|h| h.name == c.hardware.name) {
                hardware.push(HardwareEntry {
                    name: c.hardware.name.clone(),
                    capacity: c.hardware.cef_capacity,
                    cold_penalty: c.hardware.cold_penalty,
                    cost_rate: Some(c.hardware.cost_rate),
                    gpu_hourly_rate: None,
                    gpu_fraction: None,
                });
            }
        }
        let clients = self
            .clients
            .iter()
            .map(|c| ClientGroup {
                count: 1,
                hardware: c.hardware.name.clone(),
                cardinality: CardinalitySpec::Fixed(c.cardinality),
                epochs: c.epochs,
                batch_size: c.batch_size,
                dropout: c.dropout_prob,
                slow_factor: c.slow_factor,
            })
            .collect();
        let (lr, lr_relative) = match self.task.lr {
            LearningRate::Absolute(v) => (Some(v), None),
            LearningRate::RelativeToCurvature(v) => (None, Some(v)),
        };
        let (target_loss, target_gap) = match self.target {
            Some(LossTarget::Absolute(v)) => (Some(v), None),
            Some(LossTarget::RelativeGap(v)) => (None, Some(v)),
            None => (None, None),
        };
        ScenarioFile {
            name: Some(self.name.clone()),
            hardware,
            clients,
            task: TaskSection {
                dim: self.task.dim,
                spread: self.task.spread,
                seed: Some(self.task.seed),
                lr,
                lr_relative,
                eig_range: Some(self.task.options.eig_range),
                center_scale: Some(self.task.options.center_scale),
            },
            strategy: StrategySection {
                name: self.strategy,
                apodotiko: Some(self.params.apodotiko.clone()),
                fedlesscan: Some(self.params.fedlesscan.clone()),
                fedbuff: Some(FedBuffSection {
                    buffer_size: Some(self.params.fedbuff.buffer_size),
                    buffer_ratio: None,
                    staleness: Some(self.params.fedbuff.staleness),
                }),
                fedprox: Some(self.params.fedprox.clone()),
            },
            run: RunSection {
                clients_per_round: self.clients_per_round,
                max_rounds: Some(self.max_rounds),
                target_loss,
                target_gap,
                round_timeout: Some(self.round_timeout),
                idle_threshold: Some(self.idle_threshold),
                per_invocation_cost: Some(self.per_invocation_cost),
                seeds: vec![self.seed],
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub hardware: Vec<HardwareEntry>,
    pub clients: Vec<ClientGroup>,
    pub task: TaskSection,
    pub strategy: StrategySection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareEntry {
    pub name: String,
    /// Model updates per second.
    pub capacity: f64,
    #[serde(default)]
    pub cold_penalty: f64,
    /// Currency per second; alternatively derived from a GPU hourly rate
    /// and the allocated GPU fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_hourly_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_fraction: Option<f64>,
}

impl HardwareEntry {
    fn resolve(&self) -> Result<HardwareClass, ScenarioError> {
        let cost_rate = match (self.cost_rate, self.gpu_hourly_rate, self.gpu_fraction) {
            (Some(rate), None, None) => rate,
            (None, Some(hourly), fraction) => hourly / 3600.0 * fraction.unwrap_or(1.0),
            (None, None, None) => 0.0,
            _ => {
                return Err(ScenarioError::invalid(format!(
                    "hardware {:?}: give either cost_rate or gpu_hourly_rate (+ gpu_fraction)",
                    self.name
                )))
            }
        };
        let class = HardwareClass::new(self.name.clone(), self.capacity, self.cold_penalty, cost_rate);
        class.validate().map_err(|e| ScenarioError::invalid(e.to_string()))?;
        Ok(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CardinalitySpec {
    Fixed(u32),
    Range([u32; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientGroup {
    pub count: usize,
    pub hardware: String,
    pub cardinality: CardinalitySpec,
    #[serde(default = "one")]
    pub epochs: u32,
    pub batch_size: u32,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub slow_factor: f64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub dim: usize,
    #[serde(default)]
    pub spread: f64,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_relative: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eig_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedBuffSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staleness: Option<crate::aggregation::StalenessPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub name: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apodotiko: Option<ApodotikoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fedlesscan: Option<FedLesScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fedbuff: Option<FedBuffSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fedprox: Option<SyncConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(alias = "k")]
    pub clients_per_round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_timeout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_invocation_cost: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ScenarioFile {
    /// Expands the file into one scenario per seed.
    pub fn resolve(&self, fallback_name: &str) -> Result<Vec<Scenario>, ScenarioError> {
        let mut classes = BTreeMap::new();
        for h in &self.hardware {
            if classes.insert(h.name.clone(), h.resolve()?).is_some() {
                return Err(ScenarioError::invalid(format!("duplicate hardware class {:?}", h.name)));
            }
        }
        if self.run.seeds.is_empty() {
            return Err(ScenarioError::invalid("run.seeds must not be empty"));
        }
        let lr = match (self.task.lr, self.task.lr_relative) {
            (Some(v), None) => LearningRate::Absolute(v),
            (None, Some(v)) => LearningRate::RelativeToCurvature(v),
            (None, None) => LearningRate::RelativeToCurvature(0.5),
            _ => return Err(ScenarioError::invalid("give either task.lr or task.lr_relative")),
        };
        let target = match (self.run.target_loss, self.run.target_gap) {
            (Some(v), None) => Some(LossTarget::Absolute(v)),
            (None, Some(v)) => Some(LossTarget::RelativeGap(v)),
            (None, None) => None,
            _ => return Err(ScenarioError::invalid("give either run.target_loss or run.target_gap")),
        };
        let defaults = TaskOptions::default();
        let options = TaskOptions {
            eig_range: self.task.eig_range.unwrap_or(defaults.eig_range),
            center_scale: self.task.center_scale.unwrap_or(defaults.center_scale),
        };
        let k = self.run.clients_per_round;
        let fedbuff = match &self.strategy.fedbuff {
            None => FedBuffConfig::default(),
            Some(section) => {
                let mut cfg = match (section.buffer_size, section.buffer_ratio) {
                    (Some(size), None) => FedBuffConfig {
                        buffer_size: size,
                        ..Default::default()
                    },
                    (None, Some(ratio)) => FedBuffConfig::from_ratio(ratio, k),
                    (None, None) => FedBuffConfig::default(),
                    _ => {
                        return Err(ScenarioError::invalid(
                            "give either fedbuff.buffer_size or fedbuff.buffer_ratio",
                        ))
                    }
                };
                if let Some(policy) = section.staleness {
                    cfg.staleness = policy;
                }
                cfg
            }
        };
        let params = StrategyParams {
            apodotiko: self.strategy.apodotiko.clone().unwrap_or_default(),
            fedlesscan: self.strategy.fedlesscan.clone().unwrap_or_default(),
            fedbuff,
            fedprox: self.strategy.fedprox.clone().unwrap_or_default(),
        };

        let mut scenarios = Vec::with_capacity(self.run.seeds.len());
        for &seed in &self.run.seeds {
            let clients = self.build_clients(&classes, seed)?;
            let scenario = Scenario {
                name: self.name.clone().unwrap_or_else(|| fallback_name.to_string()),
                seed,
                clients,
                task: TaskParams {
                    dim: self.task.dim,
                    spread: self.task.spread,
                    seed: self.task.seed.unwrap_or(seed),
                    lr,
                    options: options.clone(),
                },
                strategy: self.strategy.name,
                params: params.clone(),
                clients_per_round: k,
                max_rounds: self.run.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
                target,
                round_timeout: self.run.round_timeout.unwrap_or(DEFAULT_ROUND_TIMEOUT),
                idle_threshold: self.run.idle_threshold.unwrap_or(DEFAULT_IDLE_THRESHOLD),
                per_invocation_cost: self.run.per_invocation_cost.unwrap_or(DEFAULT_PER_INVOCATION_COST),
            };
            scenario.validate()?;
            scenarios.push(scenario);
        }
        Ok(scenarios)
    }

    fn build_clients(
        &self,
        classes: &BTreeMap<String, HardwareClass>,
        seed: u64,
    ) -> Result<Vec<ClientProfile>, ScenarioError> {
        // Pool draws use their own stream so the pool only depends on the seed.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(POOL_STREAM);
        let mut clients = Vec::new();
        for group in &self.clients {
            let hardware = classes
                .get(&group.hardware)
                .ok_or_else(|| ScenarioError::invalid(format!("unknown hardware class {:?}", group.hardware)))?;
            let (lo, hi) = match group.cardinality {
                CardinalitySpec::Fixed(n) => (n, n),
                CardinalitySpec::Range([lo, hi]) => (lo, hi),
            };
            if lo > hi {
                return Err(ScenarioError::invalid(format!("cardinality range [{lo}, {hi}] is empty")));
            }
            for _ in 0..group.count {
                let cardinality = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                clients.push(ClientProfile {
                    id: ClientId(clients.len() as u32),
                    hardware: hardware.clone(),
                    cardinality,
                    batch_size: group.batch_size,
                    epochs: group.epochs,
                    dropout_prob: group.dropout,
                    slow_factor: group.slow_factor,
                });
            }
        }
        Ok(clients)
    }
}

const POOL_STREAM: u64 = 1;

pub fn parse_scenario_str(text: &str, fallback_name: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    file.resolve(fallback_name)
}

/// Parses a scenario file, or a bundled scenario when `path` names one.
pub fn parse_scenario(path: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    if !path.exists() {
        if let Some(text) = bundled_source(&path.to_string_lossy()) {
            return parse_scenario_str(text, &name);
        }
    }
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text, &name)
}

pub const BUNDLED: [(&str, &str); 4] = [
    ("homogeneous", include_str!("../scenarios/homogeneous.toml")),
    (
        "heterogeneous-130-50-20",
        include_str!("../scenarios/heterogeneous-130-50-20.toml"),
    ),
    ("straggler-30pct", include_str!("../scenarios/straggler-30pct.toml")),
    ("straggler-70pct", include_str!("../scenarios/straggler-70pct.toml")),
];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled(name: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let text = bundled_source(name).ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))?;
    parse_scenario_str(text, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[hardware]]
        name = "cpu"
        capacity = 1.0

        [[clients]]
        count = 4
        hardware = "cpu"
        cardinality = 20
        batch_size = 10

        [task]
        dim = 2

        [strategy]
        name = "apodotiko"

        [run]
        clients_per_round = 2
    "#;

    #[test]
    fn minimal_file_gets_defaults() {
        let scenarios = parse_scenario_str(MINIMAL, "minimal").unwrap();
        assert_eq!(scenarios.len(), 1);
        let s = &scenarios[0];
        assert_eq!(s.name, "minimal");
        assert_eq!(s.params.apodotiko.rho, 0.2);
        assert_eq!(s.params.apodotiko.concurrency_ratio, 0.3);
        assert_eq!(s.idle_threshold, 600.0);
        assert_eq!(s.clients.len(), 4);
        assert_eq!(s.clients[3].id, ClientId(3));
    }

    #[test]
    fn k_larger_than_pool_is_rejected() {
        let text = MINIMAL.replace("clients_per_round = 2", "clients_per_round = 500");
        assert!(matches!(
            parse_scenario_str(&text, "x"),
            Err(ScenarioError::Validation(_))
        ));
    }

    #[test]
    fn seeds_fan_out() {
        let text = MINIMAL.replace("clients_per_round = 2", "clients_per_round = 2\nseeds = [1, 2, 3]");
        let scenarios = parse_scenario_str(&text, "x").unwrap();
        assert_eq!(scenarios.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        let mut a = scenarios[0].clone();
        a.seed = 2;
        a.task.seed = 2;
        assert_eq!(a, scenarios[1]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("dim = 2", "dim = 2\nbogus = 1");
        assert!(matches!(parse_scenario_str(&text, "x"), Err(ScenarioError::Parse(_))));
        let text = MINIMAL.replace("name = \"apodotiko\"", "name = \"apodotiko\"\n[strategy.apodotiko]\nrhoo = 0.1");
        assert!(matches!(parse_scenario_str(&text, "x"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn gpu_cost_rate_from_fraction() {
        let text = MINIMAL.replace(
            "capacity = 1.0",
            "capacity = 1.0\ngpu_hourly_rate = 1.46\ngpu_fraction = 0.4",
        );
        let s = &parse_scenario_str(&text, "x").unwrap()[0];
        assert!((s.clients[0].hardware.cost_rate - 1.46 / 3600.0 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            let scenarios = bundled(name).unwrap();
            assert!(!scenarios.is_empty(), "{name}");
        }
        assert!(bundled("nope").is_err());
    }

    #[test]
    fn resolved_scenario_round_trips() {
        for (name, _) in BUNDLED {
            for s in bundled(name).unwrap().into_iter().take(2) {
                let text = s.to_toml();
                let back = parse_scenario_str(&text, "ignored").unwrap();
                assert_eq!(back, vec![s]);
            }
        }
    }
}
