//! Experiment configuration: a TOML file with one table per concern.

use std::fmt;
use std::path::Path;

use hetlb::model::{
    bump_surface, validate_breaks, ArrivalRateFunction, Bump, MembershipMap, RateFunction,
    StepwiseRateFunction,
};
use hetlb::simulator::InitialState;
use serde::{Deserialize, Serialize};

/// The reference configuration shipped with the binary.
pub const REFERENCE_CONFIG: &str = include_str!("../configs/reference.toml");

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub rate_function: RateFunctionConfig,
    pub arrival: ArrivalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<ScenariosConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couple: Option<CoupleConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Dispatchers per server; `W = round(xi * N)`.
    #[serde(default = "one")]
    pub xi: f64,
    #[serde(default)]
    pub dispatcher_map: MapConfig,
    #[serde(default)]
    pub server_map: MapConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapConfig {
    #[default]
    Equispaced,
    Uniform { seed: u64 },
    Explicit { values: Vec<f64> },
}

impl MapConfig {
    pub fn to_map(&self) -> MembershipMap {
        match self {
            MapConfig::Equispaced => MembershipMap::Equispaced,
            MapConfig::Uniform { seed } => MembershipMap::SeededUniform { seed: *seed },
            MapConfig::Explicit { values } => MembershipMap::Explicit(values.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateFunctionConfig {
    Constant { value: f64 },
    Stepwise { w_breaks: Vec<f64>, v_breaks: Vec<f64>, rates: Vec<Vec<f64>> },
    /// `base + sum_k a_k exp(-((x - x_k)^2 + (y - y_k)^2) / (2 s_k^2))`.
    Bumps { base: f64, bumps: Vec<BumpConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub amplitude: f64,
    pub x: f64,
    pub y: f64,
    pub width: f64,
}

impl RateFunctionConfig {
    pub fn build(&self) -> Result<RateFunction, ConfigError> {
        let f = match self {
            RateFunctionConfig::Constant { value } => StepwiseRateFunction::constant(*value).map(Into::into),
            RateFunctionConfig::Stepwise { w_breaks, v_breaks, rates } => {
                StepwiseRateFunction::new(w_breaks.clone(), v_breaks.clone(), rates.clone()).map(Into::into)
            }
            RateFunctionConfig::Bumps { base, bumps } => bump_surface(
                *base,
                bumps
                    .iter()
                    .map(|b| Bump { amplitude: b.amplitude, x: b.x, y: b.y, width: b.width })
                    .collect(),
            )
            .map(Into::into),
        };
        f.map_err(|e| ConfigError(format!("[rate_function]: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArrivalConfig {
    Constant { value: f64 },
    /// `slope * x + intercept`.
    Affine { slope: f64, intercept: f64 },
    Stepwise { breaks: Vec<f64>, values: Vec<f64> },
}

impl ArrivalConfig {
    pub fn build(&self) -> Result<ArrivalRateFunction, ConfigError> {
        match self {
            ArrivalConfig::Constant { value } => ArrivalRateFunction::constant(*value),
            ArrivalConfig::Affine { slope, intercept } => ArrivalRateFunction::affine(*slope, *intercept),
            ArrivalConfig::Stepwise { breaks, values } => {
                ArrivalRateFunction::stepwise(breaks.clone(), values.clone())
            }
        }
        .map_err(|e| ConfigError(format!("[arrival]: {e}")))
    }
}

/// A fixed partition for the group-based policies; `p` is solved for when omitted.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub w_breaks: Vec<f64>,
    pub v_breaks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub rho_star: f64,
    pub n_max: usize,
    /// Surface samples per axis and cell at the finest level.
    #[serde(default = "default_samples")]
    pub samples_per_axis: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { rho_star: 0.9, n_max: 4, samples_per_axis: default_samples() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Icrd,
    Spd,
    Jiq,
    Jfiq,
    Jfsq,
    Mindrift,
    Random,
}

impl PolicyName {
    pub const ALL: [PolicyName; 7] = [
        PolicyName::Icrd,
        PolicyName::Spd,
        PolicyName::Jiq,
        PolicyName::Jfiq,
        PolicyName::Jfsq,
        PolicyName::Mindrift,
        PolicyName::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Icrd => "icrd",
            PolicyName::Spd => "spd",
            PolicyName::Jiq => "jiq",
            PolicyName::Jfiq => "jfiq",
            PolicyName::Jfsq => "jfsq",
            PolicyName::Mindrift => "mindrift",
            PolicyName::Random => "random",
        }
    }

    /// Whether the policy needs a partition and routing matrix.
    pub fn needs_plan(self) -> bool {
        matches!(self, PolicyName::Icrd | PolicyName::Spd | PolicyName::Random)
    }
}

impl std::str::FromStr for PolicyName {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ConfigError(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum InitConfig {
    Empty,
    AllOne,
    HalfHalf,
}

impl InitConfig {
    pub fn state(self) -> InitialState {
        match self {
            InitConfig::Empty => InitialState::Empty,
            InitConfig::AllOne => InitialState::AllOne,
            InitConfig::HalfHalf => InitialState::HalfHalf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InitConfig::Empty => "empty",
            InitConfig::AllOne => "all-one",
            InitConfig::HalfHalf => "half-half",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub servers: usize,
    pub policies: Vec<PolicyName>,
    pub horizon: f64,
    pub sample_step: f64,
    pub replications: usize,
    /// Replication `r` runs with seed `seed + r`.
    pub seed: u64,
    pub warmup: f64,
    pub bad_rate_threshold: f64,
    pub init: InitConfig,
    #[serde(default = "default_l_cap")]
    pub l_cap: usize,
    /// Halvings of eps tried when an ICRD reservation overflows at this N.
    #[serde(default = "default_attempts")]
    pub reserve_attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_every: Option<u64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            servers: 50,
            policies: vec![PolicyName::Jiq],
            horizon: 100.0,
            sample_step: 1.0,
            replications: 1,
            seed: 1,
            warmup: 0.5,
            bad_rate_threshold: 0.5,
            init: InitConfig::Empty,
            l_cap: default_l_cap(),
            reserve_attempts: default_attempts(),
            audit_every: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    /// Ascending system sizes.
    pub servers: Vec<usize>,
    pub policies: Vec<PolicyName>,
    pub horizon: f64,
    pub sample_step: f64,
    #[serde(default = "default_init")]
    pub init: InitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenariosConfig {
    pub servers: usize,
    pub policy: PolicyName,
    pub inits: Vec<InitConfig>,
    pub horizon: f64,
    pub sample_step: f64,
    /// Largest tolerated tail-window gap between busy-fraction curves.
    #[serde(default = "default_band")]
    pub band: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CoupleMode {
    Faithful,
    IndependentDepartures,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoupleConfig {
    pub servers: usize,
    /// The slower system uses `slowdown * f`; must lie in `(0, 1]`.
    pub slowdown: f64,
    pub horizon: f64,
    #[serde(default = "default_mode")]
    pub mode: CoupleMode,
}

fn one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    16
}
fn default_l_cap() -> usize {
    hetlb::simulator::DEFAULT_L_CAP
}
fn default_attempts() -> usize {
    8
}
fn default_init() -> InitConfig {
    InitConfig::Empty
}
fn default_band() -> f64 {
    0.02
}
fn default_mode() -> CoupleMode {
    CoupleMode::Faithful
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn reference() -> Self {
        Self::from_toml(REFERENCE_CONFIG).expect("shipped config is valid")
    }

    /// The resolved configuration as TOML, for report headers.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dispatchers(&self, servers: usize) -> usize {
        ((self.instance.xi * servers as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inst = &self.instance;
        if !(inst.xi.is_finite() && inst.xi > 0.0) {
            return bad(format!("[instance] xi must be positive, got {}", inst.xi));
        }
        self.rate_function.build()?;
        self.arrival.build()?;
        if let Some(part) = &self.partition {
            validate_breaks(&part.w_breaks).or_else(|e| bad(format!("[partition] w_breaks: {e}")))?;
            validate_breaks(&part.v_breaks).or_else(|e| bad(format!("[partition] v_breaks: {e}")))?;
            if let Some(p) = &part.p {
                let (h, m) = (part.w_breaks.len() - 1, part.v_breaks.len() - 1);
                if p.len() != h || p.iter().any(|r| r.len() != m) {
                    return bad(format!("[partition] p must be {h} x {m}"));
                }
            }
        }
        let check = &self.check;
        if !(check.rho_star > 0.0 && check.rho_star < 1.0) {
            return bad(format!("[check] rho_star must be in (0, 1), got {}", check.rho_star));
        }
        if check.n_max == 0 {
            return bad("[check] n_max must be at least 1");
        }
        if check.samples_per_axis == 0 {
            return bad("[check] samples_per_axis must be at least 1");
        }
        let sim = &self.simulation;
        if sim.servers == 0 {
            return bad("[simulation] servers must be at least 1");
        }
        if sim.policies.is_empty() {
            return bad("[simulation] policies must not be empty");
        }
        positive_time("[simulation]", sim.horizon, sim.sample_step)?;
        if sim.replications == 0 {
            return bad("[simulation] replications must be at least 1");
        }
        if !(0.0..1.0).contains(&sim.warmup) {
            return bad(format!("[simulation] warmup must be in [0, 1), got {}", sim.warmup));
        }
        if !(sim.bad_rate_threshold >= 0.0 && sim.bad_rate_threshold.is_finite()) {
            return bad("[simulation] bad_rate_threshold must be finite and >= 0");
        }
        if let Some(s) = &self.scaling {
            if s.servers.is_empty() || s.servers.contains(&0) {
                return bad("[scaling] servers must be a non-empty list of positive sizes");
            }
            if s.servers.windows(2).any(|w| w[1] <= w[0]) {
                return bad("[scaling] servers must be strictly ascending");
            }
            if s.policies.is_empty() {
                return bad("[scaling] policies must not be empty");
            }
            positive_time("[scaling]", s.horizon, s.sample_step)?;
        }
        if let Some(s) = &self.scenarios {
            if s.servers == 0 || s.inits.is_empty() {
                return bad("[scenarios] need servers >= 1 and a non-empty inits list");
            }
            positive_time("[scenarios]", s.horizon, s.sample_step)?;
            if !(s.band >= 0.0) {
                return bad("[scenarios] band must be >= 0");
            }
        }
        if let Some(c) = &self.couple {
            if c.servers == 0 || !(c.slowdown > 0.0 && c.slowdown <= 1.0) {
                return bad("[couple] need servers >= 1 and slowdown in (0, 1]");
            }
            positive_time("[couple]", c.horizon, 1.0)?;
        }
        Ok(())
    }
}

fn positive_time(section: &str, horizon: f64, step: f64) -> Result<(), ConfigError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return bad(format!("{section} horizon must be positive, got {horizon}"));
    }
    if !(step.is_finite() && step > 0.0) {
        return bad(format!("{section} sample_step must be positive, got {step}"));
    }
    Ok(())
}
