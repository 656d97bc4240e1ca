//! Game parameters, scenario selection and configuration validation.
//!
//! A [`GameConfig`] describes the universal set of strategic players, the
//! reward, the aggregate power `ℓ` of the always-present fixed players and
//! the reward scenario. Configs are read from and written to JSON; see
//! [`ConfigFile`] for the on-disk schema.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::state_space::PlayerSet;

/// Reward used in the default calibration (12.5 BTC at ~$8000).
pub const CALIBRATED_REWARD: f64 = 1e5;
/// Solve rate constant γ and run-termination rate β of the calibration (per minute).
pub const CALIBRATED_RATE: f64 = 0.1;
/// Cost per unit power per minute of one ASIC in the calibration.
pub const CALIBRATED_COST: f64 = 0.003;
/// Number of strategic miners in the calibration.
pub const CALIBRATED_PLAYERS: usize = 10_000;

/// Parameters of one strategic player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerParams {
    pub id: u64,
    /// Cost per unit power per unit time.
    pub cost: f64,
    /// Rate at which the player arrives while absent.
    pub arrival_rate: f64,
    /// Rate at which the player departs while present.
    pub departure_rate: f64,
    /// Investment cap.
    pub max_power: f64,
}

impl PlayerParams {
    /// Same economics and dynamics, ignoring the identifier.
    pub fn same_type_as(&self, other: &PlayerParams) -> bool {
        self.cost == other.cost
            && self.arrival_rate == other.arrival_rate
            && self.departure_rate == other.departure_rate
            && self.max_power == other.max_power
    }
}

/// State-dependent run-termination rate `f(S)` of the generalized Scenario 2.
#[derive(Clone, Debug, PartialEq)]
pub enum RateFunction {
    /// `f(S) = value` for every state.
    Constant(f64),
    /// `f(S) = scale · |S ∪ {k}|`, counting the aggregate fixed player.
    ProportionalToSize(f64),
    /// Explicit per-state table keyed by the player-index bitmask of `S`.
    Table {
        rates: BTreeMap<u64, f64>,
        default: Option<f64>,
    },
}

impl RateFunction {
    pub fn depends_only_on_size(&self) -> bool {
        !matches!(self, RateFunction::Table { .. })
    }

    /// Rate for an explicit set of present players.
    pub fn rate(&self, members: PlayerSet) -> f64 {
        match self {
            RateFunction::Constant(v) => *v,
            RateFunction::ProportionalToSize(scale) => scale * (members.len() + 1) as f64,
            RateFunction::Table { rates, default } => rates
                .get(&members.bits())
                .copied()
                .or(*default)
                .unwrap_or(f64::NAN),
        }
    }

    /// Rate as a function of the number of present players, when it exists.
    pub fn rate_for_size(&self, size: usize) -> Option<f64> {
        match self {
            RateFunction::Constant(v) => Some(*v),
            RateFunction::ProportionalToSize(scale) => Some(scale * (size + 1) as f64),
            RateFunction::Table { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    /// Reward `r` for solving; solve rate `γ(Σx + ℓ)`.
    Scenario1 { gamma: f64 },
    /// Reward `rβ` per unit time shared by power; run ends at rate `β`.
    Scenario2 { beta: f64 },
    /// Scenario 2 with `β` replaced by a state-dependent `f(S)`.
    Scenario2General { rate: RateFunction },
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Scenario1 { .. } => "scenario1",
            Scenario::Scenario2 { .. } => "scenario2",
            Scenario::Scenario2General { .. } => "scenario2_general",
        }
    }

    pub fn is_scenario1(&self) -> bool {
        matches!(self, Scenario::Scenario1 { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameConfig {
    /// The universal set of strategic players; list order is the canonical index.
    pub players: Vec<PlayerParams>,
    pub reward: f64,
    /// Aggregate power `ℓ` of the fixed players.
    pub fixed_power: f64,
    pub scenario: Scenario,
}

/// One invariant violation reported by [`validate_config`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

fn positive(value: f64) -> bool {
    value.is_finite() && value > 0.0
}

fn non_negative(value: f64) -> bool {
    value.is_finite() && value >= 0.0
}

/// Returns every invariant violation of `config`; an empty list means the
/// config is usable by every solver and simulator in this crate.
pub fn validate_config(config: &GameConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if !positive(config.reward) {
        out.push(Violation::new("reward", "reward must be strictly positive"));
    }
    if !positive(config.fixed_power) {
        out.push(Violation::new(
            "fixed_power",
            "fixed_power must be strictly positive",
        ));
    }
    match &config.scenario {
        Scenario::Scenario1 { gamma } => {
            if !positive(*gamma) {
                out.push(Violation::new(
                    "scenario.gamma",
                    "gamma must be strictly positive",
                ));
            }
        }
        Scenario::Scenario2 { beta } => {
            if !positive(*beta) {
                out.push(Violation::new(
                    "scenario.beta",
                    "beta must be strictly positive",
                ));
            }
        }
        Scenario::Scenario2General { rate } => validate_rate_function(rate, config, &mut out),
    }

    let mut seen = HashSet::with_capacity(config.players.len());
    for (index, p) in config.players.iter().enumerate() {
        let field = |name: &str| format!("players[{index}].{name}");
        if !seen.insert(p.id) {
            out.push(Violation::new(
                field("id"),
                format!("duplicate player id {}", p.id),
            ));
        }
        if !positive(p.cost) {
            out.push(Violation::new(
                field("cost"),
                "cost must be strictly positive",
            ));
        }
        if !positive(p.max_power) {
            out.push(Violation::new(
                field("max_power"),
                "max_power must be strictly positive",
            ));
        }
        if !non_negative(p.arrival_rate) {
            out.push(Violation::new(
                field("arrival_rate"),
                "arrival_rate must be non-negative",
            ));
        }
        if !non_negative(p.departure_rate) {
            out.push(Violation::new(
                field("departure_rate"),
                "departure_rate must be non-negative",
            ));
        }
    }
    out
}

fn validate_rate_function(rate: &RateFunction, config: &GameConfig, out: &mut Vec<Violation>) {
    match rate {
        RateFunction::Constant(v) => {
            if !positive(*v) {
                out.push(Violation::new(
                    "scenario.value",
                    "constant rate must be strictly positive",
                ));
            }
        }
        RateFunction::ProportionalToSize(scale) => {
            if !positive(*scale) {
                out.push(Violation::new(
                    "scenario.scale",
                    "scale must be strictly positive",
                ));
            }
        }
        RateFunction::Table { rates, default } => {
            if let Some(d) = default {
                if !positive(*d) {
                    out.push(Violation::new(
                        "scenario.default",
                        "default rate must be strictly positive",
                    ));
                }
            }
            let n = config.players.len();
            for (mask, value) in rates {
                if n < 64 && *mask >> n != 0 {
                    out.push(Violation::new(
                        "scenario.table",
                        format!("entry {mask:#b} references players outside the universal set"),
                    ));
                }
                if !positive(*value) {
                    out.push(Violation::new(
                        "scenario.table",
                        format!("rate for entry {mask:#b} must be strictly positive"),
                    ));
                }
            }
            if default.is_none() {
                let total = n < 64 && rates.len() as u128 == 1u128 << n;
                if !total {
                    out.push(Violation::new(
                        "scenario.table",
                        "table does not cover every subset and no default is given",
                    ));
                }
            }
        }
    }
}

impl GameConfig {
    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate_config(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(GameError::InvalidConfig(violations))
        }
    }

    /// The shared parameters when every player has the same cost, rates and cap.
    pub fn homogeneous(&self) -> Option<&PlayerParams> {
        let first = self.players.first()?;
        self.players
            .iter()
            .all(|p| p.same_type_as(first))
            .then_some(first)
    }

    /// `count` identical players with the calibrated reward, rate and cost.
    pub fn calibrated(
        scenario1: bool,
        count: usize,
        arrival_rate: f64,
        departure_rate: f64,
        max_power: f64,
        fixed_power: f64,
    ) -> Self {
        let scenario = if scenario1 {
            Scenario::Scenario1 {
                gamma: CALIBRATED_RATE,
            }
        } else {
            Scenario::Scenario2 {
                beta: CALIBRATED_RATE,
            }
        };
        GameConfig {
            players: homogeneous_players(
                0,
                count,
                CALIBRATED_COST,
                arrival_rate,
                departure_rate,
                max_power,
            ),
            reward: CALIBRATED_REWARD,
            fixed_power,
            scenario,
        }
    }

    /// Copy with every player's arrival and departure rate replaced.
    pub fn with_rates(&self, arrival_rate: f64, departure_rate: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.players {
            p.arrival_rate = arrival_rate;
            p.departure_rate = departure_rate;
        }
        out
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, ConfigError> {
        let file: ConfigFile = serde_json::from_str(text).map_err(ConfigError::Json)?;
        file.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GameError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            ConfigError::Json(source) => GameError::Json {
                path: path.to_path_buf(),
                source,
            },
            ConfigError::Invalid(v) => GameError::InvalidConfig(v),
        })
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile::from_config(self)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("config serializes")
    }
}

fn homogeneous_players(
    first_id: u64,
    count: usize,
    cost: f64,
    arrival_rate: f64,
    departure_rate: f64,
    max_power: f64,
) -> Vec<PlayerParams> {
    (0..count as u64)
        .map(|k| PlayerParams {
            id: first_id + k,
            cost,
            arrival_rate,
            departure_rate,
            max_power,
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Json(serde_json::Error),
    #[error("{}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// On-disk JSON schema of a [`GameConfig`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub reward: f64,
    pub fixed_power: f64,
    pub scenario: ScenarioFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub players: Vec<PlayerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneous: Option<HomogeneousFile>,
}

/// Expands to `count` identical players appended after the explicit list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogeneousFile {
    pub count: usize,
    pub cost: f64,
    pub arrival_rate: f64,
    pub departure_rate: f64,
    pub max_power: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioFile {
    Scenario1 {
        gamma: f64,
    },
    Scenario2 {
        beta: f64,
    },
    Scenario2General {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preset: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<Vec<TableEntry>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<f64>,
    },
}

/// Rate of one explicit state, given by the ids of its present players.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub players: Vec<u64>,
    pub rate: f64,
}

impl ConfigFile {
    pub fn into_config(self) -> std::result::Result<GameConfig, ConfigError> {
        let mut players = self.players;
        if let Some(h) = self.homogeneous {
            let first_id = players.iter().map(|p| p.id + 1).max().unwrap_or(0);
            players.extend(homogeneous_players(
                first_id,
                h.count,
                h.cost,
                h.arrival_rate,
                h.departure_rate,
                h.max_power,
            ));
        }
        let scenario = match self.scenario {
            ScenarioFile::Scenario1 { gamma } => Scenario::Scenario1 { gamma },
            ScenarioFile::Scenario2 { beta } => Scenario::Scenario2 { beta },
            ScenarioFile::Scenario2General {
                preset,
                value,
                scale,
                table,
                default,
            } => Scenario::Scenario2General {
                rate: rate_function_from_file(&players, preset, value, scale, table, default)
                    .map_err(|v| ConfigError::Invalid(vec![v]))?,
            },
        };
        Ok(GameConfig {
            players,
            reward: self.reward,
            fixed_power: self.fixed_power,
            scenario,
        })
    }

    pub fn from_config(config: &GameConfig) -> Self {
        let compressible = config.homogeneous().filter(|_| {
            config
                .players
                .iter()
                .enumerate()
                .all(|(k, p)| p.id == k as u64)
        });
        let (players, homogeneous) = match compressible {
            Some(p) => (
                Vec::new(),
                Some(HomogeneousFile {
                    count: config.players.len(),
                    cost: p.cost,
                    arrival_rate: p.arrival_rate,
                    departure_rate: p.departure_rate,
                    max_power: p.max_power,
                }),
            ),
            None => (config.players.clone(), None),
        };
        let scenario = match &config.scenario {
            Scenario::Scenario1 { gamma } => ScenarioFile::Scenario1 { gamma: *gamma },
            Scenario::Scenario2 { beta } => ScenarioFile::Scenario2 { beta: *beta },
            Scenario::Scenario2General { rate } => {
                let (preset, value, scale, table, default) = match rate {
                    RateFunction::Constant(v) => {
                        (Some("constant".into()), Some(*v), None, None, None)
                    }
                    RateFunction::ProportionalToSize(s) => (
                        Some("proportional_to_size".into()),
                        None,
                        Some(*s),
                        None,
                        None,
                    ),
                    RateFunction::Table { rates, default } => {
                        let entries = rates
                            .iter()
                            .map(|(mask, rate)| TableEntry {
                                players: PlayerSet::from_bits(*mask)
                                    .iter()
                                    .map(|i| config.players[i].id)
                                    .collect(),
                                rate: *rate,
                            })
                            .collect();
                        (None, None, None, Some(entries), *default)
                    }
                };
                ScenarioFile::Scenario2General {
                    preset,
                    value,
                    scale,
                    table,
                    default,
                }
            }
        };
        ConfigFile {
            reward: config.reward,
            fixed_power: config.fixed_power,
            scenario,
            players,
            homogeneous,
        }
    }
}

fn rate_function_from_file(
    players: &[PlayerParams],
    preset: Option<String>,
    value: Option<f64>,
    scale: Option<f64>,
    table: Option<Vec<TableEntry>>,
    default: Option<f64>,
) -> std::result::Result<RateFunction, Violation> {
    match (preset.as_deref(), table) {
        (Some("constant"), None) => value
            .map(RateFunction::Constant)
            .ok_or_else(|| Violation::new("scenario.value", "preset \"constant\" needs a value")),
        (Some("proportional_to_size"), None) => {
            scale.map(RateFunction::ProportionalToSize).ok_or_else(|| {
                Violation::new(
                    "scenario.scale",
                    "preset \"proportional_to_size\" needs a scale",
                )
            })
        }
        (Some(other), None) => Err(Violation::new(
            "scenario.preset",
            format!("unknown preset {other:?} (expected \"constant\" or \"proportional_to_size\")"),
        )),
        (None, Some(entries)) => {
            let index: HashMap<u64, usize> =
                players.iter().enumerate().map(|(k, p)| (p.id, k)).collect();
            let mut rates = BTreeMap::new();
            for entry in entries {
                let mut set = PlayerSet::empty();
                for id in &entry.players {
                    match index.get(id) {
                        Some(&k) if k < 64 => set.insert(k),
                        Some(_) => {
                            return Err(Violation::new(
                                "scenario.table",
                                "tables support at most 64 players",
                            ))
                        }
                        None => {
                            return Err(Violation::new(
                                "scenario.table",
                                format!("unknown player id {id}"),
                            ))
                        }
                    }
                }
                if rates.insert(set.bits(), entry.rate).is_some() {
                    return Err(Violation::new(
                        "scenario.table",
                        format!("duplicate entry for players {:?}", entry.players),
                    ));
                }
            }
            Ok(RateFunction::Table { rates, default })
        }
        (Some(_), Some(_)) => Err(Violation::new(
            "scenario",
            "give either a preset or a table, not both",
        )),
        (None, None) => Err(Violation::new(
            "scenario",
            "scenario2_general needs a preset or a table",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calibrated() -> GameConfig {
        GameConfig::calibrated(true, 3, 1.0, 1.0, 100.0, 1.0)
    }

    #[test]
    fn calibrated_config_is_valid() {
        assert!(validate_config(&calibrated()).is_empty());
        assert!(
            validate_config(&GameConfig::calibrated(false, 10, 10.0, 10.0, 1e6, 1e-6)).is_empty()
        );
    }

    #[test]
    fn zero_fixed_power_is_rejected() {
        let mut c = calibrated();
        c.fixed_power = 0.0;
        let v = validate_config(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].reason, "fixed_power must be strictly positive");
    }

    #[test]
    fn negative_arrival_rate_is_rejected() {
        let mut c = calibrated();
        c.players[1].arrival_rate = -0.5;
        let v = validate_config(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "players[1].arrival_rate");
    }

    #[test]
    fn every_violation_is_reported() {
        let mut c = calibrated();
        c.reward = -1.0;
        c.players[0].cost = 0.0;
        c.players[2].max_power = f64::NAN;
        c.players[2].id = c.players[0].id;
        c.scenario = Scenario::Scenario1 { gamma: 0.0 };
        let fields: Vec<_> = validate_config(&c).into_iter().map(|v| v.field).collect();
        assert_eq!(
            fields,
            [
                "reward",
                "scenario.gamma",
                "players[0].cost",
                "players[2].id",
                "players[2].max_power"
            ]
        );
        assert_eq!(validate_config(&c).len(), 5, "validation is pure");
    }

    #[test]
    fn homogeneous_block_expands() {
        let text = r#"{
            "reward": 100000, "fixed_power": 1,
            "scenario": {"type": "scenario1", "gamma": 0.1},
            "players": [{"id": 7, "cost": 1, "arrival_rate": 0, "departure_rate": 0, "max_power": 5}],
            "homogeneous": {"count": 2, "cost": 0.003, "arrival_rate": 10, "departure_rate": 10, "max_power": 100}
        }"#;
        let c = GameConfig::from_json_str(text).unwrap();
        assert_eq!(c.n_players(), 3);
        assert_eq!(c.players[1].id, 8);
        assert_eq!(c.players[2].id, 9);
        assert!(c.homogeneous().is_none());
        assert!(validate_config(&c).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let c = GameConfig::calibrated(false, 4, 10.0, 1.0, 1e6, 1e-6);
        let back = GameConfig::from_json_str(&c.to_json_string()).unwrap();
        assert_eq!(back, c);

        let mut het = calibrated();
        het.players[1].cost = 0.5;
        het.scenario = Scenario::Scenario2General {
            rate: RateFunction::Table {
                rates: [(0b000, 0.1), (0b011, 0.4)].into_iter().collect(),
                default: Some(0.2),
            },
        };
        let back = GameConfig::from_json_str(&het.to_json_string()).unwrap();
        assert_eq!(back, het);
    }

    #[test]
    fn general_scenario_presets_parse() {
        let text = r#"{"reward": 10, "fixed_power": 1,
            "scenario": {"type": "scenario2_general", "preset": "proportional_to_size", "scale": 0.05},
            "homogeneous": {"count": 2, "cost": 1, "arrival_rate": 1, "departure_rate": 1, "max_power": 10}}"#;
        let c = GameConfig::from_json_str(text).unwrap();
        match &c.scenario {
            Scenario::Scenario2General { rate } => {
                assert_eq!(rate.rate(PlayerSet::from_bits(0b11)), 0.05 * 3.0);
                assert_eq!(rate.rate_for_size(0), Some(0.05));
            }
            other => panic!("unexpected {other:?}"),
        }

        let bad = text.replace("proportional_to_size", "quadratic");
        assert!(matches!(
            GameConfig::from_json_str(&bad),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn partial_table_without_default_is_rejected() {
        let mut c = calibrated();
        c.scenario = Scenario::Scenario2General {
            rate: RateFunction::Table {
                rates: [(0b0, 0.1)].into_iter().collect(),
                default: None,
            },
        };
        let v = validate_config(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "scenario.table");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"reward": 10, "fixed_power": 1, "bogus": 3,
            "scenario": {"type": "scenario2", "beta": 0.1}}"#;
        assert!(matches!(
            GameConfig::from_json_str(text),
            Err(ConfigError::Json(_))
        ));
    }
}
