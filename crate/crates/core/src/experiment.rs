//! Parameter sweeps over arrival rate, departure rate and state size,
//! producing the focal player's utility as a function of the number of
//! other players present.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, GameConfig};
use crate::dynamics::{build_w_unchecked, build_z_unchecked};
use crate::equilibrium::{scenario1_policy, scenario2_policy, sne};
use crate::error::{GameError, Result};
use crate::montecarlo::estimate_utilities;
use crate::policy::Policy;
use crate::solver::{solve_for_space, SolverOptions, UtilityVector};
use crate::state_space::{Mode, PlayerSet, State, StateSpace};

pub const CSV_HEADER: [&str; 10] = [
    "scenario",
    "n_others",
    "lambda",
    "mu",
    "mpe_utility",
    "sne_utility",
    "mc_mean",
    "mc_stderr",
    "residual",
    "iterations",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Lambda,
    Mu,
    /// Number of present players including the focal one.
    StateSize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    Mpe,
    Sne,
    Mc,
}

/// Sweep description as read from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Inline base configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ConfigFile>,
    /// Base configuration file, relative to the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_path: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    pub modes: Vec<OutputMode>,
    #[serde(default)]
    pub mc_episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// State-space mode; reduced for homogeneous configs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

/// A spec with its base configuration resolved and checked.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub base: GameConfig,
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    /// Selected numbers of other players; `None` means all of them.
    pub n_others: Option<Vec<usize>>,
    pub modes: Vec<OutputMode>,
    pub mc_episodes: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub space: StateSpace,
    pub options: SolverOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub scenario: &'static str,
    pub n_others: usize,
    pub lambda: f64,
    pub mu: f64,
    pub mpe_utility: Option<f64>,
    pub sne_utility: Option<f64>,
    pub mc_mean: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
}

fn invalid(msg: impl Into<String>) -> GameError {
    GameError::InvalidExperiment(msg.into())
}

impl ExperimentSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GameError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|source| GameError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        if let (Some(rel), Some(dir)) = (&spec.base_path, path.parent()) {
            if rel.is_relative() {
                spec.base_path = Some(dir.join(rel));
            }
        }
        Ok(spec)
    }

    /// Resolves the base config and validates the sweep.
    pub fn resolve(&self) -> Result<Experiment> {
        let base = match (&self.base, &self.base_path) {
            (Some(file), None) => file
                .clone()
                .into_config()
                .map_err(|e| invalid(format!("base: {e}")))?,
            (None, Some(path)) => GameConfig::load(path)?,
            _ => return Err(invalid("exactly one of `base` and `base_path` is required")),
        };
        base.ensure_valid()?;
        if base.n_players() == 0 {
            return Err(invalid("the base config has no players"));
        }
        if self.modes.is_empty() {
            return Err(invalid("modes must not be empty"));
        }
        if self.modes.contains(&OutputMode::Mc) && self.mc_episodes == 0 {
            return Err(invalid("mc mode needs mc_episodes >= 1"));
        }
        if let Some(tol) = self.tol {
            if tol.is_nan() || tol <= 0.0 {
                return Err(invalid("tol must be positive"));
            }
        }

        let mut lambdas = None;
        let mut mus = None;
        let mut sizes = None;
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(invalid(format!("{:?} sweep has no values", axis.parameter)));
            }
            if axis.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid(format!(
                    "{:?} sweep values must be positive",
                    axis.parameter
                )));
            }
            let slot = match axis.parameter {
                SweepParameter::Lambda => &mut lambdas,
                SweepParameter::Mu => &mut mus,
                SweepParameter::StateSize => &mut sizes,
            };
            if slot.replace(axis.values.clone()).is_some() {
                return Err(invalid(format!("{:?} is swept twice", axis.parameter)));
            }
        }

        let n = base.n_players();
        let n_others = match sizes {
            None => None,
            Some(values) => Some(
                values
                    .iter()
                    .map(|&v| {
                        if v.fract() != 0.0 || v < 1.0 || v > n as f64 {
                            Err(invalid(format!(
                                "state_size {v} must be an integer in 1..={n}"
                            )))
                        } else {
                            Ok(v as usize - 1)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };

        let first = &base.players[0];
        let mode = match self.mode {
            Some(mode) => mode,
            None if base.homogeneous().is_some() => Mode::Reduced,
            None => Mode::Exact,
        };
        let space = StateSpace::for_config(&base, mode)?;
        let mut options = SolverOptions::default();
        if let Some(tol) = self.tol {
            options.tol = tol;
        }
        Ok(Experiment {
            lambdas: lambdas.unwrap_or_else(|| vec![first.arrival_rate]),
            mus: mus.unwrap_or_else(|| vec![first.departure_rate]),
            base,
            n_others,
            modes: self.modes.clone(),
            mc_episodes: self.mc_episodes,
            seed: self.seed,
            output: self.output.clone(),
            space,
            options,
        })
    }
}

/// State with the focal player (index 0) and `others` further players present.
fn focal_state(space: &StateSpace, others: usize) -> State {
    match space {
        StateSpace::Exact { .. } => State::Subset(PlayerSet::from_bits((1u64 << (others + 1)) - 1)),
        StateSpace::Reduced { .. } => State::Lumped {
            focal_present: true,
            others,
        },
    }
}

fn mpe_policy(config: &GameConfig, space: &StateSpace) -> Result<Policy> {
    if config.scenario.is_scenario1() {
        scenario1_policy(config, space)
    } else {
        Ok(scenario2_policy(config, space)?.0)
    }
}

/// SNE utility of the focal player among players `0..size`.
fn sne_value(config: &GameConfig, size: usize) -> Result<f64> {
    let mut sub = config.clone();
    sub.players.truncate(size);
    let members: Vec<usize> = (0..size).collect();
    Ok(sne(&sub, &members)?.utilities[0].utility.values[0])
}

/// Derives a per-row seed so that rows use unrelated streams.
fn row_seed(seed: u64, point: usize, others: usize) -> u64 {
    let mut z = seed ^ ((point as u64) << 32 | others as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Experiment {
    fn wants(&self, mode: OutputMode) -> bool {
        self.modes.contains(&mode)
    }

    fn run_point(&self, point: usize, lambda: f64, mu: f64) -> Result<Vec<ExperimentRow>> {
        let config = self.base.with_rates(lambda, mu);
        let space = self.space;
        let n = config.n_players();
        let others: Vec<usize> = match &self.n_others {
            Some(list) => list.clone(),
            None => (0..n).collect(),
        };
        let scenario = config.scenario.label();

        let mut policy = None;
        let mut utility: Option<std::result::Result<UtilityVector, GameError>> = None;
        if self.wants(OutputMode::Mpe) || self.wants(OutputMode::Mc) {
            let p = mpe_policy(&config, &space)?;
            if self.wants(OutputMode::Mpe) {
                let w = build_w_unchecked(&config, &p, &space);
                let z = build_z_unchecked(&config, &p, &space, 0);
                let solved = solve_for_space(&w, &z, &space, self.options);
                if let Err(e) = &solved {
                    log::warn!("lambda={lambda} mu={mu}: {e}; utilities reported as NaN");
                }
                utility = Some(solved);
            }
            policy = Some(p);
        }

        others
            .into_iter()
            .map(|k| {
                let state = focal_state(&space, k);
                let ord = space.ordinal(&state)?;
                let mut row = ExperimentRow {
                    scenario,
                    n_others: k,
                    lambda,
                    mu,
                    mpe_utility: None,
                    sne_utility: None,
                    mc_mean: None,
                    mc_stderr: None,
                    residual: None,
                    iterations: None,
                };
                match &utility {
                    Some(Ok(u)) => {
                        row.mpe_utility = Some(u.values[ord]);
                        row.residual = Some(u.residual);
                        row.iterations = Some(u.iterations);
                    }
                    Some(Err(GameError::NonConvergence {
                        iterations,
                        residual,
                    })) => {
                        row.mpe_utility = Some(f64::NAN);
                        row.residual = Some(*residual);
                        row.iterations = Some(*iterations);
                    }
                    Some(Err(_)) => {
                        row.mpe_utility = Some(f64::NAN);
                        row.residual = Some(f64::NAN);
                    }
                    None => {}
                }
                if self.wants(OutputMode::Sne) {
                    row.sne_utility = Some(sne_value(&config, k + 1)?);
                }
                if let (true, Some(p)) = (self.wants(OutputMode::Mc), &policy) {
                    let est = estimate_utilities(
                        &config,
                        &space,
                        p,
                        &state,
                        self.mc_episodes,
                        row_seed(self.seed, point, k),
                    )?;
                    row.mc_mean = Some(est.mean[0]);
                    row.mc_stderr = Some(est.std_error[0]);
                }
                Ok(row)
            })
            .collect()
    }

    /// Runs every sweep point; rows come back sorted by (lambda, mu, n_others).
    pub fn run(&self) -> Result<ExperimentResult> {
        let points: Vec<(f64, f64)> = self
            .lambdas
            .iter()
            .flat_map(|&l| self.mus.iter().map(move |&m| (l, m)))
            .collect();
        let chunks: Vec<Vec<ExperimentRow>> = points
            .par_iter()
            .enumerate()
            .map(|(i, &(l, m))| self.run_point(i, l, m))
            .collect::<Result<_>>()?;
        let mut rows: Vec<ExperimentRow> = chunks.into_iter().flatten().collect();
        rows.sort_by(|a, b| {
            a.lambda
                .total_cmp(&b.lambda)
                .then(a.mu.total_cmp(&b.mu))
                .then(a.n_others.cmp(&b.n_others))
        });
        Ok(ExperimentResult { rows })
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.resolve()?.run()
}

/// Fixed 17-significant-digit rendering.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl ExperimentResult {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.scenario.to_string(),
                r.n_others.to_string(),
                format_float(r.lambda),
                format_float(r.mu),
                cell(r.mpe_utility),
                cell(r.sne_utility),
                cell(r.mc_mean),
                cell(r.mc_stderr),
                cell(r.residual),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|source| GameError::Io {
            path: PathBuf::from("<csv>"),
            source,
        })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Rows with the given rates, in increasing `n_others`.
    pub fn curve(&self, lambda: f64, mu: f64) -> Vec<&ExperimentRow> {
        self.rows
            .iter()
            .filter(|r| r.lambda == lambda && r.mu == mu)
            .collect()
    }
}

/// Least-squares slope of `ln y` against `ln x` over points with both positive.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> ExperimentSpec {
        ExperimentSpec::from_json_str(json).unwrap()
    }

    const BASE_S2: &str = r#"{"reward": 100000.0, "fixed_power": 1e-6,
        "scenario": {"type": "scenario2", "beta": 0.1},
        "homogeneous": {"count": 12, "cost": 0.003, "arrival_rate": 10.0,
                        "departure_rate": 10.0, "max_power": 1e9}}"#;

    #[test]
    fn sne_only_single_row() {
        let s = spec(&format!(
            r#"{{"base": {BASE_S2}, "sweep": [{{"parameter": "state_size", "values": [10]}}],
                "modes": ["sne"]}}"#
        ));
        let result = run_experiment(&s).unwrap();
        assert_eq!(result.rows.len(), 1);
        let row = &result.rows[0];
        assert_eq!(row.n_others, 9);
        assert!((row.sne_utility.unwrap() - 1000.0).abs() < 1e-3);
        assert!(row.mpe_utility.is_none() && row.mc_mean.is_none());
        let csv = result.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let cells: Vec<_> = lines.next().unwrap().split(',').collect();
        assert_eq!(cells[0], "scenario2");
        assert_eq!(cells[4], "");
        assert_eq!(cells[9], "");
    }

    #[test]
    fn rows_cover_every_point_and_are_sorted() {
        let s = spec(&format!(
            r#"{{"base": {BASE_S2}, "sweep": [{{"parameter": "lambda", "values": [10, 1]}},
                {{"parameter": "mu", "values": [100, 1]}}], "modes": ["mpe", "sne"]}}"#
        ));
        let result = run_experiment(&s).unwrap();
        assert_eq!(result.rows.len(), 4 * 12);
        let keys: Vec<_> = result
            .rows
            .iter()
            .map(|r| (r.lambda, r.mu, r.n_others))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, sorted);
        for curve in [result.curve(1.0, 1.0), result.curve(10.0, 100.0)] {
            for pair in curve.windows(2) {
                assert!(pair[1].mpe_utility.unwrap() < pair[0].mpe_utility.unwrap());
            }
        }
    }

    #[test]
    fn mc_rows_are_deterministic() {
        let s = spec(
            r#"{"base": {"reward": 10.0, "fixed_power": 1.0,
                "scenario": {"type": "scenario1", "gamma": 1.0},
                "homogeneous": {"count": 3, "cost": 0.5, "arrival_rate": 1.0,
                                "departure_rate": 2.0, "max_power": 2.0}},
                "modes": ["mpe", "mc"], "mc_episodes": 2000, "seed": 5}"#,
        );
        let a = run_experiment(&s).unwrap().to_csv_string().unwrap();
        let b = run_experiment(&s).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for bad in [
            format!(r#"{{"base": {BASE_S2}, "modes": []}}"#),
            format!(r#"{{"base": {BASE_S2}, "modes": ["mc"]}}"#),
            format!(
                r#"{{"base": {BASE_S2}, "modes": ["mpe"], "sweep": [{{"parameter": "mu", "values": [-1]}}]}}"#
            ),
            format!(
                r#"{{"base": {BASE_S2}, "modes": ["mpe"], "sweep": [{{"parameter": "state_size", "values": [13]}}]}}"#
            ),
            format!(
                r#"{{"base": {BASE_S2}, "modes": ["mpe"], "sweep": [{{"parameter": "mu", "values": [1]}}, {{"parameter": "mu", "values": [2]}}]}}"#
            ),
            r#"{"modes": ["mpe"]}"#.to_string(),
        ] {
            assert!(spec(&bad).resolve().is_err(), "{bad}");
        }
        assert!(ExperimentSpec::from_json_str(r#"{"modes": ["mpe"], "bogus": 1}"#).is_err());
    }

    #[test]
    fn float_rendering_has_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(1000.0), "1.0000000000000000e3");
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<_> = (1..20)
            .map(|k| (k as f64, 5.0 * (k as f64).powf(-1.5)))
            .collect();
        assert!((log_log_slope(&pts).unwrap() + 1.5).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 1.0)]).is_none());
    }
}
