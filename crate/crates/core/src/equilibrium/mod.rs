//! Markov perfect equilibria of both scenarios, statewise Nash baselines and
//! a numerical best-response verifier.

mod scenario1;
mod scenario2;
mod verify;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use scenario1::{mpe_scenario1, scenario1_policy, scenario1_sne_limit, threshold_investment};
pub use scenario2::{
    closed_form_investment, construct_active_set, mpe_scenario2, psi_quadratic_residual, psi_value,
    scenario2_policy, scenario2_sne_limit, ActiveSet,
};
pub use verify::{certify, verify_best_response, DEFAULT_GRID_POINTS, VERIFY_TOL_FACTOR};

use crate::config::{GameConfig, Scenario};
use crate::dynamics::{build_w_unchecked, build_z_unchecked};
use crate::error::{GameError, Result};
use crate::policy::Policy;
use crate::solver::{solve_for_space, SolverOptions, UtilityVector};
use crate::state_space::StateSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Mpe,
    Sne,
}

/// Best-response gap of one player in one state: the largest utility gain
/// found by deviating there alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub state: usize,
    pub player: usize,
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumFlags {
    /// Some closed-form investment hit its cap and was clamped.
    pub projected: bool,
    /// Number of (state, slot) entries that were clamped.
    pub clamped_slots: usize,
    /// Non-empty states in which no player passed the Scenario-2 membership test.
    pub empty_active_sets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerUtility {
    pub player: usize,
    pub utility: UtilityVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub kind: EquilibriumKind,
    /// State space of the policy; `None` for a single-state SNE.
    pub space: Option<StateSpace>,
    pub policy: Policy,
    /// Exact mode: every player. Reduced mode: the focal player only.
    pub utilities: Vec<PlayerUtility>,
    pub certificates: Vec<Certificate>,
    pub flags: EquilibriumFlags,
}

impl EquilibriumResult {
    pub fn utility(&self, player: usize) -> Option<&UtilityVector> {
        self.utilities
            .iter()
            .find(|u| u.player == player)
            .map(|u| &u.utility)
    }

    /// Largest certificate gap, if any were computed.
    pub fn max_gap(&self) -> Option<f64> {
        self.certificates.iter().map(|c| c.gap).reduce(f64::max)
    }
}

/// MPE of whichever scenario `config` describes.
pub fn mpe(
    config: &GameConfig,
    space: &StateSpace,
    options: SolverOptions,
) -> Result<EquilibriumResult> {
    match config.scenario {
        Scenario::Scenario1 { .. } => mpe_scenario1(config, space, options),
        _ => mpe_scenario2(config, space, options),
    }
}

/// Players whose utilities are reported for a space.
fn reported_players(space: &StateSpace) -> Vec<usize> {
    match space {
        StateSpace::Exact { n_players } => (0..*n_players).collect(),
        StateSpace::Reduced { .. } => vec![0],
    }
}

pub(crate) fn solve_players(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    options: SolverOptions,
) -> Result<Vec<PlayerUtility>> {
    let w = build_w_unchecked(config, policy, space);
    reported_players(space)
        .into_par_iter()
        .map(|player| {
            let z = build_z_unchecked(config, policy, space, player);
            let utility = solve_for_space(&w, &z, space, options)?;
            Ok(PlayerUtility { player, utility })
        })
        .collect()
}

pub(crate) fn check_setup(config: &GameConfig, space: &StateSpace) -> Result<()> {
    config.ensure_valid()?;
    space.check(config)
}

/// Statewise Nash equilibrium of the static game among `members`, with
/// arrivals and departures switched off.
///
/// The policy has a single row with one slot per player of `config`;
/// utilities are reported for every player (zero for non-members).
pub fn sne(config: &GameConfig, members: &[usize]) -> Result<EquilibriumResult> {
    config.ensure_valid()?;
    let n = config.n_players();
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != members.len() || sorted.last().is_some_and(|&j| j >= n) {
        return Err(GameError::MalformedState(format!(
            "SNE members {members:?} must be distinct indices below {n}"
        )));
    }

    let mut flags = EquilibriumFlags::default();
    let mut row = vec![0.0; n];
    let gamma_total = match &config.scenario {
        Scenario::Scenario1 { gamma } => {
            for &j in &sorted {
                row[j] = threshold_investment(config, j);
            }
            let power: f64 = row.iter().sum::<f64>() + config.fixed_power;
            gamma * power
        }
        Scenario::Scenario2 { .. } | Scenario::Scenario2General { .. } => {
            let beta = scenario2::rate_for_members(config, &sorted)?;
            let costs: Vec<_> = sorted
                .iter()
                .map(|&j| (j, config.players[j].cost))
                .collect();
            let (x, active) =
                scenario2::state_investments(&costs, config.reward, beta, config.fixed_power);
            for (&j, xj) in sorted.iter().zip(x) {
                let cap = config.players[j].max_power;
                if xj > cap {
                    flags.clamped_slots += 1;
                }
                row[j] = xj.min(cap);
            }
            if active.members.is_empty() && !sorted.is_empty() {
                flags.empty_active_sets.push(0);
            }
            beta
        }
    };
    flags.projected = flags.clamped_slots > 0;

    let psi: f64 = row.iter().sum::<f64>() + config.fixed_power;
    let utilities = (0..n)
        .map(|j| {
            let x = row[j];
            let value = if x == 0.0 {
                0.0
            } else {
                let per_time = match &config.scenario {
                    Scenario::Scenario1 { gamma } => {
                        (gamma * config.reward - config.players[j].cost) * x
                    }
                    _ => (gamma_total * config.reward / psi - config.players[j].cost) * x,
                };
                per_time / gamma_total
            };
            PlayerUtility {
                player: j,
                utility: UtilityVector {
                    values: vec![value],
                    residual: 0.0,
                    iterations: 0,
                },
            }
        })
        .collect();

    Ok(EquilibriumResult {
        kind: EquilibriumKind::Sne,
        space: None,
        policy: Policy::from_fn(1, n, |_, j| row[j]),
        utilities,
        certificates: Vec::new(),
        flags,
    })
}
