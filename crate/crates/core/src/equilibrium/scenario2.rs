//! Scenario-2 closed form: per state, the active set `Ŝ` of investing
//! players and the equilibrium total power `ψ = Σx + ℓ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GameConfig, Scenario};
use crate::error::{GameError, Result};
use crate::policy::Policy;
use crate::solver::SolverOptions;
use crate::state_space::{PlayerSet, State, StateSpace};

use super::{check_setup, solve_players, EquilibriumFlags, EquilibriumKind, EquilibriumResult};

/// Players of a state that invest a positive amount, and the resulting `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    /// Player indices in admission order (ascending cost, then index).
    pub members: Vec<usize>,
    pub psi: f64,
}

/// Positive root of `(Σc / rβ) ψ² − (m − 1) ψ − ℓ = 0`.
pub(crate) fn psi_from_sum(m: usize, cost_sum: f64, reward_rate: f64, ell: f64) -> f64 {
    let k = (m as f64) - 1.0;
    reward_rate * (k + (k * k + 4.0 * ell * cost_sum / reward_rate).sqrt()) / (2.0 * cost_sum)
}

/// `ψ` for the given active costs.
pub fn psi_value(active_costs: &[f64], r: f64, beta: f64, ell: f64) -> Result<f64> {
    if active_costs.is_empty() {
        return Err(GameError::Domain(
            "psi needs at least one active cost".into(),
        ));
    }
    if active_costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(GameError::Domain("active costs must be positive".into()));
    }
    if !(r > 0.0 && beta > 0.0 && ell > 0.0) {
        return Err(GameError::Domain("r, beta and ell must be positive".into()));
    }
    let sum: f64 = active_costs.iter().sum();
    Ok(psi_from_sum(active_costs.len(), sum, r * beta, ell))
}

/// Relative residual of the defining quadratic at `psi`.
pub fn psi_quadratic_residual(active_costs: &[f64], r: f64, beta: f64, ell: f64, psi: f64) -> f64 {
    let sum: f64 = active_costs.iter().sum();
    let m = active_costs.len() as f64;
    let a = sum / (r * beta) * psi * psi;
    let b = (m - 1.0) * psi;
    (a - b - ell).abs() / a.abs().max(b.abs()).max(ell)
}

/// Admits players of a state in ascending cost (ties by index) while the
/// newly admitted player satisfies `c_j < rβ/ψ` for the enlarged set.
///
/// `costs` holds `(player index, cost)` for the players present in the state.
/// With no admissible player the set is empty and `ψ = ℓ`.
pub fn construct_active_set(costs: &[(usize, f64)], r: f64, beta: f64, ell: f64) -> ActiveSet {
    let mut sorted = costs.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let reward_rate = r * beta;
    let mut members = Vec::new();
    let mut sum = 0.0;
    let mut psi = ell;
    for (index, cost) in sorted {
        let candidate = psi_from_sum(members.len() + 1, sum + cost, reward_rate, ell);
        if cost < reward_rate / candidate {
            members.push(index);
            sum += cost;
            psi = candidate;
        } else {
            break;
        }
    }
    ActiveSet { members, psi }
}

/// Interior investment `max{ψ(1 − cψ/(rβ)), 0}`.
pub fn closed_form_investment(cost: f64, psi: f64, r: f64, beta: f64) -> f64 {
    (psi * (1.0 - cost * psi / (r * beta))).max(0.0)
}

/// Investments of the players of one state (same order as `costs`) and the active set.
pub(crate) fn state_investments(
    costs: &[(usize, f64)],
    r: f64,
    beta: f64,
    ell: f64,
) -> (Vec<f64>, ActiveSet) {
    let active = construct_active_set(costs, r, beta, ell);
    let x = costs
        .iter()
        .map(|&(index, cost)| {
            if active.members.contains(&index) {
                closed_form_investment(cost, active.psi, r, beta)
            } else {
                0.0
            }
        })
        .collect();
    (x, active)
}

/// Per-time reward rate `β` (or `f(S)`) for a set of present players.
pub(crate) fn rate_for_members(config: &GameConfig, members: &[usize]) -> Result<f64> {
    match &config.scenario {
        Scenario::Scenario2 { beta } => Ok(*beta),
        Scenario::Scenario2General { rate } => match rate.rate_for_size(members.len()) {
            Some(v) => Ok(v),
            None => {
                let set = PlayerSet::from_indices(members)?;
                Ok(rate.rate(set))
            }
        },
        Scenario::Scenario1 { .. } => Err(GameError::ScenarioMismatch(
            "Scenario-2 closed form requested for a scenario1 config".into(),
        )),
    }
}

struct RowOutcome {
    row: Vec<f64>,
    clamped: usize,
    empty: bool,
}

fn state_row(config: &GameConfig, space: &StateSpace, s: usize) -> Result<RowOutcome> {
    let (r, ell) = (config.reward, config.fixed_power);
    let mut row = vec![0.0; space.slots()];
    let mut clamped = 0;
    let mut clamp = |x: f64, cap: f64| {
        if x > cap {
            clamped += 1;
            cap
        } else {
            x
        }
    };
    let empty = match space.state_unchecked(s) {
        State::Subset(set) => {
            let members: Vec<usize> = set.iter().collect();
            let beta = rate_for_members(config, &members)?;
            let costs: Vec<_> = members
                .iter()
                .map(|&j| (j, config.players[j].cost))
                .collect();
            let (x, active) = state_investments(&costs, r, beta, ell);
            for (&j, xj) in members.iter().zip(x) {
                row[j] = clamp(xj, config.players[j].max_power);
            }
            active.members.is_empty() && !members.is_empty()
        }
        State::Lumped {
            focal_present,
            others,
        } => {
            let m = others + usize::from(focal_present);
            let beta = rate_for_members(config, &(0..m).collect::<Vec<_>>())?;
            let p = &config.players[0];
            let costs: Vec<_> = (0..m).map(|k| (k, p.cost)).collect();
            let (x, active) = state_investments(&costs, r, beta, ell);
            let amount = x.first().copied().unwrap_or(0.0);
            if focal_present {
                row[0] = clamp(amount, p.max_power);
            }
            if others > 0 {
                row[1] = clamp(amount, p.max_power);
            }
            active.members.is_empty() && m > 0
        }
    };
    Ok(RowOutcome {
        row,
        clamped,
        empty,
    })
}

/// Closed-form Scenario-2 policy, with caps applied and flagged.
pub fn scenario2_policy(
    config: &GameConfig,
    space: &StateSpace,
) -> Result<(Policy, EquilibriumFlags)> {
    if config.scenario.is_scenario1() {
        return Err(GameError::ScenarioMismatch(
            "Scenario-2 MPE requested for a scenario1 config".into(),
        ));
    }
    check_setup(config, space)?;
    let rows: Vec<RowOutcome> = (0..space.size())
        .into_par_iter()
        .map(|s| state_row(config, space, s))
        .collect::<Result<_>>()?;
    let mut policy = Policy::for_space(space);
    let mut flags = EquilibriumFlags::default();
    for (s, outcome) in rows.into_iter().enumerate() {
        policy.row_mut(s).copy_from_slice(&outcome.row);
        flags.clamped_slots += outcome.clamped;
        if outcome.empty {
            flags.empty_active_sets.push(s);
        }
    }
    flags.projected = flags.clamped_slots > 0;
    if flags.projected {
        log::warn!(
            "{} closed-form investments exceeded their caps and were clamped",
            flags.clamped_slots
        );
    }
    Ok((policy, flags))
}

pub fn mpe_scenario2(
    config: &GameConfig,
    space: &StateSpace,
    options: SolverOptions,
) -> Result<EquilibriumResult> {
    let (policy, flags) = scenario2_policy(config, space)?;
    let utilities = solve_players(config, space, &policy, options)?;
    Ok(EquilibriumResult {
        kind: EquilibriumKind::Mpe,
        space: Some(*space),
        policy,
        utilities,
        certificates: Vec::new(),
        flags,
    })
}

/// Homogeneous SNE utility with vanishing fixed power: `r/|S|²`.
pub fn scenario2_sne_limit(reward: f64, size: usize) -> f64 {
    reward / (size * size) as f64
}
