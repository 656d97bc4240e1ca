use rayon::prelude::*;

use crate::config::GameConfig;
use crate::dynamics::{build_w_unchecked, build_z_unchecked};
use crate::error::{GameError, Result};
use crate::policy::Policy;
use crate::solver::{solve_for_space, SolverOptions};
use crate::state_space::{State, StateSpace};

use super::{check_setup, Certificate};

/// Uniform grid points on `[0, cap]` used by default.
pub const DEFAULT_GRID_POINTS: usize = 256;
/// Certificates pass when the gap is at most this multiple of the reward.
pub const VERIFY_TOL_FACTOR: f64 = 1e-6;

/// Policy slot through which `player` deviates in `state`, if it is present.
fn deviation_slot(space: &StateSpace, player: usize, state: usize) -> Option<usize> {
    match space.state_unchecked(state) {
        State::Subset(set) => set.contains(player).then_some(player),
        State::Lumped { focal_present, .. } => focal_present.then_some(0),
    }
}

fn utility_at(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    player: usize,
    state: usize,
    options: SolverOptions,
) -> Result<f64> {
    let w = build_w_unchecked(config, policy, space);
    let z = build_z_unchecked(config, policy, space, player);
    Ok(solve_for_space(&w, &z, space, options)?.values[state])
}

/// Largest gain `player` can obtain by changing only its investment in
/// `state`, searched over `grid_points` uniform points on `[0, cap]` plus
/// the current value. Non-positive means no profitable deviation was found.
///
/// In reduced mode the focal player deviates; `player` selects its cost.
pub fn verify_best_response(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    player: usize,
    state: usize,
    grid_points: usize,
    options: SolverOptions,
) -> Result<f64> {
    if grid_points < 100 {
        return Err(GameError::Domain(format!(
            "verifier needs at least 100 grid points, got {grid_points}"
        )));
    }
    check_setup(config, space)?;
    policy.check(config, space)?;
    if player >= config.n_players() || state >= space.size() {
        return Err(GameError::MalformedState(format!(
            "player {player} / state {state} out of range"
        )));
    }
    let Some(slot) = deviation_slot(space, player, state) else {
        return Err(GameError::MalformedState(format!(
            "player {player} is not present in state {}",
            space.state_unchecked(state)
        )));
    };
    let candidate = utility_at(config, space, policy, player, state, options)?;
    let cap = config.players[player].max_power;
    let current = policy.get(state, slot);

    let mut points: Vec<f64> = (0..grid_points)
        .map(|k| cap * k as f64 / (grid_points - 1) as f64)
        .collect();
    points.push(current);

    let gains: Vec<f64> = points
        .into_par_iter()
        .map(|x| {
            let mut deviant = policy.clone();
            deviant.set(state, slot, x);
            Ok(utility_at(config, space, &deviant, player, state, options)? - candidate)
        })
        .collect::<Result<_>>()?;
    Ok(gains.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Best-response gaps for every present player in every state (the focal
/// player only in reduced mode).
pub fn certify(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    grid_points: usize,
    options: SolverOptions,
) -> Result<Vec<Certificate>> {
    let pairs: Vec<(usize, usize)> = (0..space.size())
        .flat_map(|s| match space.state_unchecked(s) {
            State::Subset(set) => set.iter().map(|j| (s, j)).collect::<Vec<_>>(),
            State::Lumped { focal_present, .. } => {
                if focal_present {
                    vec![(s, 0)]
                } else {
                    Vec::new()
                }
            }
        })
        .collect();
    pairs
        .into_iter()
        .map(|(state, player)| {
            let gap =
                verify_best_response(config, space, policy, player, state, grid_points, options)?;
            Ok(Certificate { state, player, gap })
        })
        .collect()
}
