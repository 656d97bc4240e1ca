use crate::config::{GameConfig, Scenario};
use crate::error::{GameError, Result};
use crate::policy::Policy;
use crate::solver::SolverOptions;
use crate::state_space::{State, StateSpace};

use super::{check_setup, solve_players, EquilibriumFlags, EquilibriumKind, EquilibriumResult};

/// Full cap when `γr > c`, nothing otherwise (including the tie `γr = c`).
pub fn threshold_investment(config: &GameConfig, player: usize) -> f64 {
    let Scenario::Scenario1 { gamma } = config.scenario else {
        return 0.0;
    };
    let p = &config.players[player];
    if gamma * config.reward > p.cost {
        p.max_power
    } else {
        0.0
    }
}

/// Threshold policy: each present player invests its state-independent amount.
pub fn scenario1_policy(config: &GameConfig, space: &StateSpace) -> Result<Policy> {
    if !config.scenario.is_scenario1() {
        return Err(GameError::ScenarioMismatch(format!(
            "Scenario-1 MPE requested for a {} config",
            config.scenario.label()
        )));
    }
    check_setup(config, space)?;
    let amounts: Vec<f64> = (0..config.n_players())
        .map(|j| threshold_investment(config, j))
        .collect();
    let mut policy = Policy::for_space(space);
    for s in 0..space.size() {
        match space.state_unchecked(s) {
            State::Subset(set) => {
                for j in set.iter() {
                    policy.set(s, j, amounts[j]);
                }
            }
            State::Lumped {
                focal_present,
                others,
            } => {
                if focal_present {
                    policy.set(s, 0, amounts[0]);
                }
                if others > 0 {
                    policy.set(s, 1, amounts[0]);
                }
            }
        }
    }
    Ok(policy)
}

pub fn mpe_scenario1(
    config: &GameConfig,
    space: &StateSpace,
    options: SolverOptions,
) -> Result<EquilibriumResult> {
    let policy = scenario1_policy(config, space)?;
    let utilities = solve_players(config, space, &policy, options)?;
    Ok(EquilibriumResult {
        kind: EquilibriumKind::Mpe,
        space: Some(*space),
        policy,
        utilities,
        certificates: Vec::new(),
        flags: EquilibriumFlags::default(),
    })
}

/// Homogeneous SNE utility with unbounded caps and vanishing fixed power:
/// `r/|S| − c/(γ|S|)`.
pub fn scenario1_sne_limit(reward: f64, cost: f64, gamma: f64, size: usize) -> f64 {
    let n = size as f64;
    reward / n - cost / (gamma * n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PlayerParams, CALIBRATED_COST, CALIBRATED_RATE, CALIBRATED_REWARD};
    use crate::state_space::PlayerSet;

    fn two_cost_config(costs: &[f64]) -> GameConfig {
        GameConfig {
            players: costs
                .iter()
                .enumerate()
                .map(|(i, &cost)| PlayerParams {
                    id: i as u64,
                    cost,
                    arrival_rate: 1.0 + i as f64,
                    departure_rate: 2.0,
                    max_power: 5.0 + i as f64,
                })
                .collect(),
            reward: CALIBRATED_REWARD,
            fixed_power: 1.0,
            scenario: Scenario::Scenario1 {
                gamma: CALIBRATED_RATE,
            },
        }
    }

    #[test]
    fn calibrated_values_invest_full_cap_everywhere() {
        let config = two_cost_config(&[CALIBRATED_COST, CALIBRATED_COST, CALIBRATED_COST]);
        let space = StateSpace::exact(3).unwrap();
        let p = scenario1_policy(&config, &space).unwrap();
        for s in 0..8 {
            for j in PlayerSet::from_bits(s as u64).iter() {
                assert_eq!(p.get(s, j), config.players[j].max_power);
            }
        }
    }

    #[test]
    fn expensive_and_tied_players_stay_out() {
        // γr = 10⁴
        let config = two_cost_config(&[2e4, 1e4, 1.0]);
        let space = StateSpace::exact(3).unwrap();
        let result = mpe_scenario1(&config, &space, SolverOptions::default()).unwrap();
        for s in 0..8 {
            assert_eq!(result.policy.get(s, 0), 0.0);
            assert_eq!(result.policy.get(s, 1), 0.0);
        }
        // tie: the utility is identically zero
        assert!(result.utility(1).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(result.utility(2).unwrap().values.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn reduced_policy_is_constant() {
        let config = GameConfig::calibrated(true, 50, 10.0, 10.0, 1e4, 1e-2);
        let space = StateSpace::reduced(50).unwrap();
        let p = scenario1_policy(&config, &space).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(1, 1), 1e4);
        assert_eq!(p.get(50, 0), 1e4);
        assert_eq!(p.get(50, 1), 0.0);
    }

    #[test]
    fn scenario2_config_is_rejected() {
        let config = GameConfig::calibrated(false, 2, 1.0, 1.0, 1.0, 1.0);
        let space = StateSpace::exact(2).unwrap();
        assert!(matches!(
            scenario1_policy(&config, &space),
            Err(GameError::ScenarioMismatch(_))
        ));
    }
}
