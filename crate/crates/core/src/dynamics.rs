//! Per-state rates and the linear system behind expected utilities.
//!
//! For a policy `x` and a state `S` the solve rate is `Γ`, the total event
//! rate is `D = Γ + Σ_{j∉S} λ_j + Σ_{j∈S} μ_j`, and expected utilities obey
//! `R = W R + Z` with `W(S, S') = rate(S → S') / D` and
//! `Z_i(S) = (Γ r / (Σx + ℓ) − c_i) x_i / D`.

use std::io::{self, Write};

use crate::config::{GameConfig, PlayerParams, Scenario};
use crate::error::{GameError, Result};
use crate::policy::Policy;
use crate::state_space::{Event, PlayerSet, StateSpace};

/// Sparse row-compressed substochastic matrix over non-absorbing states.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    row_slack: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds from per-row `(column, value)` lists and absorption probabilities.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, row_slack: Vec<f64>) -> Self {
        assert_eq!(rows.len(), row_slack.len());
        let size = rows.len();
        let mut row_ptr = Vec::with_capacity(size + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                assert!(c < size, "column {c} out of range");
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        TransitionMatrix {
            size,
            row_ptr,
            cols,
            vals,
            row_slack,
        }
    }

    /// Dense rows; zero entries are dropped and slack is `1 − row sum`.
    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        let slack = dense.iter().map(|r| 1.0 - r.iter().sum::<f64>()).collect();
        Self::from_rows(rows, slack)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Per-row absorption probability `Γ / D`.
    pub fn row_slack(&self) -> &[f64] {
        &self.row_slack
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|(c, _)| *c == j).map(|(_, v)| v).sum()
    }

    /// `out = W r + z`.
    pub fn apply_affine(&self, r: &[f64], z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = z[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * r[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.size]; self.size];
        for (i, row) in out.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] += v;
            }
        }
        out
    }

    /// Nonzero entries as `(row, column, value)`.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size).flat_map(move |i| self.row(i).map(move |(c, v)| (i, c, v)))
    }
}

/// Per-state immediate payoff `Z_i` of one player.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffVector(pub Vec<f64>);

impl PayoffVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Total strategic power `Σ_{j∈S} x_j` for a state's strategy profile.
pub fn total_power(space: &StateSpace, state: usize, profile: &[f64]) -> f64 {
    match *space {
        StateSpace::Exact { .. } => PlayerSet::from_bits(state as u64)
            .iter()
            .map(|j| profile[j])
            .sum(),
        StateSpace::Reduced { n_players } => {
            let focal = if state >= n_players { profile[0] } else { 0.0 };
            focal + (state % n_players) as f64 * profile[1]
        }
    }
}

/// Rate `Γ` at which the problem is solved (Scenario 1) or the run ends (Scenario 2).
pub fn solve_rate(config: &GameConfig, space: &StateSpace, state: usize, profile: &[f64]) -> f64 {
    match &config.scenario {
        Scenario::Scenario1 { gamma } => {
            gamma * (total_power(space, state, profile) + config.fixed_power)
        }
        Scenario::Scenario2 { beta } => *beta,
        Scenario::Scenario2General { rate } => match *space {
            StateSpace::Exact { .. } => rate.rate(PlayerSet::from_bits(state as u64)),
            StateSpace::Reduced { .. } => rate
                .rate_for_size(space.present_count(state))
                .unwrap_or(f64::NAN),
        },
    }
}

fn representative(config: &GameConfig) -> &PlayerParams {
    &config.players[0]
}

/// Rate of one arrival/departure edge.
pub fn edge_rate(config: &GameConfig, event: Event) -> f64 {
    match event {
        Event::Arrive(j) => config.players[j].arrival_rate,
        Event::Depart(j) => config.players[j].departure_rate,
        Event::OthersArrive { count } => count as f64 * representative(config).arrival_rate,
        Event::OthersDepart { count } => count as f64 * representative(config).departure_rate,
        Event::FocalArrive => representative(config).arrival_rate,
        Event::FocalDepart => representative(config).departure_rate,
        Event::Absorb => 0.0,
    }
}

/// `Σ_{j∉S} λ_j + Σ_{j∈S} μ_j`.
pub fn movement_rate(config: &GameConfig, space: &StateSpace, state: usize) -> f64 {
    space
        .neighbors_of(state)
        .into_iter()
        .map(|e| edge_rate(config, e.event))
        .sum()
}

/// Total event rate `D`; the mean sojourn time in the state is `1 / D`.
pub fn sojourn_denominator(
    config: &GameConfig,
    space: &StateSpace,
    state: usize,
    profile: &[f64],
) -> f64 {
    solve_rate(config, space, state, profile) + movement_rate(config, space, state)
}

fn check_inputs(config: &GameConfig, policy: &Policy, space: &StateSpace) -> Result<()> {
    config.ensure_valid()?;
    space.check(config)?;
    policy.check(config, space)
}

/// Substochastic transition matrix among non-absorbing states.
pub fn build_w(
    config: &GameConfig,
    policy: &Policy,
    space: &StateSpace,
) -> Result<TransitionMatrix> {
    check_inputs(config, policy, space)?;
    Ok(build_w_unchecked(config, policy, space))
}

pub(crate) fn build_w_unchecked(
    config: &GameConfig,
    policy: &Policy,
    space: &StateSpace,
) -> TransitionMatrix {
    let size = space.size();
    let mut rows = Vec::with_capacity(size);
    let mut slack = Vec::with_capacity(size);
    for s in 0..size {
        let gamma = solve_rate(config, space, s, policy.row(s));
        let edges = space.neighbors_of(s);
        let moves: f64 = edges.iter().map(|e| edge_rate(config, e.event)).sum();
        let d = gamma + moves;
        rows.push(
            edges
                .iter()
                .filter_map(|e| {
                    let rate = edge_rate(config, e.event);
                    match e.target {
                        Some(t) if rate > 0.0 => Some((t, rate / d)),
                        _ => None,
                    }
                })
                .collect(),
        );
        slack.push(gamma / d);
    }
    TransitionMatrix::from_rows(rows, slack)
}

/// Immediate expected payoff of `player` in every state. In reduced mode the
/// payoff is the focal player's (all players are interchangeable).
pub fn build_z(
    config: &GameConfig,
    policy: &Policy,
    space: &StateSpace,
    player: usize,
) -> Result<PayoffVector> {
    check_inputs(config, policy, space)?;
    if player >= config.n_players() {
        return Err(GameError::MalformedState(format!(
            "player {player} out of range 0..{}",
            config.n_players()
        )));
    }
    Ok(build_z_unchecked(config, policy, space, player))
}

pub(crate) fn build_z_unchecked(
    config: &GameConfig,
    policy: &Policy,
    space: &StateSpace,
    player: usize,
) -> PayoffVector {
    let slot = match space {
        StateSpace::Exact { .. } => player,
        StateSpace::Reduced { .. } => 0,
    };
    let cost = config.players[player].cost;
    let values = (0..space.size())
        .map(|s| {
            let profile = policy.row(s);
            let x = profile[slot];
            if x == 0.0 {
                return 0.0;
            }
            let d = sojourn_denominator(config, space, s, profile);
            state_payoff_rate(config, space, s, profile, x, cost) / d
        })
        .collect();
    PayoffVector(values)
}

/// Expected payoff earned per unit time in a state, before dividing by `D`:
/// `(Γ r / (Σx + ℓ) − c) x`, with the Scenario-1 form `(γ r − c) x` kept exact.
pub(crate) fn state_payoff_rate(
    config: &GameConfig,
    space: &StateSpace,
    state: usize,
    profile: &[f64],
    x: f64,
    cost: f64,
) -> f64 {
    match &config.scenario {
        Scenario::Scenario1 { gamma } => (gamma * config.reward - cost) * x,
        _ => {
            let gamma = solve_rate(config, space, state, profile);
            let psi = total_power(space, state, profile) + config.fixed_power;
            (gamma * config.reward / psi - cost) * x
        }
    }
}

/// Writes `W` (and optionally `Z`) as Matrix Market coordinate blocks with
/// 1-based indices.
pub fn write_matrix_market(
    w: &TransitionMatrix,
    z: Option<(usize, &PayoffVector)>,
    mut out: impl Write,
) -> io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "% transition matrix W")?;
    writeln!(out, "{} {} {}", w.size(), w.size(), w.nnz())?;
    for (i, j, v) in w.triples() {
        writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
    }
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "% row slack (absorption probability)")?;
    writeln!(out, "{} 1 {}", w.size(), w.size())?;
    for (i, v) in w.row_slack().iter().enumerate() {
        writeln!(out, "{} 1 {:.17e}", i + 1, v)?;
    }
    if let Some((player, z)) = z {
        let nnz = z.values().iter().filter(|v| **v != 0.0).count();
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "% payoff vector Z for player {player}")?;
        writeln!(out, "{} 1 {}", z.len(), nnz)?;
        for (i, v) in z.values().iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(out, "{} 1 {:.17e}", i + 1, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RateFunction, Scenario};
    use crate::state_space::State;
    use proptest::prelude::*;

    fn players(costs: &[f64], lambda: &[f64], mu: &[f64], cap: f64) -> Vec<PlayerParams> {
        costs
            .iter()
            .enumerate()
            .map(|(k, &c)| PlayerParams {
                id: k as u64,
                cost: c,
                arrival_rate: lambda[k],
                departure_rate: mu[k],
                max_power: cap,
            })
            .collect()
    }

    fn s1_config(n: usize) -> GameConfig {
        GameConfig::calibrated(true, n, 10.0, 10.0, 200.0, 1.0)
    }

    #[test]
    fn scenario1_solve_rate_is_proportional_to_power() {
        let config = s1_config(2);
        let space = StateSpace::exact(2).unwrap();
        assert!((solve_rate(&config, &space, 0b11, &[40.0, 60.0]) - 10.1).abs() < 1e-12);
        // nothing invested: the fixed players keep mining
        assert!((solve_rate(&config, &space, 0b11, &[0.0, 0.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn scenario2_solve_rate_ignores_profile() {
        let config = GameConfig::calibrated(false, 2, 1.0, 1.0, 1e3, 1.0);
        let space = StateSpace::exact(2).unwrap();
        assert_eq!(solve_rate(&config, &space, 0b11, &[5.0, 7.0]), 0.1);
        assert_eq!(solve_rate(&config, &space, 0b01, &[0.0, 0.0]), 0.1);
    }

    #[test]
    fn general_scenario_uses_rate_function() {
        let mut config = GameConfig::calibrated(false, 3, 1.0, 1.0, 1e3, 1.0);
        config.scenario = Scenario::Scenario2General {
            rate: RateFunction::ProportionalToSize(0.05),
        };
        let exact = StateSpace::exact(3).unwrap();
        let reduced = StateSpace::reduced(3).unwrap();
        assert!((solve_rate(&config, &exact, 0b101, &[0.0; 3]) - 0.15).abs() < 1e-15);
        let lumped = reduced
            .ordinal(&State::Lumped {
                focal_present: true,
                others: 1,
            })
            .unwrap();
        assert!((solve_rate(&config, &reduced, lumped, &[0.0; 2]) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn sojourn_denominator_sums_rates() {
        let mut config = GameConfig::calibrated(false, 2, 0.0, 0.0, 1e3, 1.0);
        config.players[0].arrival_rate = 1.0;
        config.players[1].arrival_rate = 2.0;
        let space = StateSpace::exact(2).unwrap();
        assert!((sojourn_denominator(&config, &space, 0, &[0.0, 0.0]) - 3.1).abs() < 1e-12);

        let config = GameConfig::calibrated(false, 3, 0.0, 10.0, 1e3, 1.0);
        let space = StateSpace::exact(3).unwrap();
        assert!((sojourn_denominator(&config, &space, 0b111, &[0.0; 3]) - 30.1).abs() < 1e-12);
    }

    #[test]
    fn reduced_sojourn_matches_expanded_chain() {
        // n = 3, focal present with one other, λ = μ = 10, Γ = 0.1:
        // one absent other arrives, one other and the focal player depart.
        let config = GameConfig::calibrated(false, 3, 10.0, 10.0, 1e3, 1.0);
        let reduced = StateSpace::reduced(3).unwrap();
        let s = reduced
            .ordinal(&State::Lumped {
                focal_present: true,
                others: 1,
            })
            .unwrap();
        let d = sojourn_denominator(&config, &reduced, s, &[0.0, 0.0]);
        assert!((d - 30.1).abs() < 1e-12);
        let exact = StateSpace::exact(3).unwrap();
        let d_exact = sojourn_denominator(&config, &exact, 0b011, &[0.0; 3]);
        assert_eq!(d, d_exact);
    }

    #[test]
    fn two_state_chain_matrix() {
        let config = GameConfig {
            players: players(&[1.0], &[1.0], &[1.0], 10.0),
            reward: 10.0,
            fixed_power: 1.0,
            scenario: Scenario::Scenario2 { beta: 1.0 },
        };
        let space = StateSpace::exact(1).unwrap();
        let mut policy = Policy::for_space(&space);
        policy.set(1, 0, 3.0);
        let w = build_w(&config, &policy, &space).unwrap();
        assert_eq!(w.to_dense(), vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert_eq!(w.row_slack(), &[0.5, 0.5]);
    }

    #[test]
    fn frozen_chain_has_no_transitions() {
        let config = GameConfig::calibrated(true, 3, 0.0, 0.0, 10.0, 1.0);
        let space = StateSpace::exact(3).unwrap();
        let policy = Policy::for_space(&space);
        let w = build_w(&config, &policy, &space).unwrap();
        assert_eq!(w.nnz(), 0);
        assert!(w.row_slack().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn zero_margin_gives_zero_payoff() {
        let mut config = s1_config(3);
        config.reward = 10.0;
        config.scenario = Scenario::Scenario1 { gamma: 0.5 };
        for p in &mut config.players {
            p.cost = 5.0;
        }
        let space = StateSpace::exact(3).unwrap();
        let policy = Policy::from_fn(8, 3, |s, j| {
            if PlayerSet::from_bits(s as u64).contains(j) {
                50.0 + j as f64
            } else {
                0.0
            }
        });
        for i in 0..3 {
            let z = build_z(&config, &policy, &space, i).unwrap();
            assert!(z.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_investment_gives_zero_payoff() {
        let config = GameConfig::calibrated(false, 2, 1.0, 1.0, 100.0, 1.0);
        let space = StateSpace::exact(2).unwrap();
        let mut policy = Policy::for_space(&space);
        policy.set(0b11, 1, 20.0);
        let z = build_z(&config, &policy, &space, 0).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scenario2_single_player_payoff() {
        // x = 10, ℓ = 1, r = 100, β = 1, c = 1, no movement: D = 1.
        let config = GameConfig {
            players: players(&[1.0], &[0.0], &[0.0], 100.0),
            reward: 100.0,
            fixed_power: 1.0,
            scenario: Scenario::Scenario2 { beta: 1.0 },
        };
        let space = StateSpace::exact(1).unwrap();
        let mut policy = Policy::for_space(&space);
        policy.set(1, 0, 10.0);
        let z = build_z(&config, &policy, &space, 0).unwrap();
        let expected = 10.0 * 100.0 / 11.0 - 10.0;
        assert!((z.values()[1] - expected).abs() < 1e-12);
        assert!((z.values()[1] - 80.909_090_909_090_9).abs() < 1e-9);
    }

    #[test]
    fn scenario1_payoff_specialization() {
        let config = s1_config(2);
        let space = StateSpace::exact(2).unwrap();
        let policy = Policy::from_fn(4, 2, |s, j| {
            if PlayerSet::from_bits(s as u64).contains(j) {
                100.0
            } else {
                0.0
            }
        });
        let z = build_z(&config, &policy, &space, 1).unwrap();
        for s in 0..4 {
            let d = sojourn_denominator(&config, &space, s, policy.row(s));
            let expected = (0.1 * 1e5 - 0.003) * policy.get(s, 1) / d;
            assert!((z.values()[s] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut config = s1_config(2);
        let space = StateSpace::exact(2).unwrap();
        let policy = Policy::for_space(&space);
        assert!(build_z(&config, &policy, &space, 2).is_err());
        config.fixed_power = 0.0;
        assert!(matches!(
            build_w(&config, &policy, &space),
            Err(GameError::InvalidConfig(_))
        ));
    }

    #[test]
    fn scenario2_matrix_is_policy_independent() {
        let config = GameConfig::calibrated(false, 3, 2.0, 3.0, 1e3, 1.0);
        let space = StateSpace::exact(3).unwrap();
        let a = Policy::from_fn(8, 3, |s, j| {
            if PlayerSet::from_bits(s as u64).contains(j) {
                10.0
            } else {
                0.0
            }
        });
        let b = Policy::from_fn(8, 3, |s, j| {
            if PlayerSet::from_bits(s as u64).contains(j) {
                900.0 * (j + 1) as f64 / 3.0
            } else {
                0.0
            }
        });
        let wa = build_w(&config, &a, &space).unwrap();
        let wb = build_w(&config, &b, &space).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn matrix_market_dump() {
        let config = GameConfig::calibrated(false, 1, 1.0, 1.0, 10.0, 1.0);
        let space = StateSpace::exact(1).unwrap();
        let mut policy = Policy::for_space(&space);
        policy.set(1, 0, 2.0);
        let w = build_w(&config, &policy, &space).unwrap();
        let z = build_z(&config, &policy, &space, 0).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&w, Some((0, &z)), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines[2], "2 2 2");
        assert!(lines[3].starts_with("1 2 "));
        assert!(text.contains("% payoff vector Z for player 0"));
    }

    proptest! {
        #[test]
        fn rows_partition_total_rate(
            n in 1usize..5,
            lambdas in proptest::collection::vec(0.0f64..5.0, 4),
            mus in proptest::collection::vec(0.0f64..5.0, 4),
            invest in proptest::collection::vec(0.0f64..1.0, 4),
            scenario1 in any::<bool>(),
        ) {
            let mut config = GameConfig::calibrated(scenario1, n, 1.0, 1.0, 10.0, 0.5);
            for (k, p) in config.players.iter_mut().enumerate() {
                p.arrival_rate = lambdas[k];
                p.departure_rate = mus[k];
            }
            let space = StateSpace::exact(n).unwrap();
            let policy = Policy::from_fn(space.size(), n, |s, j| {
                if PlayerSet::from_bits(s as u64).contains(j) { 10.0 * invest[j] } else { 0.0 }
            });
            let w = build_w(&config, &policy, &space).unwrap();
            for s in 0..space.size() {
                let total = w.row_sum(s) + w.row_slack()[s];
                prop_assert!((total - 1.0).abs() < 1e-14);
                prop_assert!(w.row_sum(s) < 1.0);
                let neighbors: Vec<_> = space.neighbors_of(s).iter().filter_map(|e| e.target).collect();
                for (c, _) in w.row(s) {
                    prop_assert!(neighbors.contains(&c));
                }
            }
        }
    }
}
