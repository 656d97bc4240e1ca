//! Monte Carlo simulation of the continuous-time chain.
//!
//! Event rates are computed here from the configuration directly, not via
//! [`crate::dynamics`], so that simulated utilities are an independent check
//! of the linear-system solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GameConfig, Scenario};
use crate::error::{GameError, Result};
use crate::policy::Policy;
use crate::state_space::{PlayerSet, State, StateSpace};

/// Events allowed in one episode before it is declared non-terminating.
pub const MAX_EVENTS: u64 = 100_000_000;

/// Episodes per parallel work unit; fixed so that results do not depend on
/// the thread count.
const CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    /// A strategic player solved the problem (the focal player in reduced mode).
    Strategic(usize),
    /// A non-focal strategic player solved it (reduced mode only).
    OtherStrategic,
    /// The fixed players solved it.
    Fixed,
    /// No winner: a Scenario-2 run ended.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub winner: Winner,
    /// Realized reward minus integrated cost; one entry per player in exact
    /// mode, the focal player only in reduced mode.
    pub per_player_utility: Vec<f64>,
    pub duration: f64,
    /// Transitions between non-absorbing states.
    pub path_length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_episodes: usize,
    pub seed: u64,
}

/// One jump of the embedded chain, by state ordinal; `to` is `None` on absorption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jump {
    pub from: usize,
    pub to: Option<usize>,
}

/// A state in simulator coordinates.
#[derive(Clone, Copy, Debug)]
enum SimState {
    Subset(PlayerSet),
    Lumped { focal: bool, others: usize },
}

enum Next {
    Solve,
    To(SimState),
}

struct Simulator<'a> {
    config: &'a GameConfig,
    space: &'a StateSpace,
    policy: &'a Policy,
}

impl Simulator<'_> {
    fn ordinal(&self, state: SimState) -> usize {
        match state {
            SimState::Subset(set) => set.bits() as usize,
            SimState::Lumped { focal, others } => {
                usize::from(focal) * self.space.n_players() + others
            }
        }
    }

    fn run(
        &self,
        initial: SimState,
        rng: &mut impl Rng,
        mut on_jump: impl FnMut(Jump),
    ) -> Result<EpisodeOutcome> {
        let config = self.config;
        let n = self.space.n_players();
        let tracked = self.policy.slots().min(match self.space {
            StateSpace::Exact { .. } => n,
            StateSpace::Reduced { .. } => 1,
        });
        let mut utility = vec![0.0; tracked];
        let mut state = initial;
        let mut duration = 0.0;
        let mut path_length = 0u64;
        let ell = config.fixed_power;

        for _ in 0..MAX_EVENTS {
            let ord = self.ordinal(state);
            let row = self.policy.row(ord);

            // strategic power and termination rate
            let (power, present) = match state {
                SimState::Subset(set) => (set.iter().map(|j| row[j]).sum::<f64>(), set.len()),
                SimState::Lumped { focal, others } => (
                    if focal { row[0] } else { 0.0 } + others as f64 * row[1],
                    others + usize::from(focal),
                ),
            };
            let gamma = match &config.scenario {
                Scenario::Scenario1 { gamma } => gamma * (power + ell),
                Scenario::Scenario2 { beta } => *beta,
                Scenario::Scenario2General { rate } => match state {
                    SimState::Subset(set) => rate.rate(set),
                    SimState::Lumped { .. } => rate.rate_for_size(present).unwrap_or(f64::NAN),
                },
            };

            // movement events with their rates
            let mut moves: Vec<(f64, SimState)> = Vec::new();
            match state {
                SimState::Subset(set) => {
                    for (j, p) in config.players.iter().enumerate() {
                        if set.contains(j) {
                            moves.push((p.departure_rate, SimState::Subset(set.without(j))));
                        } else {
                            moves.push((p.arrival_rate, SimState::Subset(set.with(j))));
                        }
                    }
                }
                SimState::Lumped { focal, others } => {
                    let p = &config.players[0];
                    let absent = n - 1 - others;
                    moves.push((
                        absent as f64 * p.arrival_rate,
                        SimState::Lumped {
                            focal,
                            others: others + 1,
                        },
                    ));
                    if others > 0 {
                        moves.push((
                            others as f64 * p.departure_rate,
                            SimState::Lumped {
                                focal,
                                others: others - 1,
                            },
                        ));
                    }
                    let rate = if focal {
                        p.departure_rate
                    } else {
                        p.arrival_rate
                    };
                    moves.push((
                        rate,
                        SimState::Lumped {
                            focal: !focal,
                            others,
                        },
                    ));
                }
            }
            moves.retain(|m| m.0 > 0.0);
            let total = gamma + moves.iter().map(|m| m.0).sum::<f64>();
            if !(total > 0.0 && total.is_finite()) {
                return Err(GameError::Domain(format!(
                    "total event rate {total} in state {ord}"
                )));
            }

            let tau: f64 = rng.sample::<f64, _>(Exp1) / total;
            duration += tau;
            for (k, u) in utility.iter_mut().enumerate() {
                let (x, cost) = match state {
                    SimState::Subset(set) if set.contains(k) => (row[k], config.players[k].cost),
                    SimState::Lumped { focal: true, .. } => (row[0], config.players[0].cost),
                    _ => continue,
                };
                *u -= cost * x * tau;
                if !config.scenario.is_scenario1() {
                    *u += config.reward * gamma * x / (power + ell) * tau;
                }
            }

            let mut pick = rng.random::<f64>() * total;
            let mut next = Next::Solve;
            if pick >= gamma {
                pick -= gamma;
                // falls back to the last move if rounding leaves a remainder
                next = Next::To(moves.last().map(|m| m.1).unwrap_or(state));
                for (rate, target) in &moves {
                    if pick < *rate {
                        next = Next::To(*target);
                        break;
                    }
                    pick -= rate;
                }
            }

            match next {
                Next::To(target) => {
                    on_jump(Jump {
                        from: ord,
                        to: Some(self.ordinal(target)),
                    });
                    path_length += 1;
                    state = target;
                }
                Next::Solve => {
                    on_jump(Jump {
                        from: ord,
                        to: None,
                    });
                    let winner = if config.scenario.is_scenario1() {
                        self.draw_winner(state, row, rng)
                    } else {
                        Winner::None
                    };
                    if let Winner::Strategic(k) = winner {
                        utility[k] += config.reward;
                    }
                    return Ok(EpisodeOutcome {
                        winner,
                        per_player_utility: utility,
                        duration,
                        path_length,
                    });
                }
            }
        }
        Err(GameError::EpisodeLimit(MAX_EVENTS))
    }

    /// Solver chosen with probability proportional to invested power, the
    /// fixed players holding `ℓ`.
    fn draw_winner(&self, state: SimState, row: &[f64], rng: &mut impl Rng) -> Winner {
        let ell = self.config.fixed_power;
        let shares: Vec<(Winner, f64)> = match state {
            SimState::Subset(set) => set.iter().map(|j| (Winner::Strategic(j), row[j])).collect(),
            SimState::Lumped { focal, others } => {
                let mut v = Vec::new();
                if focal {
                    v.push((Winner::Strategic(0), row[0]));
                }
                v.push((Winner::OtherStrategic, others as f64 * row[1]));
                v
            }
        };
        let total: f64 = shares.iter().map(|s| s.1).sum::<f64>() + ell;
        let mut pick = rng.random::<f64>() * total;
        for (who, share) in shares {
            if pick < share {
                return who;
            }
            pick -= share;
        }
        Winner::Fixed
    }
}

fn prepare<'a>(
    config: &'a GameConfig,
    space: &'a StateSpace,
    policy: &'a Policy,
    initial: &State,
) -> Result<(Simulator<'a>, SimState)> {
    config.ensure_valid()?;
    space.check(config)?;
    policy.check(config, space)?;
    space.ordinal(initial)?;
    let sim_state = match *initial {
        State::Subset(set) => SimState::Subset(set),
        State::Lumped {
            focal_present,
            others,
        } => SimState::Lumped {
            focal: focal_present,
            others,
        },
    };
    Ok((
        Simulator {
            config,
            space,
            policy,
        },
        sim_state,
    ))
}

/// Simulates one episode from `initial` until absorption.
pub fn simulate_episode(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    initial: &State,
    rng: &mut impl Rng,
) -> Result<EpisodeOutcome> {
    simulate_episode_with(config, space, policy, initial, rng, |_| {})
}

/// As [`simulate_episode`], reporting every jump of the embedded chain.
pub fn simulate_episode_with(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    initial: &State,
    rng: &mut impl Rng,
    on_jump: impl FnMut(Jump),
) -> Result<EpisodeOutcome> {
    let (sim, state) = prepare(config, space, policy, initial)?;
    sim.run(state, rng, on_jump)
}

/// Generator for episode `episode` of a run seeded with `seed`.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Running mean and sum of squared deviations, mergeable across chunks.
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *m;
            *m += delta / self.count;
            *s += delta * (x - *m);
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        let total = self.count + other.count;
        if other.count == 0.0 {
            return self;
        }
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * other.count / total;
            self.m2[k] += other.m2[k] + delta * delta * self.count * other.count / total;
        }
        self.count = total;
        self
    }
}

/// Mean realized utility over `n_episodes` independent episodes.
///
/// Episode `e` draws from [`episode_rng`]`(seed, e)`, so the estimate is
/// reproducible for a given seed regardless of thread scheduling.
pub fn estimate_utilities(
    config: &GameConfig,
    space: &StateSpace,
    policy: &Policy,
    initial: &State,
    n_episodes: usize,
    seed: u64,
) -> Result<UtilityEstimate> {
    if n_episodes == 0 {
        return Err(GameError::Domain("at least one episode is required".into()));
    }
    let (sim, state) = prepare(config, space, policy, initial)?;
    let dim = match space {
        StateSpace::Exact { n_players } => *n_players,
        StateSpace::Reduced { .. } => 1,
    };
    let chunks: Vec<Moments> = (0..n_episodes.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut moments = Moments::new(dim);
            for e in c * CHUNK..((c + 1) * CHUNK).min(n_episodes) {
                let mut rng = episode_rng(seed, e as u64);
                let outcome = sim.run(state, &mut rng, |_| {})?;
                moments.push(&outcome.per_player_utility);
            }
            Ok(moments)
        })
        .collect::<Result<_>>()?;
    let total = chunks.iter().fold(Moments::new(dim), |acc, m| acc.merge(m));
    let n = n_episodes as f64;
    let std_error = total
        .m2
        .iter()
        .map(|&s| {
            if n_episodes > 1 {
                (s / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(UtilityEstimate {
        mean: total.mean,
        std_error,
        n_episodes,
        seed,
    })
}
