//! Ordinal numbering of the non-absorbing states.
//!
//! In [`StateSpace::Exact`] mode a state is the subset `S ⊆ 𝒰` of present
//! strategic players and its ordinal is the subset's bitmask. In
//! [`StateSpace::Reduced`] mode all players are interchangeable and a state is
//! the pair (focal player present?, number of other players present), with
//! ordinal `focal · n + others`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{GameConfig, Scenario};
use crate::error::{GameError, Result};

/// Largest universal set solved on the subset lattice.
pub const MAX_EXACT_PLAYERS: usize = 20;

/// Bitmask of player indices.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct PlayerSet(u64);

impl PlayerSet {
    pub const fn empty() -> Self {
        PlayerSet(0)
    }

    pub const fn from_bits(bits: u64) -> Self {
        PlayerSet(bits)
    }

    /// Fails on indices that do not fit the 64-bit mask.
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut set = PlayerSet::empty();
        for &i in indices {
            if i >= 64 {
                return Err(GameError::MalformedState(format!(
                    "player index {i} does not fit a subset bitmask"
                )));
            }
            set.insert(i);
        }
        Ok(set)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, player: usize) -> bool {
        player < 64 && self.0 >> player & 1 == 1
    }

    pub fn insert(&mut self, player: usize) {
        self.0 |= 1 << player;
    }

    pub fn remove(&mut self, player: usize) {
        self.0 &= !(1 << player);
    }

    pub fn with(self, player: usize) -> Self {
        PlayerSet(self.0 | 1 << player)
    }

    pub fn without(self, player: usize) -> Self {
        PlayerSet(self.0 & !(1 << player))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Present player indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }
}

impl fmt::Display for PlayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StateSpace {
    Exact { n_players: usize },
    Reduced { n_players: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum State {
    Subset(PlayerSet),
    Lumped { focal_present: bool, others: usize },
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Subset(s) => write!(f, "{s}"),
            State::Lumped {
                focal_present,
                others,
            } => write!(f, "({},{})", u8::from(*focal_present), others),
        }
    }
}

/// Transition out of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    /// Absent player arrives.
    Arrive(usize),
    /// Present player departs.
    Depart(usize),
    /// One of `count` absent non-focal players arrives.
    OthersArrive {
        count: usize,
    },
    /// One of `count` present non-focal players departs.
    OthersDepart {
        count: usize,
    },
    FocalArrive,
    FocalDepart,
    /// The problem is solved or the run ends.
    Absorb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub event: Event,
    /// Ordinal of the next state; `None` for absorption.
    pub target: Option<usize>,
}

impl StateSpace {
    pub fn exact(n_players: usize) -> Result<Self> {
        if n_players > MAX_EXACT_PLAYERS {
            return Err(GameError::StateSpaceTooLarge(format!(
                "exact mode supports at most {MAX_EXACT_PLAYERS} players, got {n_players}; \
                 use reduced mode for homogeneous players"
            )));
        }
        Ok(StateSpace::Exact { n_players })
    }

    pub fn reduced(n_players: usize) -> Result<Self> {
        if n_players == 0 {
            return Err(GameError::StateSpaceTooLarge(
                "reduced mode needs at least one player".into(),
            ));
        }
        Ok(StateSpace::Reduced { n_players })
    }

    /// Space of the given mode for `config`, checking that the config supports it.
    pub fn for_config(config: &GameConfig, mode: Mode) -> Result<Self> {
        let n = config.n_players();
        match mode {
            Mode::Exact => Self::exact(n),
            Mode::Reduced => {
                if config.homogeneous().is_none() {
                    return Err(GameError::NotHomogeneous(
                        "players differ in cost, rates or cap".into(),
                    ));
                }
                if let Scenario::Scenario2General { rate } = &config.scenario {
                    if !rate.depends_only_on_size() {
                        return Err(GameError::NotHomogeneous(
                            "a per-state rate table is not a function of the state size".into(),
                        ));
                    }
                }
                Self::reduced(n)
            }
        }
    }

    /// Exact for small universal sets, reduced otherwise.
    pub fn auto(config: &GameConfig) -> Result<Self> {
        if config.n_players() <= MAX_EXACT_PLAYERS {
            Self::for_config(config, Mode::Exact)
        } else {
            Self::for_config(config, Mode::Reduced)
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            StateSpace::Exact { .. } => Mode::Exact,
            StateSpace::Reduced { .. } => Mode::Reduced,
        }
    }

    pub fn n_players(&self) -> usize {
        match *self {
            StateSpace::Exact { n_players } | StateSpace::Reduced { n_players } => n_players,
        }
    }

    /// Number of non-absorbing states.
    pub fn size(&self) -> usize {
        match *self {
            StateSpace::Exact { n_players } => 1 << n_players,
            StateSpace::Reduced { n_players } => 2 * n_players,
        }
    }

    /// Investment slots of a policy row: one per player, or focal + each-other.
    pub fn slots(&self) -> usize {
        match *self {
            StateSpace::Exact { n_players } => n_players,
            StateSpace::Reduced { .. } => 2,
        }
    }

    /// Checks that `space` fits `config` (player count, homogeneity).
    pub fn check(&self, config: &GameConfig) -> Result<()> {
        if self.n_players() != config.n_players() {
            return Err(GameError::MalformedState(format!(
                "state space has {} players but config has {}",
                self.n_players(),
                config.n_players()
            )));
        }
        if matches!(self, StateSpace::Reduced { .. }) {
            Self::for_config(config, Mode::Reduced)?;
        }
        Ok(())
    }

    pub fn ordinal(&self, state: &State) -> Result<usize> {
        match (*self, *state) {
            (StateSpace::Exact { n_players }, State::Subset(set)) => {
                if n_players < 64 && set.bits() >> n_players != 0 {
                    return Err(GameError::MalformedState(format!(
                        "subset {set} references players outside 0..{n_players}"
                    )));
                }
                Ok(set.bits() as usize)
            }
            (
                StateSpace::Reduced { n_players },
                State::Lumped {
                    focal_present,
                    others,
                },
            ) => {
                if others >= n_players {
                    return Err(GameError::MalformedState(format!(
                        "{others} other players present but only {} exist",
                        n_players - 1
                    )));
                }
                Ok(usize::from(focal_present) * n_players + others)
            }
            (space, state) => Err(GameError::MalformedState(format!(
                "state {state} does not belong to a {:?} space",
                space.mode()
            ))),
        }
    }

    pub fn state(&self, ordinal: usize) -> Result<State> {
        if ordinal >= self.size() {
            return Err(GameError::MalformedState(format!(
                "ordinal {ordinal} out of range 0..{}",
                self.size()
            )));
        }
        Ok(self.state_unchecked(ordinal))
    }

    pub(crate) fn state_unchecked(&self, ordinal: usize) -> State {
        match *self {
            StateSpace::Exact { .. } => State::Subset(PlayerSet::from_bits(ordinal as u64)),
            StateSpace::Reduced { n_players } => State::Lumped {
                focal_present: ordinal >= n_players,
                others: ordinal % n_players,
            },
        }
    }

    /// Number of present strategic players in a state.
    pub fn present_count(&self, ordinal: usize) -> usize {
        match self.state_unchecked(ordinal) {
            State::Subset(s) => s.len(),
            State::Lumped {
                focal_present,
                others,
            } => usize::from(focal_present) + others,
        }
    }

    /// Every event out of `state`: arrivals, departures and absorption.
    pub fn neighbors(&self, state: &State) -> Result<Vec<Edge>> {
        let ordinal = self.ordinal(state)?;
        Ok(self.neighbors_of(ordinal))
    }

    pub(crate) fn neighbors_of(&self, ordinal: usize) -> Vec<Edge> {
        let mut edges = Vec::new();
        match *self {
            StateSpace::Exact { n_players } => {
                let set = PlayerSet::from_bits(ordinal as u64);
                for j in 0..n_players {
                    if set.contains(j) {
                        edges.push(Edge {
                            event: Event::Depart(j),
                            target: Some(set.without(j).bits() as usize),
                        });
                    } else {
                        edges.push(Edge {
                            event: Event::Arrive(j),
                            target: Some(set.with(j).bits() as usize),
                        });
                    }
                }
            }
            StateSpace::Reduced { n_players } => {
                let focal = ordinal >= n_players;
                let others = ordinal % n_players;
                let base = usize::from(focal) * n_players;
                let absent_others = n_players - 1 - others;
                if absent_others > 0 {
                    edges.push(Edge {
                        event: Event::OthersArrive {
                            count: absent_others,
                        },
                        target: Some(base + others + 1),
                    });
                }
                if others > 0 {
                    edges.push(Edge {
                        event: Event::OthersDepart { count: others },
                        target: Some(base + others - 1),
                    });
                }
                if focal {
                    edges.push(Edge {
                        event: Event::FocalDepart,
                        target: Some(others),
                    });
                } else {
                    edges.push(Edge {
                        event: Event::FocalArrive,
                        target: Some(n_players + others),
                    });
                }
            }
        }
        edges.push(Edge {
            event: Event::Absorb,
            target: None,
        });
        edges
    }

    /// State ordinals listed in an order in which `I − W` is narrowly banded,
    /// or `None` when no such order is known for this space.
    pub fn banded_order(&self) -> Option<Vec<usize>> {
        match *self {
            StateSpace::Exact { .. } => None,
            // (f, k) ↦ 2k + f puts every neighbor within two positions.
            StateSpace::Reduced { n_players } => {
                Some((0..n_players).flat_map(|k| [k, n_players + k]).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn targets(edges: &[Edge]) -> Vec<Option<usize>> {
        edges.iter().map(|e| e.target).collect()
    }

    #[test]
    fn exact_ordinals_are_bitmasks() {
        let space = StateSpace::exact(3).unwrap();
        let s = State::Subset(PlayerSet::from_indices(&[0, 2]).unwrap());
        assert_eq!(space.ordinal(&s).unwrap(), 5);
        assert_eq!(
            space.ordinal(&State::Subset(PlayerSet::empty())).unwrap(),
            0
        );
        assert_eq!(space.size(), 8);
    }

    #[test]
    fn reduced_ordinal_formula() {
        let space = StateSpace::reduced(4).unwrap();
        let s = State::Lumped {
            focal_present: true,
            others: 2,
        };
        assert_eq!(space.ordinal(&s).unwrap(), 6);
        assert_eq!(space.size(), 8);
    }

    #[test]
    fn malformed_states_are_rejected() {
        let exact = StateSpace::exact(2).unwrap();
        let outside = State::Subset(PlayerSet::from_indices(&[3]).unwrap());
        assert!(matches!(
            exact.ordinal(&outside),
            Err(GameError::MalformedState(_))
        ));
        let reduced = StateSpace::reduced(3).unwrap();
        let too_many = State::Lumped {
            focal_present: false,
            others: 3,
        };
        assert!(reduced.ordinal(&too_many).is_err());
        assert!(reduced.state(6).is_err());
        assert!(PlayerSet::from_indices(&[64]).is_err());
        assert!(exact
            .ordinal(&State::Lumped {
                focal_present: true,
                others: 0
            })
            .is_err());
    }

    #[test]
    fn exact_cap_enforced() {
        assert!(StateSpace::exact(MAX_EXACT_PLAYERS).is_ok());
        assert!(matches!(
            StateSpace::exact(MAX_EXACT_PLAYERS + 1),
            Err(GameError::StateSpaceTooLarge(_))
        ));
    }

    #[test]
    fn exact_neighbors_of_singleton() {
        let space = StateSpace::exact(2).unwrap();
        let edges = space
            .neighbors(&State::Subset(PlayerSet::from_indices(&[0]).unwrap()))
            .unwrap();
        assert_eq!(
            edges,
            vec![
                Edge {
                    event: Event::Depart(0),
                    target: Some(0)
                },
                Edge {
                    event: Event::Arrive(1),
                    target: Some(0b11)
                },
                Edge {
                    event: Event::Absorb,
                    target: None
                },
            ]
        );
    }

    #[test]
    fn full_set_has_only_departures() {
        let space = StateSpace::exact(3).unwrap();
        let edges = space
            .neighbors(&State::Subset(PlayerSet::from_bits(0b111)))
            .unwrap();
        let departures = edges
            .iter()
            .filter(|e| matches!(e.event, Event::Depart(_)))
            .count();
        assert_eq!(departures, 3);
        assert!(!edges.iter().any(|e| matches!(e.event, Event::Arrive(_))));
        assert_eq!(edges.last().unwrap().event, Event::Absorb);
    }

    #[test]
    fn reduced_neighbors_match_lumped_exact_chain() {
        // n = 3, focal present alone: the two absent others arrive with
        // aggregate multiplicity 2 and the focal player may leave.
        let space = StateSpace::reduced(3).unwrap();
        let edges = space
            .neighbors(&State::Lumped {
                focal_present: true,
                others: 0,
            })
            .unwrap();
        assert_eq!(
            edges,
            vec![
                Edge {
                    event: Event::OthersArrive { count: 2 },
                    target: Some(4)
                },
                Edge {
                    event: Event::FocalDepart,
                    target: Some(0)
                },
                Edge {
                    event: Event::Absorb,
                    target: None
                },
            ]
        );

        // Lumping check: every exact edge out of {0} maps to a reduced edge
        // with the same target class and the multiplicities add up.
        let exact = StateSpace::exact(3).unwrap();
        let lump = |bits: usize| {
            let set = PlayerSet::from_bits(bits as u64);
            space
                .ordinal(&State::Lumped {
                    focal_present: set.contains(0),
                    others: set.without(0).len(),
                })
                .unwrap()
        };
        let mut counts = std::collections::BTreeMap::new();
        for e in exact.neighbors_of(0b001) {
            if let Some(t) = e.target {
                *counts.entry(lump(t)).or_insert(0) += 1;
            }
        }
        assert_eq!(counts.get(&4), Some(&2));
        assert_eq!(counts.get(&0), Some(&1));
    }

    #[test]
    fn banded_order_is_a_permutation() {
        let space = StateSpace::reduced(5).unwrap();
        let mut order = space.banded_order().unwrap();
        order.sort_unstable();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn ordinal_is_bijective(n in 1usize..8, reduced in any::<bool>()) {
            let space = if reduced { StateSpace::reduced(n).unwrap() } else { StateSpace::exact(n).unwrap() };
            for k in 0..space.size() {
                let s = space.state(k).unwrap();
                prop_assert_eq!(space.ordinal(&s).unwrap(), k);
            }
        }

        #[test]
        fn neighbors_have_no_self_loops_or_duplicates(n in 1usize..7, reduced in any::<bool>()) {
            let space = if reduced { StateSpace::reduced(n).unwrap() } else { StateSpace::exact(n).unwrap() };
            for k in 0..space.size() {
                let edges = space.neighbors_of(k);
                let mut t: Vec<_> = targets(&edges).into_iter().flatten().collect();
                prop_assert!(!t.contains(&k));
                let len = t.len();
                t.sort_unstable();
                t.dedup();
                prop_assert_eq!(t.len(), len);
                prop_assert_eq!(edges.iter().filter(|e| e.target.is_none()).count(), 1);
            }
        }
    }
}
