use serde::{Deserialize, Serialize};

use crate::config::GameConfig;
use crate::error::{GameError, Result};
use crate::state_space::{State, StateSpace};

/// Per-state investment of every player.
///
/// Rows are indexed by state ordinal. In exact mode slot `j` is player `j`;
/// in reduced mode slot 0 is the focal player and slot 1 is the amount each
/// present non-focal player invests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    states: usize,
    slots: usize,
    values: Vec<f64>,
}

impl Policy {
    pub fn zeros(states: usize, slots: usize) -> Self {
        Policy {
            states,
            slots,
            values: vec![0.0; states * slots],
        }
    }

    pub fn for_space(space: &StateSpace) -> Self {
        Self::zeros(space.size(), space.slots())
    }

    pub fn from_fn(states: usize, slots: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(states * slots);
        for s in 0..states {
            for k in 0..slots {
                values.push(f(s, k));
            }
        }
        Policy {
            states,
            slots,
            values,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn get(&self, state: usize, slot: usize) -> f64 {
        self.values[state * self.slots + slot]
    }

    pub fn set(&mut self, state: usize, slot: usize, value: f64) {
        self.values[state * self.slots + slot] = value;
    }

    /// Strategy profile in one state.
    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.slots..(state + 1) * self.slots]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        &mut self.values[state * self.slots..(state + 1) * self.slots]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.slots.max(1)).take(self.states)
    }

    /// Checks shape, zero investment by absent players and `0 ≤ x ≤ cap`.
    pub fn check(&self, config: &GameConfig, space: &StateSpace) -> Result<()> {
        if self.states != space.size() || self.slots != space.slots() {
            return Err(GameError::InvalidPolicy(format!(
                "policy is {}×{} but the state space needs {}×{}",
                self.states,
                self.slots,
                space.size(),
                space.slots()
            )));
        }
        for s in 0..self.states {
            let row = self.row(s);
            let state = space.state_unchecked(s);
            for (slot, &x) in row.iter().enumerate() {
                let (present, cap) = match state {
                    State::Subset(set) => (set.contains(slot), config.players[slot].max_power),
                    State::Lumped {
                        focal_present,
                        others,
                    } => (
                        if slot == 0 { focal_present } else { others > 0 },
                        config.players[0].max_power,
                    ),
                };
                if !x.is_finite() || x < 0.0 {
                    return Err(GameError::InvalidPolicy(format!(
                        "state {state}, slot {slot}: investment {x} is not a non-negative number"
                    )));
                }
                if !present && x != 0.0 {
                    return Err(GameError::InvalidPolicy(format!(
                        "state {state}: absent slot {slot} invests {x}"
                    )));
                }
                if x > cap {
                    return Err(GameError::InvalidPolicy(format!(
                        "state {state}, slot {slot}: investment {x} exceeds cap {cap}"
                    )));
                }
            }
        }
        Ok(())
    }
}
