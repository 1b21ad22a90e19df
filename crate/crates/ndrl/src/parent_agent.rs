//! Tabular Q-learning for the parent agent.
//!
//! States are keyed by (cycle index, previous macro action); the event
//! dates are fixed per year and therefore redundant given the cycle index.
//! Missing entries read as zero.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spaces::{ParentAction, ParentState};

/// Compact table key for a parent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParentStateKey {
    pub cycle: u8,
    pub prev_action: [u16; 4],
}

impl From<&ParentState> for ParentStateKey {
    fn from(s: &ParentState) -> Self {
        ParentStateKey {
            cycle: s.cycle_index,
            prev_action: s.p_act_dis.key(),
        }
    }
}

/// Parent action values with Q-learning update parameters.
#[derive(Debug, Clone)]
pub struct QTable {
    entries: BTreeMap<(ParentStateKey, [u16; 4]), f64>,
    pub lr: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(lr: f64, gamma: f64) -> Result<Self> {
        if !(lr > 0.0 && lr <= 1.0) {
            return Err(Error::Config(format!("learning rate {lr} outside (0,1]")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0,1]")));
        }
        Ok(QTable {
            entries: BTreeMap::new(),
            lr,
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored value or 0; never creates an entry.
    pub fn lookup(&self, state: ParentStateKey, action: &ParentAction) -> f64 {
        self.entries
            .get(&(state, action.key()))
            .copied()
            .unwrap_or(0.0)
    }

    /// One Q-learning backup. `next` is `None` for terminal states, which
    /// zeroes the bootstrap term. Returns the updated value.
    pub fn update(
        &mut self,
        state: ParentStateKey,
        action: &ParentAction,
        reward: f64,
        next: Option<ParentStateKey>,
        next_actions: &[ParentAction],
    ) -> f64 {
        let max_next = match next {
            Some(s_next) if !next_actions.is_empty() => next_actions
                .iter()
                .map(|a| self.lookup(s_next, a))
                .fold(f64::NEG_INFINITY, f64::max),
            _ => 0.0,
        };
        let current = self.lookup(state, action);
        let updated = current + self.lr * (reward + self.gamma * max_next - current);
        self.entries.insert((state, action.key()), updated);
        updated
    }

    /// Sorted key-value text dump:
    /// `cycle p1 p2 p3 p4 a1 a2 a3 a4 value` per line.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for ((s, a), v) in &self.entries {
            let p = s.prev_action;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {}\n",
                s.cycle, p[0], p[1], p[2], p[3], a[0], a[1], a[2], a[3], v
            ));
        }
        out
    }

    pub fn import(text: &str, lr: f64, gamma: f64) -> Result<Self> {
        let path = Path::new("qtable");
        let mut table = QTable::new(lr, gamma)?;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 10 {
                return Err(Error::parse(path, lineno, "expected 10 fields"));
            }
            let int = |i: usize| -> Result<u16> {
                fields[i]
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad integer {:?}", fields[i])))
            };
            let key = ParentStateKey {
                cycle: int(0)? as u8,
                prev_action: [int(1)?, int(2)?, int(3)?, int(4)?],
            };
            let action = [int(5)?, int(6)?, int(7)?, int(8)?];
            let value: f64 = fields[9]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value {:?}", fields[9])))?;
            table.entries.insert((key, action), value);
        }
        Ok(table)
    }
}

/// A tiny deterministic 2-state, 4-action cyclic MDP used as a convergence
/// fixture: state alternates 0 -> 1 -> 0 regardless of action, and the
/// reward depends on (state, action).
pub struct ToyMdp {
    pub rewards: [[f64; 4]; 2],
    pub gamma: f64,
}

impl ToyMdp {
    pub fn shipped() -> Self {
        ToyMdp {
            rewards: [[1.0, 5.0, -2.0, 0.5], [3.0, -1.0, 4.0, 2.0]],
            gamma: 0.95,
        }
    }

    pub fn next_state(&self, state: usize) -> usize {
        1 - state
    }
}
