//! State and action vocabularies for both MDP levels.
//!
//! The parent acts on a coarse grid of (I1, N1, I2, N2) macro pairs covering
//! two adjacent event dates; the child refines one event inside a clipped
//! 5x5 neighborhood grid around the daily macro action.

use crate::crop_env::{doy_of, SEASON_LENGTH, SEASON_START_DOY};
use crate::error::{Error, Result};

/// Points per axis of the child neighborhood grid (5x5 = 25 actions).
pub const CHILD_GRID_AXIS: usize = 5;
/// Total child actions per space.
pub const CHILD_ACTIONS: usize = CHILD_GRID_AXIS * CHILD_GRID_AXIS;
/// LAI normalization constant for the child feature vector.
pub const LAI_NORM: f64 = 6.0;

/// Macro action: irrigation (mm) and nitrogen (kg/ha) for the two dates of
/// a macro-cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentAction {
    pub i1: f64,
    pub n1: f64,
    pub i2: f64,
    pub n2: f64,
}

impl ParentAction {
    pub const ZERO: ParentAction = ParentAction {
        i1: 0.0,
        n1: 0.0,
        i2: 0.0,
        n2: 0.0,
    };

    /// Daily (irrigation, nitrogen) component for micro-step 0 or 1.
    pub fn event_amounts(&self, micro_step: usize) -> (f64, f64) {
        match micro_step {
            0 => (self.i1, self.n1),
            _ => (self.i2, self.n2),
        }
    }

    /// Integer key for Q-table indexing (amounts are grid multiples).
    pub fn key(&self) -> [u16; 4] {
        [
            self.i1.round() as u16,
            self.n1.round() as u16,
            self.i2.round() as u16,
            self.n2.round() as u16,
        ]
    }
}

/// Parent MDP state: the pair of adjacent event dates, the macro action
/// applied in the previous cycle, and the cycle index (1-6).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentState {
    pub days: (u32, u32),
    pub p_act_dis: ParentAction,
    pub cycle_index: u8,
}

/// Child MDP state: date, binarized stress flags, leaf area index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildState {
    pub day: u32,
    pub wsf: u8,
    pub nsf: u8,
    pub laid: f64,
}

/// Full Cartesian action grid {0, step, ..., range_max}^4 in lexicographic
/// order.
pub fn parent_action_grid(range_max: f64, step: f64) -> Result<Vec<ParentAction>> {
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("step {step} must be > 0")));
    }
    let levels = range_max / step;
    if (levels - levels.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "range_max {range_max} not divisible by step {step}"
        )));
    }
    let n = levels.round() as usize + 1;
    let level = |k: usize| k as f64 * step;
    let mut grid = Vec::with_capacity(n * n * n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    grid.push(ParentAction {
                        i1: level(a),
                        n1: level(b),
                        i2: level(c),
                        n2: level(d),
                    });
                }
            }
        }
    }
    Ok(grid)
}

/// The clipped 25-point neighborhood grid around a daily macro action.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildActionSpace {
    pub center: (f64, f64),
    pub axis_i: [f64; CHILD_GRID_AXIS],
    pub axis_n: [f64; CHILD_GRID_AXIS],
}

/// One refined action, identified by its index in its generating space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildAction {
    pub irrigation: f64,
    pub nitrogen: f64,
    pub index: usize,
}

fn clipped_axis(center: f64, delta: f64, max: f64) -> [f64; CHILD_GRID_AXIS] {
    let lo = (center - delta).max(0.0);
    let hi = (center + delta).min(max);
    let step = (hi - lo) / (CHILD_GRID_AXIS - 1) as f64;
    std::array::from_fn(|k| lo + k as f64 * step)
}

/// Build the child action space: per axis, 5 equidistant points spanning
/// [max(c - delta, 0), min(c + delta, max)] inclusive.
pub fn child_action_space(
    center: (f64, f64),
    delta: (f64, f64),
    bounds: (f64, f64),
) -> Result<ChildActionSpace> {
    if !(0.0..=bounds.0).contains(&center.0) || !(0.0..=bounds.1).contains(&center.1) {
        return Err(Error::InvalidArgument(format!(
            "center {center:?} outside bounds (0,0)..{bounds:?}"
        )));
    }
    Ok(ChildActionSpace {
        center,
        axis_i: clipped_axis(center.0, delta.0, bounds.0),
        axis_n: clipped_axis(center.1, delta.1, bounds.1),
    })
}

impl ChildActionSpace {
    /// Row-major (irrigation-major) enumeration of the 25 points.
    pub fn action(&self, index: usize) -> ChildAction {
        debug_assert!(index < CHILD_ACTIONS);
        ChildAction {
            irrigation: self.axis_i[index / CHILD_GRID_AXIS],
            nitrogen: self.axis_n[index % CHILD_GRID_AXIS],
            index,
        }
    }

    pub fn points(&self) -> impl Iterator<Item = ChildAction> + '_ {
        (0..CHILD_ACTIONS).map(|i| self.action(i))
    }
}

/// 4-feature network input: season position, stress flags, normalized LAI.
pub fn encode_child_state(s: &ChildState, season_length: usize) -> [f64; 4] {
    let pos = doy_of(s.day).saturating_sub(SEASON_START_DOY) as f64;
    let day_norm = (pos / (season_length - 1) as f64).clamp(0.0, 1.0);
    [
        day_norm,
        s.wsf as f64,
        s.nsf as f64,
        (s.laid / LAI_NORM).min(1.0),
    ]
}

/// Convenience wrapper using the shipped season length.
pub fn encode_child_state_default(s: &ChildState) -> [f64; 4] {
    encode_child_state(s, SEASON_LENGTH)
}

/// Binary stress flag: 1 if the continuous factor exceeds the threshold.
pub fn binarize_stress(raw: f64, threshold: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(Error::InvalidArgument(format!(
            "stress factor {raw} outside [0,1]"
        )));
    }
    Ok(if raw > threshold { 1 } else { 0 })
}
