//! Reward functions for both agents.
//!
//! The child reward is predicted yield plus stress-coupled adjustments per
//! resource; the parent reward passes the child's best Q-value through,
//! zeroes ineffective refinement, and applies a large fixed penalty on
//! budget violation. The indicator clauses are evaluated literally, so a
//! case firing both the reward and penalty clause nets to zero.

use crate::error::{Error, Result};

/// Fixed parent penalty applied when a cumulative budget is met or exceeded.
pub const PARENT_BUDGET_PENALTY: f64 = -5370.0;

/// Seasonal resource budgets (field control totals) and their per-event
/// averages over the 12 events.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Budget {
    pub i_total: f64,
    pub n_total: f64,
}

impl Budget {
    pub const CONTROL: Budget = Budget {
        i_total: 537.0,
        n_total: 250.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.i_total <= 0.0 || self.n_total <= 0.0 {
            return Err(Error::Config(format!(
                "budgets must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn avg_i(&self) -> f64 {
        self.i_total / 12.0
    }

    pub fn avg_n(&self) -> f64 {
        self.n_total / 12.0
    }
}

/// Reward/penalty magnitudes per resource, kg/ha-equivalent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardWeights {
    pub w_i: f64,
    pub w_n: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w_i: 100.0, w_n: 100.0 }
    }
}

/// Binary stress flags and the amounts applied at one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressContext {
    pub wsf: u8,
    pub nsf: u8,
    pub applied_i: f64,
    pub applied_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Irrigation,
    Nitrogen,
}

fn amount_and_avg(ctx: &StressContext, resource: Resource, budget: &Budget) -> (f64, f64) {
    match resource {
        Resource::Irrigation => (ctx.applied_i, budget.avg_i()),
        Resource::Nitrogen => (ctx.applied_n, budget.avg_n()),
    }
}

/// Penalty indicator: over-application without stress, or under-application
/// under joint stress.
pub fn indicator_penalty(ctx: &StressContext, resource: Resource, budget: &Budget) -> u8 {
    let (x, avg) = amount_and_avg(ctx, resource, budget);
    let wsf = ctx.wsf > 0;
    let nsf = ctx.nsf > 0;
    let fired = (!wsf && !nsf && x > avg)
        || (wsf && nsf && x < avg)
        || ((!wsf || !nsf) && x > avg);
    fired as u8
}

/// Reward indicator: above-average application while stressed.
pub fn indicator_reward(ctx: &StressContext, resource: Resource, budget: &Budget) -> u8 {
    let (x, avg) = amount_and_avg(ctx, resource, budget);
    let wsf = ctx.wsf > 0;
    let nsf = ctx.nsf > 0;
    let fired = (wsf && nsf && x > avg) || (wsf && x > avg) || (nsf && x > avg);
    fired as u8
}

/// Child reward: predicted yield plus the per-resource weighted indicator
/// balance.
pub fn child_reward(hwam: f64, ctx: &StressContext, weights: &RewardWeights, budget: &Budget) -> f64 {
    debug_assert!(hwam >= 0.0);
    let mut reward = hwam;
    for (resource, w) in [
        (Resource::Irrigation, weights.w_i),
        (Resource::Nitrogen, weights.w_n),
    ] {
        let plus = indicator_reward(ctx, resource, budget) as f64;
        let minus = indicator_penalty(ctx, resource, budget) as f64;
        reward += w * (plus - minus);
    }
    reward
}

/// Parent reward. Budget violation dominates; otherwise refinement that did
/// not improve on the raw macro action earns zero, and effective refinement
/// passes the child's best Q-value through.
pub fn parent_reward(
    cum_i: f64,
    cum_n: f64,
    h_c: f64,
    h_p: f64,
    q_cmax: f64,
    budget: &Budget,
) -> f64 {
    if cum_i >= budget.i_total || cum_n >= budget.n_total {
        PARENT_BUDGET_PENALTY
    } else if h_c <= h_p {
        0.0
    } else {
        q_cmax
    }
}
