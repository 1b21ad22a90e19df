//! Exploration machinery.
//!
//! Yield-thresholded parent candidate sets, the truncated Gaussian over the
//! child neighborhood grid, its uniform mixture, and the epsilon-greedy
//! selectors for both agents.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spaces::{ChildActionSpace, ParentAction, CHILD_ACTIONS};

/// Linear epsilon decay from `start` to `end` over `decay_episodes`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            return self.end;
        }
        let f = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * f
    }
}

/// Exploration hyperparameters.
///
/// `alpha_mix` is the uniform-mixture weight; the parent learning rate is a
/// separate constant (see the parent Q-table) even though both appear as
/// alpha in common notation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixtureParams {
    /// Candidate threshold fraction.
    pub eta: f64,
    /// Uniform weight in the mixed child distribution.
    pub alpha_mix: f64,
    /// Per-axis Gaussian sigma (delta / 2 by default).
    pub sigma: (f64, f64),
    pub epsilon_parent: EpsilonSchedule,
    pub epsilon_child: EpsilonSchedule,
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("eta {} outside (0,1]", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.alpha_mix) {
            return Err(Error::Config(format!(
                "alpha_mix {} outside [0,1]",
                self.alpha_mix
            )));
        }
        if self.sigma.0 <= 0.0 || self.sigma.1 <= 0.0 {
            return Err(Error::Config(format!("sigma {:?} must be > 0", self.sigma)));
        }
        for e in [&self.epsilon_parent, &self.epsilon_child] {
            if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
                return Err(Error::Config(format!("epsilon schedule {e:?} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Probabilities over the 25 points of one child action space.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: [f64; CHILD_ACTIONS],
}

impl ActionDistribution {
    pub fn uniform() -> Self {
        ActionDistribution {
            probs: [1.0 / CHILD_ACTIONS as f64; CHILD_ACTIONS],
        }
    }
}

/// Parent actions whose predicted yield reaches `eta` times the best.
///
/// Input order (grid order) is preserved; the result always contains every
/// argmax and is therefore nonempty.
pub fn candidate_set(predicted_yields: &[(ParentAction, f64)], eta: f64) -> Result<Vec<ParentAction>> {
    if predicted_yields.is_empty() {
        return Err(Error::InvalidArgument("empty yield map".into()));
    }
    let max = predicted_yields
        .iter()
        .map(|(_, y)| *y)
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = eta * max;
    Ok(predicted_yields
        .iter()
        .filter(|(_, y)| *y >= threshold)
        .map(|(a, _)| *a)
        .collect())
}

/// Uniform draw from a candidate set.
pub fn sample_candidate(candidates: &[ParentAction], rng: &mut ChaCha8Rng) -> Result<ParentAction> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// Truncated Gaussian over the 25-point grid, centered on the space center
/// and normalized over the clipped points.
pub fn gaussian_probs(space: &ChildActionSpace, sigma: (f64, f64)) -> ActionDistribution {
    debug_assert!(sigma.0 > 0.0 && sigma.1 > 0.0);
    let (ic, nc) = space.center;
    let mut probs = [0.0; CHILD_ACTIONS];
    let mut total = 0.0;
    for a in space.points() {
        let di = a.irrigation - ic;
        let dn = a.nitrogen - nc;
        let w = (-(di * di / (2.0 * sigma.0 * sigma.0) + dn * dn / (2.0 * sigma.1 * sigma.1))).exp();
        probs[a.index] = w;
        total += w;
    }
    for p in &mut probs {
        *p /= total;
    }
    ActionDistribution { probs }
}

/// Mix a uniform distribution into the Gaussian: (1 - alpha) * p + alpha / 25.
pub fn mixed_probs(gauss: &ActionDistribution, alpha_mix: f64) -> Result<ActionDistribution> {
    if !(0.0..=1.0).contains(&alpha_mix) {
        return Err(Error::InvalidArgument(format!(
            "alpha_mix {alpha_mix} outside [0,1]"
        )));
    }
    let uniform = 1.0 / CHILD_ACTIONS as f64;
    let mut probs = [0.0; CHILD_ACTIONS];
    for (out, p) in probs.iter_mut().zip(gauss.probs.iter()) {
        *out = (1.0 - alpha_mix) * p + alpha_mix * uniform;
    }
    Ok(ActionDistribution { probs })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Child epsilon-greedy: argmax of the q-values with probability 1 - eps,
/// otherwise a draw from the mixed distribution. Ties go to the lowest
/// index.
pub fn select_child_action(
    q_values: &[f64; CHILD_ACTIONS],
    dist: &ActionDistribution,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        sample_index(&dist.probs, rng)
    } else {
        argmax(q_values)
    }
}

/// Parent epsilon-greedy: argmax over the full grid (grid-order ties) when
/// exploiting, a uniform candidate draw when exploring.
pub fn select_parent_action(
    q_row: &[(ParentAction, f64)],
    candidates: &[ParentAction],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ParentAction> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        sample_candidate(candidates, rng)
    } else {
        if q_row.is_empty() {
            return Err(Error::InvalidArgument("empty q row".into()));
        }
        let mut best = 0;
        for (i, (_, v)) in q_row.iter().enumerate() {
            if *v > q_row[best].1 {
                best = i;
            }
        }
        Ok(q_row[best].0)
    }
}
