//! Nested dual-agent reinforcement learning for seasonal irrigation and
//! nitrogen scheduling.
//!
//! A parent agent (tabular Q-learning over macro water/nitrogen actions)
//! screens promising two-event application pairs by predicted seasonal yield;
//! a child agent (DQN) refines each event within a clipped 25-point
//! neighborhood grid. Both interact with a calibrated surrogate crop
//! simulator that exposes water/nitrogen stress factors, leaf area index,
//! and end-of-season yield. A flat DQN over the same 12 decision dates
//! serves as the baseline, and agronomic metrics (IWP, NPFP, CYASR)
//! evaluate the resulting schedules.

pub mod child_agent;
pub mod config;
pub mod crop_env;
pub mod error;
pub mod metrics;
pub mod parent_agent;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod spaces;
pub mod trainer;

pub use error::Error;
