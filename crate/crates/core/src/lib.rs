//! Multi-agent support for people managing diet-related chronic conditions
//! alongside disabilities or neurodivergence.
//!
//! A [`bus::Blackboard`] carries events and prioritized entries between the
//! agents: the [`meal_planner`], the [`reminder`] bandit, the food
//! [`guidance`] agent and the health [`monitor`]. The [`coordinator`]
//! arbitrates their proposals, with medical constraints as hard vetoes, and
//! explains every decision. [`synthgen`] generates seeded cohorts,
//! [`scenario`] runs them in closed loop and [`metrics`] scores the trace.

pub mod bus;
pub mod coordinator;
pub mod domain;
pub mod error;
pub mod guidance;
pub mod meal_planner;
pub mod metrics;
pub mod monitor;
pub mod reminder;
pub mod rng;
pub mod scenario;
pub mod synthgen;

pub use error::LoadError;
