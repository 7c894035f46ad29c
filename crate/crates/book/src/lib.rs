//! Book chapters as doctests. Each module's docs are one chapter of
//! `book/src`, so every `rust` snippet in the guide compiles and runs under
//! `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/blackboard.md")]
pub mod blackboard {}

#[doc = include_str!("../../../book/src/coordinator.md")]
pub mod coordinator {}

#[doc = include_str!("../../../book/src/meal-planner.md")]
pub mod meal_planner {}

#[doc = include_str!("../../../book/src/reminders.md")]
pub mod reminders {}

#[doc = include_str!("../../../book/src/guidance.md")]
pub mod guidance {}

#[doc = include_str!("../../../book/src/monitor.md")]
pub mod monitor {}

#[doc = include_str!("../../../book/src/cohorts.md")]
pub mod cohorts {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
