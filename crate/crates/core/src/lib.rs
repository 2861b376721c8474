//! Ring-road mixed-autonomy traffic simulation with piecewise-constant
//! advisory policies.
//!
//! A single ego vehicle shares a closed single-lane ring with IDM-driven
//! traffic. A policy observes the ego and its leader and issues advice
//! (a target speed or acceleration with an acceptable range) that is held
//! for Δ steps; a driver, simulated or human, turns the advice into ego
//! commands.

pub mod advisory;
pub mod driver;
pub mod episode;
pub mod metrics;
pub mod ring;
pub mod scenario;
pub mod units;

