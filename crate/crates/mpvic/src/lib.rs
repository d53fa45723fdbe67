//! Simulation lab for model-predictive variable impedance control.
//!
//! A Cartesian impedance plant tracks a reference under task disturbances; a
//! probabilistic network ensemble learns the closed-loop dynamics from logged
//! transitions; a sampling planner retunes the stiffness command at 10 Hz.

pub mod cem;
pub mod dynamics;
pub mod episode;
pub mod explore;
pub mod harness;
pub mod mpc;
pub mod oracle;
pub mod penn;
pub mod seeding;
