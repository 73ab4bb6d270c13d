//! Simulation and certification workbench for sampled-data nonlinear control
//! loops whose sampling period varies from step to step.
//!
//! The crate centers on discrete-time closed-loop maps x+ = F(x, e, T): the
//! state after one zero-order-hold interval of length T, with measurement
//! error e entering the controller. On top of that sit four activities:
//! simulation of period/error scenarios, grid certification of Lyapunov
//! decrease conditions with explicit margins, construction of transient
//! envelopes and gain bounds from certified data, and randomized search for
//! counterexamples to claimed bounds.

pub mod bounds;
pub mod certifier;
pub mod cli;
pub mod comparison;
pub mod example;
pub mod expr;
pub mod falsify;
pub mod grid;
pub mod integrate;
pub mod models;
pub mod report;
pub mod rng;
pub mod trajectory;
