//! Cooperative-driving building blocks and a deterministic convoy simulator.
//!
//! Each vehicle keeps a bounded store of the latest states it has accepted
//! from the convoy. A receive gate decides which senders are stored, a
//! transmit gate decides when to broadcast, a spacing policy turns the store
//! into a target speed and heading, and speed and steering controllers turn
//! the target into actuator commands. The simulator closes that loop over a
//! lossy broadcast channel and records ground truth for the metrics.

pub mod control;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod net;
pub mod policy;
pub mod sim;
