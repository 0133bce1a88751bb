//! Momentum-based control and simulation of a thrust-powered humanoid.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod model;
pub mod qp;
pub mod sim;
pub mod spatial;
