//! Simulation and analysis toolkit for multiserver-job queueing systems.
//!
//! Jobs of type `i` arrive at rate `lambda_i`, occupy `l_i` of `n` servers at
//! once, and hold them for an exponential time with rate `mu_i`. The crate
//! provides the model and its derived quantities ([`model`]), scheduling
//! policies ([`policies`]), a coupled event-driven simulator ([`sim`]),
//! batch-means estimation ([`stats`]), closed-form bounds ([`bounds`]) and
//! exact reference solutions ([`oracle`]).

pub mod model;
pub mod policies;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod bounds;
pub mod oracle;
pub mod experiment;
