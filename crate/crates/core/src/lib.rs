//! Simulation and post-processing for quantum-secured two-way time
//! transfer between a satellite clock A and a ground clock B.

pub mod adversary;
pub mod bb84;
pub mod channel;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod keycrypto;
pub mod pairing;
pub mod profile;
pub mod rng;
pub mod scenario;
pub mod security;
pub mod session;
pub mod time;
pub mod timebase;
