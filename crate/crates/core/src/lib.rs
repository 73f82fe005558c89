//! Deterministic simulator for decentralized sparse personalized federated
//! learning: masked local training, intersection-weighted gossip, cosine-
//! annealed mask search, non-IID partitioners, byte-exact communication
//! accounting, and closed-form privacy-bound evaluation.

pub mod accounting;
pub mod bounds;
pub mod data;
pub mod error;
pub mod evolve;
pub mod gossip;
pub mod mask;
pub mod model;
pub mod rng;
pub mod runner;
pub mod topology;

pub use error::{Error, Result};
