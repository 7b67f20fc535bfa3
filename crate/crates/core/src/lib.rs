//! Cyclic co-learning of sounding-object grounding and audio-visual sound
//! separation, on a seeded synthetic cocktail-party benchmark.

pub mod colearn;
pub mod config;
pub mod error;
pub mod evalsuite;
pub mod nets;
pub mod seed;
pub mod synthworld;
pub mod tfspace;
pub mod trainer;

#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
