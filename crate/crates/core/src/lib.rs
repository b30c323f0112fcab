//! Randomness-metered transforms between heavy-hitter global stability,
//! deterministic global stability, replicability and differential privacy,
//! checked exactly (by tape and dataset enumeration) or by seeded Monte Carlo.

pub mod algorithm;
pub mod compress;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod pac;
pub mod sample;
pub mod seed;
pub mod tape;
pub mod task;
pub mod transforms;
pub mod verify;

pub use algorithm::{Algorithm, AlgorithmRef};
pub use dist::FiniteDistribution;
pub use error::{Error, Result};
pub use sample::{Sample, SampleRef};
pub use tape::BitTape;
pub use task::{Output, StatisticalTask, BOTTOM};
