pub mod cli;
pub mod error;
pub mod eval;
pub mod idd;
pub mod iec;
pub mod layers;
pub mod numerics;
pub mod provider;
pub mod synth;
pub mod textfront;
pub mod training;

pub use error::{Error, Result};
