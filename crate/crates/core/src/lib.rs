pub mod audit;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod probes;

pub use error::{PcnError, Result};
