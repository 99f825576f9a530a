//! Rate-based BCPNN with structural plasticity, a stream-engine emulation of
//! its dataflow accelerator and an analytic roofline model.

pub mod config;
pub mod dataflow;
pub mod dataio;
pub mod error;
pub mod learning;
pub mod modelfile;
pub mod network;
pub mod ops;
pub mod perfmodel;
pub mod population;
pub mod projection;
pub mod structural;

pub use config::ModelConfig;
pub use dataio::Dataset;
pub use error::{Error, Result};
pub use network::{Mode, Network, Prediction};
pub use ops::{FlopWeights, OpCounts};
pub use population::Population;
pub use projection::Projection;
pub use structural::RewireEvent;
