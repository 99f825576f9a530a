//! Software emulation of the accelerator's stream architecture.

pub mod channel;
pub mod engine;
pub mod graph;
pub mod oracle;
pub mod packet;
pub mod stats;

pub use engine::{run_stream, Jitter, StreamOptions};
pub use graph::{build_pipeline, check_pipeline, Pipeline, Violation};
pub use oracle::{sequential_oracle, RunOutput};
pub use packet::{depacketize, merge_packets, packetize, split_packet, Packet};
pub use stats::PipelineStats;
