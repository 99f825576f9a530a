use std::fmt::Write as _;

use super::channel::ChannelReport;
use crate::network::Mode;
use crate::ops::{FlopWeights, OpCounts};

/// Measurements of one stream run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineStats {
    pub mode: Mode,
    pub fifo_depth: usize,
    pub wall_seconds: f64,
    /// Submission-to-completion time per image, in microseconds.
    pub latencies_us: Vec<f64>,
    /// Cumulative stalls of every channel (in `channels` order) when each
    /// image completed.
    pub stall_snapshots: Vec<Vec<u64>>,
    pub channels: Vec<ChannelReport>,
    /// Per-image operation counts gathered from every stage.
    pub counts: Vec<OpCounts>,
}

impl PipelineStats {
    pub fn images(&self) -> usize {
        self.latencies_us.len()
    }

    pub fn throughput(&self) -> f64 {
        if self.wall_seconds > 0.0 {
            self.images() as f64 / self.wall_seconds
        } else {
            0.0
        }
    }

    pub fn total_counts(&self) -> OpCounts {
        self.counts.iter().copied().sum()
    }

    pub fn mean_latency_us(&self) -> f64 {
        if self.latencies_us.is_empty() {
            return 0.0;
        }
        self.latencies_us.iter().sum::<f64>() / self.latencies_us.len() as f64
    }

    pub fn median_latency_us(&self) -> f64 {
        let mut v = self.latencies_us.clone();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len().is_multiple_of(2) {
            (v[m - 1] + v[m]) / 2.0
        } else {
            v[m]
        }
    }

    pub fn total_stalls(&self) -> u64 {
        self.channels.iter().map(|c| c.write_stalls + c.read_stalls).sum()
    }

    /// Every channel delivered everything it accepted.
    pub fn drained(&self) -> bool {
        self.channels.iter().all(|c| c.sent == c.received)
    }

    /// Per-image CSV: tag, latency, cumulative stalls per channel, FLOPs and
    /// bytes.
    pub fn to_csv(&self, weights: FlopWeights) -> String {
        let mut out = String::from("image_tag,latency_us");
        for c in &self.channels {
            write!(out, ",stalls_{}", c.name).unwrap();
        }
        out.push_str(",ops,bytes\n");
        for (tag, lat) in self.latencies_us.iter().enumerate() {
            write!(out, "{tag},{lat:.3}").unwrap();
            for s in &self.stall_snapshots[tag] {
                write!(out, ",{s}").unwrap();
            }
            let c = &self.counts[tag];
            writeln!(out, ",{},{}", c.flops(weights), c.bytes()).unwrap();
        }
        out
    }
}
