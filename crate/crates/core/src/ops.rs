//! Primitive operation and traffic counters.
//!
//! The sequential reference, the stream engine and the analytic model all
//! count the same primitives, so their totals can be compared exactly.

use std::ops::{Add, AddAssign};

/// Counts of primitive floating-point operations and bytes moved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mac: u64,
    pub add: u64,
    pub mul: u64,
    pub div: u64,
    pub exp: u64,
    pub log: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

/// Bytes per streamed value (single precision, as on the accelerator).
pub const BYTES_PER_VALUE: u64 = 4;

/// FLOP weight of each primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopWeights {
    pub exp: f64,
    pub log: f64,
}

impl Default for FlopWeights {
    fn default() -> Self {
        FlopWeights { exp: 1.0, log: 1.0 }
    }
}

impl OpCounts {
    /// Floating-point operations; a MAC counts as two.
    pub fn flops(&self, weights: FlopWeights) -> f64 {
        2.0 * self.mac as f64
            + (self.add + self.mul + self.div) as f64
            + weights.exp * self.exp as f64
            + weights.log * self.log as f64
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }

    pub fn read_values(&mut self, n: usize) {
        self.bytes_read += n as u64 * BYTES_PER_VALUE;
    }

    pub fn write_values(&mut self, n: usize) {
        self.bytes_written += n as u64 * BYTES_PER_VALUE;
    }

    // Shared per-primitive accounting for the kernels in `learning`.

    pub(crate) fn softmax(&mut self, n: usize) {
        let n = n as u64;
        self.add += 2 * n;
        self.div += 2 * n;
        self.exp += n;
    }

    pub(crate) fn trace_update(&mut self, n: usize) {
        self.mul += 2 * n as u64;
        self.add += n as u64;
    }

    pub(crate) fn joint_update(&mut self, n: usize) {
        self.mul += 3 * n as u64;
        self.add += n as u64;
    }

    pub(crate) fn weight_eval(&mut self, n: usize) {
        self.mul += n as u64;
        self.div += n as u64;
        self.log += n as u64;
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.mac += o.mac;
        self.add += o.add;
        self.mul += o.mul;
        self.div += o.div;
        self.exp += o.exp;
        self.log += o.log;
        self.bytes_read += o.bytes_read;
        self.bytes_written += o.bytes_written;
    }
}

impl Add for OpCounts {
    type Output = OpCounts;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::iter::Sum for OpCounts {
    fn sum<I: Iterator<Item = OpCounts>>(iter: I) -> Self {
        iter.fold(OpCounts::default(), Add::add)
    }
}
