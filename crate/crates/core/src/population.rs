use std::ops::Range;

use crate::error::{Error, Result};

/// Lower bound applied to every probability before a logarithm is taken.
pub const PROB_FLOOR: f64 = 1e-6;

/// A layer of units grouped into hypercolumns of `n_mc` minicolumns each.
///
/// Every hypercolumn slice of `act` is a probability distribution, and so is
/// every slice of the unit trace `p` (up to the floor clamp).
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub n_hc: usize,
    pub n_mc: usize,
    pub act: Vec<f64>,
    pub p: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Population {
    pub fn new(n_hc: usize, n_mc: usize) -> Result<Self> {
        if n_hc == 0 || n_mc == 0 {
            return Err(Error::Config(format!(
                "population needs at least one hypercolumn and minicolumn (got {n_hc}x{n_mc})"
            )));
        }
        let n = n_hc * n_mc;
        let uniform = 1.0 / n_mc as f64;
        Ok(Population {
            n_hc,
            n_mc,
            act: vec![uniform; n],
            p: vec![uniform; n],
            bias: vec![uniform.ln(); n],
        })
    }

    pub fn len(&self) -> usize {
        self.n_hc * self.n_mc
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hc_range(&self, h: usize) -> Range<usize> {
        h * self.n_mc..(h + 1) * self.n_mc
    }

    /// Hypercolumn index of unit `i`.
    pub fn hc_of(&self, i: usize) -> usize {
        i / self.n_mc
    }
}

/// Per-hypercolumn sums of a vector laid out as `n_hc` slices of `n_mc`.
pub fn hc_sums(v: &[f64], n_mc: usize) -> Vec<f64> {
    v.chunks(n_mc).map(|c| c.iter().sum()).collect()
}
