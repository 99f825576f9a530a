use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::population::Population;

/// Connectivity from a pre to a post population.
///
/// `p_joint` and `w` are dense `n_pre x n_post` row-major matrices. Only
/// entries inside an active (pre-hypercolumn, post-hypercolumn) block of the
/// receptive-field mask take part in support; silent blocks are updated only
/// when `track_silent` is set (structural plasticity needs their statistics to
/// rank rewiring candidates).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub pre_hc: usize,
    pub pre_mc: usize,
    pub post_hc: usize,
    pub post_mc: usize,
    /// Active pre-hypercolumns per post-hypercolumn.
    pub nact: usize,
    pub p_joint: Vec<f64>,
    pub w: Vec<f64>,
    pub track_silent: bool,
    /// `pre_hc x post_hc`, indexed `g * post_hc + h`.
    mask: Vec<bool>,
    /// Ascending active pre-hypercolumns of each post-hypercolumn.
    active: Vec<Vec<usize>>,
}

impl Projection {
    /// Independence-initialized projection with a seeded random receptive
    /// field of exactly `nact` pre-hypercolumns per post-hypercolumn.
    pub fn new(pre: &Population, post: &Population, nact: usize, seed: u64) -> Result<Self> {
        if nact > pre.n_hc {
            return Err(Error::Config(format!(
                "nact = {nact} exceeds the {} pre-synaptic hypercolumns",
                pre.n_hc
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let active = (0..post.n_hc)
            .map(|_| {
                let mut picked = rand::seq::index::sample(&mut rng, pre.n_hc, nact).into_vec();
                picked.sort_unstable();
                picked
            })
            .collect();
        Ok(Self::with_active(pre, post, nact, active))
    }

    /// Fully connected projection (every block active).
    pub fn dense(pre: &Population, post: &Population) -> Self {
        let active = vec![(0..pre.n_hc).collect(); post.n_hc];
        Self::with_active(pre, post, pre.n_hc, active)
    }

    fn with_active(pre: &Population, post: &Population, nact: usize, active: Vec<Vec<usize>>) -> Self {
        let (n_pre, n_post) = (pre.len(), post.len());
        let mut p_joint = vec![0.0; n_pre * n_post];
        for (i, row) in p_joint.chunks_mut(n_post).enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = pre.p[i] * post.p[j];
            }
        }
        let mut mask = vec![false; pre.n_hc * post.n_hc];
        for (h, gs) in active.iter().enumerate() {
            for &g in gs {
                mask[g * post.n_hc + h] = true;
            }
        }
        Projection {
            pre_hc: pre.n_hc,
            pre_mc: pre.n_mc,
            post_hc: post.n_hc,
            post_mc: post.n_mc,
            nact,
            p_joint,
            w: vec![0.0; n_pre * n_post],
            track_silent: false,
            mask,
            active,
        }
    }

    pub fn n_pre(&self) -> usize {
        self.pre_hc * self.pre_mc
    }

    pub fn n_post(&self) -> usize {
        self.post_hc * self.post_mc
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_post() + j
    }

    pub fn is_active(&self, pre_hc: usize, post_hc: usize) -> bool {
        self.mask[pre_hc * self.post_hc + post_hc]
    }

    pub fn active(&self, post_hc: usize) -> &[usize] {
        &self.active[post_hc]
    }

    /// Number of active entries in column `post_hc` of the mask.
    pub fn column_count(&self, post_hc: usize) -> usize {
        (0..self.pre_hc).filter(|&g| self.is_active(g, post_hc)).count()
    }

    /// Replace the receptive field of `post_hc`. The caller preserves cardinality.
    pub(crate) fn set_active(&mut self, post_hc: usize, mut gs: Vec<usize>) {
        gs.sort_unstable();
        for &g in &self.active[post_hc] {
            self.mask[g * self.post_hc + post_hc] = false;
        }
        for &g in &gs {
            self.mask[g * self.post_hc + post_hc] = true;
        }
        self.active[post_hc] = gs;
    }

    /// Reset one block's joint traces to independence and its weights to 0.
    pub fn reset_block(&mut self, pre_hc: usize, post_hc: usize, pre_p: &[f64], post_p: &[f64]) {
        let n_post = self.n_post();
        let cols = post_hc * self.post_mc..(post_hc + 1) * self.post_mc;
        for i in pre_hc * self.pre_mc..(pre_hc + 1) * self.pre_mc {
            for j in cols.clone() {
                self.p_joint[i * n_post + j] = pre_p[i] * post_p[j];
                self.w[i * n_post + j] = 0.0;
            }
        }
    }

    /// Zero one block's weights (used when the block goes silent).
    pub fn clear_block_weights(&mut self, pre_hc: usize, post_hc: usize) {
        let n_post = self.n_post();
        for i in pre_hc * self.pre_mc..(pre_hc + 1) * self.pre_mc {
            let start = i * n_post + post_hc * self.post_mc;
            self.w[start..start + self.post_mc].fill(0.0);
        }
    }

    /// Raw mask, row-major `pre_hc x post_hc`.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub(crate) fn from_parts(dims: [usize; 5], p_joint: Vec<f64>, mask: Vec<bool>, track_silent: bool) -> Result<Self> {
        let [pre_hc, pre_mc, post_hc, post_mc, nact] = dims;
        let n = pre_hc * pre_mc * post_hc * post_mc;
        if p_joint.len() != n || mask.len() != pre_hc * post_hc {
            return Err(Error::Format("projection payload has the wrong size".into()));
        }
        let active: Vec<Vec<usize>> = (0..post_hc)
            .map(|h| (0..pre_hc).filter(|&g| mask[g * post_hc + h]).collect())
            .collect();
        if active.iter().any(|gs| gs.len() != nact) {
            return Err(Error::Format(format!(
                "mask column cardinality differs from nact = {nact}"
            )));
        }
        Ok(Projection {
            pre_hc,
            pre_mc,
            post_hc,
            post_mc,
            nact,
            p_joint,
            w: vec![0.0; n],
            track_silent,
            mask,
            active,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independence_init_gives_zero_weights() {
        let pre = Population::new(1, 2).unwrap();
        let post = Population::new(1, 4).unwrap();
        let proj = Projection::new(&pre, &post, 1, 3).unwrap();
        assert!(proj.p_joint.iter().all(|&x| x == 0.125));
        assert!(proj.w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn model1_mask_cardinality() {
        let pre = Population::new(784, 2).unwrap();
        let post = Population::new(32, 128).unwrap();
        let proj = Projection::new(&pre, &post, 128, 11).unwrap();
        for h in 0..32 {
            assert_eq!(proj.column_count(h), 128);
            assert_eq!(proj.active(h).len(), 128);
            assert!(proj.active(h).windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn mask_is_seed_deterministic() {
        let pre = Population::new(784, 2).unwrap();
        let post = Population::new(32, 4).unwrap();
        let a = Projection::new(&pre, &post, 128, 5).unwrap();
        let b = Projection::new(&pre, &post, 128, 5).unwrap();
        assert_eq!(a.mask(), b.mask());
        let differing = (6..106)
            .filter(|&s| Projection::new(&pre, &post, 128, s).unwrap().mask() != a.mask())
            .count();
        assert_eq!(differing, 100);
    }

    #[test]
    fn nact_above_pre_hc_rejected() {
        let pre = Population::new(3, 2).unwrap();
        let post = Population::new(2, 2).unwrap();
        assert!(matches!(Projection::new(&pre, &post, 4, 0), Err(Error::Config(_))));
    }

    #[test]
    fn set_active_keeps_mask_in_sync() {
        let pre = Population::new(6, 2).unwrap();
        let post = Population::new(2, 2).unwrap();
        let mut proj = Projection::new(&pre, &post, 3, 0).unwrap();
        proj.set_active(1, vec![5, 0, 2]);
        assert_eq!(proj.active(1), &[0, 2, 5]);
        for g in 0..6 {
            assert_eq!(proj.is_active(g, 1), [0, 2, 5].contains(&g));
        }
    }
}
