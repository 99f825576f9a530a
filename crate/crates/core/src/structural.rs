//! Receptive-field rewiring driven by block mutual information.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::population::Population;
use crate::projection::Projection;

/// One hidden hypercolumn's rewiring at a given unsupervised step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewireEvent {
    pub step: u64,
    pub post_hc: usize,
    pub removed: Vec<usize>,
    pub added: Vec<usize>,
}

/// Mutual information `sum p_ij ln(p_ij / (p_i p_j))` of one
/// (pre-hypercolumn, post-hypercolumn) block. A silent block whose joint
/// traces are not tracked sits at independence and scores 0.
pub fn mi_score(proj: &Projection, pre: &Population, post: &Population, pre_hc: usize, post_hc: usize) -> Result<f64> {
    if pre_hc >= proj.pre_hc || post_hc >= proj.post_hc {
        return Err(Error::Input(format!(
            "block ({pre_hc}, {post_hc}) outside {}x{} hypercolumns",
            proj.pre_hc, proj.post_hc
        )));
    }
    if !proj.track_silent && !proj.is_active(pre_hc, post_hc) {
        return Ok(0.0);
    }
    let n_post = proj.n_post();
    let mut score = 0.0;
    for i in pre.hc_range(pre_hc) {
        for j in post.hc_range(post_hc) {
            let p_ij = proj.p_joint[i * n_post + j];
            score += p_ij * (p_ij / (pre.p[i] * post.p[j])).ln();
        }
    }
    Ok(score)
}

/// Scores of every pre-hypercolumn for `post_hc`.
pub fn block_scores(proj: &Projection, pre: &Population, post: &Population, post_hc: usize) -> Result<Vec<f64>> {
    (0..proj.pre_hc)
        .map(|g| mi_score(proj, pre, post, g, post_hc))
        .collect()
}

/// Mean score over all active blocks of the input-hidden projection.
pub fn mean_active_score(net: &Network) -> Result<f64> {
    let proj = &net.input_hidden;
    let mut total = 0.0;
    for h in 0..proj.post_hc {
        for &g in proj.active(h) {
            total += mi_score(proj, &net.input, &net.hidden, g, h)?;
        }
    }
    Ok(total / (proj.post_hc * proj.nact) as f64)
}

/// For every hidden hypercolumn, swap up to `n_swaps` of its lowest-scoring
/// active inputs for the highest-scoring inactive ones. A swap happens only
/// when the newcomer scores strictly higher than the input it replaces; ties
/// in ranking go to the lower index. Newly activated blocks restart at
/// independence.
pub fn rewire(net: &mut Network, n_swaps: usize) -> Result<Vec<RewireEvent>> {
    let nact = net.input_hidden.nact;
    if n_swaps > nact {
        return Err(Error::Config(format!("n_swaps = {n_swaps} exceeds nact_hi = {nact}")));
    }
    let mut events = Vec::new();
    if n_swaps == 0 {
        return Ok(events);
    }
    let step = net.unsup_sched.t;
    for h in 0..net.input_hidden.post_hc {
        let scores = block_scores(&net.input_hidden, &net.input, &net.hidden, h)?;
        let by_score = |a: &usize, b: &usize| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b));
        let mut active = net.input_hidden.active(h).to_vec();
        active.sort_by(by_score);
        let mut inactive: Vec<usize> = (0..net.input_hidden.pre_hc)
            .filter(|&g| !net.input_hidden.is_active(g, h))
            .collect();
        inactive.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));

        let (mut removed, mut added) = (Vec::new(), Vec::new());
        for (&out, &inn) in active.iter().zip(&inactive).take(n_swaps) {
            if scores[inn] > scores[out] {
                removed.push(out);
                added.push(inn);
            }
        }
        if removed.is_empty() {
            continue;
        }
        let mut field: Vec<usize> = active.into_iter().filter(|g| !removed.contains(g)).collect();
        field.extend_from_slice(&added);
        net.input_hidden.set_active(h, field);
        for &g in &removed {
            net.input_hidden.clear_block_weights(g, h);
        }
        for &g in &added {
            net.input_hidden.reset_block(g, h, &net.input.p, &net.hidden.p);
        }
        events.push(RewireEvent {
            step,
            post_hc: h,
            removed,
            added,
        });
    }
    Ok(events)
}

/// Rewire when structural mode is on and the unsupervised step counter has
/// just reached a multiple of `rewire_interval`.
pub fn maybe_rewire(net: &mut Network) -> Result<Vec<RewireEvent>> {
    let interval = net.config.rewire_interval as u64;
    let t = net.unsup_sched.t;
    if !net.structural() || interval == 0 || t == 0 || !t.is_multiple_of(interval) {
        return Ok(Vec::new());
    }
    let n_swaps = net.config.n_swaps;
    rewire(net, n_swaps)
}

fn check_post_hc(net: &Network, post_hc: usize) -> Result<()> {
    if post_hc >= net.config.hidden_hc {
        return Err(Error::Input(format!(
            "hidden hypercolumn {post_hc} out of range (model has {})",
            net.config.hidden_hc
        )));
    }
    Ok(())
}

/// Binary receptive field of `post_hc` as a row-major
/// `input_height x input_width` grid: 1 where the pixel's hypercolumn is
/// active.
pub fn export_receptive_field(net: &Network, post_hc: usize) -> Result<Vec<f64>> {
    check_post_hc(net, post_hc)?;
    Ok((0..net.config.input_hc())
        .map(|g| {
            if net.input_hidden.is_active(g, post_hc) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Receptive field weighted by block score, scaled so the best active block
/// is 1. Inactive pixels are 0.
pub fn export_weighted_receptive_field(net: &Network, post_hc: usize) -> Result<Vec<f64>> {
    check_post_hc(net, post_hc)?;
    let scores = block_scores(&net.input_hidden, &net.input, &net.hidden, post_hc)?;
    let field: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(g, &s)| {
            if net.input_hidden.is_active(g, post_hc) {
                s.max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let max = field.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(if max > 0.0 {
        field.iter().map(|v| v / max).collect()
    } else {
        field
    })
}

/// Encode a `[0, 1]` grid as a binary PGM (P5, maxval 255).
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Shape {
            context: "pgm image",
            expected: width * height,
            actual: values.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let bytes = encode_pgm(width, height, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
