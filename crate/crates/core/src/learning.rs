//! Probability-trace learning and the activation rule.
//!
//! Biases and weights are log-probability ratios of exponentially averaged
//! unit and joint activation traces; activations are a softmax over each
//! hypercolumn's support.

use crate::error::{check_len, Error, Result};
use crate::population::{Population, PROB_FLOOR};
use crate::projection::Projection;

/// Step counter driving the trace update rate
/// `alpha_t = max(1 / (t + 1), alpha_min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSchedule {
    pub t: u64,
    pub alpha_min: f64,
}

impl TraceSchedule {
    pub fn new(alpha_min: f64) -> Self {
        TraceSchedule { t: 0, alpha_min }
    }

    pub fn alpha(&self) -> f64 {
        (1.0 / (self.t as f64 + 1.0)).max(self.alpha_min)
    }

    pub fn advance(&mut self) {
        self.t += 1;
    }
}

#[inline]
pub fn clamp_prob(x: f64) -> f64 {
    x.max(PROB_FLOOR).min(1.0)
}

#[inline]
fn clamp_joint(x: f64) -> f64 {
    x.max(PROB_FLOOR * PROB_FLOOR).min(1.0)
}

/// `b_j = log p_j`
#[inline]
pub fn bias(p_j: f64) -> f64 {
    p_j.ln()
}

/// `w_ij = log(p_ij / (p_i p_j))`
#[inline]
pub fn weight(p_i: f64, p_j: f64, p_ij: f64) -> f64 {
    (p_ij / (p_i * p_j)).ln()
}

/// Blend the population's current activation into its unit traces.
pub fn update_unit_traces(pop: &mut Population, sched: &TraceSchedule) {
    let alpha = sched.alpha();
    let keep = 1.0 - alpha;
    for (p, &a) in pop.p.iter_mut().zip(&pop.act) {
        *p = clamp_prob(keep * *p + alpha * a);
    }
}

/// Blend the outer product of pre and post activations into the joint traces
/// of every active block (every block when the projection tracks silent ones).
pub fn update_joint_traces(
    proj: &mut Projection,
    pre_act: &[f64],
    post_act: &[f64],
    sched: &TraceSchedule,
) -> Result<()> {
    check_len("joint trace update (pre)", proj.n_pre(), pre_act.len())?;
    check_len("joint trace update (post)", proj.n_post(), post_act.len())?;
    let alpha = sched.alpha();
    let keep = 1.0 - alpha;
    let n_post = proj.n_post();
    let (pre_mc, post_mc) = (proj.pre_mc, proj.post_mc);

    if proj.track_silent {
        for (i, row) in proj.p_joint.chunks_mut(n_post).enumerate() {
            let ai = pre_act[i];
            for (p, &aj) in row.iter_mut().zip(post_act) {
                *p = clamp_joint(keep * *p + alpha * (ai * aj));
            }
        }
        return Ok(());
    }

    for h in 0..proj.post_hc {
        let cols = h * post_mc..(h + 1) * post_mc;
        let post = &post_act[cols.clone()];
        for gi in 0..proj.nact {
            let g = proj.active(h)[gi];
            for i in g * pre_mc..(g + 1) * pre_mc {
                let ai = pre_act[i];
                let start = i * n_post + cols.start;
                for (p, &aj) in proj.p_joint[start..start + post_mc].iter_mut().zip(post) {
                    *p = clamp_joint(keep * *p + alpha * (ai * aj));
                }
            }
        }
    }
    Ok(())
}

/// Recompute cached weights of active blocks and the post-population bias.
pub fn refresh_weights(proj: &mut Projection, pre: &Population, post: &mut Population) {
    let n_post = proj.n_post();
    let (pre_mc, post_mc) = (proj.pre_mc, proj.post_mc);
    for h in 0..proj.post_hc {
        let cols = h * post_mc..(h + 1) * post_mc;
        for gi in 0..proj.nact {
            let g = proj.active(h)[gi];
            for i in g * pre_mc..(g + 1) * pre_mc {
                let p_i = pre.p[i];
                let start = i * n_post + cols.start;
                let joint = &proj.p_joint[start..start + post_mc];
                let w = &mut proj.w[start..start + post_mc];
                for ((w, &p_ij), &p_j) in w.iter_mut().zip(joint).zip(&post.p[cols.clone()]) {
                    *w = weight(p_i, p_j, p_ij);
                }
            }
        }
    }
    for (b, &p) in post.bias.iter_mut().zip(&post.p) {
        *b = bias(p);
    }
}

/// `s_j = bias_j + sum over active pre-units i of w_ij * a_i`, accumulated in
/// ascending active-block order.
pub fn support(proj: &Projection, post_bias: &[f64], pre_act: &[f64]) -> Result<Vec<f64>> {
    check_len("support (pre activation)", proj.n_pre(), pre_act.len())?;
    check_len("support (bias)", proj.n_post(), post_bias.len())?;
    let n_post = proj.n_post();
    let (pre_mc, post_mc) = (proj.pre_mc, proj.post_mc);
    let mut acc = vec![0.0; n_post];
    for h in 0..proj.post_hc {
        let cols = h * post_mc..(h + 1) * post_mc;
        let out = &mut acc[cols.clone()];
        for &g in proj.active(h) {
            for i in g * pre_mc..(g + 1) * pre_mc {
                let ai = pre_act[i];
                let start = i * n_post + cols.start;
                for (s, &w) in out.iter_mut().zip(&proj.w[start..start + post_mc]) {
                    *s += w * ai;
                }
            }
        }
    }
    Ok(finish_support(acc, post_bias))
}

/// Same as [`support`], evaluating every weight from the traces on the fly.
pub fn support_from_traces(proj: &Projection, pre_p: &[f64], post_p: &[f64], pre_act: &[f64]) -> Result<Vec<f64>> {
    check_len("support (pre activation)", proj.n_pre(), pre_act.len())?;
    check_len("support (post traces)", proj.n_post(), post_p.len())?;
    let n_post = proj.n_post();
    let (pre_mc, post_mc) = (proj.pre_mc, proj.post_mc);
    let mut acc = vec![0.0; n_post];
    for h in 0..proj.post_hc {
        let cols = h * post_mc..(h + 1) * post_mc;
        for &g in proj.active(h) {
            for i in g * pre_mc..(g + 1) * pre_mc {
                let ai = pre_act[i];
                for j in cols.clone() {
                    acc[j] += weight(pre_p[i], post_p[j], proj.p_joint[i * n_post + j]) * ai;
                }
            }
        }
    }
    let bias: Vec<f64> = post_p.iter().map(|&p| bias(p)).collect();
    Ok(finish_support(acc, &bias))
}

pub(crate) fn finish_support(mut acc: Vec<f64>, post_bias: &[f64]) -> Vec<f64> {
    for (s, &b) in acc.iter_mut().zip(post_bias) {
        *s += b;
    }
    acc
}

/// Softmax within each hypercolumn slice of `s`.
pub fn softmax_hc(s: &[f64], n_hc: usize, n_mc: usize, temperature: f64) -> Result<Vec<f64>> {
    check_len("softmax", n_hc * n_mc, s.len())?;
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "softmax temperature must be > 0 (got {temperature})"
        )));
    }
    let mut out = vec![0.0; s.len()];
    for (h, (src, dst)) in s.chunks(n_mc).zip(out.chunks_mut(n_mc)).enumerate() {
        softmax_slice(src, dst, temperature).map_err(|detail| Error::Numerical {
            stage: "softmax",
            detail: format!("hypercolumn {h}: {detail}"),
        })?;
    }
    Ok(out)
}

pub(crate) fn softmax_slice(src: &[f64], dst: &mut [f64], temperature: f64) -> std::result::Result<(), String> {
    let mut max = f64::NEG_INFINITY;
    for &x in src {
        if !x.is_finite() {
            return Err(format!("non-finite support {x}"));
        }
        max = max.max(x);
    }
    let mut sum = 0.0;
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = ((x - max) / temperature).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::hc_sums;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sched_at(t: u64) -> TraceSchedule {
        TraceSchedule { t, alpha_min: 1e-4 }
    }

    #[test]
    fn clamp_prob_cases() {
        assert_eq!(clamp_prob(0.0), 1e-6);
        assert_eq!(clamp_prob(0.5), 0.5);
        assert_eq!(clamp_prob(1.7), 1.0);
    }

    #[test]
    fn schedule_rate() {
        assert_eq!(sched_at(0).alpha(), 1.0);
        assert_eq!(sched_at(1).alpha(), 0.5);
        assert_eq!(sched_at(1_000_000).alpha(), 1e-4);
    }

    #[test]
    fn unit_trace_fixed_point() {
        let mut pop = Population::new(2, 3).unwrap();
        pop.act = vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8];
        pop.p = pop.act.clone();
        update_unit_traces(&mut pop, &sched_at(7));
        for (p, a) in pop.p.iter().zip(&pop.act) {
            assert!((p - a).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_trace_one_step() {
        let mut pop = Population::new(1, 2).unwrap();
        pop.act = vec![1.0, 0.0];
        update_unit_traces(&mut pop, &sched_at(1));
        assert_eq!(pop.p, vec![0.75, 0.25]);
    }

    #[test]
    fn unit_trace_running_mean() {
        let mut pop = Population::new(1, 2).unwrap();
        pop.act = vec![1.0, 0.0];
        let mut sched = sched_at(0);
        // Hand-rolled recurrence: the running mean of ten copies of [1, 0].
        let mut mean = [0.5f64, 0.5];
        for t in 0..10 {
            let a = 1.0 / (t as f64 + 1.0);
            mean = [(1.0 - a) * mean[0] + a, (1.0 - a) * mean[1]];
            update_unit_traces(&mut pop, &sched);
            sched.advance();
        }
        assert!((mean[0] - 1.0).abs() < 1e-15 && mean[1] == 0.0);
        assert!((pop.p[0] - mean[0]).abs() < 1e-15);
        assert_eq!(pop.p[1], 1e-6);
    }

    fn tiny_projection() -> (Population, Population, Projection) {
        let pre = Population::new(1, 2).unwrap();
        let post = Population::new(1, 4).unwrap();
        let proj = Projection::new(&pre, &post, 1, 0).unwrap();
        (pre, post, proj)
    }

    #[test]
    fn joint_trace_fixed_point() {
        let (pre, post, mut proj) = tiny_projection();
        let before = proj.p_joint.clone();
        update_joint_traces(&mut proj, &pre.act, &post.act, &sched_at(3)).unwrap();
        assert_eq!(proj.p_joint, before);
    }

    #[test]
    fn joint_trace_one_step() {
        let (_, _, mut proj) = tiny_projection();
        let pre_act = [1.0, 0.0];
        let post_act = [1.0, 0.0, 0.0, 0.0];
        update_joint_traces(&mut proj, &pre_act, &post_act, &sched_at(1)).unwrap();
        assert_eq!(proj.p_joint[0], 0.5625);
        assert_eq!(proj.p_joint[1], 0.0625);
    }

    #[test]
    fn joint_trace_shape_error() {
        let (_, _, mut proj) = tiny_projection();
        let err = update_joint_traces(&mut proj, &[1.0], &[0.25; 4], &sched_at(0)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    fn random_hc_vector(rng: &mut ChaCha8Rng, n_hc: usize, n_mc: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n_hc * n_mc).map(|_| rng.random::<f64>()).collect();
        for c in v.chunks_mut(n_mc) {
            let s: f64 = c.iter().sum();
            c.iter_mut().for_each(|x| *x /= s);
        }
        v
    }

    #[test]
    fn joint_marginals_match_unit_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut pre = Population::new(6, 3).unwrap();
        let mut post = Population::new(2, 5).unwrap();
        let mut proj = Projection::new(&pre, &post, 4, 9).unwrap();
        let mut sched = TraceSchedule::new(0.01);
        for _ in 0..150 {
            pre.act = random_hc_vector(&mut rng, 6, 3);
            post.act = random_hc_vector(&mut rng, 2, 5);
            update_unit_traces(&mut pre, &sched);
            update_unit_traces(&mut post, &sched);
            update_joint_traces(&mut proj, &pre.act, &post.act, &sched).unwrap();
            sched.advance();
        }
        let n_post = proj.n_post();
        for h in 0..2 {
            for &g in proj.active(h) {
                for i in g * 3..(g + 1) * 3 {
                    let marginal: f64 = (h * 5..(h + 1) * 5).map(|j| proj.p_joint[i * n_post + j]).sum();
                    assert!((marginal - pre.p[i]).abs() < 1e-5, "{marginal} vs {}", pre.p[i]);
                }
            }
        }
    }

    #[test]
    fn eq1_trivial_values() {
        assert_eq!(bias(1.0), 0.0);
        assert!((bias(0.5) - (-0.6931)).abs() < 5e-5);
        assert!((bias(1.0 / 128.0) - (-4.8520)).abs() < 5e-5);
        assert_eq!(weight(0.5, 0.25, 0.125), 0.0);
        assert!((weight(0.5, 0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        let eps2 = PROB_FLOOR * PROB_FLOOR;
        let w = weight(0.5, 0.25, eps2);
        assert!((w - (eps2 / 0.125).ln()).abs() < 1e-12);
        assert!(w < -25.0);
    }

    #[test]
    fn refresh_at_independence_is_zero() {
        let (pre, mut post, mut proj) = tiny_projection();
        proj.w.iter_mut().for_each(|w| *w = 9.0);
        refresh_weights(&mut proj, &pre, &mut post);
        assert!(proj.w.iter().all(|&w| w == 0.0));
        assert!(post.bias.iter().all(|&b| b == 0.25f64.ln()));
    }

    #[test]
    fn refresh_positive_for_co_driven_pair() {
        let (mut pre, mut post, mut proj) = tiny_projection();
        let mut sched = sched_at(1);
        pre.act = vec![1.0, 0.0];
        post.act = vec![1.0, 0.0, 0.0, 0.0];
        for _ in 0..2 {
            update_unit_traces(&mut pre, &sched);
            update_unit_traces(&mut post, &sched);
            update_joint_traces(&mut proj, &pre.act, &post.act, &sched).unwrap();
            sched.advance();
        }
        refresh_weights(&mut proj, &pre, &mut post);
        assert!(proj.w[0] > 0.0);
        // Refresh equals elementwise Eq. 1 on the traces, bit for bit.
        for i in 0..2 {
            for j in 0..4 {
                let k = proj.index(i, j);
                assert_eq!(proj.w[k], weight(pre.p[i], post.p[j], proj.p_joint[k]));
            }
        }
    }

    #[test]
    fn support_zero_weights_is_bias() {
        let (pre, post, proj) = tiny_projection();
        assert_eq!(support(&proj, &post.bias, &pre.act).unwrap(), post.bias);
    }

    #[test]
    fn support_hand_built_2x2() {
        let pre = Population::new(1, 2).unwrap();
        let post = Population::new(1, 2).unwrap();
        let mut proj = Projection::new(&pre, &post, 1, 0).unwrap();
        proj.w = vec![0.3, -1.2, 0.7, 2.5];
        let bias = [-0.1, 0.4];
        let a = [0.25, 0.75];
        let s = support(&proj, &bias, &a).unwrap();
        let expected = [-0.1 + 0.3 * 0.25 + 0.7 * 0.75, 0.4 + -1.2 * 0.25 + 2.5 * 0.75];
        assert!((s[0] - expected[0]).abs() < 1e-9);
        assert!((s[1] - expected[1]).abs() < 1e-9);
    }

    #[test]
    fn support_ignores_masked_out_weights() {
        let pre = Population::new(3, 2).unwrap();
        let post = Population::new(2, 2).unwrap();
        let mut proj = Projection::new(&pre, &post, 1, 4).unwrap();
        let a = [0.1, 0.9, 0.3, 0.7, 0.6, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..proj.w.len() {
            let (i, j) = (k / 4, k % 4);
            if proj.is_active(i / 2, j / 2) {
                proj.w[k] = rng.random::<f64>();
            }
        }
        let clean = support(&proj, &post.bias, &a).unwrap();
        for k in 0..proj.w.len() {
            let (i, j) = (k / 4, k % 4);
            if !proj.is_active(i / 2, j / 2) {
                proj.w[k] = 1e6;
            }
        }
        assert_eq!(support(&proj, &post.bias, &a).unwrap(), clean);
    }

    #[test]
    fn cached_and_on_the_fly_support_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pre = Population::new(10, 2).unwrap();
        let mut post = Population::new(3, 8).unwrap();
        let mut proj = Projection::new(&pre, &post, 4, 3).unwrap();
        let mut sched = TraceSchedule::new(0.05);
        for _ in 0..40 {
            pre.act = random_hc_vector(&mut rng, 10, 2);
            post.act = random_hc_vector(&mut rng, 3, 8);
            update_unit_traces(&mut pre, &sched);
            update_unit_traces(&mut post, &sched);
            update_joint_traces(&mut proj, &pre.act, &post.act, &sched).unwrap();
            sched.advance();
        }
        refresh_weights(&mut proj, &pre, &mut post);
        let a = random_hc_vector(&mut rng, 10, 2);
        let cached = support(&proj, &post.bias, &a).unwrap();
        let fly = support_from_traces(&proj, &pre.p, &post.p, &a).unwrap();
        for (x, y) in cached.iter().zip(&fly) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_init_support_is_flat_per_hc() {
        let pre = Population::new(20, 2).unwrap();
        let post = Population::new(4, 16).unwrap();
        let proj = Projection::new(&pre, &post, 7, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_hc_vector(&mut rng, 20, 2);
        let s = support(&proj, &post.bias, &a).unwrap();
        let act = softmax_hc(&s, 4, 16, 1.0).unwrap();
        assert!(act.iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_uniform_and_ratio() {
        assert_eq!(softmax_hc(&[0.0; 4], 1, 4, 1.0).unwrap(), vec![0.25; 4]);
        for c in [-30.0, 0.0, 2.5, 700.0] {
            let a = softmax_hc(&[c, c + 3f64.ln()], 1, 2, 1.0).unwrap();
            assert!((a[0] - 0.25).abs() < 1e-12 && (a[1] - 0.75).abs() < 1e-12, "{a:?}");
        }
    }

    #[test]
    fn softmax_non_finite_is_numerical_error() {
        let err = softmax_hc(&[0.0, f64::NAN], 1, 2, 1.0).unwrap_err();
        assert!(matches!(err, Error::Numerical { stage: "softmax", .. }));
        assert!(softmax_hc(&[0.0, 1.0], 1, 2, 0.0).is_err());
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    /// Reference softmax with compensated (Neumaier) summation.
    fn softmax_reference(s: &[f64], t: f64) -> Vec<f64> {
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|&x| ((x - max) / t).exp()).collect();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &x in &e {
            let t = sum + x;
            comp += if sum.abs() >= x.abs() {
                (sum - t) + x
            } else {
                (x - t) + sum
            };
            sum = t;
        }
        let total = sum + comp;
        e.iter().map(|&x| x / total).collect()
    }

    proptest! {
        #[test]
        fn softmax_model1_geometry(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..32 * 128).map(|_| scale * (rng.random::<f64>() - 0.5)).collect();
            let a = softmax_hc(&s, 32, 128, 1.0).unwrap();
            for sum in hc_sums(&a, 128) {
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
            for h in 0..32 {
                let r = h * 128..(h + 1) * 128;
                prop_assert_eq!(argmax(&a[r.clone()]), argmax(&s[r]));
            }
        }

        #[test]
        fn softmax_shift_invariance(
            s in proptest::collection::vec(-20.0f64..20.0, 1..40),
            c in -100.0f64..100.0,
            t in 0.2f64..5.0,
        ) {
            let n = s.len();
            let a = softmax_hc(&s, 1, n, t).unwrap();
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            let b = softmax_hc(&shifted, 1, n, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(argmax(&a), argmax(&s));
        }

        #[test]
        fn softmax_matches_compensated_reference(
            s in proptest::collection::vec(-30.0f64..30.0, 2..200),
            t in 0.5f64..3.0,
        ) {
            let n = s.len();
            let a = softmax_hc(&s, 1, n, t).unwrap();
            let r = softmax_reference(&s, t);
            for (x, y) in a.iter().zip(&r) {
                prop_assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-300));
            }
        }
    }
}
