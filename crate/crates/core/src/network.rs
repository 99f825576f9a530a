//! The three-population network (input, hidden, output) and its
//! unsupervised, supervised and inference procedures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{check_len, Error, Result};
use crate::learning::{
    argmax, refresh_weights, softmax_hc, support, update_joint_traces, update_unit_traces, TraceSchedule,
};
use crate::ops::OpCounts;
use crate::population::Population;
use crate::projection::Projection;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub input: Population,
    pub hidden: Population,
    pub output: Population,
    pub input_hidden: Projection,
    pub hidden_output: Projection,
    /// Drives input/hidden traces during the unsupervised phase.
    pub unsup_sched: TraceSchedule,
    /// Drives output traces during the supervised phase.
    pub sup_sched: TraceSchedule,
}

/// Which procedure an image goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Unsupervised,
    Supervised,
    Inference,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Unsupervised, Mode::Supervised, Mode::Inference];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Unsupervised => "unsupervised",
            Mode::Supervised => "supervised",
            Mode::Inference => "inference",
        }
    }

    pub fn trains(self) -> bool {
        self != Mode::Inference
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (unsupervised, supervised, inference)")))
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub distribution: Vec<f64>,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.ensure_valid()?;
        let input = Population::new(config.input_hc(), config.input_mc)?;
        let hidden = Population::new(config.hidden_hc, config.hidden_mc)?;
        let output = Population::new(1, config.n_classes)?;
        let input_hidden = Projection::new(&input, &hidden, config.nact_hi, config.seed)?;
        let hidden_output = Projection::dense(&hidden, &output);
        Ok(Network {
            unsup_sched: TraceSchedule::new(config.alpha_min),
            sup_sched: TraceSchedule::new(config.alpha_min),
            config,
            input,
            hidden,
            output,
            input_hidden,
            hidden_output,
        })
    }

    /// Keep joint traces of silent input-hidden blocks up to date so they can
    /// be scored for rewiring.
    pub fn set_structural(&mut self, on: bool) {
        self.input_hidden.track_silent = on;
    }

    pub fn structural(&self) -> bool {
        self.input_hidden.track_silent
    }

    /// Hidden support for `input_act` (bias included, no noise).
    pub fn hidden_support(&self, input_act: &[f64], counts: &mut OpCounts) -> Result<Vec<f64>> {
        check_len("input activation", self.input.len(), input_act.len())?;
        let s = support(&self.input_hidden, &self.hidden.bias, input_act)?;
        count_support(
            counts,
            self.config.n_input(),
            self.config.ih_stream_len(),
            self.hidden.len(),
        );
        Ok(s)
    }

    /// Add the symmetry-breaking noise of unsupervised step `step` to `s`.
    pub fn add_noise(&self, s: &mut [f64], step: u64, counts: &mut OpCounts) {
        add_step_noise(s, self.config.seed, step, self.config.noise_amp);
        counts.add += s.len() as u64;
    }

    pub fn hidden_softmax(&self, s: &[f64], counts: &mut OpCounts) -> Result<Vec<f64>> {
        let a = softmax_hc(s, self.hidden.n_hc, self.hidden.n_mc, self.config.temperature)?;
        counts.softmax(s.len());
        Ok(a)
    }

    pub fn output_forward(&self, hidden_act: &[f64], counts: &mut OpCounts) -> Result<Prediction> {
        let s = support(&self.hidden_output, &self.output.bias, hidden_act)?;
        count_support(counts, 0, self.config.ho_stream_len(), self.output.len());
        let distribution = softmax_hc(&s, 1, self.output.len(), self.config.temperature)?;
        counts.softmax(s.len());
        Ok(Prediction {
            class: argmax(&distribution),
            distribution,
        })
    }

    /// One online unsupervised learning step on an encoded input.
    pub fn unsupervised_step(&mut self, input_act: &[f64], counts: &mut OpCounts) -> Result<()> {
        let mut s = self.hidden_support(input_act, counts)?;
        self.add_noise(&mut s, self.unsup_sched.t, counts);
        let hidden_act = self.hidden_softmax(&s, counts)?;
        self.apply_unsupervised_update(input_act, hidden_act, counts)
    }

    /// Trace and weight update half of an unsupervised step.
    pub fn apply_unsupervised_update(
        &mut self,
        input_act: &[f64],
        hidden_act: Vec<f64>,
        counts: &mut OpCounts,
    ) -> Result<()> {
        check_len("hidden activation", self.hidden.len(), hidden_act.len())?;
        self.input.act.copy_from_slice(input_act);
        self.hidden.act = hidden_act;
        let sched = self.unsup_sched;
        update_unit_traces(&mut self.input, &sched);
        update_unit_traces(&mut self.hidden, &sched);
        update_joint_traces(&mut self.input_hidden, &self.input.act, &self.hidden.act, &sched)?;
        refresh_weights(&mut self.input_hidden, &self.input, &mut self.hidden);
        self.unsup_sched.advance();
        count_unsup_update(counts, &self.config, self.structural());
        Ok(())
    }

    /// One supervised step: the output population is clamped to `label` and
    /// only hidden-output statistics learn. Returns the prediction made
    /// before the update.
    pub fn supervised_step(&mut self, input_act: &[f64], label: usize, counts: &mut OpCounts) -> Result<Prediction> {
        if label >= self.config.n_classes {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                self.config.n_classes
            )));
        }
        let s = self.hidden_support(input_act, counts)?;
        let hidden_act = self.hidden_softmax(&s, counts)?;
        let before = self.output_forward(&hidden_act, counts)?;
        counts.read_values(1);
        counts.write_values(self.output.len());
        self.apply_supervised_update(hidden_act, label, counts)?;
        Ok(before)
    }

    pub fn apply_supervised_update(&mut self, hidden_act: Vec<f64>, label: usize, counts: &mut OpCounts) -> Result<()> {
        check_len("hidden activation", self.hidden.len(), hidden_act.len())?;
        self.hidden.act = hidden_act;
        self.output.act.iter_mut().for_each(|x| *x = 0.0);
        self.output.act[label] = 1.0;
        let sched = self.sup_sched;
        update_unit_traces(&mut self.output, &sched);
        update_joint_traces(&mut self.hidden_output, &self.hidden.act, &self.output.act, &sched)?;
        refresh_weights(&mut self.hidden_output, &self.hidden, &mut self.output);
        self.sup_sched.advance();
        count_sup_update(counts, &self.config);
        Ok(())
    }

    /// Forward pass without any state change.
    pub fn infer(&self, input_act: &[f64]) -> Result<Prediction> {
        self.infer_counted(input_act, &mut OpCounts::default())
    }

    pub fn infer_counted(&self, input_act: &[f64], counts: &mut OpCounts) -> Result<Prediction> {
        self.ensure_trained()?;
        let s = self.hidden_support(input_act, counts)?;
        let hidden_act = self.hidden_softmax(&s, counts)?;
        let p = self.output_forward(&hidden_act, counts)?;
        counts.write_values(self.output.len());
        Ok(p)
    }

    pub fn ensure_trained(&self) -> Result<()> {
        if self.sup_sched.t == 0 {
            return Err(Error::State(
                "the hidden-output projection has not seen any supervised step".into(),
            ));
        }
        Ok(())
    }

    /// Hidden activation used by inference (no noise).
    pub fn hidden_representation(&self, input_act: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = OpCounts::default();
        let s = self.hidden_support(input_act, &mut scratch)?;
        self.hidden_softmax(&s, &mut scratch)
    }
}

/// Add uniform `[0, amp)` noise drawn from the generator of `step`.
pub fn add_step_noise(s: &mut [f64], seed: u64, step: u64, amp: f64) {
    let mut rng = noise_rng(seed, step);
    for x in s.iter_mut() {
        *x += amp * rng.random::<f64>();
    }
}

/// Per-step noise generator, independent of execution order.
pub fn noise_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    rng.set_stream(step);
    rng
}

// Accounting shared with the stream engine and the analytic model.

pub(crate) fn count_support(counts: &mut OpCounts, n_pre: usize, stream_len: usize, n_post: usize) {
    counts.read_values(n_pre + stream_len + n_post);
    counts.mac += stream_len as u64;
    counts.add += n_post as u64;
}

pub(crate) fn count_unsup_update(counts: &mut OpCounts, cfg: &ModelConfig, structural: bool) {
    let (ni, nh) = (cfg.n_input(), cfg.n_hidden());
    let active = cfg.ih_stream_len();
    let joint = if structural { ni * nh } else { active };
    for n in [ni, nh] {
        counts.read_values(n);
        counts.write_values(n);
        counts.trace_update(n);
    }
    counts.read_values(joint);
    counts.write_values(joint);
    counts.joint_update(joint);
    counts.weight_eval(active);
    counts.write_values(active);
    counts.log += nh as u64;
    counts.write_values(nh);
}

pub(crate) fn count_sup_update(counts: &mut OpCounts, cfg: &ModelConfig) {
    let no = cfg.n_classes;
    let joint = cfg.ho_stream_len();
    counts.read_values(no);
    counts.write_values(no);
    counts.trace_update(no);
    counts.read_values(joint);
    counts.write_values(joint);
    counts.joint_update(joint);
    counts.weight_eval(joint);
    counts.write_values(joint);
    counts.log += no as u64;
    counts.write_values(no);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::hc_sums;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_width: 4,
            input_height: 4,
            hidden_hc: 4,
            hidden_mc: 8,
            n_classes: 2,
            nact_hi: 6,
            fifo_depth: 2,
            packet_ih: 4,
            packet_ho: 4,
            noise_amp: 0.05,
            alpha_min: 1e-3,
            ..ModelConfig::model1()
        }
    }

    fn encode(pixels: &[f64]) -> Vec<f64> {
        pixels.iter().flat_map(|&v| [v, 1.0 - v]).collect()
    }

    fn pattern(k: usize) -> Vec<f64> {
        (0..16).map(|i| if (i + k).is_multiple_of(3) { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn no_noise_keeps_symmetry() {
        let mut net = Network::new(ModelConfig {
            noise_amp: 0.0,
            ..small_config()
        })
        .unwrap();
        let mut c = OpCounts::default();
        for k in 0..20 {
            net.unsupervised_step(&encode(&pattern(k)), &mut c).unwrap();
            assert!(net.hidden.act.iter().all(|&a| a == 1.0 / 8.0));
        }
        assert!(net.hidden.p.iter().all(|&p| (p - 1.0 / 8.0).abs() < 1e-15));
    }

    #[test]
    fn unsupervised_is_deterministic() {
        let run = || {
            let mut net = Network::new(small_config()).unwrap();
            let mut c = OpCounts::default();
            for k in 0..30 {
                net.unsupervised_step(&encode(&pattern(k)), &mut c).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn long_run_trace_normalization() {
        let mut net = Network::new(small_config()).unwrap();
        let mut c = OpCounts::default();
        for k in 0..10_000 {
            net.unsupervised_step(&encode(&pattern(k % 7)), &mut c).unwrap();
        }
        for s in hc_sums(&net.hidden.p, 8).into_iter().chain(hc_sums(&net.input.p, 2)) {
            assert!((s - 1.0).abs() < 1e-5, "{s}");
        }
        for s in hc_sums(&net.hidden.act, 8) {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn supervised_single_class_concentrates() {
        let mut net = Network::new(small_config()).unwrap();
        let mut c = OpCounts::default();
        for k in 0..200 {
            net.supervised_step(&encode(&pattern(k)), 1, &mut c).unwrap();
        }
        assert!(net.output.p[1] > 0.999);
    }

    #[test]
    fn supervised_balanced_stream() {
        let mut net = Network::new(small_config()).unwrap();
        let mut c = OpCounts::default();
        for k in 0..1000 {
            net.supervised_step(&encode(&pattern(k)), k % 2, &mut c).unwrap();
        }
        assert!((net.output.p[0] - 0.5).abs() < 1e-2);
        assert!((net.output.p[1] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn supervised_freezes_input_hidden() {
        let mut net = Network::new(small_config()).unwrap();
        let mut c = OpCounts::default();
        for k in 0..50 {
            net.unsupervised_step(&encode(&pattern(k)), &mut c).unwrap();
        }
        let w = net.input_hidden.w.clone();
        let bias = net.hidden.bias.clone();
        for k in 0..50 {
            net.supervised_step(&encode(&pattern(k)), k % 2, &mut c).unwrap();
        }
        assert_eq!(net.input_hidden.w, w);
        assert_eq!(net.hidden.bias, bias);
    }

    #[test]
    fn label_out_of_range() {
        let mut net = Network::new(small_config()).unwrap();
        let err = net
            .supervised_step(&encode(&pattern(0)), 2, &mut OpCounts::default())
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn infer_requires_training() {
        let net = Network::new(small_config()).unwrap();
        assert!(matches!(net.infer(&encode(&pattern(0))), Err(Error::State(_))));
    }

    #[test]
    fn infer_is_pure() {
        let mut net = Network::new(small_config()).unwrap();
        let mut c = OpCounts::default();
        for k in 0..40 {
            net.unsupervised_step(&encode(&pattern(k)), &mut c).unwrap();
        }
        for k in 0..40 {
            net.supervised_step(&encode(&pattern(k)), k % 2, &mut c).unwrap();
        }
        let before = net.clone();
        for k in 0..10 {
            let p = net.infer(&encode(&pattern(k))).unwrap();
            assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(net, before);
    }

    #[test]
    fn hand_built_toy_prefers_dominant_class() {
        let cfg = ModelConfig {
            input_width: 1,
            input_height: 1,
            hidden_hc: 1,
            hidden_mc: 2,
            n_classes: 2,
            nact_hi: 1,
            packet_ih: 1,
            packet_ho: 2,
            ..ModelConfig::model1()
        };
        let mut net = Network::new(cfg).unwrap();
        // Identity input-hidden map: hidden unit k follows input unit k.
        net.input_hidden.w = vec![2.0, -2.0, -2.0, 2.0];
        // Hidden unit 0 is strongly associated with class 0.
        net.hidden_output.w = vec![1.5, -1.5, 0.1, -0.1];
        net.sup_sched.t = 1;
        let p = net.infer(&[1.0, 0.0]).unwrap();
        assert_eq!(p.class, 0);
        assert!(p.distribution[0] > 0.5);
    }
}
