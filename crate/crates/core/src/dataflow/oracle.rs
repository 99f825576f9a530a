//! Sequential reference: the same procedures run one after another on the
//! calling thread.

use crate::error::{check_len, Error, Result};
use crate::network::{Mode, Network};
use crate::ops::OpCounts;
use crate::structural::{maybe_rewire, RewireEvent};

/// What a run over a sequence of images produces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    /// Predicted classes (empty for unsupervised runs).
    pub predictions: Vec<usize>,
    /// Output distributions, parallel to `predictions`.
    pub distributions: Vec<Vec<f64>>,
    /// Rewiring performed during the run.
    pub events: Vec<RewireEvent>,
    /// Per-image operation counts.
    pub counts: Vec<OpCounts>,
}

impl RunOutput {
    pub fn total_counts(&self) -> OpCounts {
        self.counts.iter().copied().sum()
    }

    /// Fraction of predictions equal to `labels`.
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        if self.predictions.is_empty() {
            return 0.0;
        }
        let hits = self.predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / self.predictions.len() as f64
    }
}

pub(crate) fn check_inputs(net: &Network, inputs: &[Vec<f64>], labels: &[usize], mode: Mode) -> Result<()> {
    for x in inputs {
        check_len("encoded input", net.config.n_input(), x.len())?;
    }
    if mode == Mode::Supervised {
        check_len("labels", inputs.len(), labels.len())?;
        if let Some(&l) = labels.iter().find(|&&l| l >= net.config.n_classes) {
            return Err(Error::Input(format!(
                "label {l} out of range for {} classes",
                net.config.n_classes
            )));
        }
    }
    if mode == Mode::Inference {
        net.ensure_trained()?;
    }
    Ok(())
}

/// Process `inputs` in order. `labels` is used in supervised mode only.
pub fn sequential_oracle(net: &mut Network, inputs: &[Vec<f64>], labels: &[usize], mode: Mode) -> Result<RunOutput> {
    check_inputs(net, inputs, labels, mode)?;
    let mut out = RunOutput::default();
    for (k, x) in inputs.iter().enumerate() {
        let mut c = OpCounts::default();
        match mode {
            Mode::Unsupervised => {
                net.unsupervised_step(x, &mut c)?;
                out.events.extend(maybe_rewire(net)?);
            }
            Mode::Supervised => {
                let p = net.supervised_step(x, labels[k], &mut c)?;
                out.predictions.push(p.class);
                out.distributions.push(p.distribution);
            }
            Mode::Inference => {
                let p = net.infer_counted(x, &mut c)?;
                out.predictions.push(p.class);
                out.distributions.push(p.distribution);
            }
        }
        out.counts.push(c);
    }
    Ok(out)
}
