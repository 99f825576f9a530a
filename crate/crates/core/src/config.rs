//! Experiment configuration: network geometry, learning hyperparameters and
//! stream-engine sizing, read from plain `key = value` text.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_width: usize,
    pub input_height: usize,
    /// Minicolumns per input hypercolumn (2 = complementary pixel coding).
    pub input_mc: usize,
    pub hidden_hc: usize,
    pub hidden_mc: usize,
    pub n_classes: usize,
    /// Active input hypercolumns per hidden hypercolumn.
    pub nact_hi: usize,
    pub epochs_unsup: usize,
    pub alpha_min: f64,
    pub temperature: f64,
    pub noise_amp: f64,
    /// Training steps between rewire events; 0 disables structural plasticity.
    pub rewire_interval: usize,
    pub n_swaps: usize,
    pub fifo_depth: usize,
    pub packet_ih: usize,
    pub packet_ho: usize,
    pub seed: u64,
}

/// Sub-streams the input-hidden weight traffic is partitioned into.
pub const IH_PARTITIONS: usize = 4;

impl ModelConfig {
    /// MNIST: 28x28 input, 32x128 hidden, nactHi 128, 10 classes, 5 epochs.
    pub fn model1() -> Self {
        ModelConfig {
            input_width: 28,
            input_height: 28,
            input_mc: 2,
            hidden_hc: 32,
            hidden_mc: 128,
            n_classes: 10,
            nact_hi: 128,
            epochs_unsup: 5,
            alpha_min: 1e-4,
            temperature: 1.0,
            noise_amp: default_noise_amp(128),
            rewire_interval: 60_000 / 16,
            n_swaps: 1,
            fifo_depth: 64,
            packet_ih: 16,
            packet_ho: 16,
            seed: 1,
        }
    }

    /// Pneumonia: 28x28 input, 32x256 hidden, 2 classes, 20 epochs.
    pub fn model2() -> Self {
        ModelConfig {
            hidden_mc: 256,
            n_classes: 2,
            epochs_unsup: 20,
            noise_amp: default_noise_amp(256),
            rewire_interval: 4708 / 16,
            ..Self::model1()
        }
    }

    /// Breast: 64x64 input, 32x128 hidden, 2 classes, 100 epochs.
    pub fn model3() -> Self {
        ModelConfig {
            input_width: 64,
            input_height: 64,
            n_classes: 2,
            epochs_unsup: 100,
            rewire_interval: 546 / 16,
            ..Self::model1()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "model1" | "mnist" => Some(Self::model1()),
            "model2" | "pneumonia" => Some(Self::model2()),
            "model3" | "breast" => Some(Self::model3()),
            _ => None,
        }
    }

    pub fn input_hc(&self) -> usize {
        self.input_width * self.input_height
    }

    pub fn n_input(&self) -> usize {
        self.input_hc() * self.input_mc
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_hc * self.hidden_mc
    }

    /// Length of the per-image input-hidden weight stream (active blocks only).
    pub fn ih_stream_len(&self) -> usize {
        self.hidden_hc * self.nact_hi * self.input_mc * self.hidden_mc
    }

    /// Length of the per-image hidden-output weight stream.
    pub fn ho_stream_len(&self) -> usize {
        self.n_hidden() * self.n_classes
    }

    /// Every violated invariant as a readable message. Empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("input_width", self.input_width),
            ("input_height", self.input_height),
            ("hidden_hc", self.hidden_hc),
            ("hidden_mc", self.hidden_mc),
            ("nact_hi", self.nact_hi),
            ("packet_ih", self.packet_ih),
            ("packet_ho", self.packet_ho),
        ];
        for (name, value) in positive {
            if value == 0 {
                v.push(format!("{name} must be >= 1"));
            }
        }
        if self.input_mc < 2 {
            v.push(format!("input_mc must be >= 2 (got {})", self.input_mc));
        }
        if self.n_classes < 2 {
            v.push(format!("n_classes must be >= 2 (got {})", self.n_classes));
        }
        if self.nact_hi > self.input_hc() {
            v.push(format!(
                "nact_hi = {} exceeds input_hc = {}",
                self.nact_hi,
                self.input_hc()
            ));
        }
        if self.fifo_depth < 1 {
            v.push("fifo_depth must be >= 1".to_string());
        }
        if self.n_swaps > self.nact_hi {
            v.push(format!("n_swaps = {} exceeds nact_hi = {}", self.n_swaps, self.nact_hi));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            v.push(format!("alpha_min must lie in (0, 1] (got {})", self.alpha_min));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            v.push(format!("temperature must be > 0 (got {})", self.temperature));
        }
        if !(self.noise_amp >= 0.0 && self.noise_amp.is_finite()) {
            v.push(format!("noise_amp must be >= 0 (got {})", self.noise_amp));
        }
        if self.packet_ih > 0 && self.packet_ho > 0 {
            let ih_block = IH_PARTITIONS * self.packet_ih;
            let streams = [
                (
                    "packet_ih",
                    "input-hidden weight stream",
                    self.ih_stream_len(),
                    ih_block,
                ),
                ("packet_ih", "input activation vector", self.n_input(), self.packet_ih),
                ("packet_ho", "hidden activation vector", self.n_hidden(), self.packet_ho),
                (
                    "packet_ho",
                    "hidden-output weight stream",
                    self.ho_stream_len(),
                    self.packet_ho,
                ),
            ];
            for (key, what, len, packet) in streams {
                if len % packet != 0 {
                    v.push(format!(
                        "{key}: {what} length {len} is not divisible by packet length {packet}"
                    ));
                }
            }
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fields = parse_pairs(text)?;
        let mut cfg = ModelConfig::model1();
        let mut seen = Vec::new();
        for (key, value) in &fields {
            cfg.set(key, value)?;
            seen.push(key.as_str());
        }
        let missing: Vec<&str> = KEYS.iter().copied().filter(|k| !seen.contains(k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing keys: {}", missing.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn int(key: &str, value: &str) -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: `{value}` is not a non-negative integer")))
        }
        fn real(key: &str, value: &str) -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: `{value}` is not a number")))
        }
        match key {
            "input_width" => self.input_width = int(key, value)?,
            "input_height" => self.input_height = int(key, value)?,
            "input_mc" => self.input_mc = int(key, value)?,
            "hidden_hc" => self.hidden_hc = int(key, value)?,
            "hidden_mc" => self.hidden_mc = int(key, value)?,
            "n_classes" => self.n_classes = int(key, value)?,
            "nact_hi" => self.nact_hi = int(key, value)?,
            "epochs_unsup" => self.epochs_unsup = int(key, value)?,
            "alpha_min" => self.alpha_min = real(key, value)?,
            "temperature" => self.temperature = real(key, value)?,
            "noise_amp" => self.noise_amp = real(key, value)?,
            "rewire_interval" => self.rewire_interval = int(key, value)?,
            "n_swaps" => self.n_swaps = int(key, value)?,
            "fifo_depth" => self.fifo_depth = int(key, value)?,
            "packet_ih" => self.packet_ih = int(key, value)?,
            "packet_ho" => self.packet_ho = int(key, value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: `{value}` is not an integer")))?
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 17] = [
            ("input_width", self.input_width.to_string()),
            ("input_height", self.input_height.to_string()),
            ("input_mc", self.input_mc.to_string()),
            ("hidden_hc", self.hidden_hc.to_string()),
            ("hidden_mc", self.hidden_mc.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("nact_hi", self.nact_hi.to_string()),
            ("epochs_unsup", self.epochs_unsup.to_string()),
            ("alpha_min", fmt_real(self.alpha_min)),
            ("temperature", fmt_real(self.temperature)),
            ("noise_amp", fmt_real(self.noise_amp)),
            ("rewire_interval", self.rewire_interval.to_string()),
            ("n_swaps", self.n_swaps.to_string()),
            ("fifo_depth", self.fifo_depth.to_string()),
            ("packet_ih", self.packet_ih.to_string()),
            ("packet_ho", self.packet_ho.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

pub const KEYS: [&str; 17] = [
    "input_width",
    "input_height",
    "input_mc",
    "hidden_hc",
    "hidden_mc",
    "n_classes",
    "nact_hi",
    "epochs_unsup",
    "alpha_min",
    "temperature",
    "noise_amp",
    "rewire_interval",
    "n_swaps",
    "fifo_depth",
    "packet_ih",
    "packet_ho",
    "seed",
];

/// Noise amplitude relative to the magnitude of the uniform hidden bias.
pub fn default_noise_amp(hidden_mc: usize) -> f64 {
    1e-4 * (hidden_mc as f64).ln()
}

// `{:?}` round-trips f64 exactly.
fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

/// Split `key = value` lines (with `#` comments) into pairs, rejecting
/// malformed lines and duplicate keys.
pub(crate) fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut fields: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_string();
        if fields.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
        fields.push((key, value.trim().to_string()));
    }
    Ok(fields)
}
