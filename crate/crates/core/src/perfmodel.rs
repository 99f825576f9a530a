//! Roofline model: FPGA peak compute from a resource budget, HBM bandwidth,
//! machine balance, analytic per-image operation counts and report output.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{parse_pairs, ModelConfig};
use crate::error::{Error, Result};
use crate::network::Mode;
use crate::ops::{FlopWeights, OpCounts, BYTES_PER_VALUE};

/// Logic resources available for arithmetic and what one operator costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceBudget {
    pub lut_available: f64,
    pub dsp_available: f64,
    pub lut_per_add: f64,
    pub dsp_per_add: f64,
    pub lut_per_mul: f64,
    pub dsp_per_mul: f64,
    pub utilization_lut: f64,
    pub utilization_dsp: f64,
    /// Implemented kernel clock in Hz.
    pub f_impl: f64,
}

impl ResourceBudget {
    /// Alveo U55C, single-precision operators, 80 % utilization at 100 MHz.
    pub fn u55c() -> Self {
        ResourceBudget {
            lut_available: 1_146_240.0,
            dsp_available: 8_376.0,
            lut_per_add: 192.0,
            dsp_per_add: 2.0,
            lut_per_mul: 74.0,
            dsp_per_mul: 3.0,
            utilization_lut: 0.8,
            utilization_dsp: 0.8,
            f_impl: 100e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("lut_available", self.lut_available),
            ("dsp_available", self.dsp_available),
            ("f_impl", self.f_impl),
        ];
        for (k, v) in counts {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let costs = [
            ("lut_per_add", self.lut_per_add),
            ("dsp_per_add", self.dsp_per_add),
            ("lut_per_mul", self.lut_per_mul),
            ("dsp_per_mul", self.dsp_per_mul),
        ];
        for (k, v) in costs {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{k} must be positive (zero cost has no slot limit), got {v}"
                )));
            }
        }
        for (k, u) in [
            ("utilization_lut", self.utilization_lut),
            ("utilization_dsp", self.utilization_dsp),
        ] {
            if !(u > 0.0 && u <= 1.0) {
                return Err(Error::Config(format!("{k} must lie in (0, 1], got {u}")));
            }
        }
        Ok(())
    }
}

/// Off-chip memory system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemorySystem {
    pub f_mem: f64,
    pub width_bytes: f64,
    pub channels: f64,
}

impl MemorySystem {
    /// U55C HBM2: 32 pseudo-channels of 256 bits at 450 MHz.
    pub fn u55c() -> Self {
        MemorySystem {
            f_mem: 450e6,
            width_bytes: 32.0,
            channels: 32.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("f_mem", self.f_mem),
            ("width_bytes", self.width_bytes),
            ("channels", self.channels),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// How operator costs combine into compute slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompositionRule {
    /// One slot is a fused multiply-add costing an adder plus a multiplier;
    /// each slot yields 2 FLOP per cycle.
    #[default]
    MacFused,
    /// Adders and multipliers are sized as separate pools, each given the
    /// whole budget; each slot yields 1 FLOP per cycle. This double-counts
    /// the budget and serves as an upper bracket.
    IndependentPools,
}

impl CompositionRule {
    pub fn name(self) -> &'static str {
        match self {
            CompositionRule::MacFused => "mac-fused",
            CompositionRule::IndependentPools => "independent-pools",
        }
    }
}

impl std::str::FromStr for CompositionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mac-fused" => Ok(CompositionRule::MacFused),
            "independent-pools" => Ok(CompositionRule::IndependentPools),
            _ => Err(Error::Config(format!(
                "unknown composition rule {s:?} (mac-fused, independent-pools)"
            ))),
        }
    }
}

fn slots(rb: &ResourceBudget, lut_cost: f64, dsp_cost: f64) -> f64 {
    let by_lut = rb.lut_available * rb.utilization_lut / lut_cost;
    let by_dsp = rb.dsp_available * rb.utilization_dsp / dsp_cost;
    by_lut.min(by_dsp)
}

/// Peak FLOP/s the budget supports.
pub fn peak_compute(rb: &ResourceBudget, rule: CompositionRule) -> Result<f64> {
    rb.validate()?;
    Ok(match rule {
        CompositionRule::MacFused => {
            rb.f_impl * slots(rb, rb.lut_per_add + rb.lut_per_mul, rb.dsp_per_add + rb.dsp_per_mul) * 2.0
        }
        CompositionRule::IndependentPools => {
            rb.f_impl * (slots(rb, rb.lut_per_add, rb.dsp_per_add) + slots(rb, rb.lut_per_mul, rb.dsp_per_mul))
        }
    })
}

/// Peak bytes/s: clock times transfer width times channels.
pub fn hbm_bandwidth(ms: &MemorySystem) -> f64 {
    ms.f_mem * ms.width_bytes * ms.channels
}

/// FLOP/byte at which the compute and bandwidth roofs meet.
pub fn machine_balance(rb: &ResourceBudget, ms: &MemorySystem, rule: CompositionRule) -> Result<f64> {
    ms.validate()?;
    Ok(peak_compute(rb, rule)? / hbm_bandwidth(ms))
}

/// Attainable FLOP/s at arithmetic intensity `intensity`.
pub fn roof(intensity: f64, compute: f64, bandwidth: f64) -> f64 {
    compute.min(intensity * bandwidth)
}

/// Closed-form per-image operation and traffic counts. Must match what the
/// sequential reference and the stream engine measure.
///
/// `structural` means joint traces of silent input-hidden blocks are kept
/// up to date as well.
pub fn image_counts(cfg: &ModelConfig, mode: Mode, structural: bool) -> OpCounts {
    let u = |n: usize| n as u64;
    let v = |n: usize| n as u64 * BYTES_PER_VALUE;
    let (ni, nh, no) = (cfg.n_input(), cfg.n_hidden(), cfg.n_classes);
    let ih = cfg.ih_stream_len();
    let ho = cfg.ho_stream_len();

    // Hidden support and softmax.
    let mut c = OpCounts {
        mac: u(ih),
        add: u(nh) + 2 * u(nh),
        div: 2 * u(nh),
        exp: u(nh),
        bytes_read: v(ni + ih + nh),
        ..Default::default()
    };
    if mode != Mode::Unsupervised {
        // Output support, softmax, prediction write.
        c.mac += u(ho);
        c.add += 3 * u(no);
        c.div += 2 * u(no);
        c.exp += u(no);
        c.bytes_read += v(ho + no);
        c.bytes_written += v(no);
    }
    match mode {
        Mode::Unsupervised => {
            let joint = if structural { ni * nh } else { ih };
            c.add += u(nh); // noise
            c.mul += 2 * u(ni + nh) + 3 * u(joint) + u(ih);
            c.add += u(ni + nh) + u(joint);
            c.div += u(ih);
            c.log += u(ih) + u(nh);
            c.bytes_read += v(ni + nh + joint);
            c.bytes_written += v(ni + nh + joint + ih + nh);
        }
        Mode::Supervised => {
            c.bytes_read += v(1); // label
            c.mul += 2 * u(no) + 3 * u(ho) + u(ho);
            c.add += u(no) + u(ho);
            c.div += u(ho);
            c.log += u(ho) + u(no);
            c.bytes_read += v(no + ho);
            c.bytes_written += v(no + ho + ho + no);
        }
        Mode::Inference => {}
    }
    c
}

/// FLOP per byte of one image in `mode`.
pub fn arithmetic_intensity(cfg: &ModelConfig, mode: Mode, structural: bool, weights: FlopWeights) -> f64 {
    let c = image_counts(cfg, mode, structural);
    c.flops(weights) / c.bytes() as f64
}

/// A measured kernel on the roofline.
#[derive(Debug, Clone, PartialEq)]
pub struct RooflinePoint {
    pub label: String,
    pub intensity: f64,
    pub achieved: f64,
    pub roof: f64,
}

impl RooflinePoint {
    /// Point for `counts` processed in `seconds`.
    pub fn measured(
        label: &str,
        counts: &OpCounts,
        seconds: f64,
        weights: FlopWeights,
        compute: f64,
        bandwidth: f64,
    ) -> Self {
        let flops = counts.flops(weights);
        let intensity = flops / counts.bytes() as f64;
        RooflinePoint {
            label: label.to_string(),
            intensity,
            achieved: if seconds > 0.0 { flops / seconds } else { 0.0 },
            roof: roof(intensity, compute, bandwidth),
        }
    }
}

/// Points above their roof by more than this fraction are rejected.
pub const ROOF_SLACK: f64 = 0.01;

/// CSV with a roof polyline (`kind = roof`) followed by one row per point.
pub fn roofline_report(points: &[RooflinePoint], compute: f64, bandwidth: f64) -> Result<String> {
    for p in points {
        if p.achieved > p.roof * (1.0 + ROOF_SLACK) {
            return Err(Error::Accounting(format!(
                "point `{}` reaches {:.4e} FLOP/s, above its roof {:.4e} at intensity {:.4}",
                p.label, p.achieved, p.roof, p.intensity
            )));
        }
    }
    let balance = compute / bandwidth;
    let mut xs: Vec<f64> = (-12..=12).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
    xs.push(balance);
    xs.sort_by(f64::total_cmp);
    let mut out = String::from("kind,label,intensity,performance,roof\n");
    for x in xs {
        let r = roof(x, compute, bandwidth);
        let label = if x == balance { "ridge" } else { "" };
        writeln!(out, "roof,{label},{x:.6e},{r:.6e},{r:.6e}").unwrap();
    }
    for p in points {
        writeln!(
            out,
            "point,{},{:.6e},{:.6e},{:.6e}",
            p.label, p.intensity, p.achieved, p.roof
        )
        .unwrap();
    }
    Ok(out)
}

/// Everything the roofline needs, as read from a resource file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfConfig {
    pub budget: ResourceBudget,
    pub memory: MemorySystem,
    pub rule: CompositionRule,
    pub weights: FlopWeights,
}

impl Default for PerfConfig {
    fn default() -> Self {
        PerfConfig {
            budget: ResourceBudget::u55c(),
            memory: MemorySystem::u55c(),
            rule: CompositionRule::MacFused,
            weights: FlopWeights::default(),
        }
    }
}

impl PerfConfig {
    /// Parse `key = value` lines; unspecified keys keep their U55C defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pc = PerfConfig::default();
        for (key, value) in parse_pairs(text)? {
            if key == "composition" {
                pc.rule = value.parse()?;
                continue;
            }
            let x: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: {value:?} is not a number")))?;
            let (b, m, w) = (&mut pc.budget, &mut pc.memory, &mut pc.weights);
            let slot = match key.as_str() {
                "lut_available" => &mut b.lut_available,
                "dsp_available" => &mut b.dsp_available,
                "lut_per_add" => &mut b.lut_per_add,
                "dsp_per_add" => &mut b.dsp_per_add,
                "lut_per_mul" => &mut b.lut_per_mul,
                "dsp_per_mul" => &mut b.dsp_per_mul,
                "utilization_lut" => &mut b.utilization_lut,
                "utilization_dsp" => &mut b.utilization_dsp,
                "f_impl" => &mut b.f_impl,
                "f_mem" => &mut m.f_mem,
                "width_bytes" => &mut m.width_bytes,
                "channels" => &mut m.channels,
                "exp_flops" => &mut w.exp,
                "log_flops" => &mut w.log,
                _ => return Err(Error::Config(format!("unknown resource key `{key}`"))),
            };
            *slot = x;
        }
        pc.budget.validate()?;
        pc.memory.validate()?;
        Ok(pc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let (b, m, w) = (&self.budget, &self.memory, &self.weights);
        format!(
            "lut_available = {:?}\ndsp_available = {:?}\nlut_per_add = {:?}\ndsp_per_add = {:?}\n\
             lut_per_mul = {:?}\ndsp_per_mul = {:?}\nutilization_lut = {:?}\nutilization_dsp = {:?}\n\
             f_impl = {:?}\nf_mem = {:?}\nwidth_bytes = {:?}\nchannels = {:?}\ncomposition = {}\n\
             exp_flops = {:?}\nlog_flops = {:?}\n",
            b.lut_available,
            b.dsp_available,
            b.lut_per_add,
            b.dsp_per_add,
            b.lut_per_mul,
            b.dsp_per_mul,
            b.utilization_lut,
            b.utilization_dsp,
            b.f_impl,
            m.f_mem,
            m.width_bytes,
            m.channels,
            self.rule.name(),
            w.exp,
            w.log
        )
    }

    pub fn compute(&self) -> Result<f64> {
        peak_compute(&self.budget, self.rule)
    }

    pub fn bandwidth(&self) -> f64 {
        hbm_bandwidth(&self.memory)
    }
}
