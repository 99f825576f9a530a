//! Versioned little-endian model files.
//!
//! Layout: magic `BCPN`, format version (u32), config text (u32 length +
//! UTF-8), structural flag (u8), both schedule counters (u64), then the
//! activations and unit traces of each population and the joint traces and
//! masks of both projections. Weights and biases are derived from the traces
//! on load.

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::learning::refresh_weights;
use crate::network::Network;
use crate::population::Population;
use crate::projection::Projection;

pub const MAGIC: &[u8; 4] = b"BCPN";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bools(&mut self, v: &[bool]) {
        self.u64(v.len() as u64);
        self.0.extend(v.iter().map(|&b| b as u8));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, expected: usize, what: &str) -> Result<usize> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::Format(format!("{what}: {n} entries, config implies {expected}")));
        }
        Ok(n)
    }
    fn f64s(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.len(expected, what)?;
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn bools(&mut self, expected: usize, what: &str) -> Result<Vec<bool>> {
        let n = self.len(expected, what)?;
        self.take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Format(format!("{what}: mask byte {b}"))),
            })
            .collect()
    }
}

pub fn encode_model(net: &Network) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let cfg = net.config.to_text();
    w.u32(cfg.len() as u32);
    w.0.extend_from_slice(cfg.as_bytes());
    w.u8(net.structural() as u8);
    w.u64(net.unsup_sched.t);
    w.u64(net.sup_sched.t);
    for pop in [&net.input, &net.hidden, &net.output] {
        w.f64s(&pop.act);
        w.f64s(&pop.p);
    }
    for proj in [&net.input_hidden, &net.hidden_output] {
        w.f64s(&proj.p_joint);
        w.bools(proj.mask());
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Format("config text is not UTF-8".into()))?;
    let config = ModelConfig::parse(text)?;
    let structural = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("structural flag byte {b}"))),
    };
    let mut net = Network::new(config)?;
    net.unsup_sched.t = r.u64()?;
    net.sup_sched.t = r.u64()?;
    for (pop, name) in [
        (&mut net.input, "input"),
        (&mut net.hidden, "hidden"),
        (&mut net.output, "output"),
    ] {
        let n = pop.len();
        pop.act = r.f64s(n, name)?;
        pop.p = r.f64s(n, name)?;
    }
    let read_proj = |r: &mut Reader, proj: &Projection, name: &str| -> Result<Projection> {
        let p_joint = r.f64s(proj.p_joint.len(), name)?;
        let mask = r.bools(proj.pre_hc * proj.post_hc, name)?;
        Projection::from_parts(
            [proj.pre_hc, proj.pre_mc, proj.post_hc, proj.post_mc, proj.nact],
            p_joint,
            mask,
            structural,
        )
    };
    net.input_hidden = read_proj(&mut r, &net.input_hidden, "input-hidden")?;
    let mut ho = read_proj(&mut r, &net.hidden_output, "hidden-output")?;
    ho.track_silent = false;
    net.hidden_output = ho;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let trace_ok = |pop: &Population| pop.p.iter().chain(&pop.act).all(|x| x.is_finite());
    if ![&net.input, &net.hidden, &net.output].into_iter().all(trace_ok) {
        return Err(Error::Format("non-finite trace values".into()));
    }
    refresh_weights(&mut net.input_hidden, &net.input, &mut net.hidden);
    refresh_weights(&mut net.hidden_output, &net.hidden, &mut net.output);
    Ok(net)
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_model(net)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
