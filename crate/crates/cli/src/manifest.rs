//! Run manifests: everything needed to repeat a run, plus what it produced.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bcpnn_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("bcpnn ", env!("CARGO_PKG_VERSION"));

/// Content hash of one dataset, as loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub role: String,
    pub files: Vec<String>,
    pub sha256: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Short hash of `inputs`; every output file name starts with it.
    pub id: String,
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub datasets: Vec<DatasetFingerprint>,
    /// Wall-clock seconds per phase. Not part of `id`.
    pub timings: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: BTreeMap<String, serde_json::Value>, datasets: Vec<DatasetFingerprint>) -> Self {
        let id = manifest_id(command, &inputs, &datasets);
        RunManifest {
            command: command.to_string(),
            version: TOOL_VERSION.to_string(),
            id,
            inputs,
            datasets,
            timings: BTreeMap::new(),
            metrics: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics
            .insert(key.to_string(), serde_json::to_value(value).expect("metric serializes"));
    }

    pub fn timing(&mut self, phase: &str, seconds: f64) {
        *self.timings.entry(phase.to_string()).or_default() += seconds;
    }

    /// `<out>/<id>.<suffix>`, recorded as an output.
    pub fn output_path(&mut self, out: &Path, suffix: &str) -> PathBuf {
        let name = format!("{}.{suffix}", self.id);
        self.outputs.push(name.clone());
        out.join(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&mut self, out: &Path) -> Result<PathBuf> {
        let path = out.join(format!("{}.manifest.json", self.id));
        write_atomic(&path, self.to_json().as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Hash of the command, its inputs and dataset contents.
pub fn manifest_id(
    command: &str,
    inputs: &BTreeMap<String, serde_json::Value>,
    datasets: &[DatasetFingerprint],
) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(serde_json::to_vec(inputs).expect("inputs serialize"));
    for d in datasets {
        h.update(d.role.as_bytes());
        h.update(d.sha256.as_bytes());
        h.update(d.samples.to_le_bytes());
    }
    format!("{:x}", h.finalize())[..16].to_string()
}

pub fn sha256_files(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let mut f = File::open(p).map_err(|e| Error::io(*p, e))?;
        io::copy(&mut f, &mut h).map_err(|e| Error::io(*p, e))?;
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Write to a sibling temporary file and rename, so a failed run never
/// leaves a partial file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let res = File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
