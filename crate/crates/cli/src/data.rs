//! Dataset loading, fingerprinting and batch encoding.

use std::path::{Path, PathBuf};

use bcpnn_core::dataio::{encode_input, load_csv, load_idx};
use bcpnn_core::{Dataset, Error, ModelConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::Split;
use crate::manifest::{sha256_files, DatasetFingerprint};

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Idx { images: PathBuf, labels: PathBuf },
    Csv(PathBuf),
}

impl Source {
    pub fn mnist(dir: &Path, split: Split) -> Self {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "t10k",
        };
        Source::Idx {
            images: dir.join(format!("{prefix}-images-idx3-ubyte")),
            labels: dir.join(format!("{prefix}-labels-idx1-ubyte")),
        }
    }

    fn files(&self) -> Vec<&Path> {
        match self {
            Source::Idx { images, labels } => vec![images, labels],
            Source::Csv(p) => vec![p],
        }
    }
}

/// Load `src`, checked against the config geometry, truncated to `limit`.
pub fn load(
    src: &Source,
    cfg: &ModelConfig,
    limit: Option<usize>,
    role: &str,
) -> Result<(Dataset, DatasetFingerprint)> {
    let ds = match src {
        Source::Idx { images, labels } => {
            let ds = load_idx(images, labels)?;
            if (ds.width, ds.height) != (cfg.input_width, cfg.input_height) {
                return Err(Error::Input(format!(
                    "{}: images are {}x{}, config expects {}x{}",
                    images.display(),
                    ds.width,
                    ds.height,
                    cfg.input_width,
                    cfg.input_height
                )));
            }
            ds.with_classes(cfg.n_classes)?
        }
        Source::Csv(path) => load_csv(path, cfg.input_width, cfg.input_height, cfg.n_classes)?,
    };
    let ds = match limit {
        Some(n) => ds.take(n),
        None => ds,
    };
    let files = src.files();
    let fp = DatasetFingerprint {
        role: role.to_string(),
        files: files.iter().map(|p| p.display().to_string()).collect(),
        sha256: sha256_files(&files)?,
        samples: ds.len(),
    };
    log::info!("{role} set: {} samples from {}", ds.len(), fp.files.join(", "));
    Ok((ds, fp))
}

/// Encoded input activations and labels of samples `idx`.
pub fn encode(ds: &Dataset, idx: &[usize], input_mc: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let x = idx
        .iter()
        .map(|&k| encode_input(&ds.images[k], input_mc))
        .collect::<Result<_>>()?;
    Ok((x, idx.iter().map(|&k| ds.labels[k]).collect()))
}

/// Uniform random images and labels for benchmarking without a dataset.
pub fn synthetic(cfg: &ModelConfig, n: usize) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let px = cfg.input_width * cfg.input_height;
    let images = (0..n).map(|_| (0..px).map(|_| rng.random::<f64>()).collect()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..cfg.n_classes)).collect();
    Dataset::new(images, labels, cfg.input_width, cfg.input_height, cfg.n_classes)
}
