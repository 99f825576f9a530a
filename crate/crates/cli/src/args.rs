use std::path::PathBuf;

use bcpnn_core::perfmodel::CompositionRule;
use bcpnn_core::{Error, Mode, ModelConfig, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::Source;

#[derive(Debug, Parser)]
#[command(
    name = "bcpnn",
    version,
    about = "BCPNN training, streaming emulation and roofline reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unsupervised epochs (optionally with rewiring), then one supervised pass.
    Train(TrainArgs),
    /// Inference over a dataset with a saved model.
    Eval(EvalArgs),
    /// Roof polyline plus analytic and measured points.
    Roofline(RooflineArgs),
    /// Receptive field of hidden hypercolumns as PGM images.
    ExportRf(ExportRfArgs),
    /// Per-image latency and throughput of the stream engine over a FIFO depth sweep.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Config file (`key = value` lines).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: model1, model2 or model3. Default model1.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ModelConfig::load(path)?,
            (None, Some(name)) => {
                ModelConfig::preset(name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?
            }
            (None, None) => ModelConfig::model1(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.ensure_valid()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

/// One dataset: IDX pair, CSV file, or a split of an MNIST-layout directory.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
    #[arg(long, conflicts_with_all = ["images", "csv"])]
    pub mnist: Option<PathBuf>,
    /// IDX image file.
    #[arg(long, requires = "labels", conflicts_with = "csv")]
    pub images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// CSV with `label,pixel...` rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Use only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

impl DataArgs {
    pub fn source(&self, split: Split) -> Option<Source> {
        if let Some(dir) = &self.mnist {
            return Some(Source::mnist(dir, split));
        }
        if let (Some(images), Some(labels)) = (&self.images, &self.labels) {
            return Some(Source::Idx {
                images: images.clone(),
                labels: labels.clone(),
            });
        }
        self.csv.clone().map(Source::Csv)
    }

    pub fn require(&self, split: Split) -> Result<Source> {
        self.source(split)
            .ok_or_else(|| Error::Config("no dataset given (use --mnist, --images/--labels or --csv)".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    /// Fixed random connectivity.
    Train,
    /// Structural plasticity on.
    Struct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    /// Stage threads connected by bounded FIFOs.
    Pipeline,
    /// Sequential reference.
    Oracle,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Held-out IDX images (defaults to the t10k split with --mnist).
    #[arg(long, requires = "test_labels", conflicts_with = "test_csv")]
    pub test_images: Option<PathBuf>,
    #[arg(long, requires = "test_images")]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_csv: Option<PathBuf>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = TrainMode::Train)]
    pub mode: TrainMode,
    #[arg(long, value_enum, default_value_t = Engine::Oracle)]
    pub engine: Engine,
    /// Present samples in a fresh seeded order every epoch.
    #[arg(long)]
    pub shuffle: bool,
    /// Export receptive fields every N unsupervised steps (plus start and end).
    #[arg(long, value_name = "N")]
    pub rf_every: Option<u64>,
    /// Hidden hypercolumns to snapshot; repeatable.
    #[arg(long = "rf-hc", default_value = "0")]
    pub rf_hc: Vec<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn test_source(&self) -> Option<Source> {
        if let (Some(images), Some(labels)) = (&self.test_images, &self.test_labels) {
            return Some(Source::Idx {
                images: images.clone(),
                labels: labels.clone(),
            });
        }
        if let Some(csv) = &self.test_csv {
            return Some(Source::Csv(csv.clone()));
        }
        self.data.mnist.as_ref().map(|d| Source::mnist(d, Split::Test))
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Which split of the --mnist directory to use.
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = Engine::Pipeline)]
    pub engine: Engine,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RooflineArgs {
    /// Resource file (`key = value`); defaults describe the Alveo U55C.
    #[arg(long)]
    pub resources: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub composition: Option<RuleArg>,
    /// Model config files; each yields an analytic point.
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
    /// Built-in configurations; each yields an analytic point.
    #[arg(long = "preset")]
    pub presets: Vec<String>,
    /// Workload the analytic points describe.
    #[arg(long, value_parser = parse_mode, default_value = "inference")]
    pub mode: Mode,
    /// Per-image stats CSVs written by `bench` or `eval`; each yields a measured point.
    #[arg(long = "stats")]
    pub stats: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    MacFused,
    IndependentPools,
}

impl From<RuleArg> for CompositionRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::MacFused => CompositionRule::MacFused,
            RuleArg::IndependentPools => CompositionRule::IndependentPools,
        }
    }
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl BenchArgs {
    pub fn source(&self) -> Option<Source> {
        if let Some(dir) = &self.mnist {
            return Some(Source::mnist(dir, Split::Train));
        }
        self.csv.clone().map(Source::Csv)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExportRfArgs {
    /// Saved model; without it a fresh model is built from the config flags.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Hidden hypercolumn index; repeatable.
    #[arg(long, required = true)]
    pub hc: Vec<usize>,
    /// Shade active pixels by block score instead of 0/1.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Stream training images from this MNIST-layout directory.
    #[arg(long, conflicts_with = "csv")]
    pub mnist: Option<PathBuf>,
    /// Stream images from this CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Images per run; synthetic images are generated when no dataset is given.
    #[arg(long = "images", default_value_t = 64)]
    pub n_images: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub fifo_depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "unsupervised,supervised,inference")]
    pub modes: Vec<Mode>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}
