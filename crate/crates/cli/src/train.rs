//! `bcpnn train`: unsupervised epochs, one supervised pass, model + manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bcpnn_core::dataflow::{run_stream, sequential_oracle, RunOutput, StreamOptions};
use bcpnn_core::dataio::permutation;
use bcpnn_core::modelfile::encode_model;
use bcpnn_core::structural::{encode_pgm, export_receptive_field, mean_active_score};
use bcpnn_core::{Dataset, Error, Mode, Network, OpCounts, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::args::{Engine, Split, TrainArgs, TrainMode};
use crate::data::{encode, load};
use crate::manifest::{ensure_dir, write_atomic, RunManifest};

/// Images encoded and streamed at a time; bounds memory on full datasets.
const CHUNK: usize = 1000;

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Pipeline => "pipeline",
            Engine::Oracle => "oracle",
        }
    }

    pub fn run(self, net: &mut Network, x: &[Vec<f64>], labels: &[usize], mode: Mode) -> Result<RunOutput> {
        match self {
            Engine::Oracle => sequential_oracle(net, x, labels, mode),
            Engine::Pipeline => run_stream(net, x, labels, mode, &StreamOptions::default()).map(|(out, _)| out),
        }
    }
}

/// Totals over a chunked pass.
#[derive(Debug, Default)]
pub struct Pass {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub counts: OpCounts,
    pub rewires: usize,
}

impl Pass {
    pub fn accuracy(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let hits = self
            .predictions
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / self.labels.len() as f64
    }

    pub fn predictions_sha256(&self) -> String {
        let mut h = Sha256::new();
        for &p in &self.predictions {
            h.update((p as u32).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// Run `mode` over `order`, `CHUNK` images at a time. `stop_at` splits
/// chunks so they end exactly on multiples of that many unsupervised steps,
/// and `at_boundary` is called there.
pub fn chunked_pass(
    net: &mut Network,
    ds: &Dataset,
    order: &[usize],
    mode: Mode,
    engine: Engine,
    stop_at: Option<u64>,
    mut at_boundary: impl FnMut(&Network) -> Result<()>,
) -> Result<Pass> {
    let mut pass = Pass::default();
    let mut pos = 0;
    while pos < order.len() {
        let mut end = (pos + CHUNK).min(order.len());
        if let Some(k) = stop_at.filter(|_| mode == Mode::Unsupervised) {
            let t = net.unsup_sched.t;
            let to_next = (k - t % k) as usize;
            end = end.min(pos + to_next);
        }
        let (x, y) = encode(ds, &order[pos..end], net.config.input_mc)?;
        let out = engine.run(net, &x, &y, mode)?;
        if mode != Mode::Unsupervised {
            pass.predictions.extend(&out.predictions);
            pass.labels.extend(&y);
        }
        pass.counts += out.total_counts();
        pass.rewires += out.events.len();
        if let Some(k) = stop_at {
            if mode == Mode::Unsupervised && net.unsup_sched.t.is_multiple_of(k) {
                at_boundary(net)?;
            }
        }
        pos = end;
    }
    Ok(pass)
}

pub fn evaluate(net: &mut Network, ds: &Dataset, engine: Engine) -> Result<Pass> {
    let order: Vec<usize> = (0..ds.len()).collect();
    chunked_pass(net, ds, &order, Mode::Inference, engine, None, |_| Ok(()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub step: u64,
    pub mean_active_mi: f64,
    /// Active input hypercolumns per snapshotted hidden hypercolumn.
    pub active: Vec<usize>,
    pub files: Vec<String>,
}

struct RfWriter<'a> {
    out: &'a Path,
    hcs: &'a [usize],
    snapshots: Vec<Snapshot>,
    files: Vec<(PathBuf, Vec<u8>)>,
    id: String,
}

impl RfWriter<'_> {
    fn take(&mut self, net: &Network) -> Result<()> {
        let step = net.unsup_sched.t;
        if self.snapshots.last().is_some_and(|s| s.step == step) {
            return Ok(());
        }
        let cfg = &net.config;
        let mut snap = Snapshot {
            step,
            mean_active_mi: mean_active_score(net)?,
            active: Vec::new(),
            files: Vec::new(),
        };
        for &h in self.hcs {
            let field = export_receptive_field(net, h)?;
            snap.active.push(field.iter().filter(|&&v| v > 0.0).count());
            let name = format!("{}.rf-hc{h:02}-step{step:08}.pgm", self.id);
            self.files.push((
                self.out.join(&name),
                encode_pgm(cfg.input_width, cfg.input_height, &field)?,
            ));
            snap.files.push(name);
        }
        log::info!("snapshot at step {step}: mean active MI {:.6}", snap.mean_active_mi);
        self.snapshots.push(snap);
        Ok(())
    }
}

pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub model_path: PathBuf,
}

pub fn run(a: &TrainArgs) -> Result<TrainOutcome> {
    let cfg = a.config.resolve()?;
    let (train, train_fp) = load(&a.data.require(Split::Train)?, &cfg, a.data.limit, "train")?;
    let test = match a.test_source() {
        Some(src) => Some(load(&src, &cfg, a.test_limit, "test")?),
        None => None,
    };
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    for &h in &a.rf_hc {
        if h >= cfg.hidden_hc {
            return Err(Error::Input(format!(
                "--rf-hc {h} out of range (model has {} hidden hypercolumns)",
                cfg.hidden_hc
            )));
        }
    }
    if a.rf_every == Some(0) {
        return Err(Error::Config("--rf-every must be positive".into()));
    }
    ensure_dir(&a.out)?;

    let structural = a.mode == TrainMode::Struct;
    let inputs = BTreeMap::from([
        ("config".to_string(), json!(cfg.to_text())),
        ("seed".to_string(), json!(cfg.seed)),
        ("mode".to_string(), json!(if structural { "struct" } else { "train" })),
        ("engine".to_string(), json!(a.engine.name())),
        ("shuffle".to_string(), json!(a.shuffle)),
        ("rf_every".to_string(), json!(a.rf_every)),
        ("rf_hc".to_string(), json!(a.rf_hc)),
    ]);
    let mut fps = vec![train_fp];
    fps.extend(test.as_ref().map(|(_, fp)| fp.clone()));
    let mut m = RunManifest::new("train", inputs, fps);
    log::info!("run {}", m.id);

    let mut net = Network::new(cfg.clone())?;
    net.set_structural(structural);
    let mut rf = RfWriter {
        out: &a.out,
        hcs: &a.rf_hc,
        snapshots: Vec::new(),
        files: Vec::new(),
        id: m.id.clone(),
    };
    if a.rf_every.is_some() {
        rf.take(&net)?;
    }

    let n = train.len();
    let order_for = |epoch: u64| -> Vec<usize> {
        if a.shuffle {
            permutation(n, cfg.seed.wrapping_add(epoch))
        } else {
            (0..n).collect()
        }
    };

    let mut counts = OpCounts::default();
    let mut rewires = 0;
    for epoch in 0..cfg.epochs_unsup {
        let started = Instant::now();
        let pass = chunked_pass(
            &mut net,
            &train,
            &order_for(epoch as u64),
            Mode::Unsupervised,
            a.engine,
            a.rf_every,
            |net| rf.take(net),
        )?;
        counts += pass.counts;
        rewires += pass.rewires;
        m.timing("unsupervised", started.elapsed().as_secs_f64());
        log::info!(
            "unsupervised epoch {}/{} done in {:.1}s",
            epoch + 1,
            cfg.epochs_unsup,
            started.elapsed().as_secs_f64()
        );
    }
    if a.rf_every.is_some() {
        rf.take(&net)?;
    }

    let started = Instant::now();
    let sup = chunked_pass(
        &mut net,
        &train,
        &order_for(cfg.epochs_unsup as u64),
        Mode::Supervised,
        a.engine,
        None,
        |_| Ok(()),
    )?;
    counts += sup.counts;
    m.timing("supervised", started.elapsed().as_secs_f64());

    let started = Instant::now();
    let train_eval = evaluate(&mut net, &train, a.engine)?;
    m.timing("train_eval", started.elapsed().as_secs_f64());
    log::info!("train accuracy {:.4}", train_eval.accuracy());
    m.metric("train_accuracy", train_eval.accuracy());
    m.metric("train_predictions_sha256", train_eval.predictions_sha256());
    m.metric("online_supervised_accuracy", sup.accuracy());
    if let Some((test, _)) = &test {
        let started = Instant::now();
        let test_eval = evaluate(&mut net, test, a.engine)?;
        m.timing("test_eval", started.elapsed().as_secs_f64());
        log::info!("test accuracy {:.4}", test_eval.accuracy());
        m.metric("test_accuracy", test_eval.accuracy());
        m.metric("test_predictions_sha256", test_eval.predictions_sha256());
    }
    m.metric("rewire_events", rewires);
    m.metric("mean_active_mi", mean_active_score(&net)?);
    m.metric("training_flops", counts.flops(Default::default()));
    m.metric("training_bytes", counts.bytes());
    m.metric("rf_snapshots", &rf.snapshots);

    // Everything succeeded; only now do files appear under their final names.
    let model_path = m.output_path(&a.out, "model");
    write_atomic(&model_path, &encode_model(&net))?;
    for (path, bytes) in &rf.files {
        write_atomic(path, bytes)?;
    }
    m.outputs.extend(rf.snapshots.iter().flat_map(|s| s.files.clone()));
    let manifest_path = m.write(&a.out)?;
    Ok(TrainOutcome {
        manifest: m,
        manifest_path,
        model_path,
    })
}
