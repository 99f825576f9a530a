//! Threaded stream engine: one long-lived worker per stage, bounded FIFOs
//! between them, shared model traces written only by the trace-update stage.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::thread::{self, Scope};
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::channel::{fifo, ChannelStats, Disconnected, FifoRx, FifoTx};
use super::graph::*;
use super::oracle::{check_inputs, RunOutput};
use super::packet::{depacketize, merge_packets, packetize, Packet, Values};
use super::stats::PipelineStats;
use crate::config::{ModelConfig, IH_PARTITIONS};
use crate::error::{Error, Result};
use crate::learning::{finish_support, softmax_hc};
use crate::network::{add_step_noise, Mode, Network};
use crate::ops::OpCounts;
use crate::projection::Projection;
use crate::structural::maybe_rewire;

/// Random per-packet delays injected into every stage, to show results do
/// not depend on scheduling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub seed: u64,
    /// Chance that a given send is delayed.
    pub probability: f64,
    pub max_delay: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamOptions {
    /// Overrides the configured FIFO depth.
    pub fifo_depth: Option<usize>,
    pub jitter: Option<Jitter>,
}

/// Why a stage stopped early.
enum Halt {
    /// A neighbour went away; its own failure (if any) is reported by it.
    Peer,
    Failed(Error),
}

impl From<Disconnected> for Halt {
    fn from(_: Disconnected) -> Self {
        Halt::Peer
    }
}

impl From<Error> for Halt {
    fn from(e: Error) -> Self {
        Halt::Failed(e)
    }
}

type StageResult = std::result::Result<(), Halt>;

struct Shared<'a> {
    net: RwLock<&'a mut Network>,
    failure: Mutex<Option<Error>>,
    counts: Mutex<Vec<OpCounts>>,
    submitted: Vec<OnceLock<Instant>>,
    channels: Vec<Arc<ChannelStats>>,
}

impl Shared<'_> {
    fn fail(&self, stage: &str, tag: u64, e: Error) {
        let mut slot = self.failure.lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            *slot = Some(Error::Pipeline {
                stage: stage.to_string(),
                tag,
                source: Box::new(e),
            });
        }
    }

    fn read(&self) -> std::result::Result<std::sync::RwLockReadGuard<'_, &mut Network>, Halt> {
        self.net.read().map_err(|_| Halt::Peer)
    }
}

/// Per-stage state: current image, local counters and jitter source.
struct Ctx<'s, 'a> {
    shared: &'s Shared<'a>,
    tag: u64,
    counts: OpCounts,
    jitter: Option<(Jitter, ChaCha8Rng)>,
}

impl Ctx<'_, '_> {
    fn begin(&mut self, tag: u64) {
        self.tag = tag;
        self.counts = OpCounts::default();
    }

    fn finish(&mut self) {
        let c = std::mem::take(&mut self.counts);
        if c != OpCounts::default() {
            let mut board = self.shared.counts.lock().unwrap_or_else(|p| p.into_inner());
            board[self.tag as usize] += c;
        }
    }

    fn send(&mut self, tx: &FifoTx<Packet>, p: Packet) -> StageResult {
        if let Some((j, rng)) = &mut self.jitter {
            if rng.random::<f64>() < j.probability {
                let d = j.max_delay.mul_f64(rng.random::<f64>());
                if d.is_zero() {
                    thread::yield_now();
                } else {
                    thread::sleep(d);
                }
            }
        }
        Ok(tx.send(p)?)
    }

    fn send_vec(&mut self, tx: &FifoTx<Packet>, v: &[f64], packet_len: usize) -> StageResult {
        for p in packetize(v, packet_len, self.tag)? {
            self.send(tx, p)?;
        }
        Ok(())
    }

    /// Receive the next packet of the current image, checking its tag.
    fn recv(&self, rx: &FifoRx<Packet>, what: &str) -> std::result::Result<Packet, Halt> {
        let p = rx.recv()?;
        if p.tag != self.tag {
            return Err(Halt::Failed(Error::Sync(format!(
                "{what}: received image {} while processing image {}",
                p.tag, self.tag
            ))));
        }
        Ok(p)
    }

    /// Receive `n` packets of the current image and reassemble them.
    fn recv_vec(&self, rx: &FifoRx<Packet>, n: usize, len: usize, what: &str) -> std::result::Result<Vec<f64>, Halt> {
        let ps = (0..n)
            .map(|_| self.recv(rx, what))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(depacketize(&ps, len)?)
    }
}

/// Receive the packet that opens a new image; `None` on orderly shutdown.
fn open(rx: &FifoRx<Packet>) -> Option<Packet> {
    rx.recv().ok()
}

/// Position inside a projection's weight stream, which runs over
/// (post-hypercolumn, active slot, pre-minicolumn, post-minicolumn).
#[derive(Debug, Clone, Copy)]
struct Cursor {
    h: usize,
    slot: usize,
    il: usize,
    jl: usize,
}

impl Cursor {
    fn at(proj: &Projection, e: usize) -> Self {
        let jl = e % proj.post_mc;
        let r = e / proj.post_mc;
        let il = r % proj.pre_mc;
        let r = r / proj.pre_mc;
        Cursor {
            h: r / proj.nact,
            slot: r % proj.nact,
            il,
            jl,
        }
    }

    #[inline]
    fn advance(&mut self, pre_mc: usize, post_mc: usize, nact: usize) {
        self.jl += 1;
        if self.jl == post_mc {
            self.jl = 0;
            self.il += 1;
            if self.il == pre_mc {
                self.il = 0;
                self.slot += 1;
                if self.slot == nact {
                    self.slot = 0;
                    self.h += 1;
                }
            }
        }
    }

    #[inline]
    fn pre(&self, active: &[Vec<usize>], pre_mc: usize) -> usize {
        active[self.h][self.slot] * pre_mc + self.il
    }

    #[inline]
    fn post(&self, post_mc: usize) -> usize {
        self.h * post_mc + self.jl
    }
}

fn active_lists(proj: &Projection) -> Vec<Vec<usize>> {
    (0..proj.post_hc).map(|h| proj.active(h).to_vec()).collect()
}

/// Read stream packets `first, first + stride, ...` of a projection's weights.
fn stream_weights(
    ctx: &mut Ctx,
    proj: &Projection,
    tx: &FifoTx<Packet>,
    packet_len: usize,
    first: usize,
    stride: usize,
) -> StageResult {
    let total = proj.post_hc * proj.nact * proj.pre_mc * proj.post_mc;
    let n_post = proj.n_post();
    let active = active_lists(proj);
    let mut p = first;
    while p * packet_len < total {
        let mut cur = Cursor::at(proj, p * packet_len);
        let mut values = Values::with_capacity(packet_len);
        for _ in 0..packet_len {
            values.push(proj.w[cur.pre(&active, proj.pre_mc) * n_post + cur.post(proj.post_mc)]);
            cur.advance(proj.pre_mc, proj.post_mc, proj.nact);
        }
        ctx.counts.read_values(packet_len);
        ctx.send(
            tx,
            Packet {
                values,
                base_index: p * packet_len,
                tag: ctx.tag,
            },
        )?;
        p += stride;
    }
    Ok(())
}

/// Shape of a projection, copied out so support stages can run without
/// holding the model lock.
#[derive(Clone)]
struct StreamShape {
    pre_mc: usize,
    post_mc: usize,
    nact: usize,
    n_post: usize,
    active: Vec<Vec<usize>>,
}

impl StreamShape {
    fn of(proj: &Projection) -> Self {
        StreamShape {
            pre_mc: proj.pre_mc,
            post_mc: proj.post_mc,
            nact: proj.nact,
            n_post: proj.n_post(),
            active: active_lists(proj),
        }
    }

    fn stream_len(&self) -> usize {
        self.active.len() * self.nact * self.pre_mc * self.post_mc
    }
}

/// Accumulate `acc[j] += w * x[i]` over a weight stream, in stream order.
fn consume_weights(
    ctx: &mut Ctx,
    rx: &FifoRx<Packet>,
    shape: &StreamShape,
    x: &[f64],
    packet_len: usize,
    what: &str,
) -> std::result::Result<Vec<f64>, Halt> {
    let mut acc = vec![0.0; shape.n_post];
    let mut cur = Cursor {
        h: 0,
        slot: 0,
        il: 0,
        jl: 0,
    };
    let total = shape.stream_len();
    for q in 0..total / packet_len {
        let p = ctx.recv(rx, what)?;
        if p.base_index != q * packet_len || p.len() != packet_len {
            return Err(Halt::Failed(Error::Sync(format!(
                "{what}: packet at index {} (length {}), expected index {}",
                p.base_index,
                p.len(),
                q * packet_len
            ))));
        }
        for &w in &p.values {
            acc[cur.post(shape.post_mc)] += w * x[cur.pre(&shape.active, shape.pre_mc)];
            cur.advance(shape.pre_mc, shape.post_mc, shape.nact);
        }
    }
    ctx.counts.mac += total as u64;
    Ok(acc)
}

struct Channels {
    pipeline: Pipeline,
    tx: Vec<(String, FifoTx<Packet>)>,
    rx: Vec<(String, FifoRx<Packet>)>,
    stats: Vec<Arc<ChannelStats>>,
}

impl Channels {
    fn new(pipeline: Pipeline) -> Self {
        let mut c = Channels {
            pipeline,
            tx: Vec::new(),
            rx: Vec::new(),
            stats: Vec::new(),
        };
        for e in &c.pipeline.edges {
            let (tx, rx, st) = fifo(&e.name, e.capacity);
            c.tx.push((e.name.clone(), tx));
            c.rx.push((e.name.clone(), rx));
            c.stats.push(st);
        }
        c
    }

    fn has(&self, name: &str) -> bool {
        self.pipeline.edge(name).is_some()
    }

    fn tx(&mut self, name: &str) -> FifoTx<Packet> {
        let k = self
            .tx
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no channel `{name}`"));
        self.tx.swap_remove(k).1
    }

    fn rx(&mut self, name: &str) -> FifoRx<Packet> {
        let k = self
            .rx
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no channel `{name}`"));
        self.rx.swap_remove(k).1
    }

    fn packets(&self, name: &str) -> usize {
        self.pipeline.edge(name).map_or(0, Edge::packets_per_image)
    }
}

fn spawn_stage<'scope, 'env: 'scope, 'a: 'scope, F>(
    scope: &'scope Scope<'scope, 'env>,
    shared: &'scope Shared<'a>,
    name: String,
    jitter: Option<Jitter>,
    index: u64,
    body: F,
) where
    F: FnOnce(&mut Ctx<'scope, 'a>) -> StageResult + Send + 'scope,
{
    scope.spawn(move || {
        let mut ctx = Ctx {
            shared,
            tag: 0,
            counts: OpCounts::default(),
            jitter: jitter.map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
                rng.set_stream(index);
                (j, rng)
            }),
        };
        match catch_unwind(AssertUnwindSafe(|| body(&mut ctx))) {
            Ok(Ok(())) | Ok(Err(Halt::Peer)) => {}
            Ok(Err(Halt::Failed(e))) => shared.fail(&name, ctx.tag, e),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                shared.fail(&name, ctx.tag, Error::State(format!("stage panicked: {msg}")));
            }
        }
    });
}

struct Completion {
    tag: u64,
    distribution: Option<Vec<f64>>,
}

/// Stream `inputs` (already encoded) through the stage graph of `mode`.
///
/// Training modes feed one image at a time, because each image's support
/// depends on the previous image's trace update; inference streams freely.
/// In structural mode the host rewires between images, after the pipeline
/// has drained.
pub fn run_stream(
    net: &mut Network,
    inputs: &[Vec<f64>],
    labels: &[usize],
    mode: Mode,
    opts: &StreamOptions,
) -> Result<(RunOutput, PipelineStats)> {
    check_inputs(net, inputs, labels, mode)?;
    let mut cfg = net.config.clone();
    if let Some(d) = opts.fifo_depth {
        cfg.fifo_depth = d;
    }
    let pipeline = build_pipeline(&cfg, mode)?;
    ensure_runnable(&pipeline)?;
    let mut chans = Channels::new(pipeline);
    let n = inputs.len();
    let t0 = net.unsup_sched.t;
    let shared = Shared {
        net: RwLock::new(net),
        failure: Mutex::new(None),
        counts: Mutex::new(vec![OpCounts::default(); n]),
        submitted: (0..n).map(|_| OnceLock::new()).collect(),
        channels: chans.stats.clone(),
    };
    let shared = &shared;
    let (submit_tx, submit_rx, _) = fifo::<u64>("submit", cfg.fifo_depth);
    let (done_tx, done_rx) = unbounded::<Completion>();
    let snapshots_m: Mutex<Vec<Vec<u64>>> = Mutex::new(vec![Vec::new(); n]);
    let latencies_m = Mutex::new(vec![0.0; n]);
    let mut out = RunOutput::default();
    let mut distributions: Vec<Option<Vec<f64>>> = vec![None; n];
    let start = Instant::now();

    thread::scope(|s| -> Result<()> {
        let jit = opts.jitter;
        let mut idx = 0u64;
        let mut next = || {
            idx += 1;
            idx
        };
        let ModelConfig {
            packet_ih: p,
            packet_ho: q,
            n_classes: no,
            ..
        } = cfg;
        let (ni, nh) = (cfg.n_input(), cfg.n_hidden());

        // fetch
        {
            let go: Vec<FifoTx<Packet>> = (0..IH_PARTITIONS).map(|k| chans.tx(&ih_go(k))).collect();
            let x_support = chans.tx("x_support");
            let x_trace = chans.has("x_trace").then(|| chans.tx("x_trace"));
            let ho_go = chans.has("ho_go").then(|| chans.tx("ho_go"));
            let label = chans.has("label").then(|| chans.tx("label"));
            spawn_stage(s, shared, FETCH.into(), jit, next(), move |ctx| {
                while let Ok(tag) = submit_rx.recv() {
                    ctx.begin(tag);
                    for g in &go {
                        ctx.send(g, Packet::token(tag, 0.0))?;
                    }
                    if let Some(tx) = &ho_go {
                        ctx.send(tx, Packet::token(tag, 0.0))?;
                    }
                    if let Some(tx) = &label {
                        ctx.counts.read_values(1);
                        ctx.send(tx, Packet::token(tag, labels[tag as usize] as f64))?;
                    }
                    ctx.counts.read_values(ni);
                    for pk in packetize(&inputs[tag as usize], p, tag)? {
                        if let Some(tx) = &x_trace {
                            ctx.send(tx, pk.clone())?;
                        }
                        ctx.send(&x_support, pk)?;
                    }
                    ctx.finish();
                }
                Ok(())
            });
        }

        // ih_read_k
        for k in 0..IH_PARTITIONS {
            let go = chans.rx(&ih_go(k));
            let part = chans.tx(&ih_part(k));
            spawn_stage(s, shared, ih_read(k), jit, next(), move |ctx| {
                while let Some(tok) = open(&go) {
                    ctx.begin(tok.tag);
                    let net = shared.read()?;
                    stream_weights(ctx, &net.input_hidden, &part, p, k, IH_PARTITIONS)?;
                    drop(net);
                    ctx.finish();
                }
                Ok(())
            });
        }

        // ih_merge
        {
            let parts: Vec<FifoRx<Packet>> = (0..IH_PARTITIONS).map(|k| chans.rx(&ih_part(k))).collect();
            let merged = chans.tx("ih_stream");
            spawn_stage(s, shared, IH_MERGE.into(), jit, next(), move |ctx| {
                while let Some(first) = open(&parts[0]) {
                    ctx.tag = first.tag;
                    let mut group = vec![first];
                    for rx in &parts[1..] {
                        group.push(rx.recv()?);
                    }
                    let m = merge_packets(&group)?;
                    ctx.send(&merged, m)?;
                }
                Ok(())
            });
        }

        // ih_support
        {
            let x_rx = chans.rx("x_support");
            let w_rx = chans.rx("ih_stream");
            let out_tx = chans.tx("hidden_support");
            let n_x = chans.packets("x_support");
            spawn_stage(s, shared, IH_SUPPORT.into(), jit, next(), move |ctx| {
                while let Some(first) = open(&x_rx) {
                    ctx.begin(first.tag);
                    let mut ps = vec![first];
                    for _ in 1..n_x {
                        ps.push(ctx.recv(&x_rx, "input activation")?);
                    }
                    let x = depacketize(&ps, ni)?;
                    let shape = StreamShape::of(&shared.read()?.input_hidden);
                    let acc = consume_weights(ctx, &w_rx, &shape, &x, IH_PARTITIONS * p, "input-hidden weights")?;
                    let bias = shared.read()?.hidden.bias.clone();
                    ctx.counts.read_values(nh);
                    ctx.counts.add += nh as u64;
                    let s = finish_support(acc, &bias);
                    ctx.send_vec(&out_tx, &s, q)?;
                    ctx.finish();
                }
                Ok(())
            });
        }

        // hidden_softmax
        {
            let in_rx = chans.rx("hidden_support");
            let to_trace = chans.has("h_trace").then(|| chans.tx("h_trace"));
            let to_output = chans.has("h_output").then(|| chans.tx("h_output"));
            let n_in = chans.packets("hidden_support");
            let cfg = cfg.clone();
            spawn_stage(s, shared, HIDDEN_SOFTMAX.into(), jit, next(), move |ctx| {
                while let Some(first) = open(&in_rx) {
                    ctx.begin(first.tag);
                    let mut ps = vec![first];
                    for _ in 1..n_in {
                        ps.push(ctx.recv(&in_rx, "hidden support")?);
                    }
                    let mut sup = depacketize(&ps, nh)?;
                    if mode == Mode::Unsupervised {
                        add_step_noise(&mut sup, cfg.seed, t0 + ctx.tag, cfg.noise_amp);
                        ctx.counts.add += nh as u64;
                    }
                    let a = softmax_hc(&sup, cfg.hidden_hc, cfg.hidden_mc, cfg.temperature)?;
                    ctx.counts.softmax(nh);
                    for pk in packetize(&a, q, ctx.tag)? {
                        if let Some(tx) = &to_trace {
                            ctx.send(tx, pk.clone())?;
                        }
                        if let Some(tx) = &to_output {
                            ctx.send(tx, pk)?;
                        }
                    }
                    ctx.finish();
                }
                Ok(())
            });
        }

        if mode != Mode::Unsupervised {
            // ho_read
            let go = chans.rx("ho_go");
            let w_tx = chans.tx("ho_stream");
            spawn_stage(s, shared, HO_READ.into(), jit, next(), move |ctx| {
                while let Some(tok) = open(&go) {
                    ctx.begin(tok.tag);
                    let net = shared.read()?;
                    stream_weights(ctx, &net.hidden_output, &w_tx, q, 0, 1)?;
                    drop(net);
                    ctx.finish();
                }
                Ok(())
            });

            // ho_support
            let h_rx = chans.rx("h_output");
            let w_rx = chans.rx("ho_stream");
            let s_tx = chans.tx("output_support");
            let n_h = chans.packets("h_output");
            spawn_stage(s, shared, HO_SUPPORT.into(), jit, next(), move |ctx| {
                while let Some(first) = open(&h_rx) {
                    ctx.begin(first.tag);
                    let mut ps = vec![first];
                    for _ in 1..n_h {
                        ps.push(ctx.recv(&h_rx, "hidden activation")?);
                    }
                    let h = depacketize(&ps, nh)?;
                    let shape = StreamShape::of(&shared.read()?.hidden_output);
                    let acc = consume_weights(ctx, &w_rx, &shape, &h, q, "hidden-output weights")?;
                    let bias = shared.read()?.output.bias.clone();
                    ctx.counts.read_values(no);
                    ctx.counts.add += no as u64;
                    let sup = finish_support(acc, &bias);
                    ctx.send_vec(&s_tx, &sup, no)?;
                    ctx.finish();
                }
                Ok(())
            });

            // output_softmax
            let s_rx = chans.rx("output_support");
            let dest = if mode == Mode::Supervised {
                "prediction_trace"
            } else {
                "prediction"
            };
            let d_tx = chans.tx(dest);
            let temperature = cfg.temperature;
            spawn_stage(s, shared, OUTPUT_SOFTMAX.into(), jit, next(), move |ctx| {
                while let Some(pk) = open(&s_rx) {
                    ctx.begin(pk.tag);
                    let d = softmax_hc(&pk.values, 1, no, temperature)?;
                    ctx.counts.softmax(no);
                    ctx.send_vec(&d_tx, &d, no)?;
                    ctx.finish();
                }
                Ok(())
            });
        }

        if mode.trains() {
            // trace_update
            let x_rx = chans.has("x_trace").then(|| chans.rx("x_trace"));
            let label_rx = chans.has("label").then(|| chans.rx("label"));
            let pred_rx = chans.has("prediction_trace").then(|| chans.rx("prediction_trace"));
            let h_rx = chans.rx("h_trace");
            let done_tx = chans.tx("trace_done");
            let (n_x, n_h) = (chans.packets("x_trace"), chans.packets("h_trace"));
            spawn_stage(s, shared, TRACE_UPDATE.into(), jit, next(), move |ctx| loop {
                if mode == Mode::Unsupervised {
                    let x_rx = x_rx.as_ref().expect("unsupervised graph has x_trace");
                    let Some(first) = open(x_rx) else { return Ok(()) };
                    ctx.begin(first.tag);
                    let mut ps = vec![first];
                    for _ in 1..n_x {
                        ps.push(ctx.recv(x_rx, "input activation")?);
                    }
                    let x = depacketize(&ps, ni)?;
                    let h = ctx.recv_vec(&h_rx, n_h, nh, "hidden activation")?;
                    let mut net = shared.net.write().map_err(|_| Halt::Peer)?;
                    net.apply_unsupervised_update(&x, h, &mut ctx.counts)?;
                    drop(net);
                    ctx.send(&done_tx, Packet::token(ctx.tag, 0.0))?;
                } else {
                    let label_rx = label_rx.as_ref().expect("supervised graph has label");
                    let Some(lbl) = open(label_rx) else { return Ok(()) };
                    ctx.begin(lbl.tag);
                    let label = lbl.values[0] as usize;
                    let h = ctx.recv_vec(&h_rx, n_h, nh, "hidden activation")?;
                    let pred = ctx.recv(
                        pred_rx.as_ref().expect("supervised graph has prediction_trace"),
                        "prediction",
                    )?;
                    let mut net = shared.net.write().map_err(|_| Halt::Peer)?;
                    net.apply_supervised_update(h, label, &mut ctx.counts)?;
                    drop(net);
                    ctx.send(&done_tx, pred)?;
                }
                ctx.finish();
            });
        }

        // sink
        {
            let final_rx = chans.rx(if mode.trains() { "trace_done" } else { "prediction" });
            let done_tx = done_tx.clone();
            let snapshots_m = &snapshots_m;
            let latencies_m = &latencies_m;
            spawn_stage(s, shared, SINK.into(), jit, next(), move |ctx| {
                while let Some(pk) = open(&final_rx) {
                    ctx.begin(pk.tag);
                    let distribution = (mode != Mode::Unsupervised).then(|| {
                        ctx.counts.write_values(no);
                        pk.values.to_vec()
                    });
                    ctx.finish();
                    let tag = pk.tag as usize;
                    let started = *shared.submitted[tag].get().expect("image submitted before completion");
                    latencies_m.lock().unwrap()[tag] = started.elapsed().as_secs_f64() * 1e6;
                    snapshots_m.lock().unwrap()[tag] = shared.channels.iter().map(|c| c.stalls()).collect();
                    if done_tx
                        .send(Completion {
                            tag: pk.tag,
                            distribution,
                        })
                        .is_err()
                    {
                        return Ok(());
                    }
                }
                Ok(())
            });
        }
        drop(done_tx);
        debug_assert!(chans.tx.is_empty() && chans.rx.is_empty(), "unwired channels");

        // Host side.
        let submit = |tx: &FifoTx<u64>, tag: usize| {
            let _ = shared.submitted[tag].set(Instant::now());
            tx.send(tag as u64)
        };
        let mut received = 0;
        let mut record = |c: Completion| {
            distributions[c.tag as usize] = c.distribution;
            received += 1;
        };
        if mode.trains() {
            for tag in 0..n {
                if submit(&submit_tx, tag).is_err() {
                    break;
                }
                match done_rx.recv() {
                    Ok(c) => record(c),
                    Err(_) => break,
                }
                if mode == Mode::Unsupervised {
                    let mut guard = shared
                        .net
                        .write()
                        .map_err(|_| Error::State("model lock poisoned".into()))?;
                    match maybe_rewire(&mut guard) {
                        Ok(ev) => out.events.extend(ev),
                        Err(e) => {
                            shared.fail("host", tag as u64, e);
                            break;
                        }
                    }
                }
            }
            drop(submit_tx);
        } else {
            s.spawn(move || {
                for tag in 0..n {
                    if submit(&submit_tx, tag).is_err() {
                        break;
                    }
                }
            });
            while let Ok(c) = done_rx.recv() {
                record(c);
            }
        }
        if received < n {
            // Stages report their own failure; this only fires if none did.
            shared.fail(
                "host",
                received as u64,
                Error::Sync(format!("pipeline stopped after {received} of {n} images")),
            );
        }
        Ok(())
    })?;

    let wall_seconds = start.elapsed().as_secs_f64();
    if let Some(e) = shared.failure.lock().unwrap_or_else(|p| p.into_inner()).take() {
        return Err(e);
    }
    let channels: Vec<_> = shared.channels.iter().map(|c| c.report()).collect();
    let counts = shared.counts.lock().unwrap_or_else(|p| p.into_inner()).clone();
    for d in distributions.into_iter().flatten() {
        out.predictions.push(crate::learning::argmax(&d));
        out.distributions.push(d);
    }
    out.counts = counts.clone();
    let stats = PipelineStats {
        mode,
        fifo_depth: cfg.fifo_depth,
        wall_seconds,
        latencies_us: latencies_m.into_inner().unwrap_or_else(|p| p.into_inner()),
        stall_snapshots: snapshots_m.into_inner().unwrap_or_else(|p| p.into_inner()),
        channels,
        counts,
    };
    Ok((out, stats))
}
