//! Static description of the stage graph and its structural checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::config::{ModelConfig, IH_PARTITIONS};
use crate::error::{Error, Result};
use crate::network::Mode;

pub const FETCH: &str = "fetch";
pub const IH_MERGE: &str = "ih_merge";
pub const IH_SUPPORT: &str = "ih_support";
pub const HIDDEN_SOFTMAX: &str = "hidden_softmax";
pub const HO_READ: &str = "ho_read";
pub const HO_SUPPORT: &str = "ho_support";
pub const OUTPUT_SOFTMAX: &str = "output_softmax";
pub const TRACE_UPDATE: &str = "trace_update";
pub const SINK: &str = "sink";

pub fn ih_read(k: usize) -> String {
    format!("ih_read_{k}")
}

pub fn ih_go(k: usize) -> String {
    format!("ih_go_{k}")
}

pub fn ih_part(k: usize) -> String {
    format!("ih_part_{k}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Source,
    Reader,
    Merge,
    Compute,
    TraceUpdate,
    Sink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
}

/// A FIFO between two stages. `stream_len` is the number of values that
/// cross it per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub name: String,
    pub from: String,
    pub to: String,
    pub packet_len: usize,
    pub capacity: usize,
    pub stream_len: usize,
}

impl Edge {
    pub fn packets_per_image(&self) -> usize {
        self.stream_len / self.packet_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub mode: Mode,
    pub stages: Vec<Stage>,
    pub edges: Vec<Edge>,
}

impl Pipeline {
    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn edge(&self, name: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.name == name)
    }

    pub fn has_stage(&self, name: &str) -> bool {
        self.stage(name).is_some()
    }

    /// Add an edge; used to build deliberately broken graphs in tests.
    pub fn push_edge(&mut self, name: &str, from: &str, to: &str, packet_len: usize, stream_len: usize) {
        let capacity = self.edges.first().map_or(1, |e| e.capacity);
        self.edges.push(Edge {
            name: name.into(),
            from: from.into(),
            to: to.into(),
            packet_len,
            capacity,
            stream_len,
        });
    }
}

/// Stage graph for `mode`. Inference omits the trace-update stage,
/// unsupervised training omits the output path.
pub fn build_pipeline(cfg: &ModelConfig, mode: Mode) -> Result<Pipeline> {
    cfg.ensure_valid()?;
    let (p, q, no) = (cfg.packet_ih, cfg.packet_ho, cfg.n_classes);
    let (ni, nh) = (cfg.n_input(), cfg.n_hidden());
    let ih = cfg.ih_stream_len();
    let mut stages = vec![Stage {
        name: FETCH.into(),
        kind: StageKind::Source,
    }];
    let mut edges = Vec::new();
    let mut edge = |name: &str, from: &str, to: &str, packet_len: usize, stream_len: usize| {
        edges.push(Edge {
            name: name.into(),
            from: from.into(),
            to: to.into(),
            packet_len,
            capacity: cfg.fifo_depth,
            stream_len,
        })
    };
    let mut stage = |name: &str, kind: StageKind| {
        stages.push(Stage {
            name: name.into(),
            kind,
        })
    };

    for k in 0..IH_PARTITIONS {
        stage(&ih_read(k), StageKind::Reader);
        edge(&ih_go(k), FETCH, &ih_read(k), 1, 1);
        edge(&ih_part(k), &ih_read(k), IH_MERGE, p, ih / IH_PARTITIONS);
    }
    stage(IH_MERGE, StageKind::Merge);
    stage(IH_SUPPORT, StageKind::Compute);
    stage(HIDDEN_SOFTMAX, StageKind::Compute);
    edge("x_support", FETCH, IH_SUPPORT, p, ni);
    edge("ih_stream", IH_MERGE, IH_SUPPORT, IH_PARTITIONS * p, ih);
    edge("hidden_support", IH_SUPPORT, HIDDEN_SOFTMAX, q, nh);

    if mode != Mode::Unsupervised {
        stage(HO_READ, StageKind::Reader);
        stage(HO_SUPPORT, StageKind::Compute);
        stage(OUTPUT_SOFTMAX, StageKind::Compute);
        edge("ho_go", FETCH, HO_READ, 1, 1);
        edge("ho_stream", HO_READ, HO_SUPPORT, q, cfg.ho_stream_len());
        edge("h_output", HIDDEN_SOFTMAX, HO_SUPPORT, q, nh);
        edge("output_support", HO_SUPPORT, OUTPUT_SOFTMAX, no, no);
    }
    match mode {
        Mode::Unsupervised => {
            stage(TRACE_UPDATE, StageKind::TraceUpdate);
            edge("x_trace", FETCH, TRACE_UPDATE, p, ni);
            edge("h_trace", HIDDEN_SOFTMAX, TRACE_UPDATE, q, nh);
            edge("trace_done", TRACE_UPDATE, SINK, 1, 1);
        }
        Mode::Supervised => {
            stage(TRACE_UPDATE, StageKind::TraceUpdate);
            edge("label", FETCH, TRACE_UPDATE, 1, 1);
            edge("h_trace", HIDDEN_SOFTMAX, TRACE_UPDATE, q, nh);
            edge("prediction_trace", OUTPUT_SOFTMAX, TRACE_UPDATE, no, no);
            edge("trace_done", TRACE_UPDATE, SINK, no, no);
        }
        Mode::Inference => {
            edge("prediction", OUTPUT_SOFTMAX, SINK, no, no);
        }
    }
    stage(SINK, StageKind::Sink);
    Ok(Pipeline { mode, stages, edges })
}

/// A structural problem found by [`check_pipeline`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateStage(String),
    DuplicateEdge(String),
    UnknownEndpoint {
        edge: String,
        stage: String,
    },
    ZeroCapacity(String),
    Cycle(Vec<String>),
    Indivisible {
        edge: String,
        stream_len: usize,
        packet_len: usize,
    },
    MergeMismatch {
        stage: String,
        detail: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateStage(s) => write!(f, "stage `{s}` declared twice"),
            Violation::DuplicateEdge(e) => write!(f, "channel `{e}` declared twice"),
            Violation::UnknownEndpoint { edge, stage } => {
                write!(f, "channel `{edge}` refers to unknown stage `{stage}`")
            }
            Violation::ZeroCapacity(e) => write!(f, "channel `{e}` has zero capacity"),
            Violation::Cycle(stages) => write!(f, "cycle through stages {}", stages.join(", ")),
            Violation::Indivisible {
                edge,
                stream_len,
                packet_len,
            } => write!(
                f,
                "channel `{edge}`: {stream_len} values per image not divisible by packet length {packet_len}"
            ),
            Violation::MergeMismatch { stage, detail } => write!(f, "merge `{stage}`: {detail}"),
        }
    }
}

/// Verify acyclicity, unique producer/consumer per channel, packet
/// divisibility and merge alignment. An empty report means the graph can
/// run with any capacity of at least one packet.
pub fn check_pipeline(p: &Pipeline) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    for s in &p.stages {
        if !names.insert(s.name.as_str()) {
            out.push(Violation::DuplicateStage(s.name.clone()));
        }
    }
    let mut edge_names = BTreeSet::new();
    for e in &p.edges {
        if !edge_names.insert(e.name.as_str()) {
            out.push(Violation::DuplicateEdge(e.name.clone()));
        }
        for end in [&e.from, &e.to] {
            if !names.contains(end.as_str()) {
                out.push(Violation::UnknownEndpoint {
                    edge: e.name.clone(),
                    stage: end.clone(),
                });
            }
        }
        if e.capacity == 0 {
            out.push(Violation::ZeroCapacity(e.name.clone()));
        }
        if e.packet_len == 0 || e.stream_len % e.packet_len != 0 {
            out.push(Violation::Indivisible {
                edge: e.name.clone(),
                stream_len: e.stream_len,
                packet_len: e.packet_len,
            });
        }
    }

    // Kahn's algorithm; whatever cannot be ordered lies on or behind a cycle.
    let mut indeg: BTreeMap<&str, usize> = names.iter().map(|&n| (n, 0)).collect();
    for e in &p.edges {
        if let Some(d) = indeg.get_mut(e.to.as_str()) {
            if names.contains(e.from.as_str()) {
                *d += 1;
            }
        }
    }
    let mut ready: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    let mut ordered = 0;
    while let Some(n) = ready.pop() {
        ordered += 1;
        for e in p.edges.iter().filter(|e| e.from == n) {
            if let Some(d) = indeg.get_mut(e.to.as_str()) {
                *d -= 1;
                if *d == 0 {
                    ready.push(e.to.as_str());
                }
            }
        }
    }
    if ordered < names.len() {
        let stuck = indeg
            .iter()
            .filter(|(_, &d)| d > 0)
            .map(|(&n, _)| n.to_string())
            .collect();
        out.push(Violation::Cycle(stuck));
    }

    for s in p.stages.iter().filter(|s| s.kind == StageKind::Merge) {
        let ins: Vec<&Edge> = p.edges.iter().filter(|e| e.to == s.name).collect();
        let outs: Vec<&Edge> = p.edges.iter().filter(|e| e.from == s.name).collect();
        let mismatch = |detail: String| Violation::MergeMismatch {
            stage: s.name.clone(),
            detail,
        };
        if ins.is_empty() || outs.len() != 1 {
            out.push(mismatch(format!("{} inputs and {} outputs", ins.len(), outs.len())));
            continue;
        }
        let first = ins[0];
        if ins
            .iter()
            .any(|e| e.packet_len != first.packet_len || e.stream_len != first.stream_len)
        {
            out.push(mismatch("inputs differ in packet or stream length".into()));
        }
        let merged = outs[0];
        if merged.packet_len != first.packet_len * ins.len() {
            out.push(mismatch(format!(
                "output packet length {} != {} inputs x {}",
                merged.packet_len,
                ins.len(),
                first.packet_len
            )));
        }
        if merged.stream_len != first.stream_len * ins.len() {
            out.push(mismatch("output stream length is not the sum of its inputs".into()));
        }
        if first.packet_len > 0
            && merged.packet_len > 0
            && first.stream_len / first.packet_len != merged.stream_len / merged.packet_len
        {
            out.push(mismatch(
                "inputs and output carry different packet counts per image".into(),
            ));
        }
    }
    out
}

/// [`check_pipeline`] as an error.
pub fn ensure_runnable(p: &Pipeline) -> Result<()> {
    let v = check_pipeline(p);
    if v.is_empty() {
        return Ok(());
    }
    let msgs: Vec<String> = v.iter().map(|v| v.to_string()).collect();
    Err(Error::Config(format!("pipeline check failed: {}", msgs.join("; "))))
}
