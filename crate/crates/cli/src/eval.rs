//! `bcpnn eval`: inference with a saved model; metrics and a per-image CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use bcpnn_core::dataflow::{run_stream, StreamOptions};
use bcpnn_core::modelfile::load_model;
use bcpnn_core::{Error, Mode, OpCounts, Result};
use serde_json::json;

use crate::args::{Engine, EvalArgs, Split};
use crate::data::{encode, load};
use crate::manifest::{ensure_dir, sha256_files, write_atomic, RunManifest};

const CHUNK: usize = 1000;

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

pub fn run(a: &EvalArgs) -> Result<(RunManifest, PathBuf)> {
    let model_hash = sha256_files(&[&a.model])?;
    let mut net = load_model(&a.model)?;
    net.ensure_trained()?;
    let role = match a.split {
        Split::Train if a.data.mnist.is_some() => "train",
        _ => "eval",
    };
    let (ds, fp) = load(&a.data.require(a.split)?, &net.config, a.data.limit, role)?;
    ensure_dir(&a.out)?;
    let inputs = BTreeMap::from([
        ("model_sha256".to_string(), json!(model_hash)),
        ("engine".to_string(), json!(a.engine.name())),
    ]);
    let mut m = RunManifest::new("eval", inputs, vec![fp]);

    let started = Instant::now();
    let mut predictions = Vec::with_capacity(ds.len());
    let mut latencies = Vec::with_capacity(ds.len());
    let mut counts: Vec<OpCounts> = Vec::with_capacity(ds.len());
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(CHUNK) {
        let (x, y) = encode(&ds, idx, net.config.input_mc)?;
        match a.engine {
            Engine::Pipeline => {
                let (out, stats) = run_stream(&mut net, &x, &y, Mode::Inference, &StreamOptions::default())?;
                predictions.extend(out.predictions);
                latencies.extend(stats.latencies_us);
                counts.extend(out.counts);
            }
            Engine::Oracle => {
                for xi in &x {
                    let mut c = OpCounts::default();
                    let t0 = Instant::now();
                    let p = net.infer_counted(xi, &mut c)?;
                    latencies.push(t0.elapsed().as_secs_f64() * 1e6);
                    predictions.push(p.class);
                    counts.push(c);
                }
            }
        }
    }
    let wall = started.elapsed().as_secs_f64();
    m.timing("inference", wall);

    let hits = predictions.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    let accuracy = if ds.is_empty() {
        0.0
    } else {
        hits as f64 / ds.len() as f64
    };
    log::info!("accuracy {accuracy:.4} over {} images", ds.len());
    m.metric("accuracy", accuracy);
    m.metric("images", ds.len());
    m.metric("mean_latency_us", mean(&latencies));
    m.metric("median_latency_us", median(&latencies));
    m.metric(
        "throughput_images_per_s",
        if wall > 0.0 { ds.len() as f64 / wall } else { 0.0 },
    );

    let mut csv = String::from("image_tag,label,prediction,latency_us,ops,bytes\n");
    for k in 0..ds.len() {
        let c = &counts[k];
        writeln!(
            csv,
            "{k},{},{},{:.3},{},{}",
            ds.labels[k],
            predictions[k],
            latencies[k],
            c.flops(Default::default()),
            c.bytes()
        )
        .unwrap();
    }
    if sha256_files(&[&a.model])? != model_hash {
        return Err(Error::State(format!("{} changed during evaluation", a.model.display())));
    }
    let csv_path = m.output_path(&a.out, "eval.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    let path = m.write(&a.out)?;
    Ok((m, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_stats() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(median(&[]), 0.0);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
