//! `bcpnn bench`: stream-engine latency and throughput over FIFO depths.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use bcpnn_core::dataflow::{run_stream, sequential_oracle, StreamOptions};
use bcpnn_core::{Mode, Network, Result};
use serde_json::json;

use crate::args::BenchArgs;
use crate::data::{encode, load, synthetic};
use crate::manifest::{ensure_dir, write_atomic, RunManifest};

pub const HEADER: &str =
    "mode,fifo_depth,run,images,mean_latency_us,median_latency_us,throughput_images_per_s,total_stalls,wall_seconds";

pub fn run(a: &BenchArgs) -> Result<(RunManifest, PathBuf)> {
    let cfg = a.config.resolve()?;
    if a.fifo_depths.contains(&0) {
        return Err(bcpnn_core::Error::Config("FIFO depth must be at least 1".into()));
    }
    let (ds, fps) = match a.source() {
        Some(src) => {
            let (ds, fp) = load(&src, &cfg, Some(a.n_images), "bench")?;
            (ds, vec![fp])
        }
        None => (synthetic(&cfg, a.n_images)?, vec![]),
    };
    ensure_dir(&a.out)?;
    let inputs = BTreeMap::from([
        ("config".to_string(), json!(cfg.to_text())),
        ("images".to_string(), json!(a.n_images)),
        ("fifo_depths".to_string(), json!(a.fifo_depths)),
        (
            "modes".to_string(),
            json!(a.modes.iter().map(|m| m.name()).collect::<Vec<_>>()),
        ),
        ("repeats".to_string(), json!(a.repeats)),
        ("synthetic".to_string(), json!(fps.is_empty())),
    ]);
    let mut m = RunManifest::new("bench", inputs, fps);
    let mut csv = format!("{HEADER}\n");

    if !ds.is_empty() {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (x, y) = encode(&ds, &idx, cfg.input_mc)?;
        let fresh = Network::new(cfg.clone())?;
        // Inference needs a trained model; train one on the same images.
        let mut trained = fresh.clone();
        sequential_oracle(&mut trained, &x, &y, Mode::Unsupervised)?;
        sequential_oracle(&mut trained, &x, &y, Mode::Supervised)?;
        let mut profiles = Vec::new();
        for &mode in &a.modes {
            for &depth in &a.fifo_depths {
                for r in 0..a.repeats {
                    let mut net = if mode == Mode::Inference {
                        trained.clone()
                    } else {
                        fresh.clone()
                    };
                    let opts = StreamOptions {
                        fifo_depth: Some(depth),
                        jitter: None,
                    };
                    let (_, stats) = run_stream(&mut net, &x, &y, mode, &opts)?;
                    writeln!(
                        csv,
                        "{mode},{depth},{r},{},{:.3},{:.3},{:.3},{},{:.6}",
                        stats.images(),
                        stats.mean_latency_us(),
                        stats.median_latency_us(),
                        stats.throughput(),
                        stats.total_stalls(),
                        stats.wall_seconds
                    )
                    .unwrap();
                    log::info!(
                        "{mode} depth {depth} run {r}: {:.1} images/s, {} stalls",
                        stats.throughput(),
                        stats.total_stalls()
                    );
                    if r == 0 {
                        profiles.push((format!("stalls-{mode}-d{depth}.csv"), stats.to_csv(Default::default())));
                    }
                }
            }
        }
        for (suffix, text) in profiles {
            let p = m.output_path(&a.out, &suffix);
            write_atomic(&p, text.as_bytes())?;
        }
    }
    let path = m.output_path(&a.out, "bench.csv");
    write_atomic(&path, csv.as_bytes())?;
    m.write(&a.out)?;
    Ok((m, path))
}
