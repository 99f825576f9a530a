//! `bcpnn roofline`: roof polyline, analytic points per config and measured
//! points per stats CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bcpnn_core::perfmodel::{image_counts, roof, roofline_report, PerfConfig, RooflinePoint};
use bcpnn_core::{Error, ModelConfig, Result};
use serde_json::json;

use crate::args::RooflineArgs;
use crate::manifest::{ensure_dir, sha256_files, write_atomic, RunManifest};

/// Summed FLOPs, bytes and seconds of a per-image stats CSV. The CSV needs
/// `latency_us`, `ops` and `bytes` columns.
pub fn read_stats(path: &Path) -> Result<(f64, f64, f64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            row: 1,
            detail: format!("missing `{name}` column"),
        })
    };
    let (lat, ops, bytes) = (col("latency_us")?, col("ops")?, col("bytes")?);
    let (mut f, mut b, mut s) = (0.0, 0.0, 0.0);
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<f64> {
            cells
                .get(i)
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| Error::Csv {
                    path: path.to_path_buf(),
                    row: k + 2,
                    detail: format!("column {} is not a number", i + 1),
                })
        };
        s += num(lat)? * 1e-6;
        f += num(ops)?;
        b += num(bytes)?;
    }
    Ok((f, b, s))
}

pub fn run(a: &RooflineArgs) -> Result<(RunManifest, PathBuf)> {
    let mut pc = match &a.resources {
        Some(p) => PerfConfig::load(p)?,
        None => PerfConfig::default(),
    };
    if let Some(rule) = a.composition {
        pc.rule = rule.into();
    }
    let compute = pc.compute()?;
    let bandwidth = pc.bandwidth();

    let mut configs: Vec<(String, ModelConfig)> = Vec::new();
    for p in &a.configs {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        configs.push((name, ModelConfig::load(p)?));
    }
    for name in &a.presets {
        let cfg = ModelConfig::preset(name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
        configs.push((name.clone(), cfg));
    }

    let mut points = Vec::new();
    for (name, cfg) in &configs {
        cfg.ensure_valid()?;
        let c = image_counts(cfg, a.mode, false);
        let intensity = c.flops(pc.weights) / c.bytes() as f64;
        let bound = roof(intensity, compute, bandwidth);
        points.push(RooflinePoint {
            label: format!("{name}:{}:bound", a.mode),
            intensity,
            achieved: bound,
            roof: bound,
        });
    }
    let mut stats_hashes = Vec::new();
    for p in &a.stats {
        let (flops, bytes, secs) = read_stats(p)?;
        if bytes <= 0.0 {
            return Err(Error::Input(format!("{}: no traffic recorded", p.display())));
        }
        let intensity = flops / bytes;
        let name = p
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        points.push(RooflinePoint {
            label: format!("{name}:measured"),
            intensity,
            achieved: if secs > 0.0 { flops / secs } else { 0.0 },
            roof: roof(intensity, compute, bandwidth),
        });
        stats_hashes.push(sha256_files(&[p])?);
    }
    let csv = roofline_report(&points, compute, bandwidth)?;

    ensure_dir(&a.out)?;
    let inputs = BTreeMap::from([
        ("resources".to_string(), json!(pc.to_text())),
        (
            "configs".to_string(),
            json!(configs
                .iter()
                .map(|(n, c)| (n.clone(), c.to_text()))
                .collect::<Vec<_>>()),
        ),
        ("mode".to_string(), json!(a.mode.name())),
        ("stats_sha256".to_string(), json!(stats_hashes)),
    ]);
    let mut m = RunManifest::new("roofline", inputs, vec![]);
    m.metric("peak_compute_gflops", compute / 1e9);
    m.metric("bandwidth_gbps", bandwidth / 1e9);
    m.metric("machine_balance", compute / bandwidth);
    m.metric("composition", pc.rule.name());
    m.metric(
        "points",
        points
            .iter()
            .map(|p| json!({ "label": p.label, "intensity": p.intensity, "performance": p.achieved, "roof": p.roof }))
            .collect::<Vec<_>>(),
    );
    println!(
        "peak compute {:.3} GFLOP/s ({}), bandwidth {:.1} GB/s, machine balance {:.4} FLOP/B",
        compute / 1e9,
        pc.rule.name(),
        bandwidth / 1e9,
        compute / bandwidth
    );
    let path = m.output_path(&a.out, "roofline.csv");
    write_atomic(&path, csv.as_bytes())?;
    m.write(&a.out)?;
    Ok((m, path))
}
