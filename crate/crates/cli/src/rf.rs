//! `bcpnn export-rf`: receptive fields of a saved or fresh model as PGM.

use std::collections::BTreeMap;
use std::path::PathBuf;

use bcpnn_core::modelfile::load_model;
use bcpnn_core::structural::{encode_pgm, export_receptive_field, export_weighted_receptive_field};
use bcpnn_core::{Network, Result};
use serde_json::json;

use crate::args::ExportRfArgs;
use crate::manifest::{ensure_dir, sha256_files, write_atomic, RunManifest};

pub fn run(a: &ExportRfArgs) -> Result<(RunManifest, Vec<PathBuf>)> {
    let (net, source) = match &a.model {
        Some(path) => (load_model(path)?, json!({ "model_sha256": sha256_files(&[path])? })),
        None => {
            let cfg = a.config.resolve()?;
            let text = cfg.to_text();
            (Network::new(cfg)?, json!({ "fresh_config": text }))
        }
    };
    // Validate every index before anything is written.
    let fields =
        a.hc.iter()
            .map(|&h| {
                if a.weighted {
                    export_weighted_receptive_field(&net, h)
                } else {
                    export_receptive_field(&net, h)
                }
            })
            .collect::<Result<Vec<_>>>()?;
    ensure_dir(&a.out)?;
    let inputs = BTreeMap::from([
        ("source".to_string(), source),
        ("hc".to_string(), json!(a.hc)),
        ("weighted".to_string(), json!(a.weighted)),
    ]);
    let mut m = RunManifest::new("export-rf", inputs, vec![]);
    let (w, h) = (net.config.input_width, net.config.input_height);
    let mut paths = Vec::new();
    let mut lit = Vec::new();
    for (&hc, field) in a.hc.iter().zip(&fields) {
        let path = m.output_path(&a.out, &format!("rf-hc{hc:02}.pgm"));
        write_atomic(&path, &encode_pgm(w, h, field)?)?;
        lit.push(field.iter().filter(|&&v| v > 0.0).count());
        paths.push(path);
    }
    m.metric("lit_pixels", lit);
    m.metric("step", net.unsup_sched.t);
    m.write(&a.out)?;
    Ok((m, paths))
}
