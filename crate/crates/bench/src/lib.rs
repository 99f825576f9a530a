//! Inputs shared by the benchmarks.

use bcpnn_core::dataio::encode_input;
use bcpnn_core::ModelConfig;

/// Deterministic pseudo-images for `cfg`, already encoded.
pub fn encoded_inputs(cfg: &ModelConfig, n: usize) -> Vec<Vec<f64>> {
    let px = cfg.input_width * cfg.input_height;
    (0..n)
        .map(|k| {
            let img: Vec<f64> = (0..px).map(|i| ((i * 31 + k * 17) % 97) as f64 / 96.0).collect();
            encode_input(&img, cfg.input_mc).expect("pixels are in range")
        })
        .collect()
}

/// Labels cycling through the classes of `cfg`.
pub fn labels(cfg: &ModelConfig, n: usize) -> Vec<usize> {
    (0..n).map(|k| k % cfg.n_classes).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let cfg = ModelConfig::model1();
        let x = encoded_inputs(&cfg, 3);
        assert_eq!(x.len(), 3);
        assert!(x.iter().all(|v| v.len() == cfg.n_input()));
        assert_eq!(labels(&cfg, 12)[11], 1);
    }
}
