use bcpnn_bench::{encoded_inputs, labels};
use bcpnn_core::dataflow::{run_stream, sequential_oracle, StreamOptions};
use bcpnn_core::{Mode, ModelConfig, Network};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const IMAGES: usize = 8;

fn stream(c: &mut Criterion) {
    let cfg = ModelConfig::model1();
    let x = encoded_inputs(&cfg, IMAGES);
    let y = labels(&cfg, IMAGES);
    let fresh = Network::new(cfg).unwrap();
    let mut trained = fresh.clone();
    sequential_oracle(&mut trained, &x, &y, Mode::Unsupervised).unwrap();
    sequential_oracle(&mut trained, &x, &y, Mode::Supervised).unwrap();

    let mut g = c.benchmark_group("stream");
    g.sample_size(10);
    g.throughput(Throughput::Elements(IMAGES as u64));
    for mode in Mode::ALL {
        let base = if mode == Mode::Inference { &trained } else { &fresh };
        for depth in [1, 8, 64] {
            let opts = StreamOptions {
                fifo_depth: Some(depth),
                jitter: None,
            };
            g.bench_with_input(BenchmarkId::new(mode.name(), depth), &opts, |b, opts| {
                b.iter_batched(
                    || base.clone(),
                    |mut net| run_stream(&mut net, &x, &y, mode, opts).unwrap(),
                    criterion::BatchSize::LargeInput,
                )
            });
        }
        g.bench_function(BenchmarkId::new(format!("{}-oracle", mode.name()), 0), |b| {
            b.iter_batched(
                || base.clone(),
                |mut net| sequential_oracle(&mut net, &x, &y, mode).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, stream);
criterion_main!(benches);
