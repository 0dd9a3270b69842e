//! Few-shot evaluation throughput: sequential vs rayon execution over a
//! synthetic task suite. Run with `cargo bench` (parallel feature on by
//! default); `--no-default-features` benches the sequential fallback only.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use faf::data::{self, TaskSeries};
use faf::exec::ExecMode;
use faf::fewshot::{self, AdaptConfig};
use faf::model::{FafModel, ModelConfig};
use faf::synth::SynthSpec;

fn setup(n_tasks: usize) -> (FafModel, Vec<TaskSeries>, data::NormStats, AdaptConfig) {
    let spec = SynthSpec { n_tasks, length: 60, seed: 7, ..SynthSpec::default() };
    let (series, _) = faf::synth::generate(&spec).unwrap();
    let refs: Vec<&TaskSeries> = series.iter().collect();
    let norm = data::fit_norm(&refs).unwrap();
    let model = FafModel::new(
        ModelConfig { input_len: 16, output_len: 8, ..ModelConfig::default() },
        7,
    )
    .unwrap();
    let cfg = AdaptConfig { support_len: 16, query_len: 8, adapt_input_len: Some(8), ..AdaptConfig::default() };
    (model, series, norm, cfg)
}

fn bench_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate_suite");
    for n_tasks in [16usize, 64] {
        let (model, series, norm, cfg) = setup(n_tasks);
        let modes: &[(&str, ExecMode)] = if cfg!(feature = "parallel") {
            &[("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)]
        } else {
            &[("sequential", ExecMode::Sequential)]
        };
        for (name, mode) in modes {
            group.bench_with_input(BenchmarkId::new(*name, n_tasks), mode, |b, &mode| {
                b.iter(|| fewshot::evaluate_suite(&model, &series, &norm, &cfg, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_eval);
criterion_main!(benches);
