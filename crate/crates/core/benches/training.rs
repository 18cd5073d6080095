use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hbct::config::{ExperimentConfig, ScenarioKind};
use hbct::encoder::{train_old, TrainConfig};
use hbct::par::Exec;
use hbct::scenarios::{run_scenario_with, seed_dataset};

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.kind = ScenarioKind::ExtClass;
    cfg.dataset.num_classes = 8;
    cfg.dataset.samples_per_class = 20;
    cfg.train.epochs = 10;
    cfg.seeds = vec![0, 1, 2, 3];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn old_model_epochs(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let ds = seed_dataset(&cfg, 0).unwrap();
    let mcfg = cfg.manifold().unwrap();
    let train = TrainConfig {
        epochs: 5,
        ..cfg.train.clone()
    };
    c.bench_function("train_old/5_epochs", |b| {
        b.iter(|| {
            train_old(
                &ds.train,
                ds.num_classes,
                &cfg.scenario.old_arch,
                &mcfg,
                &cfg.clip,
                &train,
            )
            .unwrap()
        })
    });
}

fn scenario_seeds(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("scenario_4_seeds");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = small_config(&dir.path().join(format!("{exec:?}")));
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| b.iter(|| run_scenario_with(&cfg, exec).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, old_model_epochs, scenario_seeds);
criterion_main!(benches);
