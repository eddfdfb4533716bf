use std::hint::black_box;
use std::path::Path;

use criterion::{Criterion, criterion_group, criterion_main};
use safe_discharge::battery::BatteryParams;
use safe_discharge::config::Config;
use safe_discharge::controllers::{BatteryDp, DpConfig, Grid, dp_value_iteration};
use safe_discharge::parallel::Execution;
use safe_discharge::simulation::run_benchmark;

const DEFAULT_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");

fn value_iteration(c: &mut Criterion) {
    let params = BatteryParams::default();
    let cfg = DpConfig { horizon: 60, soc_grid: Grid::uniform(0.0, 1.0, 26).unwrap(), ..DpConfig::default() };
    let problem = BatteryDp::new(&cfg, &params).unwrap();
    let mut group = c.benchmark_group("dp_value_iteration");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| dp_value_iteration(black_box(&problem), Execution::Sequential)));
    group.bench_function("parallel", |b| b.iter(|| dp_value_iteration(black_box(&problem), Execution::Parallel)));
    group.finish();
}

fn closed_loop_runs(c: &mut Criterion) {
    let (mut cfg, _) = Config::load(Path::new(DEFAULT_CONFIG)).unwrap();
    cfg.simulation.t_max_sim = 1800.0;
    let names: Vec<String> = ["CC-CV", "CC-CT1", "CC-CT2"].iter().map(|s| s.to_string()).collect();
    let runs = cfg.build_runs(Some(&names), Execution::Sequential).unwrap().runs;
    let mut group = c.benchmark_group("run_benchmark");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| run_benchmark(black_box(&runs), Execution::Sequential)));
    group.bench_function("parallel", |b| b.iter(|| run_benchmark(black_box(&runs), Execution::Parallel)));
    group.finish();
}

criterion_group!(benches, value_iteration, closed_loop_runs);
criterion_main!(benches);
