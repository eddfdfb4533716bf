use safe_discharge::config::Config;
use safe_discharge::parallel::Execution;
use safe_discharge::simulation::{ControllerSpec, RunStatus, SimConfig, run_benchmark, run_closed_loop, summary_csv};

const DEFAULT_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");

fn config() -> Config {
    Config::load(std::path::Path::new(DEFAULT_CONFIG)).unwrap().0
}

fn run_named(name: &str) -> SimConfig {
    config().build_runs(Some(&[name.to_string()]), Execution::Sequential).unwrap().runs.remove(0)
}

fn constant(current: f64) -> SimConfig {
    let mut cfg = run_named("CC-CV");
    cfg.controller = ControllerSpec::Constant { current, u_max: 40.0 };
    cfg
}

#[test]
fn zero_current_times_out_at_rest() {
    let mut cfg = constant(0.0);
    cfg.t_max_sim = 1200.0;
    let trace = run_closed_loop(&cfg).unwrap();
    assert_eq!(trace.status, RunStatus::Timeout);
    assert_eq!(trace.discharge_time, None);
    assert_eq!(trace.final_soe, 1.0);
    assert_eq!(trace.extracted_energy, 0.0);
    assert!(trace.rows.iter().all(|r| r.soc_true == 1.0 && (r.t_c_true - 20.0).abs() < 1e-12));
    assert!((trace.rows.last().unwrap().t - 1199.0).abs() < 1e-9);
}

#[test]
fn energy_account_matches_the_trace() {
    let mut cfg = constant(40.0);
    cfg.noise_enabled = false;
    let trace = run_closed_loop(&cfg).unwrap();
    assert_eq!(trace.status, RunStatus::Completed);
    let end = trace.discharge_time.unwrap();
    let en = cfg.model_params.energy_nominal;
    assert!((trace.final_soe - (1.0 - trace.extracted_energy / en)).abs() <= 1e-12);
    // Noise off: the tracker sees the true terminal voltage of each row.
    let mut sum = 0.0;
    for (k, row) in trace.rows.iter().enumerate() {
        let next = trace.rows.get(k + 1).map_or(end, |r| r.t);
        sum += cfg.model_params.eta * row.v_terminal * row.i_applied * (next - row.t);
    }
    assert!((sum - trace.extracted_energy).abs() <= 1e-9 * trace.extracted_energy);
    assert!(trace.final_soe <= cfg.soe_stop);
    let last = trace.rows.last().unwrap();
    let one_substep = cfg.model_params.eta * last.v_terminal * 40.0 * cfg.dt_plant / en;
    assert!(trace.final_soe > cfg.soe_stop - one_substep - 1e-15);
}

#[test]
fn soe_never_increases() {
    let trace = run_closed_loop(&run_named("CC-CT2")).unwrap();
    assert_eq!(trace.status, RunStatus::Completed);
    for w in trace.rows.windows(2) {
        assert!(w[1].soe <= w[0].soe);
        assert!(w[1].t > w[0].t);
    }
    assert!(trace.rows.iter().all(|r| (0.0..=40.0).contains(&r.i_applied)));
    assert!(trace.final_soe <= trace.rows.last().unwrap().soe);
}

#[test]
fn reruns_are_identical() {
    let mut cfg = run_named("CC-CT1");
    cfg.t_max_sim = 3600.0;
    let a = run_closed_loop(&cfg).unwrap();
    let b = run_closed_loop(&cfg).unwrap();
    assert_eq!(a.to_csv(&[]), b.to_csv(&[]));
    cfg.noise_seed += 1;
    let c = run_closed_loop(&cfg).unwrap();
    assert_ne!(a.to_csv(&[]), c.to_csv(&[]));
}

#[test]
fn parallel_benchmark_matches_sequential() {
    let mut runs = config().build_runs(Some(&["CC-CV".into(), "CC-CT1".into(), "CC-CT2".into()]), Execution::Sequential).unwrap().runs;
    for r in &mut runs {
        r.t_max_sim = 3600.0;
    }
    let rows = |exec| run_benchmark(&runs, exec).into_iter().map(|r| r.row).collect::<Vec<_>>();
    let seq = rows(Execution::Sequential);
    let par = rows(Execution::Parallel);
    assert_eq!(summary_csv(&seq, &[]), summary_csv(&par, &[]));
}

#[test]
fn mismatched_step_sizes_are_rejected() {
    let mut cfg = constant(10.0);
    cfg.dt_plant = 0.3;
    assert!(run_closed_loop(&cfg).is_err());
}
