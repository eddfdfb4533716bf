//! Command line front end: `simulate`, `benchmark` and `synthesize`.
//!
//! Exit codes are 0 on success, 1 on a runtime failure and 2 on a
//! configuration error. Every file written starts with `# ` header lines
//! carrying the tool version, the SHA-256 of the config bytes and the seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::controllers::{STATE_UNITS, admissible_set};
use crate::error::Error;
use crate::parallel::Execution;
use crate::simulation::{BenchmarkRow, SimTrace, run_benchmark, summary_csv, summary_table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "safe-discharge", version, about = "Thermally constrained battery discharge: simulation, benchmark and tube MPC synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the measurement-noise seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Suppress standard output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller to run when the config lists more than one.
        #[arg(long, value_name = "NAME")]
        controller: Option<String>,
    },
    /// Run every configured controller and write the comparison table.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// Identify the disturbance set and synthesize the tube MPC offline.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Overrides the invariant-set tolerance.
        #[arg(long, value_name = "X")]
        epsilon: Option<f64>,
    },
}

/// A failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_error(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Errors from synthesis or simulation; malformed settings still count as
/// configuration problems.
fn runtime_error(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { common, controller } => cmd_simulate(common, controller.as_deref()),
        Command::Benchmark { common } => cmd_benchmark(common),
        Command::Synthesize { common, epsilon } => cmd_synthesize(common, *epsilon),
    }
}

struct Loaded {
    cfg: Config,
    preamble: Vec<String>,
}

fn load(common: &Common, command: &str) -> Result<Loaded, CliError> {
    let (mut cfg, bytes) = Config::load(&common.config).map_err(config_error)?;
    if let Some(seed) = common.seed {
        cfg.simulation.noise_seed = seed;
    }
    let preamble = vec![
        format!("safe-discharge {}", env!("CARGO_PKG_VERSION")),
        format!("command={command}"),
        format!("config={}", common.config.display()),
        format!("config_sha256={}", sha256_hex(&bytes)),
        format!("noise_seed={}", cfg.simulation.noise_seed),
        format!("plant_seed={}", cfg.plant.seed),
    ];
    std::fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", common.out.display())))?;
    Ok(Loaded { cfg, preamble })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn with_preamble(preamble: &[String], body: &str) -> String {
    let mut s: String = preamble.iter().map(|l| format!("# {l}\n")).collect();
    s.push_str(body);
    s
}

/// File-name-safe form of a controller name.
pub fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect()
}

fn summary_line(row: &BenchmarkRow) -> String {
    let time = row.discharge_time.map(crate::simulation::format_hms).unwrap_or_else(|| "-".into());
    format!(
        "{}: discharge time {}, max Tc {:.2} °C, constraint satisfied: {} ({})",
        row.method,
        time,
        row.max_core_temp,
        if row.constraint_satisfied { "Yes" } else { "No" },
        row.status.label()
    )
}

/// Long-format plot data, one file per quantity.
fn write_panels(dir: &Path, preamble: &[String], traces: &[&SimTrace]) -> Result<(), CliError> {
    type Column = fn(&crate::simulation::TraceRow) -> f64;
    let panels: [(&str, &str, Column); 4] = [
        ("plot_soe.csv", "soe", |r| r.soe),
        ("plot_voltage.csv", "v_terminal", |r| r.v_terminal),
        ("plot_current.csv", "i_applied", |r| r.i_applied),
        ("plot_core_temp.csv", "t_c_true", |r| r.t_c_true),
    ];
    for (file, column, get) in panels {
        let mut body = format!("method,t,{column}\n");
        for trace in traces {
            for r in &trace.rows {
                let _ = writeln!(body, "{},{},{}", trace.name, r.t, get(r));
            }
        }
        write_file(dir, file, &with_preamble(preamble, &body))?;
    }
    Ok(())
}

fn cmd_simulate(common: &Common, controller: Option<&str>) -> Result<(), CliError> {
    let loaded = load(common, "simulate")?;
    let cfg = &loaded.cfg;
    let name = match controller {
        Some(n) => n.to_string(),
        None if cfg.controllers.len() == 1 => cfg.controllers[0].name().to_string(),
        None => {
            return Err(CliError::Config(format!(
                "config lists {} controllers; pick one with --controller",
                cfg.controllers.len()
            )))
        }
    };
    let prepared = cfg.build_runs(Some(std::slice::from_ref(&name)), Execution::Parallel).map_err(runtime_error)?;
    let run = run_benchmark(&prepared.runs, Execution::Parallel).pop().expect("one run requested");
    let path = write_file(&common.out, &format!("trace_{}.csv", slug(&name)), &run.trace.to_csv(&loaded.preamble))?;
    write_panels(&common.out, &loaded.preamble, &[&run.trace])?;
    if !common.quiet {
        println!("{}", summary_line(&run.row));
        println!("trace: {}", path.display());
    }
    match &run.row.status {
        crate::simulation::RunStatus::Failed(msg) => Err(CliError::Runtime(format!("{name} failed: {msg}"))),
        _ => Ok(()),
    }
}

fn cmd_benchmark(common: &Common) -> Result<(), CliError> {
    let loaded = load(common, "benchmark")?;
    let prepared = loaded.cfg.build_runs(None, Execution::Parallel).map_err(runtime_error)?;
    let runs = run_benchmark(&prepared.runs, Execution::Parallel);
    let rows: Vec<BenchmarkRow> = runs.iter().map(|r| r.row.clone()).collect();
    let table = summary_table(&rows);
    write_file(&common.out, "summary.csv", &summary_csv(&rows, &loaded.preamble))?;
    write_file(&common.out, "summary.txt", &with_preamble(&loaded.preamble, &table))?;
    for run in &runs {
        write_file(&common.out, &format!("trace_{}.csv", slug(&run.trace.name)), &run.trace.to_csv(&loaded.preamble))?;
    }
    let traces: Vec<&SimTrace> = runs.iter().map(|r| &r.trace).collect();
    write_panels(&common.out, &loaded.preamble, &traces)?;
    if !common.quiet {
        print!("{table}");
    }
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| matches!(r.status, crate::simulation::RunStatus::Failed(_)))
        .map(|r| r.method.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("runs failed: {}", failed.join(", "))))
    }
}

const CONSTRAINT_LABELS: [&str; 5] = ["SoC <= 1", "SoC >= 0", "Tc <= t_max", "I <= u_max", "I >= 0"];
/// Physical units of one offset unit on each admissible-set row.
const CONSTRAINT_UNITS: [f64; 5] = [1.0, 1.0, STATE_UNITS[3], 1.0, 1.0];

fn cmd_synthesize(common: &Common, epsilon: Option<f64>) -> Result<(), CliError> {
    let mut loaded = load(common, "synthesize")?;
    if let Some(eps) = epsilon {
        loaded.cfg.mpc.epsilon = eps;
        loaded.preamble.push(format!("epsilon={eps}"));
    }
    let cfg = &loaded.cfg;
    if !cfg.controllers.iter().any(|c| matches!(c, crate::config::ControllerEntry::Mpc { .. })) {
        return Err(CliError::Config("synthesize needs an MPC entry in [[controller]]".into()));
    }
    cfg.mpc.validate().map_err(config_error)?;
    let w = cfg.disturbance_set(Execution::Parallel).map_err(runtime_error)?;
    let mpc = cfg.synthesize(&w).map_err(runtime_error)?;
    let nominal = admissible_set(cfg.mpc.t_max, cfg.mpc.u_max).map_err(runtime_error)?;
    let r_box = mpc.rpi.set.bounding_box().map_err(runtime_error)?;
    let w_box = w.bounding_box().map_err(runtime_error)?;

    let mut report = String::new();
    let k = &mpc.k_gain;
    let _ = writeln!(report, "K = [{:.6e}, {:.6e}, {:.6e}, {:.6e}]", k[0], k[1], k[2], k[3]);
    let _ = writeln!(
        report,
        "invariant set: s = {}, alpha = {:.3e}, epsilon = {:.3e}, {} facets",
        mpc.rpi.s_steps,
        mpc.rpi.alpha,
        mpc.rpi.epsilon,
        mpc.rpi.set.n_constraints()
    );
    let names = ["SoC", "V1 [V]", "Ts [°C]", "Tc [°C]"];
    let _ = writeln!(report, "state        W half-width      R half-width");
    for (j, name) in names.iter().enumerate() {
        let unit = STATE_UNITS[j];
        let _ = writeln!(report, "{name:<10}  {:>15.6e}  {:>15.6e}", w_box[j].1 * unit, r_box[j].1 * unit);
    }
    let _ = writeln!(report, "KR = [{:.6}, {:.6}] A", mpc.k_rpi.0, mpc.k_rpi.1);
    let _ = writeln!(report, "constraint     offset          tightened       margin");
    let (b0, b1) = (nominal.b_vector(), mpc.tightened.b_vector());
    for (i, label) in CONSTRAINT_LABELS.iter().enumerate() {
        let u = CONSTRAINT_UNITS[i];
        let _ = writeln!(report, "{label:<12}  {:>14.6e}  {:>14.6e}  {:>14.6e}", b0[i] * u, b1[i] * u, (b0[i] - b1[i]) * u);
    }

    write_file(&common.out, "synthesis.txt", &with_preamble(&loaded.preamble, &report))?;
    let note = |what: &str| {
        let mut p = loaded.preamble.clone();
        p.push(format!("{what}, scaled state coordinates (SoC, 0.1 V, 10 °C, 10 °C); rows a·x <= b"));
        p
    };
    write_file(&common.out, "disturbance_set.csv", &with_preamble(&note("disturbance set W"), &w.to_csv()))?;
    write_file(&common.out, "rpi_set.csv", &with_preamble(&note("invariant set R"), &mpc.rpi.set.to_csv()))?;
    write_file(&common.out, "tightened_set.csv", &with_preamble(&note("tightened set over (x, u)"), &mpc.tightened.to_csv()))?;
    if !common.quiet {
        print!("{report}");
    }
    Ok(())
}
