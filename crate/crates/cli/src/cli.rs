//! Command-line parsing and the process-level contract: JSON on stdout for successful runs,
//! JSON on stderr for every error, and the exit code of the failure class.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::artifacts::{output_root, sha256_hex, Artifacts, ManifestMeta};
use crate::config::{Config, Data, Mode, Pipeline, TopologyName};
use crate::error::CliError;
use crate::pipelines::{run, run_dir};
use crate::presets::{preset, PRESETS};

#[derive(Debug, Parser)]
#[command(name = "mfglab", version, about = "Solvers and diagnostics for one-dimensional mean field games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a TOML config file or a named preset.
    Run {
        /// Path to a config file, or a preset name (see `mfglab presets`).
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the self-similar solution on a slab.
    Selfsim(SelfsimArgs),
    /// Solve the flow equation in Lagrangian coordinates.
    SolveFlow(FlowArgs),
    /// Solve the regularized elliptic problem for u, optionally along an epsilon sweep.
    SolveElliptic(EllipticArgs),
    /// Solve the discrete convex program.
    Variational(VariationalArgs),
    /// Run diagnostics on a fields CSV.
    Diagnose(DiagnoseArgs),
    /// Run several configs in parallel worker processes.
    Sweep(SweepArgs),
    /// List the presets.
    Presets,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Base config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: under $MFGLAB_OUTPUT_ROOT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelfsimArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub t_start: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: Common,
    /// `power:THETA`
    #[arg(long)]
    pub coupling: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub t_start: Option<f64>,
    /// Initial profile CSV (`x,m`).
    #[arg(long)]
    pub m0: Option<PathBuf>,
    /// Terminal profile CSV (`x,m`).
    #[arg(long)]
    pub mt: Option<PathBuf>,
    /// Solve the planning problem backwards in time.
    #[arg(long)]
    pub time_reverse: bool,
}

#[derive(Debug, Args)]
pub struct EllipticArgs {
    #[command(flatten)]
    pub common: Common,
    /// `power:THETA` or `log`
    #[arg(long)]
    pub coupling: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Sweep the default epsilon schedule down to --epsilon.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_enum)]
    pub data: Option<Data>,
    #[arg(long, value_enum)]
    pub topology: Option<TopologyName>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub m0: Option<PathBuf>,
    #[arg(long)]
    pub mt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VariationalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub coupling: Option<String>,
    #[arg(long, value_enum)]
    pub data: Option<Data>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub m0: Option<PathBuf>,
    #[arg(long)]
    pub mt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fields CSV with columns x,t,m (u and ux are ignored).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `all` or a comma-separated list of extremum, rectangles, convexity, energy, holder, log.
    #[arg(long)]
    pub checks: Option<String>,
    #[arg(long)]
    pub coupling: Option<String>,
    #[arg(long, value_enum)]
    pub topology: Option<TopologyName>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub rectangles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Config files (or preset names), one worker process each.
    #[arg(required = true)]
    pub configs: Vec<String>,
    /// Number of parallel workers.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for the sweep summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Loads a config file or resolves a preset name.
pub fn resolve_target(target: &str) -> Result<Config, CliError> {
    let path = Path::new(target);
    if path.is_file() {
        return Config::load(path);
    }
    preset(target).ok_or_else(|| CliError::Validation {
        field: "target".into(),
        message: format!("`{target}` is neither a config file nor a preset"),
    })
}

fn base(common: &Common, pipeline: Pipeline) -> Result<Config, CliError> {
    let mut c = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::for_pipeline(pipeline),
    };
    if c.problem.pipeline != pipeline {
        return Err(CliError::Validation {
            field: "problem.pipeline".into(),
            message: format!("the config runs `{}`, not `{}`", c.problem.pipeline.name(), pipeline.name()),
        });
    }
    let g = &mut c.grid;
    g.nx = common.nx.or(g.nx);
    g.nt = common.nt.or(g.nt);
    g.x_min = common.x_min.or(g.x_min);
    g.x_max = common.x_max.or(g.x_max);
    if let Some(h) = common.horizon {
        c.problem.horizon = h;
    }
    Ok(c)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// The config a subcommand describes, with its output override.
pub fn command_config(cmd: Command) -> Result<Option<(Config, Option<PathBuf>)>, CliError> {
    let built = match cmd {
        Command::Run { target, out } => (resolve_target(&target)?, out),
        Command::Selfsim(a) => {
            let mut c = base(&a.common, Pipeline::Selfsim)?;
            if let Some(t) = a.theta {
                c.problem.coupling = format!("power:{t}");
            }
            set(&mut c.problem.t_start, a.t_start);
            (c, a.common.out)
        }
        Command::SolveFlow(a) => {
            let mut c = base(&a.common, Pipeline::SolveFlow)?;
            set(&mut c.problem.coupling, a.coupling);
            set(&mut c.problem.mode, a.mode);
            set(&mut c.problem.c1, a.c1);
            set(&mut c.problem.t_start, a.t_start);
            if a.m0.is_some() {
                c.problem.data = Data::Profile;
                c.problem.m0_file = a.m0;
            }
            if a.mt.is_some() {
                c.problem.mt_file = a.mt;
            }
            c.problem.time_reverse |= a.time_reverse;
            (c, a.common.out)
        }
        Command::SolveElliptic(a) => {
            let mut c = base(&a.common, Pipeline::SolveElliptic)?;
            set(&mut c.problem.coupling, a.coupling);
            set(&mut c.problem.mode, a.mode);
            set(&mut c.solver.epsilon, a.epsilon);
            set(&mut c.problem.data, a.data);
            set(&mut c.problem.c1, a.c1);
            c.solver.sweep |= a.sweep;
            if a.topology.is_some() {
                c.grid.topology = a.topology;
            }
            if a.m0.is_some() {
                c.problem.data = Data::Profile;
                c.problem.m0_file = a.m0;
            }
            if a.mt.is_some() {
                c.problem.mt_file = a.mt;
            }
            (c, a.common.out)
        }
        Command::Variational(a) => {
            let mut c = base(&a.common, Pipeline::Variational)?;
            set(&mut c.problem.coupling, a.coupling);
            set(&mut c.problem.data, a.data);
            set(&mut c.problem.lambda, a.lambda);
            set(&mut c.problem.shift, a.shift);
            if a.width.is_some() {
                c.problem.width = a.width;
            }
            if a.m0.is_some() {
                c.problem.data = Data::Profile;
                c.problem.m0_file = a.m0;
            }
            if a.mt.is_some() {
                c.problem.mt_file = a.mt;
            }
            (c, a.common.out)
        }
        Command::Diagnose(a) => {
            let mut c = base(&a.common, Pipeline::Diagnose)?;
            if a.input.is_some() {
                c.problem.input = a.input;
            }
            if let Some(list) = a.checks {
                c.solver.checks = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            }
            set(&mut c.problem.coupling, a.coupling);
            if a.topology.is_some() {
                c.grid.topology = a.topology;
            }
            set(&mut c.solver.tolerance, a.tolerance);
            set(&mut c.solver.rectangles, a.rectangles);
            set(&mut c.solver.seed, a.seed);
            (c, a.common.out)
        }
        Command::Sweep(_) | Command::Presets => return Ok(None),
    };
    Ok(Some(built))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn fail(e: &CliError) -> i32 {
    eprintln!("{}", e.to_json());
    e.exit_code()
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", json!({"error": "usage", "message": e.to_string(), "exit_code": 2}));
            return 2;
        }
    };
    match cli.command {
        Command::Presets => {
            let list: Vec<Value> = PRESETS.iter().map(|(n, d)| json!({"name": n, "description": d})).collect();
            print_json(&json!(list));
            0
        }
        Command::Sweep(a) => match sweep(&a) {
            Ok((code, summary)) => {
                print_json(&summary);
                code
            }
            Err(e) => fail(&e),
        },
        other => {
            let (cfg, out) = match command_config(other) {
                Ok(Some(c)) => c,
                Ok(None) => unreachable!("handled above"),
                Err(e) => return fail(&e),
            };
            match run(&cfg, out.as_deref()) {
                Ok(o) => {
                    print_json(&json!({
                        "status": "ok",
                        "pipeline": cfg.problem.pipeline.name(),
                        "dir": o.dir.display().to_string(),
                        "residuals": o.manifest["residuals"],
                    }));
                    0
                }
                Err(e) => fail(&e),
            }
        }
    }
}

/// Runs every config in its own `mfglab run` child process, `jobs` at a time, and writes a
/// summary of exit codes and run directories.
fn sweep(a: &SweepArgs) -> Result<(i32, Value), CliError> {
    let exe = std::env::current_exe().map_err(|e| CliError::io("current executable", e))?;
    let configs: Vec<Result<Config, CliError>> = a.configs.iter().map(|t| resolve_target(t)).collect();
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Value>>> = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(configs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= configs.len() {
                    break;
                }
                let target = &a.configs[k];
                let entry = match &configs[k] {
                    Err(e) => json!({"target": target, "exit_code": e.exit_code(), "error": e.to_json()}),
                    Ok(cfg) => {
                        let dir = run_dir(cfg, None);
                        let out = Process::new(&exe).arg("run").arg(target).arg("--out").arg(&dir).output();
                        match out {
                            Ok(o) => {
                                let err = String::from_utf8_lossy(&o.stderr);
                                json!({
                                    "target": target,
                                    "pipeline": cfg.problem.pipeline.name(),
                                    "dir": dir.display().to_string(),
                                    "exit_code": o.status.code().unwrap_or(1),
                                    "error": serde_json::from_str::<Value>(err.trim()).unwrap_or(Value::Null),
                                })
                            }
                            Err(e) => json!({"target": target, "exit_code": 1, "error": e.to_string()}),
                        }
                    }
                };
                results.lock().expect("no worker panics while holding the lock")[k] = Some(entry);
            });
        }
    });
    let runs: Vec<Value> = results.into_inner().expect("workers finished").into_iter().flatten().collect();
    let code = runs.iter().filter_map(|r| r["exit_code"].as_i64()).max().unwrap_or(0) as i32;
    let hashes: Vec<String> = configs
        .iter()
        .map(|c| c.as_ref().map(|c| sha256_hex(c.canonical().as_bytes())).unwrap_or_default())
        .collect();
    let digest = sha256_hex(hashes.join(",").as_bytes());
    let dir = a.out.clone().unwrap_or_else(|| output_root().join(format!("sweep-{}", &digest[..12])));
    let start = std::time::Instant::now();
    let mut art = Artifacts::create(&dir)?;
    let rows = runs.iter().map(|r| {
        vec![
            r["target"].as_str().unwrap_or_default().to_string(),
            r["pipeline"].as_str().unwrap_or_default().to_string(),
            r["exit_code"].to_string(),
            r["dir"].as_str().unwrap_or_default().to_string(),
        ]
    });
    art.csv("runs.csv", &["target", "pipeline", "exit_code", "dir"], rows)?;
    art.constant("failed", runs.iter().filter(|r| r["exit_code"].as_i64() != Some(0)).count());
    art.finish(ManifestMeta {
        pipeline: "sweep",
        status: if code == 0 { "ok" } else { "runs-failed" },
        config_sha256: digest,
        config: json!({"targets": a.configs}),
        wall_time_s: start.elapsed().as_secs_f64(),
    })?;
    Ok((code, json!({"status": if code == 0 { "ok" } else { "runs-failed" }, "dir": dir.display().to_string(), "runs": runs})))
}
