use std::fmt::Write as _;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use trustr_core::batch::{conditions, format_table, run_batch, BatchRow};
use trustr_core::scenario::Severity;
use trustr_core::trust::TrustSourceMode;
use trustr_core::{read_run, run, write_run, ControlMethod, RunRecord, ScenarioSpec, Simulation};
use trustr_supervisor::{ServeConfig, DEFAULT_PORT};

/// Exit code for a run that diverged numerically (files are still written).
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "trustr", version, about = "Trust-aware flocking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its files.
    Run(RunArgs),
    /// Run the eight faulty conditions and print the summary table.
    Batch(BatchArgs),
    /// Run a scenario in real time behind the supervisor endpoint.
    Serve(ServeArgs),
    /// Load a written run and print its summary.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in scenario number (1 or 2) or a scenario file.
    #[arg(long, default_value = "1")]
    scenario: String,
    /// avg or trust-r. Defaults to the scenario file's method.
    #[arg(long)]
    method: Option<ControlMethod>,
    /// Fault speed cap: 40, 70 or none. Defaults to the scenario file's faults.
    #[arg(long)]
    severity: Option<Severity>,
    /// scripted, heuristic or live.
    #[arg(long)]
    trust_source: Option<TrustSourceMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Step length, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Number of steps; overrides the scenario duration.
    #[arg(long)]
    steps: Option<usize>,
    /// Keep links to zero-trust robots instead of cutting them.
    #[arg(long)]
    no_abandon: bool,
}

impl ScenarioArgs {
    fn load(&self, default_source: Option<TrustSourceMode>) -> Result<ScenarioSpec, String> {
        let mut spec = match self.scenario.parse::<u8>() {
            Ok(n) => ScenarioSpec::builtin(n),
            Err(_) => ScenarioSpec::from_file(&self.scenario),
        }
        .map_err(|e| format!("{}: {e}", self.scenario))?;
        let method = self.method.unwrap_or(spec.method);
        if let Some(severity) = self.severity {
            spec = spec.with_condition(method, severity);
        }
        spec.method = method;
        if let Some(mode) = self.trust_source.or(default_source) {
            spec.trust_source.mode = mode;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(dt) = self.dt {
            spec.params.dt = dt;
        }
        if let Some(steps) = self.steps {
            spec.duration = steps as f64 * spec.params.dt;
        }
        if self.no_abandon {
            spec.params.abandon_at_zero_trust = false;
        }
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Only the conditions at this severity (40 or 70).
    #[arg(long)]
    severity: Option<Severity>,
    /// Also write batch.txt and batch.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Token a client must present to send commands.
    #[arg(long)]
    token: Option<String>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Loop ticks between snapshots.
    #[arg(long, default_value_t = 5)]
    snapshot_every: usize,
    /// Write the run here when it ends.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Directory written by `trustr run` or `trustr serve --out`.
    dir: PathBuf,
}

fn summary(record: &RunRecord) -> String {
    let m = &record.manifest;
    let s = &m.scenario;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}: method {}, trust {}, seed {}, {} robots, {} steps",
        s.name, s.method, s.trust_source.mode, m.seed, m.n_robots, m.n_steps
    );
    if let Some(err) = &m.error {
        let _ = writeln!(out, "run aborted: {err}");
    }
    let Some(metrics) = &record.metrics else {
        let _ = writeln!(out, "no metrics");
        return out;
    };
    for (k, leg) in metrics.legs.iter().enumerate() {
        let _ = writeln!(
            out,
            "leg {k} -> target {} ({:.1}-{:.1} s, {:?}): designed {:.1} deg, heading {:.1} deg, error {:+.1} deg, distance {:.2} m",
            leg.target_index,
            leg.start_time,
            leg.end_time,
            leg.end_reason,
            leg.designed_heading_deg,
            leg.heading_direction_deg,
            leg.heading_error_deg(),
            leg.final_distance_m
        );
    }
    if let Some(r) = &metrics.report {
        let _ = writeln!(
            out,
            "heading designed {:.1} deg, flown {:.1} deg (error {:+.1} deg); final distance {:.2} m",
            r.designed_heading_deg, r.heading_direction_deg, r.heading_error_deg, r.final_distance_m
        );
    }
    let _ = writeln!(out, "connectivity {:.1} %", metrics.connectivity_fraction * 100.0);
    out
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let spec = args.scenario.load(None)?;
    let started = Instant::now();
    let record = run(spec).map_err(|e| e.to_string())?;
    info!("run took {:.2?}", started.elapsed());
    write_run(&record, &args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    print!("{}", summary(&record));
    println!("files written to {}", args.out.display());
    Ok(if record.is_valid() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_DIVERGED) })
}

fn batch_csv(rows: &[BatchRow]) -> String {
    let mut out = String::from("scenario,method,severity,designed_deg,heading_deg,error_deg,final_distance_m,status\n");
    for r in rows {
        let c = &r.condition;
        let _ = match &r.outcome {
            Ok(s) => writeln!(
                out,
                "{},{},{},{},{},{},{},ok",
                c.scenario,
                c.method,
                c.severity,
                s.designed_heading_deg,
                s.heading_direction_deg,
                s.heading_error_deg,
                s.final_distance_m
            ),
            Err(e) => writeln!(out, "{},{},{},,,,,\"failed: {}\"", c.scenario, c.method, c.severity, e.replace('"', "'")),
        };
    }
    out
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(dir.join(name), text))
        .map_err(|e| format!("{}: {e}", dir.join(name).display()))
}

fn cmd_batch(args: BatchArgs) -> Result<ExitCode, String> {
    if args.severity == Some(Severity::None) {
        return Err("the batch covers the faulty conditions; use --severity 40 or 70".into());
    }
    let started = Instant::now();
    let rows = run_batch(&conditions(args.severity), args.seed);
    let table = format_table(&rows);
    print!("{table}");
    info!("batch took {:.2?}", started.elapsed());
    if let Some(dir) = &args.out {
        write_file(dir, "batch.txt", &table)?;
        write_file(dir, "batch.csv", &batch_csv(&rows))?;
    }
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", rows.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(args: ServeArgs) -> Result<ExitCode, String> {
    let spec = args.scenario.load(Some(TrustSourceMode::Live))?;
    let sim = Simulation::new(spec).map_err(|e| e.to_string())?;
    let cfg = ServeConfig { token: args.token, snapshot_every: args.snapshot_every, speed: args.speed };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let record = runtime.block_on(async {
        let listener = trustr_supervisor::bind(SocketAddr::new(args.bind, args.port)).await.map_err(|e| e.to_string())?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        println!("listening on http://{addr} (websocket at ws://{addr}/ws)");
        let _ = std::io::stdout().flush();
        trustr_supervisor::serve(sim, listener, cfg).await.map_err(|e| e.to_string())
    })?;
    runtime.shutdown_background();
    if let Some(dir) = &args.out {
        write_run(&record, dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        println!("files written to {}", dir.display());
    }
    print!("{}", summary(&record));
    Ok(if record.is_valid() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_DIVERGED) })
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, String> {
    let record: RunRecord = read_run(&args.dir).map_err(|e| format!("{}: {e}", args.dir.display()))?;
    print!("{}", summary(&record));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWARM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Batch(a) => cmd_batch(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Replay(a) => cmd_replay(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
