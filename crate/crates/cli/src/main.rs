//! `sim`: run laneless formation scenarios, analyse their stability and
//! extract plot data from traces.
//!
//! Exit codes: 0 success, 1 bad input, 2 spanning tree lost, 3 non-finite
//! state. Output files are written only when a command succeeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use laneless::scenario::{
    analyze_scenario, preset, preset_names, read_trace_csv, summarize, write_trace_csv, EngineError, Scenario,
    TraceRow,
};
use laneless::CarRole;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "sim", version, about = "Laneless formation control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario (or every scenario in a directory).
    Run(RunArgs),
    /// Spectra and Lyapunov certificates of every reachable graph.
    Analyze {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Extract plot-ready columns from a trace.
    Plotdata {
        trace: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Snapshot time for `xy-snapshot`; defaults to the last sample.
        #[arg(long)]
        t: Option<f64>,
        /// Output file; defaults to `<kind>.csv` next to the trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a built-in scenario file.
    Scenario {
        /// Preset name; omit to list them.
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Record every N-th step.
    #[arg(long)]
    every: Option<usize>,
    /// Perturb regular cars' initial positions with this seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlotKind {
    XySnapshot,
    YVelocity,
    XTrajectory,
}

impl PlotKind {
    fn file_name(self) -> &'static str {
        match self {
            PlotKind::XySnapshot => "xy-snapshot.csv",
            PlotKind::YVelocity => "y-velocity.csv",
            PlotKind::XTrajectory => "x-trajectory.csv",
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn bad_input(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::SpanningTreeLost { .. } => 2,
            EngineError::NonFiniteState { .. } => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Writes every file under a temporary name first, then renames them all.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), Failure> {
    let io = |p: &Path, e: std::io::Error| bad_input(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut staged = Vec::new();
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(io(&tmp, e));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dst) in &staged {
        fs::rename(tmp, dst).map_err(|e| io(dst, e))?;
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("output serializes");
    out.push(b'\n');
    out
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| bad_input(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text).map_err(|e| bad_input(format!("{}: {e}", path.display())))
}

fn perturb(scenario: &mut Scenario, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for car in scenario.cars.cars.values_mut() {
        if car.role == CarRole::Regular {
            car.y += rng.random_range(-1.0..1.0);
            car.x += rng.random_range(-0.5..0.5);
        }
    }
}

#[derive(Serialize)]
struct EventLog<'a> {
    events: &'a [laneless::scenario::EventRecord],
    switches: &'a [laneless::scenario::SwitchRecord],
}

fn run_one(path: &Path, args: &RunArgs, out: &Path) -> Result<(), Failure> {
    let mut scenario = load_scenario(path)?;
    if let Some(dt) = args.dt {
        scenario.integration.dt = dt;
    }
    if let Some(t_end) = args.t_end {
        scenario.integration.t_end = t_end;
    }
    if let Some(every) = args.every {
        scenario.record_every_steps = every;
    }
    if let Some(seed) = args.seed {
        perturb(&mut scenario, seed);
    }
    scenario
        .validate()
        .map_err(|e| bad_input(format!("{}: {e}", path.display())))?;

    info!("running {} for {} steps", scenario.name, scenario.integration.steps());
    let trace = laneless::scenario::run(&scenario)?;
    let mut csv = Vec::new();
    write_trace_csv(trace.rows(), &mut csv).map_err(|e| bad_input(e.to_string()))?;
    let summary = summarize(&scenario.name, &trace, scenario.leader_v0_speed);
    let events = EventLog {
        events: &trace.events,
        switches: &trace.switches,
    };
    write_all(
        out,
        &[
            ("trace.csv", csv),
            ("events.json", json(&events)),
            ("summary.json", json(&summary)),
        ],
    )
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    if args.every == Some(0) {
        return Err(bad_input("--every must be >= 1"));
    }
    if !args.scenario.is_dir() {
        return run_one(&args.scenario, args, &args.out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.scenario)
        .map_err(|e| bad_input(format!("{}: {e}", args.scenario.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    // Independent runs, one thread each; the worst exit code wins.
    let results: Vec<(PathBuf, Result<(), Failure>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .iter()
            .map(|p| {
                let stem = p.file_stem().unwrap_or_default().to_owned();
                let out = args.out.join(stem);
                scope.spawn(move || run_one(p, args, &out))
            })
            .collect();
        paths
            .iter()
            .cloned()
            .zip(handles.into_iter().map(|h| h.join().expect("run thread panicked")))
            .collect()
    });
    let mut worst: Option<Failure> = None;
    for (p, r) in results {
        if let Err(f) = r {
            eprintln!("error: {}: {}", p.display(), f.message);
            if worst.as_ref().is_none_or(|w| f.code > w.code) {
                worst = Some(f);
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_analyze(path: &Path, out: &Path) -> Result<(), Failure> {
    // Analysis accepts gains a run would reject (zero damping, say): it
    // reports on them instead.
    let text = fs::read_to_string(path).map_err(|e| bad_input(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::parse(&text).map_err(|e| bad_input(format!("{}: {e}", path.display())))?;
    let g = &scenario.gains;
    if [g.b, g.k, g.b_x, g.k_x, g.g_y, g.g_x, g.weight_sum]
        .iter()
        .any(|v| !v.is_finite() || *v < 0.0)
        || !(g.weight_sum > 0.0)
    {
        return Err(bad_input(format!("{}: gains: must be finite and >= 0", path.display())));
    }
    let analysis = analyze_scenario(&scenario).map_err(bad_input)?;
    write_all(out, &[("stability.json", json(&analysis))])
}

fn plot_rows(rows: &[TraceRow], kind: PlotKind, t: Option<f64>) -> String {
    let mut out = String::new();
    match kind {
        PlotKind::XySnapshot => {
            out.push_str("t,car,role,level,x,y\n");
            let target = t.or_else(|| rows.last().map(|r| r.t));
            let chosen = target.and_then(|t| {
                rows.iter()
                    .map(|r| r.t)
                    .min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()))
            });
            if let Some(ts) = chosen {
                for r in rows.iter().filter(|r| r.t == ts && r.role != CarRole::PhantomLeader) {
                    let level = r.level.map(|l| l.to_string()).unwrap_or_default();
                    let _ = writeln!(out, "{},{},{},{},{},{}", r.t, r.car, r.role, level, r.x, r.y);
                }
            }
        }
        PlotKind::YVelocity => {
            out.push_str("t,car,vy\n");
            for r in rows.iter().filter(|r| r.role == CarRole::Regular) {
                let _ = writeln!(out, "{},{},{}", r.t, r.car, r.vy);
            }
        }
        PlotKind::XTrajectory => {
            out.push_str("t,car,role,x\n");
            for r in rows
                .iter()
                .filter(|r| matches!(r.role, CarRole::Regular | CarRole::Obstacle))
            {
                let _ = writeln!(out, "{},{},{},{}", r.t, r.car, r.role, r.x);
            }
        }
    }
    out
}

fn cmd_plotdata(trace: &Path, kind: PlotKind, t: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let file = fs::File::open(trace).map_err(|e| bad_input(format!("{}: {e}", trace.display())))?;
    let rows = read_trace_csv(file).map_err(|e| bad_input(format!("{}: {e}", trace.display())))?;
    let text = plot_rows(&rows, kind, t);
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| {
        trace
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(kind.file_name())
    });
    let dir = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = target
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| bad_input(format!("{}: not a file name", target.display())))?;
    write_all(dir, &[(name, text.into_bytes())])
}

fn cmd_scenario(name: Option<&str>, out: Option<&Path>) -> Result<(), Failure> {
    let Some(name) = name else {
        for n in preset_names() {
            println!("{n}");
        }
        return Ok(());
    };
    let scenario = preset(name).ok_or_else(|| {
        bad_input(format!("unknown scenario {name:?}; known: {}", preset_names().join(", ")))
    })?;
    let text = scenario.to_json() + "\n";
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let file = path
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| bad_input(format!("{}: not a file name", path.display())))?;
            write_all(dir, &[(file, text.into_bytes())])
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze { scenario, out } => cmd_analyze(scenario, out),
        Command::Plotdata { trace, kind, t, out } => cmd_plotdata(trace, *kind, *t, out.as_deref()),
        Command::Scenario { name, out } => cmd_scenario(name.as_deref(), out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
