use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use genesc_core::builtin::builtin_registry;
use genesc_core::demos::{browser, nbody};
use genesc_core::diagnostics::load_core;
use genesc_core::graph::{analyze, validate_hard_acyclic};
use genesc_core::manifest::load_manifest;
use genesc_core::scheduler::{FailureSnapshot, Mode};
use genesc_core::{
    run, BodySet64, Hypergraph, RunReport, Runtime, SchedulerConfig, SchedulerError, StreamData,
    Value,
};

#[derive(Parser)]
#[command(name = "genesc", version, about = "Run stream-entity programs and demos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in demo or a manifest.
    Run(RunArgs),
    /// Validate and analyze a manifest without running it.
    Check {
        manifest: PathBuf,
    },
    /// Summarize a core dump.
    Inspect {
        dump: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Nbody,
    Browser,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Parallel,
    Sequential,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, conflicts_with = "manifest", required_unless_present = "manifest")]
    demo: Option<Demo>,
    #[arg(long, env = "GENESC_MANIFEST")]
    manifest: Option<PathBuf>,
    /// `<min>[:<max>]`; a single number fixes the pool size.
    #[arg(long, env = "GENESC_WORKERS", value_parser = parse_workers)]
    workers: Option<(usize, usize)>,
    #[arg(long, value_enum, env = "GENESC_MODE")]
    mode: Option<ModeArg>,
    #[arg(long, env = "GENESC_SEED")]
    seed: Option<u64>,
    /// Scheduler settings as `key = value` lines; flags take precedence.
    #[arg(long, env = "GENESC_CONFIG")]
    config: Option<PathBuf>,
    /// Write the execution trace (JSON) here.
    #[arg(long, env = "GENESC_TRACE")]
    trace: Option<PathBuf>,
    /// Where to write a core dump if a kernel fails.
    #[arg(long, env = "GENESC_DUMP_ON_ERROR")]
    dump_on_error: Option<PathBuf>,
    #[arg(long, env = "GENESC_N", default_value_t = 64)]
    n: usize,
    #[arg(long, env = "GENESC_STEPS", default_value_t = 10)]
    steps: usize,
    #[arg(long, env = "GENESC_PARTITIONS", default_value_t = 4)]
    partitions: u32,
    #[arg(long, env = "GENESC_DT", default_value_t = 1e-3)]
    dt: f64,
    /// Program input for a manifest: `name=type:v1,v2,...`
    /// (types: unit, scalar, scalars, bytes).
    #[arg(long = "input", value_parser = parse_input)]
    inputs: Vec<(String, Value)>,
}

fn parse_workers(s: &str) -> Result<(usize, usize), String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (min, max) = match s.split_once(':') {
        Some((a, b)) => (num(a)?, num(b)?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if min == 0 || min > max {
        return Err(format!("need 1 <= min <= max, got {min}:{max}"));
    }
    Ok((min, max))
}

fn parse_input(s: &str) -> Result<(String, Value), String> {
    let (name, rest) = s.split_once('=').ok_or("expected name=type:values")?;
    let (ty, body) = rest.split_once(':').unwrap_or((rest, ""));
    let nums = || -> Result<Vec<f64>, String> {
        body.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
            .collect()
    };
    let value = match ty {
        "unit" => Value::Unit,
        "scalar" => Value::Scalar(
            body.trim()
                .parse()
                .map_err(|e| format!("`{body}`: {e}"))?,
        ),
        "scalars" => Value::Scalars(nums()?),
        "bytes" => Value::Bytes(body.as_bytes().to_vec()),
        other => return Err(format!("unsupported input type `{other}`")),
    };
    Ok((name.to_owned(), value))
}

fn scheduler_config(args: &RunArgs) -> Result<SchedulerConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SchedulerConfig::from_text(&text)?
        }
        None => SchedulerConfig::default(),
    };
    if let Some((min, max)) = args.workers {
        cfg.min_workers = min;
        cfg.max_workers = max;
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Parallel => Mode::Parallel,
            ModeArg::Sequential => Mode::Sequential,
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.dump_on_error = Some(args.dump_on_error.clone().unwrap_or_else(|| {
        std::env::temp_dir().join(format!("genesc-{}.core", std::process::id()))
    }));
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(report: &RunReport) -> String {
    let spans = report.trace.spans();
    let resizes = report.worker_timeline.len().saturating_sub(1);
    format!(
        "mode={:?} tasks={} events={} steals={} resizes={} violations={} races={} warnings={}",
        report.mode,
        spans.len(),
        report.trace.len(),
        report.trace.steals(),
        resizes,
        report.violations.len(),
        report.races.pairs.len(),
        report.warnings.len(),
    )
}

fn write_trace(path: &Path, reports: &[RunReport]) -> Result<()> {
    let traces: Vec<_> = reports.iter().map(|r| &r.trace).collect();
    let text = if traces.len() == 1 {
        serde_json::to_string_pretty(traces[0])?
    } else {
        serde_json::to_string_pretty(&traces)?
    };
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn short(v: &Value) -> String {
    let s = serde_json::to_string(v).unwrap_or_default();
    if s.len() > 120 {
        format!("{}...", &s[..117])
    } else {
        s
    }
}

fn run_nbody(args: &RunArgs, cfg: &SchedulerConfig) -> Result<Vec<RunReport>> {
    if args.n == 0 {
        bail!("--n must be at least 1");
    }
    if !(args.dt > 0.0) {
        bail!("--dt must be positive");
    }
    let bodies = BodySet64::random(args.n, cfg.seed);
    let started = Instant::now();
    let out = nbody::run_nbody(&bodies, args.dt, args.steps, args.partitions, cfg)?;
    let elapsed = started.elapsed();
    let oracle = nbody::simulate(&bodies, args.dt, args.steps)?;
    let max_rel = out
        .bodies
        .x
        .iter()
        .zip(&oracle.x)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs() / q[k].abs().max(1e-300)))
        .fold(0.0f64, f64::max);
    println!(
        "nbody: n={} steps={} partitions={} elapsed={:.1?}",
        args.n, args.steps, args.partitions, elapsed
    );
    println!("max relative position error vs direct loop: {max_rel:.3e}");
    if let Some(last) = out.reports.last() {
        println!("last step: {}", summarize(last));
    }
    Ok(out.reports)
}

fn run_browser(cfg: &SchedulerConfig) -> Result<Vec<RunReport>> {
    let runtime = browser::browser_runtime(Duration::from_millis(1));
    let g = browser::browser_graph(runtime.kernels())?;
    let report = run(&g, &runtime, &browser::browser_inputs(browser::SAMPLE_PAGE), cfg)?;
    println!("browser: {}", summarize(&report));
    for (entity, ports) in &report.outputs {
        for (port, v) in ports {
            println!("  {entity}.{port} = {}", short(v));
        }
    }
    Ok(vec![report])
}

fn load_program(path: &Path) -> Result<(Hypergraph, Runtime)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let kernels = builtin_registry();
    let g = load_manifest(&text, &kernels).with_context(|| format!("in {}", path.display()))?;
    Ok((g, Runtime::new(kernels)))
}

fn run_manifest(path: &Path, args: &RunArgs, cfg: &SchedulerConfig) -> Result<Vec<RunReport>> {
    let (g, runtime) = load_program(path)?;
    let inputs: StreamData = args.inputs.iter().cloned().collect();
    let report = run(&g, &runtime, &inputs, cfg)?;
    println!("{}: {}", path.display(), summarize(&report));
    for w in &report.warnings {
        println!("  warning: {w}");
    }
    for (entity, ports) in &report.outputs {
        for (port, v) in ports {
            println!("  {entity}.{port} = {}", short(v));
        }
    }
    Ok(vec![report])
}

fn failure_of<'e>(e: &'e (dyn std::error::Error + 'static)) -> Option<&'e FailureSnapshot> {
    let sched = e.downcast_ref::<SchedulerError>().or_else(|| {
        match e.downcast_ref::<nbody::NBodyError>() {
            Some(nbody::NBodyError::Scheduler(s)) => Some(s),
            _ => None,
        }
    });
    match sched {
        Some(SchedulerError::KernelPanic { failure, .. }) => Some(failure),
        _ => None,
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = scheduler_config(args)?;
    let reports = match (&args.manifest, args.demo) {
        (Some(path), _) => run_manifest(path, args, &cfg),
        (None, Some(Demo::Nbody)) => run_nbody(args, &cfg),
        (None, Some(Demo::Browser)) => run_browser(&cfg),
        (None, None) => Err(anyhow!("one of --demo or --manifest is required")),
    };
    let reports = match reports {
        Ok(r) => r,
        Err(err) => {
            let failure = err.chain().find_map(failure_of);
            if let Some(path) = failure.and_then(|f| f.dump_path.as_ref()) {
                eprintln!("core dump written to {}", path.display());
            }
            return Err(err);
        }
    };
    if let Some(path) = &args.trace {
        write_trace(path, &reports)?;
    }
    let dirty = reports.iter().find(|r| !r.is_clean());
    if let Some(r) = dirty {
        bail!(
            "run finished with {} precedence violations and {} lifecycle errors",
            r.violations.len(),
            r.lifecycle_errors.len()
        );
    }
    Ok(())
}

fn cmd_check(path: &Path) -> Result<()> {
    let (g, _) = load_program(path)?;
    let v = validate_hard_acyclic(&g);
    if !v.is_schedulable() {
        bail!("hard constraints form cycles: {:?}", v.cycles);
    }
    let a = analyze(&g)?;
    println!(
        "{}: {} leaves, critical path {}, width {}{}, {} components",
        path.display(),
        a.vertices,
        a.critical_path,
        a.width,
        if a.width_exact { "" } else { " (bound)" },
        a.components
    );
    for s in &a.multi_producer_streams {
        println!("  warning: stream `{s}` has several producers");
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let dump = load_core(path).with_context(|| format!("loading {}", path.display()))?;
    print!("{}", dump.summary());
    let failed: BTreeMap<_, _> = dump
        .trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            genesc_core::scheduler::EventKind::Fail { cause } => Some((e.task.clone()?, cause.clone())),
            _ => None,
        })
        .collect();
    for (task, cause) in failed {
        println!("failed: {task}: {cause}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check { manifest } => cmd_check(manifest),
        Command::Inspect { dump } => cmd_inspect(dump),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
