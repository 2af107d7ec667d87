//! `lcsim`: single runs, stress campaigns, exhaustive exploration, replay and
//! witness search from the command line.
//!
//! Exit codes: 0 all properties pass, 1 violation, 2 configuration or usage
//! error, 3 inconclusive.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lambda_consensus::explorer::{explore, find_tightness_witness, Liveness, TightnessOutcome, DEFAULT_STATE_CAP};
use lambda_consensus::runtime::{
    run_random, run_schedule, schedule_to_json, Config, CrashPolicy, RunError, ScheduledAction, Trace,
};
use lambda_consensus::verdict::{check_trace, Verdict};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

const EXIT_PASS: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "lcsim", version, about = "Consensus under participation-constrained crashes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One seeded run and its verdict.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Many independent runs with seeds seed, seed+1, ...
    Stress {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, default_value_t = 1000)]
        runs: u64,
    },
    /// Exhaustive state-space exploration.
    Explore {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
        state_cap: usize,
    },
    /// Re-execute a schedule (JSON array) or a recorded trace.
    Replay {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long)]
        schedule_in: PathBuf,
    },
    /// Search for a non-terminating fair run with f = k + 1.
    Witness {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
        state_cap: usize,
    },
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON file with Config fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    /// Comma-separated input values, one per process.
    #[arg(long, value_delimiter = ',')]
    inputs: Option<Vec<u64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// none, eager, random:<p> or latest.
    #[arg(long)]
    crash_policy: Option<String>,
}

#[derive(Args)]
struct OutputArgs {
    /// Where to write the trace or schedule file.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Summary)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Summary,
}

/// Config fields as read from a file; everything optional so flags can fill gaps.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n: Option<usize>,
    k: Option<usize>,
    f: Option<usize>,
    inputs: Option<Vec<u64>>,
    seed: Option<u64>,
    max_steps: Option<u64>,
    crash_policy: Option<CrashPolicy>,
    /// Accepted for round-tripping trace headers; checked against n − k.
    lambda: Option<usize>,
}

/// A failure that ends the command with a given exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn field(field: &str, reason: impl std::fmt::Display) -> Self {
        Failure::usage(format!("invalid configuration field `{field}`: {reason}"))
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Failure::field(c.field, c.reason),
            RunError::Illegal(e) => Failure::usage(format!("schedule rejected: {e}")),
            RunError::Fault(f) => Failure {
                code: EXIT_VIOLATION,
                message: format!("internal fault: {f}"),
            },
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// Parses a config file. Missing fields are reported by name later, once
/// flags have had a chance to supply them.
fn load_config_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        match msg.split('`').nth(1) {
            Some(field) if msg.starts_with("unknown field") => Failure::field(field, &msg),
            _ => Failure::usage(format!("{}: {msg}", path.display())),
        }
    })
}

/// Merges `base`, then the config file, then flags; validates the result.
fn build_config(args: &ConfigArgs, base: Option<&Config>) -> Result<Config, Failure> {
    let file = match &args.config {
        Some(p) => load_config_file(p)?,
        None => FileConfig::default(),
    };
    let n = args.n.or(file.n).or(base.map(|c| c.n)).ok_or_else(|| Failure::field("n", "missing"))?;
    let k = args.k.or(file.k).or(base.map(|c| c.k)).ok_or_else(|| Failure::field("k", "missing"))?;
    let f = args.f.or(file.f).or(base.map(|c| c.f)).unwrap_or(0);
    let inputs = args
        .inputs
        .clone()
        .or(file.inputs)
        .or(base.map(|c| c.inputs.clone()))
        .ok_or_else(|| Failure::field("inputs", "missing"))?;
    let mut cfg = Config::new(n, k, f, inputs);
    if let Some(b) = base {
        (cfg.seed, cfg.max_steps, cfg.crash_policy) = (b.seed, b.max_steps, b.crash_policy);
    }
    if let Some(s) = args.seed.or(file.seed) {
        cfg.seed = s;
    }
    if let Some(m) = args.max_steps.or(file.max_steps) {
        cfg.max_steps = m;
    }
    if let Some(p) = &args.crash_policy {
        cfg.crash_policy = p.parse().map_err(|e| Failure::field("crash_policy", e))?;
    } else if let Some(p) = file.crash_policy {
        cfg.crash_policy = p;
    }
    cfg.validate().map_err(|e| Failure::field(e.field, e.reason))?;
    if let Some(l) = file.lambda {
        if l != cfg.lambda() {
            return Err(Failure::field("lambda", format!("{l} != n - k = {}", cfg.lambda())));
        }
    }
    Ok(cfg)
}

fn verdict_code(v: &Verdict) -> u8 {
    if v.has_violation() {
        EXIT_VIOLATION
    } else if v.is_inconclusive() {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_PASS
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("json"));
}

fn cmd_run(cfg_args: &ConfigArgs, out: &OutputArgs) -> Result<u8, Failure> {
    let cfg = build_config(cfg_args, None)?;
    let trace = run_random(&cfg)?;
    let verdict = check_trace(&trace, &cfg).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(p) = &out.trace_out {
        write_file(p, &trace.to_jsonl())?;
    }
    match out.format {
        Format::Jsonl => print!("{}", trace.to_jsonl()),
        Format::Summary => print_json(&json!({
            "lambda": cfg.lambda(),
            "actions": trace.schedule().len(),
            "decisions": trace.decisions,
            "verdict": verdict,
        })),
    }
    Ok(verdict_code(&verdict))
}

fn cmd_stress(cfg_args: &ConfigArgs, out: &OutputArgs, runs: u64) -> Result<u8, Failure> {
    let cfg = build_config(cfg_args, None)?;
    if runs == 0 {
        return Err(Failure::field("runs", "must be positive"));
    }
    // Traces are kept only for violating runs.
    let results: Vec<(u64, bool, Verdict, Option<Trace>)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            let t = run_random(&c)?;
            let v = check_trace(&t, &c).map_err(|e| Failure::usage(e.to_string()))?;
            let keep = v.has_violation().then_some(t.clone());
            Ok((i, t.complete, v, keep))
        })
        .collect::<Result<_, Failure>>()?;
    let (mut complete, mut inconclusive, mut violations) = (0u64, 0u64, 0u64);
    let mut first_violation: Option<(u64, &Trace)> = None;
    for (i, done, v, t) in &results {
        if let Some(t) = t {
            violations += 1;
            first_violation.get_or_insert((*i, t));
        } else if v.is_inconclusive() {
            inconclusive += 1;
        } else {
            complete += 1;
        }
        if out.format == Format::Jsonl {
            print_json(&json!({
                "run": i,
                "seed": cfg.seed.wrapping_add(*i),
                "complete": done,
                "violation": v.has_violation(),
                "verdict": v,
            }));
        }
    }
    if let (Some(p), Some((_, t))) = (&out.trace_out, first_violation) {
        write_file(p, &t.to_jsonl())?;
    }
    if out.format == Format::Summary {
        print_json(&json!({
            "runs": runs,
            "complete": complete,
            "inconclusive": inconclusive,
            "violations": violations,
            "first_violation_seed": first_violation.map(|(i, _)| cfg.seed.wrapping_add(i)),
        }));
    }
    Ok(if violations > 0 {
        EXIT_VIOLATION
    } else if inconclusive > 0 {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_PASS
    })
}

fn cmd_explore(cfg_args: &ConfigArgs, out: &OutputArgs, state_cap: usize) -> Result<u8, Failure> {
    let cfg = build_config(cfg_args, None)?;
    let report = explore(&cfg, state_cap)?;
    let failing: Option<Vec<ScheduledAction>> = match (report.safety_violations.first(), &report.liveness) {
        (Some(v), _) => Some(v.schedule.clone()),
        (None, Liveness::Fail { witnesses, .. }) => witnesses.first().map(|w| w.schedule()),
        _ => None,
    };
    if let (Some(p), Some(s)) = (&out.trace_out, &failing) {
        write_file(p, &schedule_to_json(s))?;
    }
    print_json(&json!({ "lambda": cfg.lambda(), "report": report }));
    Ok(if report.truncated {
        EXIT_INCONCLUSIVE
    } else if report.passed() {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    })
}

fn cmd_replay(cfg_args: &ConfigArgs, out: &OutputArgs, schedule_in: &Path) -> Result<u8, Failure> {
    let text = read_file(schedule_in)?;
    let (schedule, recorded) = if text.trim_start().starts_with('[') {
        let s: Vec<ScheduledAction> =
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", schedule_in.display())))?;
        (s, None)
    } else {
        let t = Trace::from_jsonl(&text).map_err(|e| Failure::usage(format!("{}: {e}", schedule_in.display())))?;
        (t.schedule(), Some(t.config))
    };
    let cfg = build_config(cfg_args, recorded.as_ref())?;
    let trace = run_schedule(&cfg, &schedule)?;
    let verdict = check_trace(&trace, &cfg).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(p) = &out.trace_out {
        write_file(p, &trace.to_jsonl())?;
    }
    match out.format {
        Format::Jsonl => print!("{}", trace.to_jsonl()),
        Format::Summary => print_json(&json!({
            "actions": schedule.len(),
            "decisions": trace.decisions,
            "verdict": verdict,
        })),
    }
    Ok(verdict_code(&verdict))
}

fn cmd_witness(cfg_args: &ConfigArgs, out: &OutputArgs, state_cap: usize) -> Result<u8, Failure> {
    let cfg = build_config(cfg_args, None)?;
    let outcome = find_tightness_witness(&cfg, state_cap)?;
    let code = match &outcome {
        TightnessOutcome::Found { witness, .. } => {
            let path = out.trace_out.clone().unwrap_or_else(|| PathBuf::from("witness.json"));
            write_file(&path, &schedule_to_json(&witness.schedule()))?;
            eprintln!("witness schedule written to {}", path.display());
            EXIT_PASS
        }
        TightnessOutcome::NoneFound { .. } => {
            eprintln!("no witness: every fair run terminates for this configuration");
            EXIT_VIOLATION
        }
        TightnessOutcome::Inconclusive { .. } => EXIT_INCONCLUSIVE,
    };
    print_json(&json!({ "lambda": cfg.lambda(), "outcome": outcome }));
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { cfg, out } => cmd_run(cfg, out),
        Command::Stress { cfg, out, runs } => cmd_stress(cfg, out, *runs),
        Command::Explore { cfg, out, state_cap } => cmd_explore(cfg, out, *state_cap),
        Command::Replay { cfg, out, schedule_in } => cmd_replay(cfg, out, schedule_in),
        Command::Witness { cfg, out, state_cap } => cmd_witness(cfg, out, *state_cap),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
