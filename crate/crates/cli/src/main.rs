//! `carl`: train, inspect and shadow-run macro-action tasking policies.

mod config;

use std::fmt::Display;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carl_core::policy::{self, PolicyParams};
use carl_core::ppotrain;
use carl_core::telbridge::{self, hot_reload, DownlinkError, ReloadState, ShadowEvent, ShadowRunner, TelemetryFormat};
use carl_core::xray::{self, RenderMode};
use clap::{Parser, Subcommand};
use config::RunConfig;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECKPOINT: u8 = 3;
const EXIT_SANITY: u8 = 4;
const EXIT_BUDGET: u8 = 5;

#[derive(Parser)]
#[command(name = "carl", version, about = "Macro-action tasking policies: training, inspection and shadow inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO and write checkpoints plus a report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[train] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep a policy over two observation features; writes sweep.ppm and sweep.csv.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// stochastic, argmax or blend; overrides `[sweep] mode`.
        #[arg(long)]
        mode: Option<RenderMode>,
        /// Overrides `[sweep] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in behavioral sanity scenarios.
    Sanity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay telemetry through the policy without commanding anything.
    Shadow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        telemetry: PathBuf,
        /// csv or jsonl; overrides `[shadow] format` and the file extension.
        #[arg(long)]
        format: Option<TelemetryFormat>,
        /// Overrides `[shadow] log`; without either the log goes to stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Exit nonzero when more records than this are skipped.
        #[arg(long)]
        max_skips: Option<usize>,
    },
    /// Prune a shadow log to a whitelist and compress it into a downlink packet.
    Pack {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated field names; overrides `[downlink] whitelist`.
        #[arg(long, value_delimiter = ',')]
        whitelist: Option<Vec<String>>,
        /// Maximum packet size in bytes; overrides `[downlink] budget`.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8) -> impl Fn(&dyn Display) -> Failure {
    move |e| Failure { code, message: e.to_string() }
}

fn runtime<E: Display>(e: E) -> Failure {
    fail(EXIT_RUNTIME)(&e)
}

fn io_at<'a>(path: &'a Path) -> impl Fn(io::Error) -> Failure + 'a {
    move |e| fail(EXIT_RUNTIME)(&format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, seed, out } => train(&config, seed, &out),
        Command::Sweep { config, checkpoint, mode, seed, out } => sweep(config.as_deref(), &checkpoint, mode, seed, &out),
        Command::Sanity { checkpoint, config } => sanity(&checkpoint, config.as_deref()),
        Command::Shadow { config, checkpoint, telemetry, format, log, max_skips } => {
            shadow(&config, &checkpoint, &telemetry, format, log, max_skips)
        }
        Command::Pack { input, whitelist, budget, config, out } => pack(&input, whitelist, budget, config.as_deref(), &out),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| fail(EXIT_CONFIG)(&e)),
        None => Ok(RunConfig::default()),
    }
}

fn load_params(path: &Path) -> Result<PolicyParams, Failure> {
    policy::load(path).map_err(|e| fail(EXIT_CHECKPOINT)(&format!("{}: {e}", path.display())))
}

fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_config(Some(config))?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    fs::create_dir_all(out).map_err(io_at(out))?;
    let outcome = ppotrain::train(&cfg.spacecraft, &cfg.train, Some(out)).map_err(runtime)?;
    let report = &outcome.report;
    for it in &report.iterations {
        println!(
            "iter {:4}  episodes {:6}  mean_reward {:+.4}  survival {:.4}{}",
            it.iteration,
            it.episodes_total,
            it.mean_episode_reward,
            it.mean_survival_fraction,
            if it.aborted { "  (update aborted)" } else { "" }
        );
    }
    if let Some(i) = report.selected {
        let c = &report.checkpoints[i];
        let path = c.path.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
        println!("selected checkpoint: episode {} mean_reward {:+.4} {path}", c.episodes, c.mean_reward);
    }
    match &report.error {
        Some(e) => Err(runtime(e)),
        None => Ok(()),
    }
}

fn sweep(config: Option<&Path>, checkpoint: &Path, mode: Option<RenderMode>, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.sweep.mode = m;
    }
    if let Some(s) = seed {
        cfg.sweep.seed = s;
    }
    let params = load_params(checkpoint)?;
    let map = xray::sweep(&params, &cfg.sweep, &cfg.spacecraft).map_err(runtime)?;
    let rendered = xray::render(&map, cfg.sweep.mode, cfg.sweep.seed);
    fs::create_dir_all(out).map_err(io_at(out))?;
    let (ppm, csv) = (out.join("sweep.ppm"), out.join("sweep.csv"));
    fs::write(&ppm, &rendered.ppm).map_err(io_at(&ppm))?;
    fs::write(&csv, &rendered.csv).map_err(io_at(&csv))?;
    println!("wrote {} and {}", ppm.display(), csv.display());
    Ok(())
}

fn sanity(checkpoint: &Path, config: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let params = load_params(checkpoint)?;
    let base = xray::nominal_observation(&cfg.spacecraft);
    let scenarios = xray::builtin_scenarios(&cfg.spacecraft);
    let report = xray::sanity_suite(&params, &base, &scenarios).map_err(runtime)?;
    for r in &report.results {
        println!("{} {}", if r.passed { "PASS" } else { "FAIL" }, serde_json::to_string(r).map_err(runtime)?);
    }
    if report.all_passed {
        Ok(())
    } else {
        let failed = report.results.iter().filter(|r| !r.passed).count();
        Err(fail(EXIT_SANITY)(&format!("{failed} of {} sanity scenarios failed", report.results.len())))
    }
}

fn telemetry_format(explicit: Option<TelemetryFormat>, configured: Option<&str>, path: &Path) -> Result<TelemetryFormat, Failure> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    if let Some(f) = configured {
        return f.parse().map_err(|e: String| fail(EXIT_CONFIG)(&e));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(TelemetryFormat::CsvWithHeader),
        Some("jsonl" | "json") => Ok(TelemetryFormat::JsonLines),
        _ => Err(fail(EXIT_CONFIG)(&"cannot infer telemetry format; pass --format csv|jsonl")),
    }
}

fn shadow(
    config: &Path,
    checkpoint: &Path,
    telemetry: &Path,
    format: Option<TelemetryFormat>,
    log: Option<PathBuf>,
    max_skips: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_config(Some(config))?;
    let format = telemetry_format(format, cfg.shadow.format.as_deref(), telemetry)?;
    let params = load_params(checkpoint)?;
    let text = fs::read_to_string(telemetry).map_err(io_at(telemetry))?;
    let records = telbridge::parse_telemetry(&text, format).map_err(runtime)?;

    let log_path = log.or_else(|| cfg.shadow.log.clone());
    let mut sink: Box<dyn Write> = match &log_path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(io_at(p))?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut state = ReloadState { params: params.clone(), spacecraft: cfg.spacecraft.clone() };
    let mut runner = ShadowRunner::new(params, cfg.spacecraft.clone(), cfg.shadow.shadow_config());
    let (mut entries, mut skips) = (0usize, 0usize);
    for record in records {
        if let Some(dir) = &cfg.shadow.drop_dir {
            let events = hot_reload(dir, &mut state).map_err(io_at(dir))?;
            for ev in &events {
                eprintln!("reload: {}", serde_json::to_string(ev).map_err(runtime)?);
            }
            if !events.is_empty() {
                runner.set_params(state.params.clone());
                runner.set_spacecraft(state.spacecraft.clone());
            }
        }
        let event = runner.process(record);
        match &event {
            ShadowEvent::Entry(_) => entries += 1,
            ShadowEvent::Skip(_) => skips += 1,
        }
        writeln!(sink, "{}", event.to_json_line()).map_err(runtime)?;
    }
    sink.flush().map_err(runtime)?;
    drop(sink);

    let agreement = runner.agreement().map_or("n/a".to_string(), |a| format!("{a:.6}"));
    eprintln!("entries {entries}  skips {skips}  agreement {agreement}");
    let limit = max_skips.or(cfg.shadow.max_skips);
    match limit {
        Some(m) if skips > m => Err(runtime(format!("{skips} skipped records exceed the limit of {m}"))),
        _ => Ok(()),
    }
}

fn pack(input: &Path, whitelist: Option<Vec<String>>, budget: Option<usize>, config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let whitelist = whitelist.unwrap_or(cfg.downlink.whitelist);
    let budget = budget.unwrap_or(cfg.downlink.budget);
    let text = fs::read_to_string(input).map_err(io_at(input))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| runtime(format!("{} line {}: {e}", input.display(), i + 1)))?;
        if v.get("kind").and_then(|k| k.as_str()) != Some("skip") {
            entries.push(v);
        }
    }
    let packet = telbridge::pack_downlink(&entries, &whitelist, budget).map_err(|e| match e {
        DownlinkError::Budget { .. } => fail(EXIT_BUDGET)(&e),
        other => runtime(other),
    })?;
    let bytes = packet.to_bytes();
    fs::write(out, &bytes).map_err(io_at(out))?;
    println!("packed {} entries into {} bytes (budget {budget})", entries.len(), bytes.len());
    Ok(())
}
