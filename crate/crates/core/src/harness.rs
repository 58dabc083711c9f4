//! Batch metrics, output files and the `mmpih` command line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::batch::{run_batch, Execution};
use crate::config::Config;
use crate::error::Error;
use crate::sim::{run_episode, EpisodeResult, TraceMode, TraceRecord};

/// Per-episode line of a `.summary` file and of `batch.report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub kind: String,
    pub index: usize,
    pub seed: u64,
    pub success: bool,
    pub macro_steps: usize,
    pub sim_time: f64,
    pub completion_time: Option<f64>,
    pub failure: Option<String>,
    pub initial_offset: [f64; 3],
    pub max_grasp_residual: f64,
}

impl EpisodeSummary {
    pub fn new(index: usize, r: &EpisodeResult) -> Self {
        Self {
            kind: "episode".into(),
            index,
            seed: r.seed,
            success: r.success,
            macro_steps: r.macro_steps,
            sim_time: r.sim_time,
            completion_time: r.completion_time,
            failure: r.failure.clone(),
            initial_offset: r.initial_offset,
            max_grasp_residual: r.max_grasp_residual,
        }
    }
}

/// Success rate and completion-time statistics over a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub kind: String,
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
    /// Completion-time statistics over successful episodes only (s).
    pub mean_time: Option<f64>,
    pub max_time: Option<f64>,
    pub min_time: Option<f64>,
    #[serde(skip)]
    pub summaries: Vec<EpisodeSummary>,
}

/// Completion time of a summary is macro steps times the macro period.
pub fn aggregate(summaries: &[EpisodeSummary], macro_period: f64) -> crate::Result<BatchReport> {
    if summaries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sorted = summaries.to_vec();
    sorted.sort_by_key(|s| s.index);
    let times: Vec<f64> = sorted
        .iter()
        .filter(|s| s.success)
        .map(|s| s.macro_steps as f64 * macro_period)
        .collect();
    let (mean, max, min) = if times.is_empty() {
        (None, None, None)
    } else {
        let n = times.len() as f64;
        (
            Some(times.iter().sum::<f64>() / n),
            times.iter().copied().reduce(f64::max),
            times.iter().copied().reduce(f64::min),
        )
    };
    Ok(BatchReport {
        kind: "batch".into(),
        successes: times.len(),
        episodes: sorted.len(),
        success_rate: times.len() as f64 / sorted.len() as f64,
        mean_time: mean,
        max_time: max,
        min_time: min,
        summaries: sorted,
    })
}

pub fn aggregate_results(results: &[EpisodeResult], macro_period: f64) -> crate::Result<BatchReport> {
    let summaries: Vec<EpisodeSummary> = results.iter().enumerate().map(|(i, r)| EpisodeSummary::new(i, r)).collect();
    aggregate(&summaries, macro_period)
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Io { .. } => 2,
        }
    }
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        HarnessError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_config(path: Option<&Path>) -> Result<Config, HarnessError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", p.display())))?;
            Config::from_toml_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn trace_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("episode_{index}.trace"))
}

pub fn summary_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("episode_{index}.summary"))
}

pub fn report_path(dir: &Path) -> PathBuf {
    dir.join("batch.report")
}

pub fn write_episode(dir: &Path, index: usize, result: &EpisodeResult) -> Result<(), HarnessError> {
    write_lines::<TraceRecord>(&trace_path(dir, index), &result.trace)?;
    write_lines(&summary_path(dir, index), &[EpisodeSummary::new(index, result)])
}

/// `batch.report`: the aggregate line followed by one line per episode.
pub fn write_report(dir: &Path, report: &BatchReport) -> Result<(), HarnessError> {
    let path = report_path(dir);
    let mut lines = vec![serde_json::to_value(report).expect("report serializes")];
    lines.extend(report.summaries.iter().map(|s| serde_json::to_value(s).expect("summary serializes")));
    write_lines(&path, &lines)
}

pub fn read_summaries(dir: &Path) -> Result<Vec<EpisodeSummary>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("summary") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let s: EpisodeSummary = serde_json::from_str(line)
                .map_err(|e| HarnessError::Config(format!("{}: malformed summary: {e}", path.display())))?;
            out.push(s);
        }
    }
    Ok(out)
}

fn prepare_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Origin of each default, keyed by `section.key`.
fn provenance(section: &str, key: &str) -> &'static str {
    match (section, key) {
        ("run", "episodes") | ("run", "max_macro_steps") => "reported protocol",
        ("timing", "macro_period") => "derived: step limit over reported trial duration",
        ("scene", "hole_radius") | ("scene", "peg_radius") => "reported part dimensions",
        ("scene", "start_height") | ("scene", "initial_offset_radius") => "reported protocol",
        ("camera.intrinsics", _) => "reported sensor",
        ("perception", "heatmap_sigma") => "chosen",
        ("perception", _) => "chosen to match typical keypoint error",
        ("virtual_force", "k_contact") => "chosen on the scale of random_threshold",
        ("virtual_force", _) => "reported gain",
        ("object", "sign") => "chosen",
        ("object", _) | ("impedance", "inertia") | ("impedance", "damping") | ("impedance", "stiffness") => {
            "reported gain"
        }
        ("timing", "actuation_time") => "chosen: bounds travel per step",
        _ => "simulation choice",
    }
}

/// Fully defaulted config as TOML, each value annotated with its source.
pub fn annotated_default_config() -> String {
    let text = Config::default().to_toml_string().expect("default config serializes");
    let mut out = String::from("# mmpih configuration. Every key is optional; omitted keys take these values.\n");
    let mut section = String::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            out.push_str(line);
            out.push('\n');
            if section == "scene" {
                out.push_str("# initial_offset = [0.0, 0.0, 0.0]  # fixed (dx, dy, yaw) instead of a random draw\n");
            }
            continue;
        }
        match trimmed.split_once(" = ") {
            Some((key, _)) if !trimmed.starts_with('#') => {
                out.push_str(&format!("{line}  # {}\n", provenance(&section, key)));
            }
            _ => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out
}

#[derive(Parser, Debug)]
#[command(name = "mmpih", about = "Dual-arm multiple peg-in-hole simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one episode and write its trace and summary.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Episode seed, used as is.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Index used in output file names.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run a batch of episodes and write a report.
    Batch {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Base seed; episode seeds are derived from it and the index.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run episodes one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Re-aggregate the episode summaries found in a directory.
    Report { dir: PathBuf },
    /// Print the fully defaulted configuration.
    PrintConfig,
}

fn print_report(report: &BatchReport) {
    let fmt = |t: Option<f64>| t.map(|v| format!("{v:.2} s")).unwrap_or_else(|| "n/a".into());
    println!(
        "success {}/{} (rate {:.2}); completion time mean {}, max {}, min {}",
        report.successes,
        report.episodes,
        report.success_rate,
        fmt(report.mean_time),
        fmt(report.max_time),
        fmt(report.min_time)
    );
}

pub fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, seed, out, index } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            cfg.validate()?;
            prepare_dir(&out)?;
            let result = run_episode(&cfg, cfg.run.seed, TraceMode::Every(cfg.run.trace_every))?;
            write_episode(&out, index, &result)?;
            println!(
                "episode {index} seed {}: {} after {} macro steps ({:.2} s simulated){}",
                result.seed,
                if result.success { "success" } else { "failure" },
                result.macro_steps,
                result.sim_time,
                result.failure.as_deref().map(|f| format!(", {f}")).unwrap_or_default()
            );
        }
        Command::Batch {
            config,
            episodes,
            seed,
            out,
            sequential,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = episodes {
                cfg.run.episodes = n;
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            cfg.validate()?;
            prepare_dir(&out)?;
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::default_for_build()
            };
            let results = run_batch(&cfg, TraceMode::Every(cfg.run.trace_every), exec)?;
            for (i, r) in results.iter().enumerate() {
                write_episode(&out, i, r)?;
            }
            let report = aggregate_results(&results, cfg.timing.macro_period)?;
            write_report(&out, &report)?;
            print_report(&report);
        }
        Command::Report { dir } => {
            let summaries = read_summaries(&dir)?;
            // Times are recomputed from macro steps; recover the period from
            // any successful summary, falling back to the default.
            let period = summaries
                .iter()
                .find_map(|s| s.completion_time.map(|t| t / s.macro_steps as f64))
                .unwrap_or(Config::default().timing.macro_period);
            let report = aggregate(&summaries, period)?;
            write_report(&dir, &report)?;
            print_report(&report);
        }
        Command::PrintConfig => print!("{}", annotated_default_config()),
    }
    Ok(())
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
