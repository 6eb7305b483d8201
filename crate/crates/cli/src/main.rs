use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use boxtrack::log::{write_csv, RunLog};
use boxtrack::metrics::{comparison_table, summarize};
use boxtrack::{run_comparison, run_scenario, Error, RunOutcome, ScenarioConfig};
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "boxtrack",
    version,
    about = "Bounding-box target tracking simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write `<out>.csv` and `<out>.metrics.txt`.
    Run {
        config: PathBuf,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "boxtrack-run")]
        out: PathBuf,
    },
    /// Run with adaptive and fixed process noise on the same seed and write
    /// a paired metrics table.
    Compare {
        config: PathBuf,
        #[arg(long, default_value = "boxtrack-compare")]
        out: PathBuf,
    },
    /// Print the default scenario as TOML.
    Defaults,
}

enum Failure {
    Config(Error),
    Diverged,
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Other)?;
    ScenarioConfig::from_toml_str(&text).map_err(Failure::Config)
}

/// Writes the CSV log and the metrics sidecar. Returns the metrics text.
fn write_run(log: &RunLog, cfg: &ScenarioConfig, base: &Path) -> anyhow::Result<String> {
    let csv_path = with_suffix(base, ".csv");
    let file =
        File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(&log.rows, BufWriter::new(file))
        .with_context(|| format!("writing {}", csv_path.display()))?;

    let metrics_text = match summarize(&log.rows, cfg.metrics_from(), cfg.run.duration) {
        Ok(m) => m.to_text(&log.outcome),
        Err(e) => {
            let mut s = String::new();
            s.push_str(&format!("schema = {}\n", boxtrack::metrics::METRICS_SCHEMA));
            s.push_str(&format!("log_schema = {}\n", boxtrack::log::LOG_SCHEMA));
            s.push_str(&format!("outcome = {}\n", outcome_word(&log.outcome)));
            s.push_str(&format!("summary_error = {e}\n"));
            s
        }
    };
    let metrics_path = with_suffix(base, ".metrics.txt");
    std::fs::write(&metrics_path, &metrics_text)
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    Ok(metrics_text)
}

fn outcome_word(o: &RunOutcome) -> &'static str {
    match o {
        RunOutcome::Completed => "completed",
        RunOutcome::Diverged { .. } => "diverged",
    }
}

fn report_divergence(label: &str, log: &RunLog) -> bool {
    if let RunOutcome::Diverged { step, reason } = &log.outcome {
        eprintln!("{label}filter diverged at step {step}: {reason}");
        true
    } else {
        false
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    let log = run_scenario(&cfg).map_err(Failure::Config)?;
    let text = write_run(&log, &cfg, out)?;
    print!("{text}");
    if report_divergence("", &log) {
        return Err(Failure::Diverged);
    }
    Ok(())
}

fn cmd_compare(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let cmp = run_comparison(&cfg).map_err(Failure::Config)?;
    write_run(&cmp.adaptive, &cfg, &with_suffix(out, ".adaptive"))?;
    write_run(&cmp.fixed, &cfg, &with_suffix(out, ".fixed"))?;

    let qtrace_path = with_suffix(out, ".qtrace.csv");
    let mut q = BufWriter::new(
        File::create(&qtrace_path)
            .with_context(|| format!("creating {}", qtrace_path.display()))?,
    );
    writeln!(q, "t,adaptive_qhat_trace,fixed_qhat_trace").context("writing q trace")?;
    let trace = |r: &boxtrack::RunLogRow| {
        r.q_diag
            .map(|d| format!("{}", d.iter().sum::<f64>()))
            .unwrap_or_default()
    };
    for (a, f) in cmp.adaptive.rows.iter().zip(&cmp.fixed.rows) {
        writeln!(q, "{},{},{}", a.t, trace(a), trace(f)).context("writing q trace")?;
    }
    q.flush().context("writing q trace")?;

    let diverged_a = report_divergence("adaptive arm: ", &cmp.adaptive);
    let diverged_f = report_divergence("fixed arm: ", &cmp.fixed);
    let from = cfg.metrics_from();
    let table = match (
        summarize(&cmp.adaptive.rows, from, cfg.run.duration),
        summarize(&cmp.fixed.rows, from, cfg.run.duration),
    ) {
        (Ok(a), Ok(f)) => comparison_table(&a, &f),
        (a, f) => format!(
            "summary unavailable: adaptive {:?}, fixed {:?}\n",
            a.err(),
            f.err()
        ),
    };
    let table_path = with_suffix(out, ".compare.txt");
    std::fs::write(&table_path, &table)
        .with_context(|| format!("writing {}", table_path.display()))?;
    print!("{table}");
    if diverged_a || diverged_f {
        return Err(Failure::Diverged);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed, out } => cmd_run(config, *seed, out),
        Command::Compare { config, out } => cmd_compare(config, out),
        Command::Defaults => {
            print!("{}", ScenarioConfig::default().to_toml_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged) => ExitCode::from(EXIT_DIVERGED),
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
