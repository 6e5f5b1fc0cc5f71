//! `varbound`: run variance-aware concentration experiments from a scenario file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use varbound_core::harness::{
    run_canonical, run_claim, run_coverage, run_estimate, run_pacbayes, run_tails, with_workers,
};
use varbound_core::scenario::Scenario;
use varbound_core::{Error, Verdict};

mod output;

const TOOL: &str = "varbound";

use output::{Report, Table};

#[derive(Parser)]
#[command(
    name = "varbound",
    version,
    about = "Variance-aware concentration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CommandKind {
    Estimate,
    Coverage,
    Canonical,
    Pacbayes,
    Tails,
    Claim,
}

#[derive(Subcommand)]
enum Command {
    /// Variance breakdowns and bound radii for one sample
    Estimate(RunArgs),
    /// Empirical coverage of the configured bounds
    Coverage(RunArgs),
    /// Exponential-moment check of a canonical pair
    Canonical(RunArgs),
    /// Posterior-averaged coverage and moment checks for a hypothesis class
    Pacbayes(RunArgs),
    /// Self-normalized tail frequencies of a canonical pair
    Tails(RunArgs),
    /// Subgaussian bound from an exponential moment of the square
    Claim(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the scenario
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; never changes the output
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Stamp the payload with the current time (breaks byte-identical reruns)
    #[arg(long)]
    timestamp: bool,
}

impl Command {
    fn split(&self) -> (CommandKind, &RunArgs) {
        match self {
            Command::Estimate(a) => (CommandKind::Estimate, a),
            Command::Coverage(a) => (CommandKind::Coverage, a),
            Command::Canonical(a) => (CommandKind::Canonical, a),
            Command::Pacbayes(a) => (CommandKind::Pacbayes, a),
            Command::Tails(a) => (CommandKind::Tails, a),
            Command::Claim(a) => (CommandKind::Claim, a),
        }
    }
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Estimate => "estimate",
            CommandKind::Coverage => "coverage",
            CommandKind::Canonical => "canonical",
            CommandKind::Pacbayes => "pacbayes",
            CommandKind::Tails => "tails",
            CommandKind::Claim => "claim",
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    scenario: &'a Scenario,
    timestamp: Option<String>,
    report: &'a Report,
}

/// A failure that maps to exit code 2.
struct ConfigError(String);

fn parse_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    // serde_json messages already end with the line and column.
    let mut scn: Scenario = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("{}: parse error: {e}", path.display())))?;
    if let Some(s) = seed {
        scn.seed = s;
    }
    scn.resolve().map_err(|e| ConfigError(describe(path, &e)))
}

fn describe(path: &Path, e: &Error) -> String {
    match e {
        Error::InvalidParameter { field, reason } => {
            format!("{}: {field}: {reason}", path.display())
        }
        other => format!("{}: {other}", path.display()),
    }
}

fn execute(kind: CommandKind, scn: &Scenario) -> varbound_core::Result<Report> {
    Ok(match kind {
        CommandKind::Estimate => Report::Estimate(run_estimate(scn)?),
        CommandKind::Coverage => Report::Coverage(run_coverage(scn)?),
        CommandKind::Canonical => Report::Canonical(run_canonical(scn)?),
        CommandKind::Pacbayes => Report::Pacbayes(run_pacbayes(scn)?),
        CommandKind::Tails => Report::Tails(run_tails(scn)?),
        CommandKind::Claim => Report::Claim(run_claim(scn)?),
    })
}

fn exit_code(v: Verdict) -> u8 {
    match v {
        Verdict::Pass | Verdict::Vacuous => 0,
        Verdict::Fail => 1,
        Verdict::Inconclusive => 3,
    }
}

fn write_stdout(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .context("writing standard output")?;
    out.flush().context("writing standard output")
}

fn run(cli: Cli) -> Result<u8, ConfigError> {
    let (kind, args) = cli.command.split();
    let scn = parse_scenario(&args.config, args.seed)?;
    let report = with_workers(args.workers, || execute(kind, &scn))
        .and_then(|r| r)
        .map_err(|e| ConfigError(describe(&args.config, &e)))?;

    let text = match args.format {
        Format::Json => {
            let envelope = Envelope {
                tool: TOOL,
                version: env!("CARGO_PKG_VERSION"),
                command: kind.name(),
                scenario: &scn,
                timestamp: args.timestamp.then(|| chrono::Utc::now().to_rfc3339()),
                report: &report,
            };
            let mut s =
                serde_json::to_string_pretty(&envelope).map_err(|e| ConfigError(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut meta = Table::new("meta", &["tool", "version", "command", "seed"]);
            meta.push(vec![
                TOOL.to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
                kind.name().to_string(),
                scn.seed.to_string(),
            ]);
            std::iter::once(meta)
                .chain(report.tables())
                .map(|t| t.render())
                .collect::<Vec<_>>()
                .join("\n")
        }
    };
    write_stdout(&text).map_err(|e| ConfigError(e.to_string()))?;
    eprint!("{}", report.summary());
    let verdict = report.verdict();
    eprintln!("verdict: {}", verdict.as_str());
    Ok(exit_code(verdict))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(ConfigError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
