use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustrl::harness::{
    check_suite, cv_line_search, run_experiment, train_agents, ExperimentConfig, OracleRequest,
};
use robustrl::Error;

/// Robust reinforcement learning experiments.
#[derive(Debug, Parser)]
#[command(name = "robustrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the config's seed list (repeatable).
    #[arg(long, global = true)]
    seed: Vec<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent per seed and write models.json.
    Train { config: PathBuf },
    /// Train, evaluate on the true environment and write report.json and episodes.csv.
    Evaluate { config: PathBuf },
    /// Cross-validated line search over the radius grid; writes sweep.json.
    Sweep { config: PathBuf },
    /// Exact robust dynamic programming on an MDP; prints the oracle JSON.
    Oracle { mdp: PathBuf },
    /// Run the invariant suite.
    Check,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, text: String) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };
    match &cli.command {
        Command::Train { config } => {
            let cfg = load_config(config, cli)?;
            let dir = out_dir(cli, &cfg);
            let report = train_agents(&cfg)?;
            write(&dir.join("models.json"), json(&report)?)?;
            for a in &report.agents {
                for w in &a.warnings {
                    eprintln!("warning: {w}");
                }
            }
            say(format!("trained {} agents at radius {} -> {}", report.agents.len(), report.radius, dir.display()));
        }
        Command::Evaluate { config } => {
            let cfg = load_config(config, cli)?;
            let dir = out_dir(cli, &cfg);
            let report = run_experiment(&cfg, Some(&dir))?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(r) = report.chosen_radius {
                say(format!("chosen radius {r}"));
            }
            for s in &report.seeds {
                say(format!(
                    "seed {}: transient mean {:.6}, stationary mean {:.6}",
                    s.seed, s.transient_mean, s.stationary_mean
                ));
            }
            say(format!("wrote {}", dir.display()));
        }
        Command::Sweep { config } => {
            let cfg = load_config(config, cli)?;
            let dir = out_dir(cli, &cfg);
            let cv = cv_line_search(&cfg)?;
            write(&dir.join("sweep.json"), json(&cv)?)?;
            for s in &cv.scores {
                say(format!("radius {}: score {:.6}", s.radius, s.score));
            }
            say(format!("chosen radius {}", cv.chosen_radius));
        }
        Command::Oracle { mdp } => {
            let text =
                fs::read_to_string(mdp).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", mdp.display())))?;
            let report = OracleRequest::from_json(&text)?.solve()?;
            let body = json(&report)?;
            match &cli.out {
                Some(dir) => write(&dir.join("oracle.json"), body)?,
                None => println!("{body}"),
            }
        }
        Command::Check => {
            let report = check_suite();
            for r in &report.results {
                say(format!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail));
            }
            if let Some(dir) = &cli.out {
                write(&dir.join("check.json"), json(&report)?)?;
            }
            if !report.passed() {
                return Err(Failure::Check);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check) => {
            eprintln!("error: invariant check failed");
            ExitCode::from(1)
        }
    }
}
