use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlhomog::config::Config;
use nlhomog::error::Error;
use nlhomog::registry::{report, Registry};
use nlhomog::stats::with_workers;
use sha2::{Digest, Sha256};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "nlhomog", version, about = "Monte Carlo experiments on nonlinear stochastic homogenization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one coefficient realization.
    Sample(RunArgs),
    /// Cell-problem ensemble at a single slope.
    Cell(RunArgs),
    /// Tabulate the homogenized Lagrangian.
    Lbar(RunArgs),
    /// Homogenization errors of linearized and nonlinear problems.
    Commute(RunArgs),
    /// Two-scale expansion ledger.
    Twoscale(RunArgs),
    /// Lipschitz scan of differences of minimizers.
    Diffreg(RunArgs),
    /// Lipschitz scan of linearized solutions.
    Linreg(RunArgs),
    /// Linearization error against perturbation size.
    Superlin(RunArgs),
    /// Excess decay against corrector surrogates.
    Excess(RunArgs),
    /// Regularity of the homogenized Hessian.
    Lbarreg(RunArgs),
    /// Rate and tail fits recomputed from a run directory.
    Report {
        /// Run directory produced by one of the experiment subcommands.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a dotted config key, e.g. `--set ensemble.size=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Exit with status 4 when an acceptance check fails.
    #[arg(long)]
    check: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_solver_error() {
        EXIT_SOLVER
    } else {
        EXIT_CONFIG
    }
}

fn run_dir(root: &Path, name: &str, config_json: &str) -> PathBuf {
    let digest = hex::encode(Sha256::digest(config_json.as_bytes()));
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{name}-{}-{stamp}", &digest[..12]);
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    dir
}

fn run(name: &str, args: &RunArgs) -> Result<u8, Error> {
    let cfg = match &args.config {
        Some(path) => Config::from_file(path, &args.overrides)?,
        None => Config::from_json_str("{}", &args.overrides)?,
    };
    let config_json = cfg.to_json_pretty()?;
    if args.dump_config {
        println!("{config_json}");
        return Ok(0);
    }
    let registry = Registry::standard();
    let output = with_workers(args.workers, || registry.run(name, &cfg))??;
    let root = std::env::var("NLHOMOG_OUTPUT_ROOT").unwrap_or_else(|_| cfg.output.root.clone());
    let dir = run_dir(Path::new(&root), name, &config_json);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), format!("{config_json}\n"))?;
    output.write_to(name, &dir)?;
    println!("{}", dir.display());
    for c in &output.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if args.check && !output.all_passed() { EXIT_CHECK } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Report { input } => {
            return match report(input).and_then(|v| Ok(serde_json::to_string_pretty(&v)?)) {
                Ok(text) => {
                    // A closed pipe (e.g. `| head`) is not an error of the report.
                    let _ = writeln!(std::io::stdout(), "{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            };
        }
        Command::Sample(a) => ("sample", a),
        Command::Cell(a) => ("cell", a),
        Command::Lbar(a) => ("lbar", a),
        Command::Commute(a) => ("commute", a),
        Command::Twoscale(a) => ("twoscale", a),
        Command::Diffreg(a) => ("diffreg", a),
        Command::Linreg(a) => ("linreg", a),
        Command::Superlin(a) => ("superlin", a),
        Command::Excess(a) => ("excess", a),
        Command::Lbarreg(a) => ("lbarreg", a),
    };
    match run(name, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
