use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dmr_kit::analysis::{compute_dmr_with, SolverChoice};
use dmr_kit::chain::{build_chain, BuildOptions, DEFAULT_MAX_STATES};
use dmr_kit::io::{self, SCHEMA};
use dmr_kit::model::validate_task;
use dmr_kit::sim::{
    enumerate_dmr_n, monte_carlo_replicated, EnumerationMode, DEFAULT_ENUMERATION_BUDGET,
};
use dmr_kit::sweep::{self, Sweep};
use dmr_kit::{Error, Result};

const MAX_STATES_ENV: &str = "DMRKIT_MAX_STATES";

#[derive(Parser)]
#[command(name = "dmrkit", version, about = "Deadline miss rate analysis for periodic soft real-time tasks")]
struct Cli {
    /// Worker threads for sweeps and simulation replications.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a task (and optionally a supply) document.
    Validate {
        /// Task document (JSON).
        #[arg(long)]
        task: PathBuf,
        /// Supply document (JSON), checked against the task period.
        #[arg(long)]
        supply: Option<PathBuf>,
        /// Human-readable output instead of JSON.
        #[arg(long)]
        pretty: bool,
    },
    /// Build the chain and compute the long-run deadline miss rate.
    Analyze {
        #[command(flatten)]
        scenario: Scenario,
        /// Write the result JSON to this file.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Print the result JSON instead of the summary line.
        #[arg(long)]
        json: bool,
        /// Export the chain in Graphviz DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Export the chain (states, initial distribution, transitions) as JSON.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Solver::Auto)]
        solver: Solver,
    },
    /// Exact distribution of the miss fraction among the first n jobs.
    Enumerate {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, short)]
        n: u64,
        #[arg(long, value_enum, default_value_t = Mode::Auto)]
        mode: Mode,
        /// Largest number of realizations enumerated directly.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        budget: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Monte Carlo simulation of a concrete supply.
    Simulate {
        #[command(flatten)]
        scenario: Scenario,
        /// Number of jobs.
        #[arg(long, short, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replications: u32,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        pretty: bool,
    },
    /// Analyse a scenario over a list of parameter values; writes CSV.
    Sweep {
        /// Sweep document (JSON).
        spec: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Record build and solve wall time per row.
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Args)]
struct Scenario {
    /// Task document (JSON).
    #[arg(long)]
    task: PathBuf,
    /// Supply document (JSON).
    #[arg(long)]
    supply: PathBuf,
    /// In bounds mode, reduce the backlog of hitting jobs by the lower
    /// bound's period supply.
    #[arg(long)]
    conservative_backlog: bool,
    /// State budget (default: $DMRKIT_MAX_STATES or 1000000).
    #[arg(long)]
    max_states: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Auto,
    Exact,
    Float,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Auto,
    Direct,
    Dp,
}

enum Outcome {
    Ok,
    NotIrreducible,
    Invalid,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotIrreducible) => ExitCode::from(2),
        Ok(Outcome::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

impl Scenario {
    fn load(&self) -> Result<(dmr_kit::model::TaskSpec, dmr_kit::supply::SupplyModel)> {
        let task = io::load_task(&self.task)?;
        let supply = io::load_supply(&self.supply, &task.period)?;
        Ok((task, supply))
    }

    fn options(&self) -> Result<BuildOptions> {
        let max_states = match self.max_states {
            Some(n) => n,
            None => match std::env::var(MAX_STATES_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    Error::InvalidSweep(format!("{MAX_STATES_ENV}={v} is not a state count"))
                })?,
                Err(_) => DEFAULT_MAX_STATES,
            },
        };
        Ok(BuildOptions {
            max_states,
            conservative_backlog: self.conservative_backlog,
            ..BuildOptions::default()
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Validate {
            task,
            supply,
            pretty,
        } => validate(&task, supply.as_deref(), pretty),
        Command::Analyze {
            scenario,
            output,
            json,
            dot,
            dump,
            solver,
        } => {
            let (task, supply) = scenario.load()?;
            let chain = build_chain(&task, &supply, &scenario.options()?)?;
            if let Some(path) = &dot {
                write_text(path, &chain.to_dot())?;
            }
            if let Some(path) = &dump {
                write_text(path, &serde_json::to_string_pretty(&chain.to_dump())?)?;
            }
            let solver = match solver {
                Solver::Auto => SolverChoice::Auto,
                Solver::Exact => SolverChoice::Exact,
                Solver::Float => SolverChoice::Float,
            };
            let result = compute_dmr_with(&chain, solver)?;
            let text = serde_json::to_string_pretty(&result.to_json())?;
            if let Some(path) = &output {
                write_text(path, &text)?;
            }
            if json {
                println!("{text}");
            } else {
                println!("{}", result.summary());
                for line in &result.diagnostics {
                    eprintln!("{line}");
                }
            }
            Ok(if result.irreducible {
                Outcome::Ok
            } else {
                Outcome::NotIrreducible
            })
        }
        Command::Enumerate {
            scenario,
            n,
            mode,
            budget,
            output,
            pretty,
        } => {
            let (task, supply) = scenario.load()?;
            let mode = match mode {
                Mode::Auto => EnumerationMode::Auto,
                Mode::Direct => EnumerationMode::Direct,
                Mode::Dp => EnumerationMode::ChainDp,
            };
            let dist = enumerate_dmr_n(&task, &supply, n, mode, budget, &scenario.options()?)?;
            if let Some(path) = &output {
                dist.write_csv(create(path)?)?;
            }
            if pretty {
                println!("DMR_{} distribution:", dist.n);
                for (v, p) in &dist.points {
                    println!("  P(DMR_{} = {v}) = {p}", dist.n);
                }
                println!("  mean = {}", dist.mean());
            } else if output.is_none() {
                dist.write_csv(std::io::stdout().lock())?;
            }
            Ok(Outcome::Ok)
        }
        Command::Simulate {
            scenario,
            n,
            seed,
            replications,
            output,
            pretty,
        } => {
            let (task, supply) = scenario.load()?;
            let report = monte_carlo_replicated(&task, &supply, n, seed, replications)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(path) = &output {
                write_text(path, &text)?;
            }
            if pretty {
                println!(
                    "{} of {} jobs missed (empirical DMR {:.6}), seed {}",
                    report.misses, report.n_jobs, report.empirical_dmr, report.seed
                );
            } else if output.is_none() {
                println!("{text}");
            }
            Ok(Outcome::Ok)
        }
        Command::Sweep {
            spec,
            output,
            timing,
        } => {
            let sweep = Sweep::load(&spec)?;
            let rows = sweep::run_sweep(&sweep);
            for row in &rows {
                if let Err(e) = &row.status {
                    eprintln!("{}: {e}", row.axis_value);
                }
            }
            match &output {
                Some(path) => {
                    let mut w = create(path)?;
                    sweep::write_csv(&rows, timing, &mut w)?;
                    w.flush().map_err(|source| Error::Io {
                        path: path.clone(),
                        source,
                    })?;
                }
                None => sweep::write_csv(&rows, timing, std::io::stdout().lock())?,
            }
            Ok(Outcome::Ok)
        }
    }
}

fn validate(task_path: &Path, supply_path: Option<&Path>, pretty: bool) -> Result<Outcome> {
    let doc = io::parse_task_doc(&io::read_file(task_path)?)?;
    let task = doc.to_task_unchecked()?;
    let report = validate_task(&task);
    let mut supply_error = None;
    if let (Some(path), true) = (supply_path, report.is_valid()) {
        if let Err(e) = io::load_supply(path, &task.period) {
            supply_error = Some(e.to_string());
        }
    }
    let valid = report.is_valid() && supply_error.is_none();
    if pretty {
        if valid {
            println!("valid");
        } else {
            for v in &report.violations {
                println!("- {v}");
            }
            if let Some(e) = &supply_error {
                println!("- supply: {e}");
            }
        }
    } else {
        let out = serde_json::json!({
            "schema": SCHEMA,
            "valid": valid,
            "violations": report.violations,
            "messages": report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "supply_error": supply_error,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    }
    Ok(if valid { Outcome::Ok } else { Outcome::Invalid })
}
