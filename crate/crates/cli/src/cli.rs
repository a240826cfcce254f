//! Batch subcommands.
//!
//! Exit codes: 0 success, 1 unreadable input or unwritable output,
//! 2 invalid input or flags, 3 selection requested above the lattice cap.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pconj_core::{
    build_lattice, load_pvalues, report_bound, resolve_selection, simulate_coverage, simulate_selection_coverage,
    split_dataset, Alpha, CombinerKind, Error as CoreError, Format, ScenarioSpec, SelectionRule, LATTICE_CAP,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "pconj", version, about = "Lower confidence bounds on the number of false hypotheses")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Significance level, in (0, 1).
    #[arg(long, global = true, default_value = "0.05", value_parser = parse_alpha)]
    pub alpha: Alpha,
    #[arg(long, global = true, value_enum, default_value_t = CombinerArg::Fisher)]
    pub combiner: CombinerArg,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    /// Seed for `simulate` (overrides the spec file) and `split`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn parse_alpha(s: &str) -> Result<Alpha, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    Alpha::new(v).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CombinerArg {
    Fisher,
    Stouffer,
}

impl From<CombinerArg> for CombinerKind {
    fn from(c: CombinerArg) -> Self {
        match c {
            CombinerArg::Fisher => CombinerKind::Fisher,
            CombinerArg::Stouffer => CombinerKind::Stouffer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partial-conjunction curve and the [u_max, n] confidence interval.
    Bound {
        input: PathBuf,
        /// Defaults to the file extension.
        #[arg(long, value_enum)]
        input_format: Option<InputFormat>,
    },
    /// Lower bound for a post-hoc selected subset, from closed testing.
    Select {
        input: PathBuf,
        /// Comma-separated hypothesis ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long, value_enum)]
        input_format: Option<InputFormat>,
    },
    /// Monte Carlo coverage of the bounds for scenarios in a JSON file.
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomly set aside a fraction of record ids for exploration.
    Split {
        /// One id per line.
        ids: PathBuf,
        #[arg(long)]
        fraction: f64,
        /// Write exploration.txt and confirmation.txt here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Persist sessions as JSON snapshots in this directory.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Cap(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Cap(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io { .. } => CliError::Io(e.to_string()),
            CoreError::CapExceeded { .. } => CliError::Cap(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn input_format(path: &Path, explicit: Option<InputFormat>) -> Format {
    match explicit {
        Some(InputFormat::Csv) => Format::Csv,
        Some(InputFormat::Json) => Format::Json,
        None => Format::from_path(path),
    }
}

fn load(path: &Path, explicit: Option<InputFormat>) -> Result<pconj_core::PValueVector, CliError> {
    load_pvalues(path, input_format(path, explicit)).map_err(|e| match e {
        CoreError::Io { .. } => e.into(),
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// One entry of a simulation file: a scenario, optionally with a
/// post-hoc selection rule.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationEntry {
    scenario: ScenarioSpec,
    #[serde(default)]
    selection: Option<SelectionRule>,
}

/// A simulation file is a bare scenario, a `{scenario, selection}` entry,
/// or an array of either.
fn parse_simulation_file(text: &str) -> Result<Vec<SimulationEntry>, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let wrapped = item.get("scenario").is_some();
            let result = if wrapped {
                serde_path_to_error::deserialize::<_, SimulationEntry>(item)
            } else {
                serde_path_to_error::deserialize::<_, ScenarioSpec>(item).map(|scenario| SimulationEntry {
                    scenario,
                    selection: None,
                })
            };
            result.map_err(|e| {
                let path = e.path().to_string();
                format!("at [{i}].{path}: {}", e.inner())
            })
        })
        .collect()
}

#[derive(Serialize)]
#[serde(untagged)]
enum SimulationOutput {
    Curve(pconj_core::ScenarioReport),
    Selection(pconj_core::SelectionCoverageReport),
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    let g = &cli.global;
    let combiner: CombinerKind = g.combiner.into();
    match cli.command {
        Command::Bound { input, input_format } => {
            let v = load(&input, input_format)?;
            let report = report_bound(&v, &combiner, g.alpha);
            Ok(match g.format {
                OutputFormat::Json => to_json(&report),
                OutputFormat::Table => report.to_table(),
            })
        }
        Command::Select { input, ids, input_format } => {
            let v = load(&input, input_format)?;
            let selection = resolve_selection(&v, ids.iter().map(|s| s.trim()))?;
            if v.len() > LATTICE_CAP {
                return Err(CliError::Cap(format!(
                    "{} hypotheses exceeds the lattice limit of {LATTICE_CAP}; post-hoc selection is unavailable, use `pconj bound` for the full-set bound",
                    v.len()
                )));
            }
            let lattice = build_lattice(&v, g.alpha, combiner)?;
            let bound = lattice.selection_bound(&selection)?;
            Ok(match g.format {
                OutputFormat::Json => to_json(&bound),
                OutputFormat::Table => {
                    let mut out = String::new();
                    let _ = writeln!(out, "combiner: {combiner}   alpha: {}", g.alpha);
                    let _ = writeln!(out, "selection ({}): {}", bound.size, bound.selection.join(", "));
                    let _ = writeln!(out, "f_alpha = {}", bound.f_alpha);
                    match &bound.witness {
                        Some(w) => {
                            let _ = writeln!(out, "largest unrejected subset: {}", w.join(", "));
                        }
                        None => {
                            let _ = writeln!(out, "every hypothesis in the selection is rejected");
                        }
                    }
                    out
                }
            })
        }
        Command::Simulate { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| io_err(&spec, e))?;
            let entries =
                parse_simulation_file(&text).map_err(|m| CliError::Invalid(format!("{}: {m}", spec.display())))?;
            let mut reports = Vec::with_capacity(entries.len());
            for mut entry in entries {
                if let Some(seed) = g.seed {
                    entry.scenario.seed = seed;
                }
                reports.push(match entry.selection {
                    None => SimulationOutput::Curve(simulate_coverage(&entry.scenario)?),
                    Some(rule) => SimulationOutput::Selection(simulate_selection_coverage(&entry.scenario, rule)?),
                });
            }
            let rendered = match g.format {
                OutputFormat::Json if reports.len() == 1 => to_json(&reports[0]),
                OutputFormat::Json => to_json(&reports),
                OutputFormat::Table => reports
                    .iter()
                    .map(|r| match r {
                        SimulationOutput::Curve(r) => r.to_table(),
                        SimulationOutput::Selection(r) => r.to_table(),
                    })
                    .collect::<Vec<_>>()
                    .join("\n"),
            };
            match out {
                Some(path) => {
                    std::fs::write(&path, &rendered).map_err(|e| io_err(&path, e))?;
                    Ok(format!("wrote {}\n", path.display()))
                }
                None => Ok(rendered),
            }
        }
        Command::Split { ids, fraction, out_dir } => {
            let text = std::fs::read_to_string(&ids).map_err(|e| io_err(&ids, e))?;
            let list: Vec<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect();
            let plan = split_dataset(&list, fraction, g.seed.unwrap_or(0))?;
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                for (name, side) in [("exploration.txt", &plan.exploration_ids), ("confirmation.txt", &plan.confirmation_ids)] {
                    let path = dir.join(name);
                    let mut body = side.join("\n");
                    body.push('\n');
                    std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
                }
            }
            Ok(match g.format {
                OutputFormat::Json => to_json(&plan),
                OutputFormat::Table => {
                    let mut out = format!(
                        "exploration: {}   confirmation: {}   seed: {}\n",
                        plan.exploration_ids.len(),
                        plan.confirmation_ids.len(),
                        plan.seed
                    );
                    if out_dir.is_none() {
                        for id in &plan.exploration_ids {
                            let _ = writeln!(out, "E\t{id}");
                        }
                        for id in &plan.confirmation_ids {
                            let _ = writeln!(out, "C\t{id}");
                        }
                    }
                    out
                }
            })
        }
        Command::Serve { addr, snapshot_dir } => {
            let state = match snapshot_dir {
                Some(dir) => crate::service::AppState::with_snapshots(dir).map_err(|e| CliError::Io(e.to_string()))?,
                None => crate::service::AppState::in_memory(),
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            rt.block_on(crate::service::serve(addr, state))
                .map_err(|e| CliError::Io(e.to_string()))?;
            Ok(String::new())
        }
    }
}

pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
