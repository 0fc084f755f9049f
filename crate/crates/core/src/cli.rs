//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 usage error,
//! 3 infeasible network, 4 verification failure.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_trial_seed, NetworkConfig, Seed};
use crate::dof::{self, relay_sweep};
use crate::error::Error;
use crate::protocol::{run_end_to_end, SimReport};
use crate::rate::{self, snr_grid, RateConfig, RateResult};
use crate::scheduler::Scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

/// Acceptance thresholds applied by `verify`.
pub const VERIFY_SYMBOL_TOL: f64 = 1e-8;
pub const VERIFY_RESIDUAL_TOL: f64 = 1e-9;
pub const VERIFY_SI_TOL: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "stpnc", version, about = "Space-time physical-layer network coding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file with default values for any flag; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write results here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[arg(long, global = true, env = "STPNC_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one noiseless or noisy trial of a scenario.
    Simulate(NetArgs),
    /// Closed-form sum-DoF against the number of single-antenna relays.
    DofSweep {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        l_max: Option<usize>,
    },
    /// Ergodic sum rate of the two-pair interference channel against TDMA.
    RateSweep {
        /// dB grid as start:stop:step.
        #[arg(long)]
        snr: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Check every protocol invariant over many seeds.
    Verify {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(Args, Debug, Default)]
struct NetArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioKind>,
    /// User count for case1 / case2 (alias of --k1 / --k2).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    /// Antenna count of each relay, comma separated.
    #[arg(long, alias = "relays", value_delimiter = ',')]
    antennas: Option<Vec<usize>>,
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    noise_var: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Twic,
    Twxc,
    Case1,
    Case2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Values a config file may provide; names match the long flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    output: Option<PathBuf>,
    format: Option<Format>,
    jobs: Option<usize>,
    seed: Option<u64>,
    scenario: Option<ScenarioKind>,
    k: Option<usize>,
    k1: Option<usize>,
    k2: Option<usize>,
    #[serde(alias = "relays")]
    antennas: Option<Vec<usize>>,
    power: Option<f64>,
    noise_var: Option<f64>,
    seeds: Option<usize>,
    trials: Option<usize>,
    snr: Option<String>,
    l_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandSpec {
    Simulate { scenario: Scenario, net: NetworkConfig, seed: u64 },
    DofSweep { k: usize, l_max: usize },
    RateSweep { rate: RateConfig },
    Verify { scenario: Scenario, net: NetworkConfig, seed: u64, seeds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: CommandSpec,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub jobs: Option<usize>,
}

/// Rejected command line. `code` is 0 for `--help` and `--version`.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError {
    pub message: String,
    pub code: i32,
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> UsageError {
    UsageError { message: message.into(), code: EXIT_USAGE }
}

fn load_config(path: &Path) -> Result<FileConfig, UsageError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("--config {}: {e}", path.display())))
}

fn parse_snr(text: &str) -> Result<Vec<f64>, UsageError> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    match (parts.len(), nums) {
        (1, Ok(v)) => Ok(v),
        (3, Ok(v)) => snr_grid(v[0], v[1], v[2]).map_err(|e| usage(format!("--snr: {e}"))),
        _ => Err(usage(format!("--snr: expected start:stop:step in dB, got {text:?}"))),
    }
}

/// Smallest single relay that makes a scenario feasible.
fn default_antennas(scenario: Scenario) -> Vec<usize> {
    match scenario {
        Scenario::Twic | Scenario::Twxc => vec![2],
        Scenario::Case1 { k1 } => {
            let need = ((k1 - 1) * (k1 - 2) + 1) as u64;
            let m = need.isqrt();
            vec![if m * m == need { m as usize } else { m as usize + 1 }]
        }
        Scenario::Case2 { k2 } => vec![k2 - 2],
    }
}

fn build_net(net: &NetArgs, file: &FileConfig, noiseless: bool) -> Result<(Scenario, NetworkConfig), UsageError> {
    let kind = net.scenario.or(file.scenario).ok_or_else(|| usage("--scenario is required"))?;
    let k1 = net.k1.or(net.k).or(file.k1).or(file.k);
    let k2 = net.k2.or(net.k).or(file.k2).or(file.k);
    let scenario = match kind {
        ScenarioKind::Twic => Scenario::Twic,
        ScenarioKind::Twxc => Scenario::Twxc,
        ScenarioKind::Case1 => Scenario::Case1 { k1: k1.ok_or_else(|| usage("--k1 is required for case1"))? },
        ScenarioKind::Case2 => Scenario::Case2 { k2: k2.ok_or_else(|| usage("--k2 is required for case2"))? },
    };
    if let Err(e) = scenario.schedule() {
        return Err(usage(format!("--scenario {}: {e}", scenario.name())));
    }
    let antennas = net.antennas.clone().or_else(|| file.antennas.clone()).unwrap_or_else(|| default_antennas(scenario));
    let power = net.power.or(file.power).unwrap_or(1.0);
    let noise_var = if noiseless { 0.0 } else { net.noise_var.or(file.noise_var).unwrap_or(0.0) };
    let cfg = NetworkConfig::new(scenario.users(), antennas, power, noise_var).map_err(|e| usage(format!("--antennas: {e}")))?;
    Ok((scenario, cfg))
}

/// Parses a full argument vector (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<RunSpec, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let code = match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_USAGE,
        };
        UsageError { message: e.render().to_string(), code }
    })?;
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let (command, default_format) = match &cli.command {
        Command::Simulate(net) => {
            let (scenario, net) = build_net(net, &file, false)?;
            (CommandSpec::Simulate { scenario, net, seed }, Format::Json)
        }
        Command::Verify { net, seeds } => {
            let (scenario, net) = build_net(net, &file, true)?;
            let seeds = seeds.or(file.seeds).unwrap_or(100);
            if seeds == 0 {
                return Err(usage("--seeds must be at least 1"));
            }
            (CommandSpec::Verify { scenario, net, seed, seeds }, Format::Json)
        }
        Command::DofSweep { k, l_max } => {
            let k = k.or(file.k).unwrap_or(6);
            if k < 3 {
                return Err(usage(format!("--k: need at least 3 users, got {k}")));
            }
            (CommandSpec::DofSweep { k, l_max: l_max.or(file.l_max).unwrap_or(30) }, Format::Csv)
        }
        Command::RateSweep { snr, trials } => {
            let snr_db = parse_snr(snr.as_deref().or(file.snr.as_deref()).unwrap_or("0:30:1"))?;
            let trials = trials.or(file.trials).unwrap_or(10_000);
            let rate = RateConfig { snr_db, trials, seed };
            rate.validate().map_err(|e| usage(format!("--trials/--snr: {e}")))?;
            (CommandSpec::RateSweep { rate }, Format::Csv)
        }
    };
    let jobs = cli.jobs.or(file.jobs);
    if jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(RunSpec {
        command,
        output: cli.output.or(file.output),
        format: cli.format.or(file.format).unwrap_or(default_format),
        jobs,
    })
}

#[derive(Debug, Serialize)]
struct RecoveredSymbol {
    symbol: String,
    re: f64,
    im: f64,
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    scenario: String,
    users: usize,
    relay_antennas: Vec<usize>,
    power: f64,
    noise_var: f64,
    seed: u64,
    relay_mode: crate::protocol::RelayMode,
    slots_used: usize,
    symbols_delivered: usize,
    achieved_dof: String,
    max_symbol_error: f64,
    constraint_residual: f64,
    alignment_residual: f64,
    neutralization_residual: f64,
    effective_ranks: Vec<usize>,
    recovered: Vec<RecoveredSymbol>,
}

#[derive(Debug, Serialize)]
pub struct VerifySummary {
    pub scenario: String,
    pub users: usize,
    pub relay_antennas: Vec<usize>,
    pub seed: u64,
    pub seeds: usize,
    pub passed: bool,
    pub failures: Vec<String>,
    pub expected_dof: String,
    pub expected_rank: usize,
    pub min_rank: usize,
    pub max_symbol_error: f64,
    pub max_constraint_residual: f64,
    pub max_alignment_residual: f64,
    pub max_neutralization_residual: f64,
    pub max_self_interference_residual: f64,
    pub max_ledger_residual: f64,
    pub deterministic: bool,
}

#[derive(Debug, Serialize)]
struct DofRowOutput {
    relays: usize,
    term_in: String,
    term_in_ia: String,
    term_ia: String,
    gof: String,
    value: String,
    value_decimal: f64,
    optimal: bool,
}

#[derive(Debug, Serialize)]
struct DofOutput {
    k: usize,
    rows: Vec<DofRowOutput>,
}

#[derive(Debug, Serialize)]
struct RateOutput {
    trials: usize,
    seed: u64,
    #[serde(flatten)]
    result: RateResult,
}

/// Checks one noiseless report against every invariant; returns the failures.
pub fn check_report(r: &SimReport) -> Vec<String> {
    let mut out = Vec::new();
    let expected_rank = r.scenario.expected_rank();
    if r.max_symbol_error >= VERIFY_SYMBOL_TOL {
        out.push(format!("symbol error {:.3e}", r.max_symbol_error));
    }
    if let Some((u, k)) = r.effective_ranks.iter().find(|(_, &k)| k != expected_rank) {
        out.push(format!("user {u} rank {k}, expected {expected_rank}"));
    }
    if r.achieved_dof != r.scenario.expected_dof() {
        out.push(format!("DoF {}, expected {}", r.achieved_dof, r.scenario.expected_dof()));
    }
    for (name, value, tol) in [
        ("constraint residual", r.constraint_residual, VERIFY_RESIDUAL_TOL),
        ("alignment residual", r.alignment_residual, VERIFY_RESIDUAL_TOL),
        ("neutralization residual", r.neutralization_residual, VERIFY_RESIDUAL_TOL),
        ("ledger residual", r.ledger_residual, VERIFY_RESIDUAL_TOL),
        ("self-interference residual", r.self_interference_residual, VERIFY_SI_TOL),
    ] {
        if !(value < tol) {
            out.push(format!("{name} {value:.3e}"));
        }
    }
    out
}

/// Runs `seeds` noiseless trials and aggregates the invariant checks.
pub fn verify(scenario: Scenario, net: &NetworkConfig, seed: u64, seeds: usize) -> Result<VerifySummary, Error> {
    let reports: Vec<Result<SimReport, Error>> = (0..seeds as u64)
        .into_par_iter()
        .map(|i| run_end_to_end(scenario, net, derive_trial_seed(Seed(seed), i)))
        .collect();
    let mut summary = VerifySummary {
        scenario: scenario.to_string(),
        users: net.users,
        relay_antennas: net.relay_antennas.clone(),
        seed,
        seeds,
        passed: true,
        failures: Vec::new(),
        expected_dof: scenario.expected_dof().to_string(),
        expected_rank: scenario.expected_rank(),
        min_rank: usize::MAX,
        max_symbol_error: 0.0,
        max_constraint_residual: 0.0,
        max_alignment_residual: 0.0,
        max_neutralization_residual: 0.0,
        max_self_interference_residual: 0.0,
        max_ledger_residual: 0.0,
        deterministic: true,
    };
    for (i, report) in reports.iter().enumerate() {
        let r = match report {
            Ok(r) => r,
            Err(e @ (Error::AntennaDeficit { .. } | Error::SynthesisFailed(_))) => return Err(e.clone()),
            Err(e) => {
                summary.failures.push(format!("trial {i}: {e}"));
                continue;
            }
        };
        summary.min_rank = summary.min_rank.min(r.effective_ranks.values().copied().min().unwrap_or(0));
        summary.max_symbol_error = summary.max_symbol_error.max(r.max_symbol_error);
        summary.max_constraint_residual = summary.max_constraint_residual.max(r.constraint_residual);
        summary.max_alignment_residual = summary.max_alignment_residual.max(r.alignment_residual);
        summary.max_neutralization_residual = summary.max_neutralization_residual.max(r.neutralization_residual);
        summary.max_self_interference_residual =
            summary.max_self_interference_residual.max(r.self_interference_residual);
        summary.max_ledger_residual = summary.max_ledger_residual.max(r.ledger_residual);
        summary.failures.extend(check_report(r).into_iter().map(|f| format!("trial {i}: {f}")));
    }
    if summary.min_rank == usize::MAX {
        summary.min_rank = 0;
    }
    let again = run_end_to_end(scenario, net, derive_trial_seed(Seed(seed), 0));
    summary.deterministic = match (&again, &reports[0]) {
        (Ok(a), Ok(b)) => a == b,
        (Err(a), Err(b)) => a == b,
        _ => false,
    };
    if !summary.deterministic {
        summary.failures.push("trial 0 is not reproducible".into());
    }
    summary.passed = summary.failures.is_empty();
    Ok(summary)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn simulate_output(r: &SimReport, net: &NetworkConfig, seed: u64) -> SimulateOutput {
    SimulateOutput {
        scenario: r.scenario.to_string(),
        users: net.users,
        relay_antennas: net.relay_antennas.clone(),
        power: net.power,
        noise_var: net.noise_var,
        seed,
        relay_mode: r.relay_mode,
        slots_used: r.slots_used,
        symbols_delivered: r.symbols_delivered,
        achieved_dof: r.achieved_dof.to_string(),
        max_symbol_error: r.max_symbol_error,
        constraint_residual: r.constraint_residual,
        alignment_residual: r.alignment_residual,
        neutralization_residual: r.neutralization_residual,
        effective_ranks: r.effective_ranks.values().copied().collect(),
        recovered: r
            .recovered
            .iter()
            .map(|(s, v)| RecoveredSymbol { symbol: s.to_string(), re: v.re, im: v.im })
            .collect(),
    }
}

const SIMULATE_CSV_HEADER: &str =
    "scenario,seed,slots_used,symbols_delivered,achieved_dof,max_symbol_error,constraint_residual,alignment_residual,neutralization_residual";

const VERIFY_CSV_HEADER: &str = "scenario,seeds,passed,min_rank,max_symbol_error,max_constraint_residual,max_alignment_residual,max_neutralization_residual";

fn exit_code(e: &Error) -> i32 {
    if e.is_infeasible() {
        EXIT_INFEASIBLE
    } else {
        match e {
            Error::InvalidConfig(_) | Error::InvalidUserCount { .. } => EXIT_USAGE,
            _ => EXIT_ERROR,
        }
    }
}

/// Body of the output plus the exit code it implies.
fn execute(spec: &RunSpec) -> Result<(String, i32), Error> {
    match &spec.command {
        CommandSpec::Simulate { scenario, net, seed } => {
            let r = run_end_to_end(*scenario, net, Seed(*seed))?;
            let body = match spec.format {
                Format::Json => to_json(&simulate_output(&r, net, *seed)),
                Format::Csv => format!(
                    "{SIMULATE_CSV_HEADER}\n{},{},{},{},{},{:e},{:e},{:e},{:e}\n",
                    r.scenario,
                    seed,
                    r.slots_used,
                    r.symbols_delivered,
                    r.achieved_dof,
                    r.max_symbol_error,
                    r.constraint_residual,
                    r.alignment_residual,
                    r.neutralization_residual
                ),
            };
            Ok((body, EXIT_OK))
        }
        CommandSpec::Verify { scenario, net, seed, seeds } => {
            let s = verify(*scenario, net, *seed, *seeds)?;
            let code = if s.passed { EXIT_OK } else { EXIT_VERIFY_FAILED };
            let body = match spec.format {
                Format::Json => to_json(&s),
                Format::Csv => format!(
                    "{VERIFY_CSV_HEADER}\n{},{},{},{},{:e},{:e},{:e},{:e}\n",
                    s.scenario,
                    s.seeds,
                    s.passed,
                    s.min_rank,
                    s.max_symbol_error,
                    s.max_constraint_residual,
                    s.max_alignment_residual,
                    s.max_neutralization_residual
                ),
            };
            Ok((body, code))
        }
        CommandSpec::DofSweep { k, l_max } => {
            let rows = relay_sweep(*k, *l_max)?;
            let body = match spec.format {
                Format::Csv => dof::sweep_to_csv(&rows),
                Format::Json => to_json(&DofOutput {
                    k: *k,
                    rows: rows
                        .iter()
                        .map(|r| {
                            let d = &r.result;
                            DofRowOutput {
                                relays: r.relays,
                                term_in: d.term_in.to_string(),
                                term_in_ia: d.term_in_ia.to_string(),
                                term_ia: d.term_ia.to_string(),
                                gof: d.gof.to_string(),
                                value: d.value.to_string(),
                                value_decimal: *d.value.numer() as f64 / *d.value.denom() as f64,
                                optimal: d.optimal,
                            }
                        })
                        .collect(),
                }),
            };
            Ok((body, EXIT_OK))
        }
        CommandSpec::RateSweep { rate } => {
            let result = rate::snr_sweep(rate)?;
            match result.crossover_db {
                Some(x) => eprintln!("crossover_db={x:.3}"),
                None => eprintln!("crossover_db=none"),
            }
            let body = match spec.format {
                Format::Csv => rate::rates_to_csv(&result),
                Format::Json => to_json(&RateOutput { trials: rate.trials, seed: rate.seed, result }),
            };
            Ok((body, EXIT_OK))
        }
    }
}

fn emit(spec: &RunSpec, body: &str) -> std::io::Result<()> {
    match &spec.output {
        Some(path) => fs::write(path, body),
        None => std::io::stdout().lock().write_all(body.as_bytes()),
    }
}

/// Executes a parsed command and returns the process exit code.
pub fn run(spec: &RunSpec) -> i32 {
    let outcome = match spec.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(spec)),
            Err(e) => {
                eprintln!("error: cannot start {n} worker threads: {e}");
                return EXIT_ERROR;
            }
        },
        None => execute(spec),
    };
    match outcome {
        Ok((body, code)) => {
            if let Err(e) = emit(spec, &body) {
                eprintln!("error: writing output: {e}");
                return EXIT_ERROR;
            }
            if code == EXIT_VERIFY_FAILED {
                eprintln!("verification failed");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point shared by the binary: parse, run, return the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_args(argv) {
        Ok(spec) => run(&spec),
        Err(e) => {
            if e.code == EXIT_OK {
                print!("{e}");
            } else {
                eprint!("{e}");
                if !e.message.ends_with('\n') {
                    eprintln!();
                }
            }
            e.code
        }
    }
}
