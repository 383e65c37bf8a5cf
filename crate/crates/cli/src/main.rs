mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use monotone_spde::experiments::manifest;

use crate::commands::Outcome;
use crate::config::{RunConfig, DEFAULT_CONFIG};

const THREADS_ENV: &str = "MONOTONE_SPDE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "monotone-spde", version, about = "Simulate and audit stochastic evolution equations with monotone drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key=value configuration file; the built-in default is used when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (falls back to $MONOTONE_SPDE_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve one path and write it as CSV
    Simulate,
    /// Energy-identity residual under bridge refinement
    AuditIto,
    /// Max-increment modulus under bridge refinement
    AuditContinuity,
    /// Fenchel gaps of the drift selections along one path
    AuditFenchel,
    /// Moment constants across input scales
    Moments,
    /// Lipschitz ratios of the solution map
    Lipschitz,
    /// V-norm and A-energy across meshes
    Regularity,
    /// Long-time averages of one trajectory
    Invariant,
    /// Randomized property suite
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::AuditIto => "audit-ito",
            Command::AuditContinuity => "audit-continuity",
            Command::AuditFenchel => "audit-fenchel",
            Command::Moments => "moments",
            Command::Lipschitz => "lipschitz",
            Command::Regularity => "regularity",
            Command::Invariant => "invariant",
            Command::Selftest => "selftest",
        }
    }

    fn run(self, cfg: &RunConfig) -> monotone_spde::Result<Outcome> {
        match self {
            Command::Simulate => commands::simulate(cfg),
            Command::AuditIto => commands::audit_ito(cfg),
            Command::AuditContinuity => commands::audit_continuity(cfg),
            Command::AuditFenchel => commands::audit_fenchel(cfg),
            Command::Moments => commands::moments(cfg),
            Command::Lipschitz => commands::lipschitz(cfg),
            Command::Regularity => commands::regularity(cfg),
            Command::Invariant => commands::invariant(cfg),
            Command::Selftest => commands::selftest(cfg),
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("{THREADS_ENV} must be a thread count, got '{v}'")),
        Err(_) => Ok(None),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    RunConfig::from_text(&text, cli.seed).map_err(|e| e.to_string())
}

fn write_artifacts(out: &Path, command: Command, cfg: &RunConfig, outcome: &Outcome) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let stamp = format!("# config_sha256={hash} seed={} command={}\n", cfg.seed, command.name());
    let mut names = Vec::new();
    for (name, body) in &outcome.files {
        fs::write(out.join(name), format!("{stamp}{body}"))?;
        names.push(name.clone());
    }
    fs::write(out.join("checks.csv"), format!("{stamp}{}", outcome.checks_csv()))?;
    names.push("checks.csv".into());

    let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.pass()).map(|c| c.name.as_str()).collect();
    let mut entries = vec![
        ("command", command.name().to_string()),
        ("config_sha256", hash),
        ("seed", cfg.seed.to_string()),
        ("model", cfg.model.id()),
        ("path_streams", "datum stream 2i and noise stream 2i+1 of the master seed for path index i".to_string()),
        ("files", names.join(",")),
        ("status", if failed.is_empty() { "pass" } else { "fail" }.to_string()),
        ("failed_checks", failed.join(",")),
    ];
    let canonical = cfg.raw.canonical();
    let config_lines: Vec<(String, String)> = canonical
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (format!("config.{k}"), v.to_string()))
        .collect();
    entries.extend(config_lines.iter().map(|(k, v)| (k.as_str(), v.clone())));
    fs::write(out.join("manifest.txt"), manifest(&entries))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match thread_count(cli.threads) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("cannot configure {n} worker threads: {e}");
                return ExitCode::from(2);
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    }

    let outcome = match cli.command.run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{} failed: {e}", cli.command.name());
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_artifacts(&cli.out, cli.command, &cfg, &outcome) {
        eprintln!("cannot write artifacts to {}: {e}", cli.out.display());
        return ExitCode::from(1);
    }
    for c in &outcome.checks {
        println!("{} {} = {:.6e} (bound {:.3e})", if c.pass() { "PASS" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.pass()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("{}: all {} checks passed; artifacts in {}", cli.command.name(), outcome.checks.len(), cli.out.display());
        ExitCode::SUCCESS
    } else {
        eprintln!("{}: failed assertions: {}", cli.command.name(), failed.join(", "));
        ExitCode::from(1)
    }
}
