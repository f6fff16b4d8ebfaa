//! `acx`: one experiment per invocation, results as CSV or JSON lines.

mod commands;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use acx::config::{Config, Format};
use acx::AcxError;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "acx", version, about = "Experiments on almost complex 4-manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid resolution per axis.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true, value_parser = ["analytic", "grid"])]
    jets: Option<String>,
    /// The constant A of log|z| + A|z|.
    #[arg(long = "A", global = true, allow_negative_numbers = true)]
    a: Option<f64>,
    /// Comma-separated k values.
    #[arg(long = "k-list", global = true)]
    k_list: Option<String>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Residuals of the three first-order operator identities.
    Identities,
    /// Integrability of J from the torsion bracket.
    Integrability,
    /// The vector field T_J, against the closed form for J_a.
    Tj,
    /// Mass of (i ddbar L_k)^2 on B_k.
    Pointmass,
    /// Weak wedge pairing against the smooth cross density.
    Wedge,
    /// Monge-Ampere mass through a regularization schedule.
    Mameasure,
    /// Richberg smoothing of a kinked psh function.
    Smooth,
    /// Manufactured Dirichlet problems under refinement.
    Dirichlet,
    /// Comparison-principle suite.
    Compare,
    /// W^{1,2} truncation and scaling diagnostics.
    Sobolev,
}

fn config(cli: &Cli) -> acx::Result<Config> {
    let name = commands::name(cli.command);
    let keys = commands::keys(cli.command);
    let mut cfg = match &cli.config {
        Some(path) => Config::parse(name, keys, &fs::read_to_string(path)?)?,
        None => Config::new(name, keys),
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(n) = cli.grid {
        cfg.set("resolution", &n.to_string())?;
    }
    if let Some(j) = &cli.jets {
        cfg.set("jets", j)?;
    }
    if let Some(a) = cli.a {
        cfg.set("A", &a.to_string())?;
    }
    if let Some(k) = &cli.k_list {
        cfg.set("k_list", k)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| AcxError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn usage_error(e: &AcxError) -> bool {
    matches!(e, AcxError::Config(_) | AcxError::Parse(_) | AcxError::InvalidBox(_) | AcxError::Io(_))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("acx: {e}");
            return ExitCode::from(1);
        }
    };
    let format: Format = cli.format.parse().expect("validated by clap");
    let table = match commands::run(cli.command, &mut cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("acx {}: {e}", cfg.command());
            return ExitCode::from(if usage_error(&e) { 1 } else { 2 });
        }
    };
    let text = table.to_string(&cfg, format);
    let written = match &cli.out {
        Some(path) => fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("acx: cannot write output: {e}");
        return ExitCode::from(1);
    }
    if commands::passed(&table) {
        ExitCode::SUCCESS
    } else {
        for (k, v) in &table.certificates {
            if matches!(v, acx::config::Cell::Bool(false)) {
                eprintln!("acx {}: certificate {k} failed", cfg.command());
            }
        }
        ExitCode::from(2)
    }
}
