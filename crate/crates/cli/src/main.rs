use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use z2sim::evolution::{error_bound, presets};
use z2sim::Lattice;
use z2sim_cli::config::{RunArgs, RunConfig};
use z2sim_cli::{exit_code, run};

/// Adiabatic state-vector simulation of Z2 lattice gauge theory on a torus.
#[derive(Parser)]
#[command(name = "z2sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep, sector scan, benchmark, phase estimate or self-check.
    Run(Box<RunArgs>),
    /// List the built-in presets with their error budgets.
    Presets,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("Z2SIM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("Z2SIM_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn list_presets() -> anyhow::Result<()> {
    println!(
        "{:<14} {:>2} {:>2} {:>6} {:>6} {:>5} {:>5} {:>5} {:>11}",
        "name", "d", "L", "g_f", "g_s", "t_s", "n", "kind", "budget"
    );
    for p in presets() {
        let lat = Lattice::build(p.dim, p.size)?;
        let s = p.schedule;
        println!(
            "{:<14} {:>2} {:>2} {:>6} {:>6} {:>5} {:>5} {:>5} {:>11.3e}",
            p.name,
            p.dim,
            p.size,
            s.g_final,
            s.g_step,
            s.t_step,
            s.substeps,
            serde_json::to_value(s.kind)?.as_str().unwrap_or("?"),
            error_bound(&s, &lat).leading
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Presets => list_presets().map(|()| true),
        Command::Run(args) => {
            let cfg = RunConfig::resolve(&args)?;
            run::execute(&cfg).map(|o| o.success)
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
