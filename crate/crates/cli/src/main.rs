use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use muskat_cli::{oracle_check, parse_config, run, run_probe, Preset};

/// Two-phase Muskat flow simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulation described by a config file.
    Run { config: PathBuf },
    /// Run one of the built-in figure presets.
    Preset {
        #[arg(value_parser = ["fig1", "fig2", "fig3"])]
        name: String,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a diagnostic probe on the initial state of a config.
    Probe { name: String, config: PathBuf },
    /// Compare fast paths against the brute-force oracles.
    OracleCheck {
        #[arg(long, default_value_t = 16)]
        max_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &PathBuf) -> Result<muskat_cli::SimConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing {}", path.display()))
}

fn report(summary: &muskat_cli::RunSummary) {
    println!(
        "{} steps, stationary: {}, final shape: {:?} (residual {:.3e}, contact angle {})",
        summary.steps,
        summary.stationary,
        summary.shape.class,
        summary.shape.residual,
        summary
            .shape
            .contact_angle
            .map_or("n/a".to_string(), |a| format!("{a:.1} deg"))
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("MUSKAT_THREADS") {
        match v.parse::<usize>() {
            Ok(n) => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("thread pool: {e}");
                }
            }
            Err(_) => log::warn!("ignoring MUSKAT_THREADS={v}: not a number"),
        }
    }
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config } => {
            let cfg = load(&config)?;
            report(&run(&cfg)?);
        }
        Cmd::Preset {
            name,
            nx,
            steps,
            out,
        } => {
            let mut cfg = name.parse::<Preset>()?.config();
            if let Some(n) = nx {
                cfg.nx = n;
            }
            if let Some(s) = steps {
                cfg.n_steps = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            report(&run(&cfg)?);
        }
        Cmd::Probe { name, config } => {
            let cfg = load(&config)?;
            let recs = run_probe(&name, &cfg)?;
            let mut ok = true;
            for r in &recs {
                println!("{}", r.to_json_line());
                ok &= r.pass != Some(false);
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::OracleCheck { max_size, seed } => {
            let mut ok = true;
            for c in oracle_check(max_size, seed)? {
                println!(
                    "{} {:<36} instances={:<4} worst={:.3e} tol={:.0e}",
                    if c.pass() { "PASS" } else { "FAIL" },
                    c.name,
                    c.instances,
                    c.worst,
                    c.tolerance
                );
                ok &= c.pass();
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
