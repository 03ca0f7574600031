use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use commcheck::sim::{self, BandwidthModel, Grid, Scenario, Summary};

/// Simulate community-based app integrity checking among smart devices.
#[derive(Parser)]
#[command(name = "commcheck", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write events, metrics, summary and edge list here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter grid over a base scenario and emit one CSV row per point.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// CSV destination; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-retrieval overhead arithmetic.
    VerifyBandwidth {
        #[arg(long, default_value_t = 10)]
        peers: u64,
        #[arg(long, default_value_t = 224)]
        width: u64,
        #[arg(long, default_value_t = 10)]
        verifiers: u64,
    },
    /// Check a run directory against its digest and print its summary.
    Report { run_dir: PathBuf },
}

fn print_summary(out: &mut impl Write, s: &Summary) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    writeln!(out, "seed                {}", s.seed)?;
    writeln!(out, "epochs              {}", s.epochs)?;
    writeln!(out, "nodes / edges       {} / {}", s.final_nodes, s.final_edges)?;
    writeln!(out, "infections          {} (peak {})", s.final_infections, s.peak_infections)?;
    writeln!(out, "retrievals          {}", s.retrievals)?;
    writeln!(out, "  installed clean   {}", s.installed_clean)?;
    writeln!(out, "  installed tampered {}", s.installed_tampered)?;
    writeln!(out, "  store fallbacks   {}", s.store_fallbacks)?;
    writeln!(out, "  aborted           {}", s.aborted)?;
    writeln!(out, "false accusations   {}", s.false_accusations)?;
    writeln!(out, "tampered acceptance {:.4}", s.tampered_acceptance)?;
    writeln!(out, "final homophily     {}", opt(s.final_homophily))?;
    writeln!(out, "mean overhead       {:.1} bit", s.mean_overhead_bits)?;
    writeln!(out, "forgery rate        {} (bound {})", opt(s.forgery_rate), opt(s.forgery_bound))
}

fn execute(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Run { scenario, seed, out: dir } => {
            let mut s = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let result = sim::simulate(&s)?;
            if let Some(dir) = dir {
                sim::write_run(&dir, &result).with_context(|| format!("writing {}", dir.display()))?;
            }
            print_summary(&mut out, &result.metrics.summary())?;
            writeln!(out, "log digest          {}", result.log.digest())?;
        }
        Command::Sweep { scenario, grid, out: dest } => {
            let base = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let grid = Grid::load(&grid).with_context(|| format!("loading {}", grid.display()))?;
            let report = sim::sweep(&base, &grid)?;
            match dest {
                Some(path) => {
                    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    report.write_csv(BufWriter::new(f))?;
                }
                None => report.write_csv(&mut out)?,
            }
        }
        Command::VerifyBandwidth { peers, width, verifiers } => {
            let model = BandwidthModel { peers, verifiers, width_bits: width };
            writeln!(out, "{model}")?;
        }
        Command::Report { run_dir } => {
            let (log, metrics) = sim::load_run(&run_dir).with_context(|| format!("reading {}", run_dir.display()))?;
            print_summary(&mut out, &metrics.summary())?;
            writeln!(out, "log digest          {} ({} events, verified)", log.digest(), log.len())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
