use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chemostokes::config::{RunConfig, Scenario};
use chemostokes::monitor::{read_trace_csv, validate_trace};
use chemostokes::report::KvReport;
use chemostokes::scenario::run_scenario;
use chemostokes::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chemostokes", version, about = "Chemotaxis-Stokes laboratory: runs, certificates, constants, audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Override `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate K2, K3, C_poincare, lambda1 and Ku for the config's grid.
    EstimateConstants {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `constants.inflation`.
        #[arg(long)]
        inflation: Option<f64>,
    },
    /// Validate and summarize the artifacts of a finished run.
    Report { run_dir: PathBuf },
}

fn load(config: &Path, out: Option<PathBuf>) -> chemostokes::Result<RunConfig> {
    let mut cfg = RunConfig::from_file(config)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn run(cfg: &RunConfig) -> chemostokes::Result<()> {
    let outcome = run_scenario(cfg)?;
    print!("{}", outcome.report.render());
    println!("# artifacts in {}", outcome.output_dir.display());
    Ok(())
}

fn trace_files(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let direct = dir.join("trace.csv");
    if direct.is_file() {
        found.push(direct);
    }
    if let Ok(entries) = std::fs::read_dir(dir) {
        let mut subs: Vec<PathBuf> = entries.flatten().map(|e| e.path().join("trace.csv")).filter(|p| p.is_file()).collect();
        subs.sort();
        found.extend(subs);
    }
    found
}

fn report(dir: &Path) -> chemostokes::Result<()> {
    let rep_path = dir.join("report.txt");
    let traces = trace_files(dir);
    if !rep_path.is_file() && traces.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no report.txt or trace.csv", dir.display())));
    }
    if rep_path.is_file() {
        print!("{}", KvReport::read(&rep_path)?.render());
    }
    for path in traces {
        let trace = read_trace_csv(&path)?;
        validate_trace(&trace, 1e-8)?;
        let (first, last) = match (trace.first(), trace.last()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                println!("{}: empty trace", path.display());
                continue;
            }
        };
        let worst = |f: fn(&chemostokes::monitor::TraceRecord) -> f64| {
            trace.iter().map(f).filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max)
        };
        println!("{}: {} records, t = {} .. {}", path.display(), trace.len(), first.t, last.t);
        println!("  mass drift      {:e}", (last.mass_n - first.mass_n).abs() / first.mass_n.abs().max(1e-300));
        println!("  F_mu            {:e} -> {:e}", first.f_mu, last.f_mu);
        println!("  |n - mean|_inf  {:e}", last.linf_n_dev);
        println!("  |grad c/c|_inf {:e}", last.linf_gradc_over_c);
        println!("  |u|_inf         {:e}", last.linf_u);
        println!("  max residuals   l2 {:e}  z4 {:e}  energy {:e}  zbound {:e}",
            worst(|r| r.residual_l2), worst(|r| r.residual_z4), worst(|r| r.residual_energy), worst(|r| r.residual_zbound));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => load(&config, out).and_then(|cfg| run(&cfg)),
        Command::EstimateConstants { config, out, inflation } => load(&config, out).and_then(|mut cfg| {
            cfg.scenario = Scenario::Constants;
            if let Some(f) = inflation {
                cfg.constants.inflation = f;
            }
            run(&cfg)
        }),
        Command::Report { run_dir } => report(&run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
