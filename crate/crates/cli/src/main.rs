use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};

use wemp::experiment::{run_experiment, ExperimentConfig, Preset};

/// Runs a multiscale parareal experiment and writes error tables,
/// convergence history, snapshots and a manifest.
#[derive(Debug, Parser)]
#[command(name = "wemp", version, group(ArgGroup::new("source").required(true).args(["config", "preset"])))]
struct Args {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Built-in experiment: exp1, exp2, exp3, zero-be or zero-cn.
    #[arg(long)]
    preset: Option<Preset>,

    /// Output directory (defaults to `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Parareal stopping tolerance.
    #[arg(long)]
    eps: Option<f64>,

    /// Maximal number of parareal iterations.
    #[arg(long)]
    kmax: Option<usize>,

    /// Worker threads for the fine sweep.
    #[arg(long)]
    threads: Option<usize>,

    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(args: &Args) -> wemp::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => p.config(),
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(eps) = args.eps {
        cfg.tolerance = eps;
    }
    if let Some(k) = args.kmax {
        cfg.max_iterations = Some(k);
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match resolve(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.print_config {
        match cfg.to_json() {
            Ok(json) => println!("{json}"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        }
        return ExitCode::SUCCESS;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    match run_experiment(&cfg, &out) {
        Ok(res) => {
            let report = &res.parareal.report;
            println!(
                "{}: dim {} (dropped {}), {} parareal iterations, converged: {}",
                cfg.name,
                res.space.dim(),
                res.space.dropped().len(),
                report.final_k(),
                report.converged
            );
            for r in &report.iterations {
                println!("  k={} err={:e} fine {:.1} ms coarse {:.1} ms", r.k, r.err, r.wall_fine_ms, r.wall_coarse_ms);
            }
            println!("outputs in {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e} (see {})", out.join("manifest.json").display());
            ExitCode::FAILURE
        }
    }
}
