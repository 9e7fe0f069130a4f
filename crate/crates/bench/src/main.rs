use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use mmfilter_bench::output::write_report;
use mmfilter_bench::spec::FilterKind;
use mmfilter_bench::{build_exp1, build_exp2, run_experiment, BenchError, ExperimentSpec, Result};

#[derive(Parser)]
#[command(name = "bench", version, about = "Monte-Carlo benchmarks for the robust MM Kalman filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Rotation tracking under contaminated noise.
    Exp1 {
        #[command(flatten)]
        opts: RunOpts,
        #[command(flatten)]
        scale: Scale,
        /// Particle count of the particle filter.
        #[arg(long)]
        particles: Option<usize>,
        /// Leave the particle filter out.
        #[arg(long)]
        no_pf: bool,
    },
    /// Vehicle on a circular road with an annulus constraint.
    Exp2 {
        #[command(flatten)]
        opts: RunOpts,
        #[command(flatten)]
        scale: Scale,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Print a built-in experiment as a JSON config.
    Config {
        #[arg(value_parser = ["exp1", "exp2"])]
        name: String,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Output directory.
    #[arg(long, env = "TFMM_BENCH_OUT", default_value = "bench-out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Scale {
    /// Number of Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Steps per run.
    #[arg(long)]
    steps: Option<usize>,
}

impl Scale {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(n) = self.runs {
            spec.n_runs = n;
        }
        if let Some(t) = self.steps {
            spec.steps = t;
        }
    }
}

fn load(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    ExperimentSpec::from_json(&text)
}

fn execute(mut spec: ExperimentSpec, opts: &RunOpts) -> Result<()> {
    if let Some(seed) = opts.seed {
        spec.base_seed = seed;
    }
    spec.validate()?;
    let report = run_experiment(&spec, opts.parallel)?;
    let dir = opts.out.join(&spec.name);
    write_report(&spec, &report, &dir)?;
    for f in &report.filters {
        let rmse: Vec<String> = f
            .groups
            .iter()
            .map(|g| format!("{} {:.4} ± {:.4}", g.name, g.mean, g.std_dev))
            .collect();
        println!(
            "{:<16} {}  cpu {:.4} s/run  median MM iters {}",
            f.label,
            rmse.join("  "),
            f.mean_cpu_s,
            f.median_mm_iters
        );
    }
    if !report.failed.is_empty() {
        warn!("{} of {} runs failed and were excluded", report.failed.len(), spec.n_runs);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, opts } => execute(load(&config)?, &opts),
        Command::Exp1 {
            opts,
            scale,
            particles,
            no_pf,
        } => {
            let mut spec = build_exp1();
            scale.apply(&mut spec);
            if no_pf {
                spec.filters.retain(|f| !matches!(f.kind, FilterKind::Particle { .. }));
            }
            if let Some(n) = particles {
                for f in &mut spec.filters {
                    if let FilterKind::Particle { n_particles } = &mut f.kind {
                        *n_particles = n;
                    }
                }
            }
            execute(spec, &opts)
        }
        Command::Exp2 { opts, scale } => {
            let mut spec = build_exp2();
            scale.apply(&mut spec);
            execute(spec, &opts)
        }
        Command::Validate { config } => {
            let spec = load(&config)?;
            println!("{}: ok ({} filters, {} runs of {} steps)", spec.name, spec.filters.len(), spec.n_runs, spec.steps);
            Ok(())
        }
        Command::Config { name } => {
            let spec = if name == "exp1" { build_exp1() } else { build_exp2() };
            println!("{}", spec.to_json()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
