use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdsde_harness::config::ExperimentKind;
use bdsde_harness::plots::emit_plots;
use bdsde_harness::{rerun, run, ExperimentConfig, HarnessError, RunManifest};
use clap::{Args, Parser, Subcommand};

const TOLERANCE_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "bdsde", version, about = "Backward doubly stochastic solvers, oracles and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write SVG plots of the outputs.
    #[arg(long)]
    plots: bool,
}

#[derive(Subcommand)]
enum HorizonKind {
    Cauchy(RunArgs),
    Periodic(RunArgs),
    Stationary(RunArgs),
}

#[derive(Subcommand)]
enum Command {
    QvCheck(RunArgs),
    ItoResidual(RunArgs),
    SolveBdsde(RunArgs),
    SolveSpde(RunArgs),
    CrossValidate(RunArgs),
    Oracle(RunArgs),
    Picard(RunArgs),
    #[command(subcommand)]
    Horizon(HorizonKind),
    DumpPaths(RunArgs),
    /// Writes SVG plots for a finished run.
    Plot {
        /// Run directory or manifest file.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Re-executes a manifest's configuration and compares output digests.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "rerun")]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // Only fails when a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn summarize(m: &RunManifest) {
    for a in &m.assertions {
        println!("{} {} value={:e} threshold={:e}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.value, a.threshold);
    }
    println!("{}: {} ({:.1}s)", m.experiment, if m.pass { "PASS" } else { "FAIL" }, m.wall_clock_seconds);
}

fn manifest_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<bool, HarnessError> {
    set_jobs(args.jobs);
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if cfg.experiment.kind != kind {
        return Err(HarnessError::Config(vec![format!(
            "experiment.kind: config describes {} but the {} command was used",
            cfg.experiment.kind.name(),
            kind.name()
        )]));
    }
    if let Some(seed) = args.seed {
        cfg.seeds.master = seed;
    }
    let m = run(&cfg, &args.out_dir)?;
    summarize(&m);
    if args.plots {
        for p in emit_plots(&m, &args.out_dir)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(m.pass)
}

fn dispatch(cmd: Command) -> Result<bool, HarnessError> {
    use ExperimentKind as K;
    match cmd {
        Command::QvCheck(a) => execute(K::QvCheck, a),
        Command::ItoResidual(a) => execute(K::ItoResidual, a),
        Command::SolveBdsde(a) => execute(K::SolveBdsde, a),
        Command::SolveSpde(a) => execute(K::SolveSpde, a),
        Command::CrossValidate(a) => execute(K::CrossValidate, a),
        Command::Oracle(a) => execute(K::Oracle, a),
        Command::Picard(a) => execute(K::Picard, a),
        Command::Horizon(HorizonKind::Cauchy(a)) => execute(K::HorizonCauchy, a),
        Command::Horizon(HorizonKind::Periodic(a)) => execute(K::Periodic, a),
        Command::Horizon(HorizonKind::Stationary(a)) => execute(K::Stationary, a),
        Command::DumpPaths(a) => execute(K::DumpPaths, a),
        Command::Plot { manifest } => {
            let m = RunManifest::read(&manifest)?;
            for p in emit_plots(&m, &manifest_dir(&manifest))? {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Rerun { manifest, out_dir, jobs } => {
            set_jobs(jobs);
            let m = RunManifest::read(&manifest)?;
            let (again, diff) = rerun(&m, &out_dir)?;
            summarize(&again);
            for d in &diff {
                println!("MISMATCH {d}");
            }
            if diff.is_empty() {
                println!("all {} outputs reproduced", again.outputs.len());
            }
            Ok(again.pass && diff.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(TOLERANCE_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
