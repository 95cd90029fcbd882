//! `photostereo` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use photostereo::commands::{cmd_bench, cmd_eval, cmd_solve, cmd_synth};
use photostereo::joint::{Init, Mode};
use photostereo::{Error, Method, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "photostereo", version, about = "Uncalibrated photometric stereo: synthesis, reconstruction and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of images.
        #[arg(long)]
        images: Option<usize>,
        /// Noise standard deviation as a fraction of the maximum intensity.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct depth, normals and lights from a dataset directory.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Dataset directory as written by `synth`.
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Joint solver mode; ignored by the other methods.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Joint solver initialization.
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a reconstruction with ground truth up to GBR.
    Eval {
        /// Directory holding `depth.pfm` from `solve`.
        #[arg(long)]
        result: PathBuf,
        /// Dataset directory holding `depth.pfm` and `mask.png`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured trial grid; rerunning resumes unfinished cells.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of seeds per cell.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Baseline,
    Rpca,
    /// Joint solver with the mode from `--mode` or the configuration.
    Joint,
    JointMc,
    JointNc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Mc,
    Nc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Baseline,
    Rpca,
}

fn load_config(common: &Common) -> photostereo::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_method(cfg: &RunConfig, method: Option<MethodArg>, mode: Option<ModeArg>) -> Method {
    let mode = match mode {
        Some(ModeArg::Mc) => Mode::Mc,
        Some(ModeArg::Nc) => Mode::Nc,
        None => cfg.method.joint_mode().unwrap_or(cfg.joint.mode),
    };
    let joint = match mode {
        Mode::Mc => Method::JointMc,
        Mode::Nc => Method::JointNc,
    };
    match method {
        Some(MethodArg::Baseline) => Method::Baseline,
        Some(MethodArg::Rpca) => Method::Rpca,
        Some(MethodArg::Joint) => joint,
        Some(MethodArg::JointMc) => Method::JointMc,
        Some(MethodArg::JointNc) => Method::JointNc,
        None if cfg.method.joint_mode().is_some() => joint,
        None => cfg.method,
    }
}

fn run(command: Command) -> photostereo::Result<()> {
    match command {
        Command::Synth { common, images, noise, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = images {
                cfg.scene.m = m;
            }
            if let Some(n) = noise {
                cfg.scene.noise = n;
            }
            cmd_synth(&cfg, &out)
        }
        Command::Solve {
            common,
            data,
            method,
            mode,
            init,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(init) = init {
                cfg.joint.init = match init {
                    InitArg::Baseline => Init::Baseline,
                    InitArg::Rpca => Init::Rpca,
                };
            }
            let method = resolve_method(&cfg, method, mode);
            let result = cmd_solve(&data, &cfg, method, &out)?;
            if let Some(r) = &result.report {
                log::info!(
                    "{method}: {} outer iterations, converged {}, f_data {:e}",
                    r.outer_iterations,
                    r.converged,
                    r.final_f_data
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval { result, truth, out } => {
            let outcome = cmd_eval(&result, &truth, &out)?;
            println!("z_err {}", outcome.z_err);
            Ok(())
        }
        Command::Bench { common, trials, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = trials {
                cfg.bench.trials = t;
            }
            let report = cmd_bench(&cfg, &out)?;
            print_summary(&report, &out);
            Ok(())
        }
    }
}

fn print_summary(report: &photostereo::EvalReport, out: &Path) {
    for agg in &report.methods {
        println!(
            "{:<9} m={:<3} median z_err {:>8} failures {}",
            agg.method.to_string(),
            agg.m,
            agg.median_z_err.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
            agg.failures
        );
    }
    println!("{} trials written to {}", report.records.len(), out.display());
}

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_SOLVER
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence { trace, .. } = &e {
                eprintln!("objective trace: {trace:?}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
