use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geodist::commands::{self, EvalArgs, InvertArgs, RoundtripArgs, SampleArgs};
use geodist::config::RunConfig;
use geodist::error::Result;

/// Represent a 3D surface as a geometry distribution: train a point
/// denoiser on a mesh, sample any number of surface points from it, and map
/// points back to noise space.
#[derive(Parser)]
#[command(name = "geodist", version, about)]
struct Cli {
    /// Worker threads (1 = fully sequential reference mode).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScheduleFlags {
    /// Lowest noise level of the sampling schedule.
    #[arg(long, default_value_t = 0.002)]
    sigma_min: f64,
    /// Highest noise level (the starting point of forward sampling).
    #[arg(long, default_value_t = 80.0)]
    sigma_max: f64,
    /// Warp exponent of the schedule.
    #[arg(long, default_value_t = 7.0)]
    rho: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser on a mesh described by a JSON config.
    Train {
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's mesh path.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Override the number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoint and reports.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sample surface points from a trained model.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of points to generate.
        #[arg(long)]
        n: usize,
        /// ODE solver steps.
        #[arg(long, default_value_t = 64)]
        steps: usize,
        /// euler or heun.
        #[arg(long, default_value = "heun")]
        solver: String,
        /// gaussian or uniform initial noise.
        #[arg(long, default_value = "gaussian")]
        init: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (.ply binary, .xyz text).
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated snapshot indices to export as trajectory frames.
        #[arg(long, value_delimiter = ',')]
        record: Vec<usize>,
        /// Directory for frame_NNN.ply trajectory exports.
        #[arg(long)]
        record_dir: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleFlags,
    },
    /// Map surface points back to noise space.
    Invert {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input points (.ply or .xyz).
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        /// Output noise point set.
        #[arg(long)]
        out: PathBuf,
        /// Per-point correspondence CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Comma-separated snapshot indices to export.
        #[arg(long, value_delimiter = ',')]
        record: Vec<usize>,
        #[arg(long)]
        record_dir: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleFlags,
    },
    /// Evaluate a trained model: Chamfer, error percentiles, compression.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// The ground-truth mesh the model was trained on.
        #[arg(long)]
        mesh: PathBuf,
        /// Points per side of the comparison.
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-point error PLY for heatmap rendering.
        #[arg(long)]
        error_ply: Option<PathBuf>,
        #[command(flatten)]
        schedule: ScheduleFlags,
    },
    /// Train the vector-field baseline.
    VfTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sample the vector-field baseline (single field application).
    VfSample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Apply the field this many times (reference setup: 1).
        #[arg(long, default_value_t = 1)]
        applications: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Round-trip MSE (invert then forward) over several step counts.
    Roundtrip {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Surface points to round-trip (.ply or .xyz).
        #[arg(long)]
        points: Option<PathBuf>,
        /// Or sample fresh points from this mesh.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Points to sample when --mesh is used.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated list of inversion step counts.
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 64])]
        steps: Vec<usize>,
        /// Output CSV (steps, mse).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        schedule: ScheduleFlags,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            mesh,
            epochs,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = mesh {
                cfg.mesh.path = Some(m);
            }
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            if let Some(s) = seed {
                cfg.training.seed = s;
                cfg.mesh.seed = s;
            }
            let outputs = commands::cmd_train(&cfg, &out)?;
            println!("checkpoint: {}", outputs.checkpoint.display());
            println!("report:     {}", outputs.report_csv.display());
            if let Some(last) = outputs.report.epochs.last() {
                println!("final loss: {:.6}", last.mean_loss);
            }
            Ok(())
        }
        Command::Sample {
            checkpoint,
            n,
            steps,
            solver,
            init,
            seed,
            out,
            record,
            record_dir,
            schedule,
        } => {
            let args = SampleArgs {
                n,
                steps,
                solver,
                init,
                seed,
                sigma_min: schedule.sigma_min,
                sigma_max: schedule.sigma_max,
                rho: schedule.rho,
                record,
            };
            commands::cmd_sample(&checkpoint, &args, &out, record_dir.as_deref())?;
            println!("wrote {} points to {}", n, out.display());
            Ok(())
        }
        Command::Invert {
            checkpoint,
            points,
            steps,
            out,
            csv,
            record,
            record_dir,
            schedule,
        } => {
            let args = InvertArgs {
                steps,
                sigma_min: schedule.sigma_min,
                sigma_max: schedule.sigma_max,
                rho: schedule.rho,
                record,
            };
            commands::cmd_invert(
                &checkpoint,
                &points,
                &args,
                &out,
                csv.as_deref(),
                record_dir.as_deref(),
            )?;
            println!("wrote noise points to {}", out.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            mesh,
            n,
            steps,
            seed,
            out,
            error_ply,
            schedule,
        } => {
            let args = EvalArgs {
                n,
                steps,
                seed,
                sigma_min: schedule.sigma_min,
                sigma_max: schedule.sigma_max,
                rho: schedule.rho,
            };
            let report = commands::cmd_eval(&checkpoint, &mesh, &args, &out, error_ply.as_deref())?;
            println!("chamfer: {:.6}", report.chamfer);
            println!("param_count: {}", report.param_count);
            println!("report: {}", out.display());
            Ok(())
        }
        Command::VfTrain {
            config,
            mesh,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = mesh {
                cfg.mesh.path = Some(m);
            }
            if let Some(s) = seed {
                cfg.baseline.seed = s;
                cfg.mesh.seed = s;
            }
            let ckpt = commands::cmd_vf_train(&cfg, &out)?;
            println!("checkpoint: {}", ckpt.display());
            Ok(())
        }
        Command::VfSample {
            checkpoint,
            n,
            seed,
            applications,
            out,
        } => {
            commands::cmd_vf_sample(&checkpoint, n, seed, applications, &out)?;
            println!("wrote {} points to {}", n, out.display());
            Ok(())
        }
        Command::Roundtrip {
            checkpoint,
            points,
            mesh,
            n,
            seed,
            steps,
            out,
            schedule,
        } => {
            let args = RoundtripArgs {
                steps,
                n,
                seed,
                sigma_min: schedule.sigma_min,
                sigma_max: schedule.sigma_max,
                rho: schedule.rho,
            };
            let results =
                commands::cmd_roundtrip(&checkpoint, points.as_deref(), mesh.as_deref(), &args, &out)?;
            for (s, m) in results {
                println!("steps {s:>4}: mse {m:.3e}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
