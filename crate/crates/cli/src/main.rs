use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use interpcl::config::{ExperimentConfig, ENV_JOBS};
use interpcl::{compare, run, tools};
use interpcl_core::interp::{BlockMask, HeadMerge, LambdaPolicy, DEFAULT_EPSILON, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_MIN};
use interpcl_core::scenarios::CsvSchema;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "interpcl", version, about = "Continual learning by interpolating warm-started checkpoints")]
struct Cli {
    /// Worker threads for independent runs (default: $INTERPCL_JOBS or 1).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed x method cell of an experiment config.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Output directory (default: $INTERPCL_OUTPUT_DIR or `output_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge two or more reports into a method x metric table.
    Compare {
        #[arg(required = true, num_args = 1..)]
        /// `report.json` files produced on the same scenario.
        reports: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss-barrier profile along the straight path between two checkpoints.
    Barrier {
        /// Checkpoint at s = 0.
        ckpt_a: PathBuf,
        /// Checkpoint at s = 1.
        ckpt_b: PathBuf,
        /// Held-out CSV with a label column and numeric features.
        #[arg(long)]
        data: PathBuf,
        /// Number of evenly spaced path positions, endpoints included.
        #[arg(long, default_value_t = 11)]
        grid: usize,
        /// Name of the label column in `--data`.
        #[arg(long, default_value = "label")]
        label_column: String,
    },
    /// Merge two checkpoints with a fixed or layer-adaptive coefficient.
    #[command(group(ArgGroup::new("coef").required(true).args(["lambda", "adaptive"])))]
    Interp {
        /// Previous (carried) checkpoint.
        prev: PathBuf,
        /// Checkpoint trained on the current task.
        curr: PathBuf,
        /// Fixed coefficient on the current checkpoint.
        #[arg(long)]
        lambda: Option<f64>,
        /// Per-layer coefficient from the parameter shift.
        #[arg(long)]
        adaptive: bool,
        #[arg(long, default_value_t = DEFAULT_LAMBDA_MIN, requires = "adaptive")]
        lambda_min: f64,
        #[arg(long, default_value_t = DEFAULT_LAMBDA_MAX, requires = "adaptive")]
        lambda_max: f64,
        /// Comma-separated layer prefixes to interpolate (default: all).
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<String>,
        #[arg(long, value_enum, default_value_t = HeadArg::CopyCurrent)]
        head: HeadArg,
        /// Where to write the merged checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    CopyCurrent,
    InterpolateShared,
}

fn jobs(flag: Option<usize>) -> Result<usize, String> {
    if let Some(j) = flag {
        return Ok(j.max(1));
    }
    match std::env::var(ENV_JOBS) {
        Ok(v) => v
            .parse::<usize>()
            .map(|j| j.max(1))
            .map_err(|_| format!("{ENV_JOBS}={v:?} is not a positive integer")),
        Err(_) => Ok(1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = match jobs(cli.jobs) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let dir = run::resolve_output_dir(&cfg, out);
            match run::run_to_dir(&cfg, &dir, jobs) {
                Ok(report) if report.failures.is_empty() => {
                    println!("{} runs written to {}", report.cells.len(), dir.display());
                    ExitCode::SUCCESS
                }
                Ok(report) => {
                    for f in &report.failures {
                        eprintln!("error: seed {} `{}`: {}", f.seed, f.label, f.error);
                    }
                    ExitCode::from(EXIT_RUNTIME)
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Compare { reports, out } => {
            let result = (|| -> anyhow::Result<()> {
                let loaded = reports
                    .iter()
                    .map(|p| run::ExperimentReport::load(p))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                let text = compare::to_csv(&compare::compare(&loaded)?)?;
                match out {
                    Some(p) => interpcl::csv_out::write_text(&p, &text),
                    None => {
                        print!("{text}");
                        Ok(())
                    }
                }
            })();
            finish(result)
        }
        Command::Barrier {
            ckpt_a,
            ckpt_b,
            data,
            grid,
            label_column,
        } => {
            let result = (|| -> anyhow::Result<()> {
                let p = tools::barrier(&ckpt_a, &ckpt_b, &data, &CsvSchema { label_column }, grid)?;
                print!("{}", tools::profile_csv(&p)?);
                eprintln!("barrier {} at s = {}", p.barrier, p.argmax);
                Ok(())
            })();
            finish(result)
        }
        Command::Interp {
            prev,
            curr,
            lambda,
            adaptive,
            lambda_min,
            lambda_max,
            blocks,
            head,
            out,
        } => {
            let policy = match (lambda, adaptive) {
                (Some(l), false) => LambdaPolicy::FixedGlobal(l),
                _ => LambdaPolicy::AdaptiveLayerwise {
                    min: lambda_min,
                    max: lambda_max,
                    epsilon: DEFAULT_EPSILON,
                },
            };
            if let Err(e) = policy.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            let mask = if blocks.is_empty() {
                BlockMask::all()
            } else {
                BlockMask::only(blocks)
            };
            let head = match head {
                HeadArg::CopyCurrent => HeadMerge::CopyCurrent,
                HeadArg::InterpolateShared => HeadMerge::InterpolateShared,
            };
            let result = (|| -> anyhow::Result<()> {
                let merged = tools::interp(&prev, &curr, policy, mask, head, &out)?;
                print!("{}", tools::lambda_csv(&merged)?);
                Ok(())
            })();
            finish(result)
        }
    }
}

fn finish(result: anyhow::Result<()>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
