use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cropdiv::normvae::Mode;
use cropdiv_cli::{
    cmd_eval, cmd_generate, cmd_gradcheck, cmd_pipeline, cmd_train, cmd_world, gradcheck_verdict,
    log, threads_from_env, CliResult, EvalOutput, GenerateArgs, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "cropdiv",
    version,
    about = "IoU-conditioned latent-norm VAE experiments on a synthetic crop world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the world, training and evaluation seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (a directory for `pipeline`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Vanilla,
    Norm,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vanilla => Mode::Vanilla,
            ModeArg::Norm => Mode::Norm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the synthetic dataset.
    World {
        #[command(flatten)]
        common: Common,
    },
    /// Train a VAE on the base classes.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Generate features from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Class id; defaults to every novel class.
        #[arg(long = "class")]
        class_id: Option<u32>,
        /// Features per class.
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated latent norms (norm checkpoints only).
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<f64>>,
    },
    /// Run the source comparison and the subset experiment.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// World, both VAEs, evaluation and reports.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::World { common } => {
            let cfg = load(&common)?;
            let path = cmd_world(&cfg, common.out.as_deref())?;
            log(&format!("dataset written to {}", path.display()));
        }
        Command::Train { common, mode } => {
            let cfg = load(&common)?;
            let (path, report) = cmd_train(&cfg, mode.into(), common.out.as_deref())?;
            log(&format!(
                "trained {} epochs, final loss {:.6}; checkpoint {}",
                report.epoch_loss.len(),
                report.epoch_loss.last().copied().unwrap_or(f64::NAN),
                path.display()
            ));
        }
        Command::Generate {
            common,
            mode,
            checkpoint,
            class_id,
            k,
            schedule,
        } => {
            let cfg = load(&common)?;
            let args = GenerateArgs {
                checkpoint,
                mode: mode.map(Mode::from),
                class_id,
                k,
                schedule,
            };
            let (path, n) = cmd_generate(&cfg, &args, common.out.as_deref())?;
            log(&format!("{n} features written to {}", path.display()));
        }
        Command::Eval { common } => {
            let cfg = load(&common)?;
            let out = cmd_eval(&cfg, threads_from_env()?, common.out.as_deref())?;
            print_summary(&out);
        }
        Command::Gradcheck { common } => {
            let cfg = load(&common)?;
            let outcomes = cmd_gradcheck(&cfg)?;
            for o in &outcomes {
                println!(
                    "{:<22} {:>3} instances  max rel err {:.3e}  {}",
                    o.name,
                    o.instances,
                    o.max_rel_error,
                    if o.passed() { "ok" } else { "FAIL" }
                );
            }
            gradcheck_verdict(&outcomes)?;
        }
        Command::Pipeline { common } => {
            let cfg = load(&common)?;
            let out = cmd_pipeline(&cfg, threads_from_env()?, common.out.as_deref())?;
            print_summary(&out);
        }
    }
    Ok(())
}

fn print_summary(out: &EvalOutput) {
    println!(
        "{:<16} {:>9} {:>9} {:>9}",
        "source", "acc_drop", "hard_acc", "easy_acc"
    );
    for agg in out
        .comparison
        .aggregate
        .iter()
        .chain(&out.subsets.aggregate)
    {
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4}",
            agg.source.as_str(),
            agg.accuracy_drop,
            agg.hard_accuracy,
            agg.easy_accuracy
        );
    }
    log(&format!(
        "reports written to {} and {}",
        out.report.display(),
        out.subset_report.display()
    ));
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
