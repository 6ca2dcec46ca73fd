use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use duallearn_cli::commands::{self, BoundsArgs, EvalTarget, Example1Args, TrainArgs};
use duallearn_cli::config::{load_config, Config, Variant};

/// Constrained learning experiments.
#[derive(Parser)]
#[command(name = "duallearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory for the run directory. Defaults to `output.root`,
    /// then $DUALLEARN_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Alternating,
}

#[derive(Subcommand)]
enum Command {
    /// Run dual ascent on the configured problem.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        dual_step: Option<f64>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Metrics of a saved model, or of the iterate mixture of a train run.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "run", required_unless_present = "run")]
        model: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Repeated trials of the enumeration pathology.
    Example1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Worker threads for independent trials.
        #[arg(long, default_value_t = 1)]
        parallel_trials: usize,
    },
    /// Generalization and near-optimality bounds.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
}

fn main() -> Result<()> {
    let dir = match Cli::parse().command {
        Command::Train {
            common,
            iterations,
            dual_step,
            variant,
        } => {
            let args = TrainArgs {
                iterations,
                dual_step,
                variant: variant.map(|v| match v {
                    VariantArg::Standard => Variant::Standard,
                    VariantArg::Alternating => Variant::Alternating,
                }),
            };
            commands::train(&mut common.config()?, common.out, &args)?
        }
        Command::Eval { common, model, run } => {
            let target = match (model, run) {
                (Some(m), _) => EvalTarget::Model(m),
                (None, Some(r)) => EvalTarget::Run(r),
                (None, None) => anyhow::bail!("eval needs --model or --run"),
            };
            commands::eval(&mut common.config()?, common.out, &target)?
        }
        Command::Example1 {
            common,
            trials,
            n,
            parallel_trials,
        } => {
            let args = Example1Args {
                trials,
                n,
                parallel_trials,
            };
            commands::example1(&mut common.config()?, common.out, &args)?
        }
        Command::Bounds { common, xi, delta } => {
            commands::bounds(&mut common.config()?, common.out, &BoundsArgs { xi, delta })?
        }
    };
    println!("{}", dir.display());
    Ok(())
}
