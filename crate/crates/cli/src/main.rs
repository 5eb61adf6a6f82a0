mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use puda::gradcheck::{Fault, GradcheckOptions};
use puda::synthetic::PlantedSpec;
use puda::Split;

use commands::{CliError, EvaluateArgs, GradcheckArgs};
use config::Settings;

/// Declares the string-valued run flags once, so the flag name doubles as
/// the config-file key.
macro_rules! run_flags {
    ($($field:ident => $key:literal : $help:literal),* $(,)?) => {
        #[derive(Debug, Args)]
        struct RunFlags {
            /// Config file of `key = value` lines; flags override it.
            #[arg(long, value_name = "FILE")]
            config: Option<PathBuf>,
            /// Overwrite an output directory holding a completed run.
            #[arg(long)]
            force: bool,
            /// Keep test triples out of the training-time graph.
            #[arg(long)]
            hide_test: bool,
            $(
                #[arg(long = $key, value_name = "VALUE", help = $help)]
                $field: Option<String>,
            )*
        }

        impl RunFlags {
            fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut pairs = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        pairs.push(($key, v.clone()));
                    }
                )*
                if self.force {
                    pairs.push(("force", "true".to_string()));
                }
                if self.hide_test {
                    pairs.push(("hide-test", "true".to_string()));
                }
                pairs
            }

            fn settings(&self) -> Result<Settings, CliError> {
                Ok(Settings::resolve(self.config.as_deref(), &self.pairs())?)
            }
        }
    };
}

run_flags! {
    mode => "mode": "pn, pu-c, pu-r, da or puda; a trailing + mixes in annotated negatives",
    data => "data": "dataset directory with train.txt, valid.txt and test.txt",
    out => "out": "output directory",
    seed => "seed": "random seed",
    dim => "dim": "embedding dimension",
    n_unlabeled => "n-unlabeled": "unlabeled corruptions per positive",
    m_synthetic => "m-synthetic": "generator samples per positive",
    pi_p => "pi-p": "positive class prior",
    delta => "delta": "generator noise standard deviation",
    lr_d => "lr-d": "discriminator learning rate",
    lr_g => "lr-g": "generator learning rate",
    l2 => "l2": "L2 penalty on touched embedding rows",
    epochs => "epochs": "training epochs",
    batch_size => "batch-size": "positives per batch",
    clamp_policy => "clamp-policy": "zero or defensive",
    eval_every => "eval-every": "validate every this many epochs (0 = never)",
    patience => "patience": "non-improving validations before stopping (0 = never)",
    scoring => "scoring": "distmult or transe",
    negatives => "negatives": "file of annotated true negatives",
    workers => "workers": "worker threads",
    head_prob => "head-prob": "probability of corrupting the head",
    dropout => "dropout": "generator dropout rate",
    g_steps => "g-steps": "generator steps per discriminator step",
    true_negative_fraction => "true-negative-fraction": "share of unlabeled slots taken from annotated negatives",
    seeds => "seeds": "ablate: number of consecutive seeds per mode",
    modes => "modes": "ablate: comma-separated modes",
    grid => "grid": "sweep-prior: comma-separated priors",
}

#[derive(Debug, Parser)]
#[command(name = "puda", version, about = "Positive-unlabeled knowledge graph completion")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and evaluate it on the test split.
    Train(RunFlags),
    /// Train every mode over several seeds and compare them.
    Ablate(RunFlags),
    /// Train across a grid of class priors.
    SweepPrior(RunFlags),
    /// Evaluate a checkpoint with filtered ranking.
    Evaluate(EvaluateFlags),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckFlags),
    /// Write a planted-pattern dataset.
    Synth(SynthFlags),
}

#[derive(Debug, Args)]
struct EvaluateFlags {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct GradcheckFlags {
    /// Random instances per suite.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, hide = true, value_parser = commands::parse_fault)]
    inject_fault: Option<Fault>,
}

#[derive(Debug, Args)]
struct SynthFlags {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = PlantedSpec::default().entities)]
    entities: usize,
    #[arg(long, default_value_t = PlantedSpec::default().groups)]
    groups: usize,
    #[arg(long, default_value_t = PlantedSpec::default().base_degree)]
    degree: usize,
    #[arg(long)]
    force: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?} (expected valid or test)")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(f) => commands::train_cmd(&f.settings()?),
        Command::Ablate(f) => commands::ablate_cmd(&f.settings()?),
        Command::SweepPrior(f) => commands::sweep_cmd(&f.settings()?),
        Command::Evaluate(f) => commands::evaluate_cmd(&EvaluateArgs {
            checkpoint: f.checkpoint,
            data: f.data,
            split: f.split,
            out: f.out,
            force: f.force,
        }),
        Command::Gradcheck(f) => commands::gradcheck_cmd(&GradcheckArgs {
            options: GradcheckOptions {
                trials: f.trials,
                seed: f.seed,
                fault: f.inject_fault,
            },
            out: f.out,
        }),
        Command::Synth(f) => {
            let spec = PlantedSpec {
                entities: f.entities,
                groups: f.groups,
                base_degree: f.degree,
                seed: f.seed,
                ..PlantedSpec::default()
            };
            if f.groups < 2 || f.entities < f.groups || f.degree > f.entities / f.groups {
                return Err(config::KeyError::new("degree", "need >= 2 groups and degree <= group size").into());
            }
            commands::synth_cmd(&spec, &f.out, f.force)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
