use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use felix::cli;
use felix::config::RunConfig;
use felix::Error;

/// Text editing by tagging, pointing and masked insertion.
#[derive(Parser)]
#[command(name = "felix", version)]
struct Cli {
    /// TOML file with run settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Per-key overrides of the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true, value_name = "masking|infilling")]
    mode: Option<String>,
    #[arg(long, global = true, value_name = "N|unbounded")]
    max_span: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    pointing: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    learning_rate: Option<String>,
    #[arg(long, global = true)]
    steps: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    dim: Option<String>,
    #[arg(long, global = true)]
    layers: Option<String>,
    #[arg(long, global = true)]
    heads: Option<String>,
    #[arg(long, global = true)]
    ffn_dim: Option<String>,
    #[arg(long, global = true)]
    max_len: Option<String>,
    #[arg(long, global = true)]
    beam_size: Option<String>,
    #[arg(long, global = true, value_name = "sgd|adam")]
    optimizer: Option<String>,
    #[arg(long, global = true)]
    momentum: Option<String>,
    #[arg(long, global = true)]
    clip_norm: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    extra_pointer_layer: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    lowercase: Option<String>,
    #[arg(long, global = true, value_name = "original|all_f1")]
    sari_variant: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("mode", &self.mode),
            ("max_span", &self.max_span),
            ("pointing", &self.pointing),
            ("seed", &self.seed),
            ("learning_rate", &self.learning_rate),
            ("steps", &self.steps),
            ("batch_size", &self.batch_size),
            ("dim", &self.dim),
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("ffn_dim", &self.ffn_dim),
            ("max_len", &self.max_len),
            ("beam_size", &self.beam_size),
            ("optimizer", &self.optimizer),
            ("momentum", &self.momentum),
            ("clip_norm", &self.clip_norm),
            ("extra_pointer_layer", &self.extra_pointer_layer),
            ("lowercase", &self.lowercase),
            ("sari_variant", &self.sari_variant),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build tagging and insertion targets from a source/target corpus.
    Align {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the tagger and the insertion model on aligned records.
    Train {
        #[arg(long)]
        input: PathBuf,
        /// Directory for the checkpoints and the loss log.
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Edit every source in a corpus with trained models.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against references.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// JSON report; a `.txt` twin is written next to it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Corpus statistics: lengths, TER components, coverage and MASK ratio.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> felix::Result<()> {
    let (cfg, explicit) = RunConfig::load_with_keys(cli.config.as_deref(), &cli.overrides.pairs())?;
    match cli.command {
        Command::Align { input, output } => {
            let s = cli::cmd_align(&input, &output, &cfg)?;
            log::info!(
                "aligned {}/{} pairs ({:.2}% coverage, MASK {:.2}%)",
                s.stats.aligned,
                s.stats.pairs,
                s.stats.coverage_percent,
                s.stats.mask_percent
            );
            for (reason, n) in &s.stats.skipped {
                log::info!("skipped {n}: {reason}");
            }
        }
        Command::Train { input, output_dir } => {
            let s = cli::cmd_train(&input, &output_dir, &cfg)?;
            log::info!(
                "trained on {} examples; final losses tagger {:?}, insertion {:?}",
                s.examples,
                s.final_tagger_loss,
                s.final_insertion_loss
            );
        }
        Command::Predict {
            input,
            model_dir,
            output,
        } => {
            let s = cli::cmd_predict(&input, &model_dir, &output, &cfg, &explicit)?;
            log::info!(
                "predicted {} records; greedy decoding would loop on {:.2}%",
                s.examples,
                s.greedy_loop_percent
            );
        }
        Command::Evaluate {
            predictions,
            references,
            output,
        } => {
            let r = cli::cmd_evaluate(&predictions, &references, &output, &cfg)?;
            log::info!("SARI {:.2} exact {:.2} BLEU {:.2}", r.sari, r.exact, r.bleu4);
        }
        Command::Stats { input, output } => {
            let s = cli::cmd_stats(&input, &output, &cfg)?;
            log::info!("{} examples, source-target TER {:.2}", s.examples, s.ter.ter);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
