mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{AlignArgs, DecodeArgs, Report, TrainArgs};
use config::{load_config, RunConfig};
use error::CliError;
use rightctx::trainer::eval::DecodeMode;
use rightctx::trainer::LossVariant;

#[derive(Parser)]
#[command(
    name = "rightctx",
    version,
    about = "Full-sum training and decoding with left/center/right factored outputs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON, or TOML for `.toml` files).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY.PATH=VALUE", global = true)]
    overrides: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Ctc,
    HmmCenter,
    FactoredLcr,
    DiphoneJoint,
}

impl From<Loss> for LossVariant {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Ctc => LossVariant::Ctc,
            Loss::HmmCenter => LossVariant::HmmCenter,
            Loss::FactoredLcr => LossVariant::FactoredLcr,
            Loss::DiphoneJoint => LossVariant::DiphoneJoint,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Center,
    Diphone,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with train, dev and test splits.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train from scratch or from a checkpoint.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
        /// Checkpoint to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<Loss>,
        /// Initialize from this checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a split and report WER and RTF.
    Decode {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// ARPA language model; estimated from the train split if absent.
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Prior file; estimated from the train split if absent.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long)]
        lm_scale: Option<f64>,
        /// Sweep the LM scale over `start:stop:step`.
        #[arg(long, conflicts_with = "lm_scale")]
        lm_scales: Option<String>,
        #[arg(long)]
        prior_scale: Option<f64>,
        #[arg(long)]
        transition_scale: Option<f64>,
        #[arg(long)]
        beam: Option<f64>,
        #[arg(long)]
        max_hyps: Option<usize>,
        /// Write CTM lines here.
        #[arg(long)]
        ctm: Option<PathBuf>,
    },
    /// Forced alignment against reference transcripts.
    Align {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write `utt<TAB>labels` lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Word error rate of hypotheses against references (`utt words...` lines).
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Read the hypothesis as CTM; the default for `.ctm` files.
        #[arg(long)]
        ctm: bool,
    },
    /// Run the oracle and property suite.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        /// Perturb one occupancy entry; the suite must fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn run(cmd: Command, mut cfg: RunConfig) -> Result<Report, CliError> {
    Ok(match cmd {
        Command::Synth { out, seed } => {
            if let Some(s) = seed {
                cfg.corpus_seed = s;
            }
            commands::synth(&cfg, out.as_deref())?.into()
        }
        Command::Train {
            corpus,
            split,
            out,
            loss,
            init,
            epochs,
            seed,
        } => {
            if let Some(l) = loss {
                cfg.train.loss = l.into();
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let args = TrainArgs {
                corpus: corpus.as_deref(),
                split: &split,
                out: out.as_deref(),
                init: init.as_deref(),
            };
            commands::train(&cfg, &args)?.into()
        }
        Command::Decode {
            corpus,
            split,
            checkpoint,
            mode,
            lm,
            prior,
            lm_scale,
            lm_scales,
            prior_scale,
            transition_scale,
            beam,
            max_hyps,
            ctm,
        } => {
            let d = &mut cfg.decode;
            if let Some(m) = mode {
                d.mode = match m {
                    Mode::Center => DecodeMode::Center,
                    Mode::Diphone => DecodeMode::Diphone,
                };
            }
            d.scales.lambda = lm_scale.unwrap_or(d.scales.lambda);
            if let Some(b) = prior_scale {
                d.scales.beta = b;
                d.ctc_prior_scale = b;
            }
            d.scales.eta = transition_scale.unwrap_or(d.scales.eta);
            d.search.beam_threshold = beam.unwrap_or(d.search.beam_threshold);
            d.search.max_hyps = max_hyps.unwrap_or(d.search.max_hyps);
            let args = DecodeArgs {
                corpus: corpus.as_deref(),
                split: &split,
                checkpoint: checkpoint.as_deref(),
                lm: lm.as_deref(),
                prior: prior.as_deref(),
                ctm: ctm.as_deref(),
                lm_scales: lm_scales.as_deref(),
            };
            commands::decode(&cfg, &args)?.into()
        }
        Command::Align {
            corpus,
            split,
            checkpoint,
            out,
        } => {
            let args = AlignArgs {
                corpus: corpus.as_deref(),
                split: &split,
                checkpoint: checkpoint.as_deref(),
                out: out.as_deref(),
            };
            commands::align(&cfg, &args)?
        }
        Command::Score {
            reference,
            hyp,
            ctm,
        } => {
            let as_ctm = ctm || hyp.extension().is_some_and(|e| e == "ctm");
            commands::score(&reference, &hyp, as_ctm)?.into()
        }
        Command::Verify { seed, inject_fault } => {
            if let Some(s) = seed {
                cfg.verify.seed = s;
            }
            cfg.verify.inject_fault |= inject_fault;
            commands::verify(&cfg)
        }
    })
}

fn write_report(report: &serde_json::Value, path: Option<&PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {}", e.message());
    ExitCode::from(e.code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match load_config(cli.global.config.as_deref(), &cli.global.overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let command = cli.command;
    let result = rightctx::par::with_threads(cli.global.threads, || run(command, cfg));
    match result {
        Ok(report) => {
            if let Err(e) = write_report(&report.value, cli.global.report.as_ref()) {
                return fail(&e);
            }
            match report.failure {
                Some(e) => fail(&e),
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(&e),
    }
}
