//! `textnorm` command-line tool.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use textnorm::codec::Representation;
use textnorm::corpus::Split;
use textnorm::tagger::ContextEncoderMode;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "textnorm", version, about = "Transformer text normalization: data tools, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Versioned TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker cap. Execution is sequential, so values above 1 change nothing.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Log progress at info level.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Args, Clone)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "all")]
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    TwoStage,
    SinglePass,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a corpus and print sentence, token and class counts.
    Validate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Write alternating source and target lines in a single-pass representation.
    Encode {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_parser = parse_repr)]
        repr: Representation,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic corpus.
    Generate {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Masked-character pretraining of the sentence context encoder.
    Pretrain {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        steps: Option<usize>,
        /// Output checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a two-stage or single-pass model.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::TwoStage)]
        mode: ModeArg,
        #[arg(long, value_parser = parse_repr, default_value = "tok-edits")]
        repr: Representation,
        #[arg(long, value_parser = parse_encoder, default_value = "scratch")]
        encoder: ContextEncoderMode,
        /// Pretrained encoder checkpoint for the frozen and fine-tune encoders.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Output checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the coverage lexicon of the training split here.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Training loss log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print `id<TAB>verbalization` for every sentence.
    Predict {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint, write the JSONL report and print the summary table.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare two evaluation reports over the same sentences.
    Report {
        /// Baseline report.
        #[arg(long)]
        base: PathBuf,
        /// Report to compare against the baseline.
        #[arg(long)]
        against: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the encoder-decoder gradients.
    Gradcheck {
        /// Coordinates sampled per parameter group.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Expected model family; checked against the checkpoint.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Expected single-pass representation; checked against the checkpoint.
    #[arg(long, value_parser = parse_repr)]
    pub repr: Option<Representation>,
    /// Use reference tags in place of the tagger (two-stage).
    #[arg(long)]
    pub golden_tags: bool,
    /// Build the source from reference tokens (tokenized single-pass).
    #[arg(long)]
    pub golden_tokenized: bool,
    /// Use reference verbalizations for non-trivial tokens (two-stage).
    #[arg(long)]
    pub oracle_verbalizer: bool,
    /// Beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Coverage lexicon constraining the verbalizer.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

fn parse_repr(s: &str) -> Result<Representation, String> {
    s.parse()
}

fn parse_encoder(s: &str) -> Result<ContextEncoderMode, String> {
    s.parse()
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate { common, .. }
            | Command::Encode { common, .. }
            | Command::Generate { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Report { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.command.common().verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("textnorm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
