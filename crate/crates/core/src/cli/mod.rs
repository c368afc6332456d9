//! Command-line front end.
//!
//! Every subcommand is a thin wrapper around the library. A `--config FILE`
//! of `key = value` lines may supply any flag; flags given on the command
//! line take precedence.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::augment::MaskMode;
use crate::error::Error;
use crate::kb::PropertyMask;

pub use config::inject_config;

#[derive(Debug, Parser)]
#[command(name = "kbner", version, about = "Knowledge-augmented NER toolkit")]
pub struct Cli {
    /// Key-value file supplying defaults for any flag of the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a WikiData-style dump into a KB directory.
    BuildKb(BuildKbArgs),
    /// Share of gold mentions whose surface is in the KB.
    Coverage(CoverageArgs),
    /// Match sentences against the KB and emit entity-context pairs as JSON lines.
    Retrieve(RetrieveArgs),
    /// Build augmented inputs and attention masks as JSON lines.
    Augment(AugmentArgs),
    /// Train a toy encoder on augmented inputs.
    Train(TrainArgs),
    /// Tag augmented inputs with a trained model.
    Predict(PredictArgs),
    /// Assign sentences to k folds.
    Split(SplitArgs),
    /// Combine fold predictions by weighted voting.
    Vote(VoteArgs),
    /// Entity-level precision, recall and F1.
    Score(ScoreArgs),
    /// Baseline vs knowledge-augmented experiment on a synthetic corpus.
    SyntheticAb(SyntheticAbArgs),
}

fn parse_properties(s: &str) -> Result<PropertyMask, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mask_mode(s: &str) -> Result<MaskMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct BuildKbArgs {
    /// Dump with one JSON entity per line.
    #[arg(long, value_name = "FILE")]
    pub dump: PathBuf,
    /// Language of labels, aliases and sitelinks to index.
    #[arg(long, value_name = "CODE")]
    pub lang: String,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Comma-separated subset of subclassof,instanceof,occupation.
    #[arg(long, value_name = "LIST", default_value = "subclassof,instanceof,occupation", value_parser = parse_properties)]
    pub properties: PropertyMask,
    /// Most qids kept per surface.
    #[arg(long, value_name = "N", default_value_t = crate::kb::DEFAULT_QID_CAP)]
    pub qid_cap: usize,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, value_name = "DIR")]
    pub kb: PathBuf,
    /// Gold-tagged dataset.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long, value_name = "DIR")]
    pub kb: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, value_name = "DIR")]
    pub kb: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Token budget including [CLS], [SEP] and separators.
    #[arg(long, value_name = "N", default_value_t = 256)]
    pub max_len: usize,
    /// `default` or `strict-paper`.
    #[arg(long, value_name = "MODE", default_value = "default", value_parser = parse_mask_mode)]
    pub mask_mode: MaskMode,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Augmented inputs with gold tags.
    #[arg(long, value_name = "FILE")]
    pub aug: PathBuf,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: u64,
    #[arg(long, value_name = "E", default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, value_name = "RATE", default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, value_name = "N", default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, value_name = "N", default_value_t = 4)]
    pub heads: usize,
    #[arg(long, value_name = "N", default_value_t = 2)]
    pub layers: usize,
    #[arg(long, value_name = "N", default_value_t = 64)]
    pub d_ff: usize,
    /// Longest input the model accepts.
    #[arg(long, value_name = "N", default_value_t = 256)]
    pub max_len: usize,
    /// Fold plan; with `--fold`, train only on sentences outside that fold.
    #[arg(long, value_name = "FILE", requires = "fold")]
    pub plan: Option<PathBuf>,
    #[arg(long, value_name = "F", requires = "plan")]
    pub fold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub aug: PathBuf,
    /// Tagged output, one `token<TAB>tag` line per token.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Distribution sidecar for voting; defaults to `<out>.dist.json`.
    #[arg(long, value_name = "FILE")]
    pub dist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_name = "K", default_value_t = 8)]
    pub k: usize,
    #[arg(long, value_name = "N")]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    /// Distribution sidecars written by `predict`.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    pub preds: Vec<PathBuf>,
    /// One weight per prediction file, usually its validation F1.
    #[arg(long, value_name = "W1,W2,...", value_delimiter = ',', required = true)]
    pub weights: Vec<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Vote with one-hot argmax labels instead of distributions.
    #[arg(long)]
    pub hard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long, value_name = "FORMAT", default_value = "text")]
    pub report: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyntheticAbArgs {
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_name = "LIST", default_value = "subclassof,instanceof,occupation", value_parser = parse_properties)]
    pub properties: PropertyMask,
    #[arg(long, value_name = "MODE", default_value = "default", value_parser = parse_mask_mode)]
    pub mask_mode: MaskMode,
    /// Overrides the default epoch count.
    #[arg(long, value_name = "E")]
    pub epochs: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// The clap command tree. A repeated flag replaces its earlier value, which
/// is what lets the command line override config-file entries.
pub fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match inject_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let parsed = command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for broken internal invariants, 1 for everything the user can fix.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Internal(_) => 2,
        _ => 1,
    }
}
