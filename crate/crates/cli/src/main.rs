//! `posbias`: ingest QA corpora, build position subsets, train and evaluate
//! de-biased toy readers, and audit their representations.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "posbias", version, about = "Position-bias toolkit for extractive QA")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving all outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a SQuAD or MRQA file into a dataset cache.
    Ingest(IngestArgs),
    /// Select examples by answer sentence, or sample a matched subset.
    Subset(SubsetArgs),
    /// Train the toy reader with a chosen objective.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset cache.
    Evaluate(EvaluateArgs),
    /// Write information curves, correlations, histograms and heatmaps.
    Audit(AuditArgs),
    /// Generate synthetic marker-question corpora.
    Synth(SynthArgs),
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Squad,
    Mrqa,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub input: PathBuf,
    /// Cache file name inside the output directory.
    #[arg(long, default_value = "dataset.json")]
    pub out: PathBuf,
    /// Cut passages at a sentence boundary within this many tokens.
    #[arg(long)]
    pub max_words: Option<usize>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("selector").required(true).args(["k", "k_min", "sample"])))]
pub struct SubsetArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Keep answers in sentence k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep answers in sentence k_min or later.
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Uniformly sample this many examples.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value = "subset.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// none, bias_product, learned_mixin, entropy_reg or random_pos.
    #[arg(long)]
    pub objective: Option<String>,
    /// word or sentence; required by the ensemble objectives.
    #[arg(long)]
    pub prior: Option<String>,
    /// Key-value training config; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_answer_len: Option<usize>,
    /// literal, log_smoothed or log_smoothed:<epsilon>.
    #[arg(long)]
    pub prior_transform: Option<String>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint path, or `oracle` for gold-span predictions.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Add one bucket per answer sentence.
    #[arg(long)]
    pub buckets: bool,
    /// Report file stem inside the output directory.
    #[arg(long, default_value = "report")]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Layers for information curves; all layers when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Sentence indices for a heatmap, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    pub heatmap: Vec<usize>,
    /// Model trained on subset k, as `K=PATH`.
    #[arg(long = "k-model", value_parser = parse_k_model)]
    pub k_models: Vec<(usize, PathBuf)>,
}

fn parse_k_model(s: &str) -> Result<(usize, PathBuf), String> {
    let (k, path) = s.split_once('=').ok_or_else(|| format!("expected K=PATH, got {s:?}"))?;
    let k = k.trim().parse().map_err(|_| format!("bad sentence index {k:?}"))?;
    Ok((k, PathBuf::from(path)))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_examples: usize,
    /// Sentences per passage, `MIN-MAX` or a single value.
    #[arg(long, default_value = "4-4", value_parser = parse_range)]
    pub sentences: (usize, usize),
    /// Words per sentence, excluding the final period.
    #[arg(long, default_value = "8-12", value_parser = parse_range)]
    pub tokens: (usize, usize),
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    /// `uniform` or `fixed_k(K)`.
    #[arg(long, default_value = "uniform")]
    pub placement: String,
    /// Build one fixed-placement corpus per listed sentence index.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub ks: Vec<usize>,
    /// Size of the held-out uniform dev corpus.
    #[arg(long, default_value_t = 1000)]
    pub n_dev: usize,
    #[arg(long, default_value = "3-3", value_parser = parse_range)]
    pub facts: (usize, usize),
    #[arg(long, default_value_t = 16)]
    pub marker_pool: usize,
    #[arg(long, default_value_t = 1)]
    pub answer_len: usize,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad count {v:?}"));
    match s.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => parse(s).map(|v| (v, v)),
    }
}

fn main() -> ExitCode {
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
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("4-6"), Ok((4, 6)));
        assert_eq!(parse_range("3"), Ok((3, 3)));
        assert!(parse_range("a-b").is_err());
        assert_eq!(parse_k_model("2=m.json"), Ok((2, PathBuf::from("m.json"))));
        assert!(parse_k_model("m.json").is_err());
    }
}
