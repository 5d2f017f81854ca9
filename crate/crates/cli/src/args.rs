use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kgfuse::harness::ReportFormat;
use kgfuse::model::Variant;

/// Knowledge-graph fused QA: data generation, training, experiments, reports.
///
/// Every command writes its outputs and a `manifest.json` into `--out`.
/// `--config` takes an experiment config as JSON; sections left out keep
/// their defaults and explicit flags override both.
#[derive(Debug, Parser)]
#[command(name = "kgfuse", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Base seed for the command's random streams
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment config file (JSON)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic KG. Writes triples.tsv and corpus.txt
    GenKg(GenKg),
    /// Generate QA examples over a KG. Writes qa.jsonl
    GenQa(GenQa),
    /// Train TransE embeddings. Writes embeddings.txt and transe_loss.json
    TrainEmbed(TrainEmbed),
    /// Span-corruption pretraining on a corpus. Writes model.ckpt and pretrain_trace.json
    Pretrain(Pretrain),
    /// Fine-tune on QA with the fused loss. Writes model.ckpt and trace.csv
    Finetune(Finetune),
    /// Exact-match evaluation of a checkpoint. Writes metrics.csv
    Eval(Eval),
    /// Variant ablation over seeds. Writes metrics.csv and report.md
    Ablate(Ablate),
    /// Variant `both` over KG fractions and seeds. Writes metrics.csv and report.md
    ScaleSweep(ScaleSweep),
    /// Validate a SQuAD v1.1 file. Writes squad.json
    IngestSquad(IngestSquad),
    /// Render a metrics CSV as markdown or CSV. Writes report.md or report.csv
    Report(Report),
    /// Re-execute the experiment recorded in a manifest. Writes metrics.csv and report.md
    Rerun(Rerun),
}

#[derive(Debug, Args)]
pub struct GenKg {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub people: Option<usize>,
    #[arg(long)]
    pub cities: Option<usize>,
    #[arg(long)]
    pub countries: Option<usize>,
    /// Number of occupations
    #[arg(long)]
    pub occupations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenQa {
    #[command(flatten)]
    pub common: Common,
    /// Triples TSV (head, relation, tail)
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub hop1: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub hop2: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainEmbed {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Pretrain {
    #[command(flatten)]
    pub common: Common,
    /// One sentence per line
    #[arg(long)]
    pub corpus: PathBuf,
    /// QA file whose questions and answers join the vocabulary
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Finetune {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint holding the model and its vocabulary
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// none, entity, relation or both
    #[arg(long, default_value = "both")]
    pub variant: Variant,
    /// Signed weight of the similarity term
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Keep the KG embedding tables fixed
    #[arg(long)]
    pub freeze_kg: bool,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    /// Used when the checkpoint carries no KG tables
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "both")]
    pub variant: Variant,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[command(flatten)]
    pub common: Common,
    /// Seeds as `1,2,3` or the inclusive range `1..5`
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Comma-separated variants
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
}

#[derive(Debug, Args)]
pub struct ScaleSweep {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    /// Ascending fractions in (0, 1], comma-separated
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestSquad {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct Report {
    #[command(flatten)]
    pub common: Common,
    /// Metrics CSV
    #[arg(long)]
    pub input: PathBuf,
    /// csv or markdown
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct Rerun {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Seeds given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

/// `1,2,3` or the inclusive range `1..5`.
pub fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed `{t}`"));
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(seeds))
}
