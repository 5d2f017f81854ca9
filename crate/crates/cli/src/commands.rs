use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kgfuse::data::{gen_qa, gen_synthetic_kg, ingest_squad, read_jsonl, squad_to_json, write_jsonl, QAExample};
use kgfuse::embed::{link_prediction_eval, load_embeddings, save_embeddings, train_kg_embeddings, EmbeddingNames, TransEConfig};
use kgfuse::harness::{
    build_world_vocab, emit_report, evaluate, parse_csv, rerun, run_ablation, run_scale_sweep, to_csv, ExperimentConfig,
    MetricsReport, ReportFormat, RunManifest, MANIFEST_FILE,
};
use kgfuse::kg::{load_triples_tsv, KnowledgeGraph};
use kgfuse::model::{ModelConfig, ModelParams, Vocabulary};
use kgfuse::trainer::{finetune, load_checkpoint, pretrain, save_checkpoint, Checkpoint, TrainConfig};
use kgfuse::{data::Category, EmbeddingTable};

use crate::args::*;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

struct Run<'a> {
    command: String,
    out: &'a Path,
    args: BTreeMap<String, String>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(self, seeds: Vec<u64>, config: Option<ExperimentConfig>) -> Result<()> {
        let path = self.path(MANIFEST_FILE);
        RunManifest::new(&self.command, seeds, config, self.args).save(path)?;
        println!("wrote {}", self.out.display());
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))
        }
    }
}

fn start<'a>(command: &'static str, common: &'a Common, args: BTreeMap<String, String>) -> Result<(Run<'a>, ExperimentConfig)> {
    let cfg = load_config(common.config.as_deref())?;
    fs::create_dir_all(&common.out)?;
    Ok((Run { command: command.into(), out: &common.out, args }, cfg))
}

fn load_kg(path: &Path) -> Result<KnowledgeGraph> {
    Ok(load_triples_tsv(path)?.0)
}

fn load_qa(path: &Path) -> Result<Vec<QAExample>> {
    Ok(read_jsonl(&fs::read_to_string(path)?)?)
}

/// Embedding rows must be indexed exactly like the graph.
fn load_aligned_embeddings(path: &Path, kg: &KnowledgeGraph) -> Result<EmbeddingTable> {
    let (emb, names) = load_embeddings(path)?;
    check_alignment(&names, kg)?;
    Ok(emb)
}

fn check_alignment(names: &EmbeddingNames, kg: &KnowledgeGraph) -> Result<()> {
    if *names != EmbeddingNames::from_graph(kg) {
        return Err(CliError::invalid("embedding names do not match the KG's entities and relations"));
    }
    Ok(())
}

fn json_line(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn require_nonempty(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(CliError::invalid("at least one seed is required"));
    }
    Ok(())
}

pub fn run(command: Command, args: BTreeMap<String, String>) -> Result<()> {
    match command {
        Command::GenKg(a) => gen_kg(a, args),
        Command::GenQa(a) => gen_qa_cmd(a, args),
        Command::TrainEmbed(a) => train_embed(a, args),
        Command::Pretrain(a) => pretrain_cmd(a, args),
        Command::Finetune(a) => finetune_cmd(a, args),
        Command::Eval(a) => eval_cmd(a, args),
        Command::Ablate(a) => ablate(a, args),
        Command::ScaleSweep(a) => scale_sweep(a, args),
        Command::IngestSquad(a) => ingest(a, args),
        Command::Report(a) => report(a, args),
        Command::Rerun(a) => rerun_cmd(a, args),
    }
}

fn gen_kg(a: GenKg, args: BTreeMap<String, String>) -> Result<()> {
    let (run, cfg) = start("gen-kg", &a.common, args)?;
    let mut spec = cfg.kg;
    if let Some(n) = a.people {
        spec.n_people = n;
    }
    if let Some(n) = a.cities {
        spec.n_cities = n;
    }
    if let Some(n) = a.countries {
        spec.n_countries = n;
    }
    if let Some(n) = a.occupations {
        spec.occupations = (0..n).map(|i| format!("occupation_{i}")).collect();
    }
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    let (kg, corpus) = gen_synthetic_kg(&spec)?;
    kg.save_tsv(run.path("triples.tsv"))?;
    fs::write(run.path("corpus.txt"), corpus.join("\n") + "\n")?;
    println!("{} entities, {} relations, {} triples", kg.num_entities(), kg.num_relations(), kg.triples().len());
    run.finish(vec![spec.seed], None)
}

fn gen_qa_cmd(a: GenQa, args: BTreeMap<String, String>) -> Result<()> {
    let (run, cfg) = start("gen-qa", &a.common, args)?;
    let kg = load_kg(&a.kg)?;
    let mut counts = cfg.qa;
    counts.hop1 = a.hop1.unwrap_or(counts.hop1);
    counts.context = a.context.unwrap_or(counts.context);
    counts.hop2 = a.hop2.unwrap_or(counts.hop2);
    let seed = a.common.seed.unwrap_or(cfg.qa_seed);
    let qa = gen_qa(&kg, &counts, seed)?;
    fs::write(run.path("qa.jsonl"), write_jsonl(&qa))?;
    println!("{} questions", qa.len());
    run.finish(vec![seed], None)
}

fn train_embed(a: TrainEmbed, args: BTreeMap<String, String>) -> Result<()> {
    let (run, cfg) = start("train-embed", &a.common, args)?;
    let kg = load_kg(&a.kg)?;
    let transe = TransEConfig {
        epochs: a.epochs.unwrap_or(cfg.transe.epochs),
        learning_rate: a.lr.unwrap_or(cfg.transe.learning_rate),
        seed: a.common.seed.unwrap_or(cfg.transe.seed),
        ..cfg.transe
    };
    let dim = a.dim.unwrap_or(cfg.model.d_kg);
    let (emb, losses) = train_kg_embeddings(&kg, &transe, dim)?;
    save_embeddings(&emb, &EmbeddingNames::from_graph(&kg), run.path("embeddings.txt"))?;
    fs::write(run.path("transe_loss.json"), json_line(&serde_json::json!(losses)))?;
    let lp = link_prediction_eval(&emb, &kg, 10)?;
    println!("hits@10 {:.4}, mean rank {:.2}", lp.hits_at_k, lp.mean_rank);
    run.finish(vec![transe.seed], None)
}

fn pretrain_cmd(a: Pretrain, args: BTreeMap<String, String>) -> Result<()> {
    let (run, cfg) = start("pretrain", &a.common, args)?;
    let corpus: Vec<String> =
        fs::read_to_string(&a.corpus)?.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect();
    let qa = match &a.qa {
        Some(p) => load_qa(p)?,
        None => Vec::new(),
    };
    let vocab = build_world_vocab(&corpus, &qa)?;
    let seed = a.common.seed.unwrap_or(cfg.pretrain.seed);
    let model = ModelConfig { vocab_size: vocab.len(), ..cfg.model };
    let init = ModelParams::init(&model, seed)?;
    let tcfg = TrainConfig { seed, max_steps: a.steps.unwrap_or(cfg.pretrain.max_steps), ..cfg.pretrain };
    let ids: Vec<Vec<usize>> = corpus.iter().map(|s| vocab.encode(s)).collect();
    let (params, trace) = pretrain(&init, &ids, &tcfg)?;
    let ck = Checkpoint { params, vocab: Some(vocab), train: Some(tcfg), loss: None, embeddings: None };
    save_checkpoint(&ck, run.path("model.ckpt"))?;
    fs::write(run.path("pretrain_trace.json"), json_line(&serde_json::json!(trace)))?;
    if let Some(last) = trace.last() {
        println!("final window loss {last:.4}");
    }
    run.finish(vec![seed], None)
}

fn checkpoint_vocab(ck: &Checkpoint) -> Result<&Vocabulary> {
    ck.vocab.as_ref().ok_or_else(|| CliError::invalid("checkpoint carries no vocabulary"))
}

fn finetune_cmd(a: Finetune, args: BTreeMap<String, String>) -> Result<()> {
    let (run, cfg) = start("finetune", &a.common, args)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?.clone();
    let kg = load_kg(&a.kg)?;
    let emb = load_aligned_embeddings(&a.embeddings, &kg)?;
    let qa = load_qa(&a.qa)?;
    let mut loss = cfg.loss;
    if let Some(l) = a.lambda {
        loss.lambda = l;
    }
    let tcfg = TrainConfig {
        seed: a.common.seed.unwrap_or(cfg.finetune.seed),
        max_steps: a.steps.unwrap_or(cfg.finetune.max_steps),
        kg_embeddings_trainable: cfg.finetune.kg_embeddings_trainable && !a.freeze_kg,
        ..cfg.finetune
    };
    let out = finetune(&ck.params, &qa, &kg, &emb, &vocab, &loss, a.variant, &tcfg)?;
    let mut trace = String::from("step,L,Sim,L_prime\n");
    for t in &out.trace {
        let _ = writeln!(trace, "{},{:.16e},{:.16e},{:.16e}", t.step, t.l, t.sim, t.l_prime);
    }
    fs::write(run.path("trace.csv"), trace)?;
    let tuned = out.emb.unwrap_or(emb);
    let seed = tcfg.seed;
    let ck = Checkpoint {
        params: out.params,
        vocab: Some(vocab),
        train: Some(tcfg),
        loss: Some(loss),
        embeddings: Some((tuned, EmbeddingNames::from_graph(&kg))),
    };
    save_checkpoint(&ck, run.path("model.ckpt"))?;
    if let Some(t) = out.trace.last() {
        println!("final L {:.4}, Sim {:.4}, L' {:.4}", t.l, t.sim, t.l_prime);
    }
    run.finish(vec![seed], None)
}

fn eval_cmd(a: Eval, args: BTreeMap<String, String>) -> Result<()> {
    let (run, _) = start("eval", &a.common, args)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let vocab = checkpoint_vocab(&ck)?;
    let kg = load_kg(&a.kg)?;
    let emb = match (&ck.embeddings, &a.embeddings) {
        (_, Some(p)) => load_aligned_embeddings(p, &kg)?,
        (Some((e, names)), None) => {
            check_alignment(names, &kg)?;
            e.clone()
        }
        (None, None) => return Err(CliError::invalid("checkpoint has no KG tables; pass --embeddings")),
    };
    let qa = load_qa(&a.qa)?;
    let scores = evaluate(&ck.params, Some((&kg, &emb)), vocab, &qa, a.variant)?;
    let seed = a.common.seed.unwrap_or(0);
    let row = MetricsReport {
        variant: a.variant,
        kg_fraction: 1.0,
        seed,
        em_hop1: scores.em(Category::Hop1),
        em_context: scores.em(Category::Context),
        em_hop2: scores.em(Category::Hop2),
        n_hop1: scores.total(Category::Hop1),
        n_context: scores.total(Category::Context),
        n_hop2: scores.total(Category::Hop2),
        final_l: f64::NAN,
        final_sim: f64::NAN,
    };
    println!("em hop1 {:.4}, context {:.4}, hop2 {:.4}", row.em_hop1, row.em_context, row.em_hop2);
    fs::write(run.path("metrics.csv"), to_csv(&[row]))?;
    run.finish(vec![seed], None)
}

fn write_experiment(run: Run<'_>, cfg: ExperimentConfig, rows: &[MetricsReport]) -> Result<()> {
    emit_report(rows, ReportFormat::Csv, run.path("metrics.csv"))?;
    emit_report(rows, ReportFormat::Markdown, run.path("report.md"))?;
    println!("{} reports", rows.len());
    run.finish(cfg.seeds.clone(), Some(cfg))
}

fn seeds_for(cli: Option<SeedList>, single: Option<u64>, cfg: &mut ExperimentConfig) -> Result<()> {
    if let Some(SeedList(s)) = cli {
        cfg.seeds = s;
    } else if let Some(s) = single {
        cfg.seeds = vec![s];
    }
    require_nonempty(&cfg.seeds)
}

fn ablate(a: Ablate, args: BTreeMap<String, String>) -> Result<()> {
    let (run, mut cfg) = start("ablate", &a.common, args)?;
    seeds_for(a.seeds, a.common.seed, &mut cfg)?;
    if let Some(l) = a.lambda {
        cfg.loss.lambda = l;
    }
    if let Some(v) = a.variants {
        cfg.variants = v;
    }
    let rows = run_ablation(&cfg)?;
    write_experiment(run, cfg, &rows)
}

fn scale_sweep(a: ScaleSweep, args: BTreeMap<String, String>) -> Result<()> {
    let (run, mut cfg) = start("scale-sweep", &a.common, args)?;
    seeds_for(a.seeds, a.common.seed, &mut cfg)?;
    if let Some(l) = a.lambda {
        cfg.loss.lambda = l;
    }
    if let Some(f) = a.fractions {
        cfg.fractions = f;
    }
    let rows = run_scale_sweep(&cfg)?;
    write_experiment(run, cfg, &rows)
}

fn ingest(a: IngestSquad, args: BTreeMap<String, String>) -> Result<()> {
    let (run, _) = start("ingest-squad", &a.common, args)?;
    let examples = ingest_squad(&a.input)?;
    fs::write(run.path("squad.json"), json_line(&squad_to_json(&examples)))?;
    println!("{} questions, all answer offsets valid", examples.len());
    run.finish(Vec::new(), None)
}

fn report(a: Report, args: BTreeMap<String, String>) -> Result<()> {
    let (run, _) = start("report", &a.common, args)?;
    let rows = parse_csv(&fs::read_to_string(&a.input)?)?;
    let name = match a.format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Markdown => "report.md",
    };
    emit_report(&rows, a.format, run.path(name))?;
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    run.finish(seeds, None)
}

fn rerun_cmd(a: Rerun, args: BTreeMap<String, String>) -> Result<()> {
    let (mut run, _) = start("rerun", &a.common, args)?;
    let manifest = RunManifest::load(&a.manifest)?;
    // The new manifest describes the experiment itself, so it can be re-run too.
    run.command = manifest.command.clone();
    let rows = rerun(&manifest)?;
    let cfg = manifest.config.expect("rerun succeeded, so the manifest has a config");
    write_experiment(run, cfg, &rows)
}
