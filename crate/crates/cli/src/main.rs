use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctxlm::checkpoint::Checkpoint;
use ctxlm::corpus::{ContextValueRegistry, EncodedExample, Encoder, RawCorpus, Vocabulary, EOS_ID};
use ctxlm::eval::{accuracy_f1, average_auc, beam_search, classify, perplexity, ClassificationTask, ModelScorer, ScoringMode};
use ctxlm::tokenize::{tokenizers, Tokenizer};
use ctxlm::train::{build_objective, fit, Prepared, TrainConfig};
use serde_json::{json, Value};

const VOCAB_FILE: &str = "vocab.txt";
const CONTEXTS_FILE: &str = "contexts.tsv";

/// Context-adapted language models: build tables, train, evaluate, generate.
#[derive(Parser)]
#[command(name = "ctxlm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and context value registry from a training file.
    BuildVocab(BuildVocab),
    /// Train a model; writes <out>/best.ckpt and <out>/metrics.jsonl.
    Train(Train),
    /// Per-token perplexity of a TSV file.
    Ppl(Ppl),
    /// Identify one context variable of each sentence.
    Classify(Classify),
    /// Generate a sentence under given context values.
    Generate(Generate),
    /// Nearest context values by embedding distance.
    Neighbors(Neighbors),
}

/// Config file plus `--set key=value` overrides.
#[derive(Args)]
struct ConfigArgs {
    /// JSON training config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; the value is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut value = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => json!({}),
        };
        let obj = value.as_object_mut().ok_or_else(|| anyhow!("config must be a JSON object"))?;
        for o in &self.overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{o}`"))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            obj.insert(key.to_string(), v);
        }
        if let Some(seed) = self.seed {
            obj.insert("seed".into(), json!(seed));
        }
        Ok(TrainConfig::from_json(&value.to_string())?)
    }
}

#[derive(Args)]
struct BuildVocab {
    #[arg(long)]
    train: PathBuf,
    /// Output directory for vocab.txt and contexts.tsv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    train: PathBuf,
    /// Held-out file for early stopping and model selection.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory written by build-vocab; built from the training file otherwise.
    #[arg(long)]
    tables: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Ppl {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eval: PathBuf,
}

#[derive(Args)]
struct Classify {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    /// Name of the context variable to identify.
    #[arg(long)]
    variable: String,
    /// Candidate values, comma separated; all retained values by default.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    /// Score with a sampled objective of this many negatives instead of the
    /// exact softmax.
    #[arg(long)]
    approximate: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Generate {
    #[arg(long)]
    model: PathBuf,
    /// Context assignment, repeated once per variable.
    #[arg(long = "context", value_name = "VAR=VALUE")]
    contexts: Vec<String>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
}

#[derive(Args)]
struct Neighbors {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    variable: String,
    #[arg(long)]
    value: String,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn tokenizer(config: &TrainConfig) -> Result<Box<dyn Tokenizer>> {
    Ok(tokenizers().create(&config.tokenizer, &())?)
}

fn read_corpus(path: &Path, config: &TrainConfig) -> Result<RawCorpus> {
    Ok(RawCorpus::read(path, tokenizer(config)?.as_ref())?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn encode(ckpt: &Checkpoint, path: &Path) -> Result<Vec<EncodedExample>> {
    let corpus = read_corpus(path, &ckpt.train_config)?;
    let encoder = Encoder::new(&ckpt.vocab, &ckpt.registry, ckpt.train_config.max_len);
    Ok(encoder.encode_all(&corpus)?)
}

fn variable_index(ckpt: &Checkpoint, name: &str) -> Result<usize> {
    ckpt.registry.variable_index(name).ok_or_else(|| {
        let known: Vec<&str> = ckpt.registry.variables.iter().map(|v| v.name.as_str()).collect();
        anyhow!("unknown context variable `{name}` (known: {})", known.join(", "))
    })
}

fn build_vocab(args: BuildVocab) -> Result<()> {
    let config = args.config.load()?;
    let corpus = read_corpus(&args.train, &config)?;
    let vocab = Vocabulary::build(&corpus, config.min_count, config.max_len)?;
    let registry =
        ContextValueRegistry::build(&corpus, &config.context_names, config.context_threshold, config.max_len)?;
    fs::create_dir_all(&args.out)?;
    vocab.write_tokens(args.out.join(VOCAB_FILE))?;
    registry.write(args.out.join(CONTEXTS_FILE))?;
    let summary = json!({
        "sentences": corpus.len(),
        "vocab_size": vocab.len(),
        "oov_rate": vocab.oov_rate(&corpus),
        "context_cardinalities": registry
            .variables
            .iter()
            .map(|v| (v.name.clone(), json!(v.cardinality())))
            .collect::<serde_json::Map<_, _>>(),
    });
    println!("{summary}");
    Ok(())
}

fn train(args: Train) -> Result<()> {
    let config = args.config.load()?;
    let train = read_corpus(&args.train, &config)?;
    let heldout = args.heldout.as_deref().map(|p| read_corpus(p, &config)).transpose()?;
    let tables = match &args.tables {
        Some(dir) => Some((
            Vocabulary::read_tokens(dir.join(VOCAB_FILE))?,
            ContextValueRegistry::read(dir.join(CONTEXTS_FILE))?,
        )),
        None => None,
    };
    let data = Prepared::new(&config, &train, heldout.as_ref(), tables)?;
    log::info!(
        "{} training / {} held-out sentences, vocabulary {}",
        data.train.len(),
        data.heldout.len(),
        data.vocab.len()
    );
    fs::create_dir_all(&args.out)?;
    let mut metrics_out = BufWriter::new(fs::File::create(args.out.join("metrics.jsonl"))?);
    let mut write_error = None;
    let (ckpt, metrics) = fit(&config, &data, |m, _| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(metrics_out, "{line}").and_then(|_| metrics_out.flush()) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).context("writing metrics.jsonl");
    }
    let path = args.out.join("best.ckpt");
    ckpt.save(&path)?;
    let last = metrics.last().expect("at least one epoch");
    let best_ppl = metrics.iter().filter_map(|m| m.heldout_ppl).fold(None, |b: Option<f64>, p| {
        Some(b.map_or(p, |b| b.min(p)))
    });
    println!(
        "{}",
        json!({
            "checkpoint": path,
            "epochs": metrics.len(),
            "final_train_loss": last.train_loss,
            "best_heldout_ppl": best_ppl,
            "parameters": ckpt.model.params.num_parameters(),
        })
    );
    Ok(())
}

fn ppl(args: Ppl) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let examples = encode(&ckpt, &args.eval)?;
    println!("{:.6}", perplexity(&ckpt.model, &examples)?);
    Ok(())
}

fn run_classify(args: Classify) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let var_idx = variable_index(&ckpt, &args.variable)?;
    let var = &ckpt.registry.variables[var_idx];
    let names: Vec<String> = if args.candidates.is_empty() {
        var.values().to_vec()
    } else {
        args.candidates.clone()
    };
    let candidates = names
        .iter()
        .map(|n| var.get(n).ok_or_else(|| anyhow!("`{n}` is not a known value of `{}`", var.name)))
        .collect::<Result<Vec<u32>>>()?;
    let task = ClassificationTask {
        target_variable: var_idx,
        candidates: candidates.clone(),
    };
    let objective = match args.approximate {
        Some(k) => {
            let mut cfg = ckpt.train_config.clone();
            cfg.negative_samples = k.max(1);
            Some(build_objective(&cfg, &ckpt.vocab.unigram())?)
        }
        None => None,
    };
    let mode = match &objective {
        Some(o) => ScoringMode::Approximate {
            objective: o.as_ref(),
            seed: args.seed,
        },
        None => ScoringMode::Exact,
    };

    let examples = encode(&ckpt, &args.eval)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "index\tgold\tpredicted\t{}", names.iter().map(|n| format!("ppl:{n}")).collect::<Vec<_>>().join("\t"))?;
    let (mut predicted, mut gold, mut scores, mut gold_index) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for (i, ex) in examples.iter().enumerate() {
        let truth = ex.context_ids[var_idx];
        let Some(gi) = candidates.iter().position(|&c| c == truth) else {
            skipped += 1;
            continue;
        };
        let c = classify(&ckpt.model, &task, ex, &mode)?;
        let ppls: Vec<String> = c.perplexities.iter().map(|p| format!("{p:.6}")).collect();
        writeln!(out, "{i}\t{}\t{}\t{}", var.value(truth), names[c.predicted], ppls.join("\t"))?;
        predicted.push(c.predicted);
        gold.push(gi);
        gold_index.push(gi);
        scores.push(c.scores);
    }
    if skipped > 0 {
        log::warn!("{skipped} sentences whose value is not a candidate were skipped");
    }
    if gold.is_empty() {
        bail!("no sentence has a candidate value of `{}`", var.name);
    }
    let (accuracy, f1) = accuracy_f1(&predicted, &gold)?;
    let auc = average_auc(&scores, &gold_index)?;
    writeln!(
        out,
        "{}",
        json!({
            "examples": gold.len(),
            "accuracy": accuracy,
            "macro_f1": f1,
            "average_auc": auc.mean,
            "per_class_auc": names.iter().zip(&auc.per_class).map(|(n, a)| (n.clone(), json!(a))).collect::<serde_json::Map<_, _>>(),
        })
    )?;
    Ok(())
}

fn generate(args: Generate) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let mut ids: Vec<Option<u32>> = vec![None; ckpt.registry.len()];
    for assignment in &args.contexts {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("--context expects VAR=VALUE, got `{assignment}`"))?;
        let idx = variable_index(&ckpt, name)?;
        let var = &ckpt.registry.variables[idx];
        ids[idx] = Some(var.get(value).unwrap_or_else(|| {
            log::warn!("unseen value `{value}` for `{name}`; using its UNK bucket");
            var.unk_id()
        }));
    }
    let ids = ids
        .into_iter()
        .zip(&ckpt.registry.variables)
        .map(|(id, v)| id.ok_or_else(|| anyhow!("missing --context for variable `{}`", v.name)))
        .collect::<Result<Vec<u32>>>()?;
    if args.beam == 0 || args.max_len == 0 {
        bail!("--beam and --max-len must be positive");
    }
    let scorer = ModelScorer::new(&ckpt.model, &ids)?;
    let hyp = beam_search(&scorer, args.beam, args.max_len);
    let sep = if ckpt.train_config.tokenizer == "char" { "" } else { " " };
    let text: Vec<&str> = hyp
        .tokens
        .iter()
        .filter(|&&t| t != EOS_ID)
        .map(|&t| ckpt.vocab.token(t))
        .collect();
    println!("{}\t{:.6}", text.join(sep), hyp.log_prob);
    Ok(())
}

fn neighbors(args: Neighbors) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let idx = variable_index(&ckpt, &args.variable)?;
    let var = &ckpt.registry.variables[idx];
    let id = var
        .get(&args.value)
        .ok_or_else(|| anyhow!("`{}` is not a known value of `{}`", args.value, var.name))?;
    for (rank, (other, dist)) in ckpt.model.params.context.nearest_neighbors(idx, id, args.top)?.iter().enumerate() {
        println!("{}\t{}\t{dist:.6}", rank + 1, var.value(*other));
    }
    Ok(())
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string().replace('\n', " ");
        if !parts.last().is_some_and(|p| p.contains(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(a) => train(a),
        Command::Ppl(a) => ppl(a),
        Command::Classify(a) => run_classify(a),
        Command::Generate(a) => generate(a),
        Command::Neighbors(a) => neighbors(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
