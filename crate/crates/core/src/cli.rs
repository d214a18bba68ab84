//! `defx` subcommands: train, eval, tag, verify, synth.
//!
//! Exit codes: 0 on success, 1 on internal failure (including failed
//! verification), 2 on usage, configuration or input errors.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{required, Config, ConfigError, TagsetChoice};
use crate::corpus::{
    load_embeddings, make_synthetic_corpus, parse_corpus, render_corpus, render_sentence_with, Sentence, TagSchema,
    TagSet, Vocab,
};
use crate::metrics::{self, Metrics};
use crate::model::{extract_pairs, Example, Model};
use crate::trainer::{Control, Trainer};
use crate::verify::{self, Fault, VerifyOptions};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Internal(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

macro_rules! overrides {
    ($($field:ident: $long:literal $(| $alias:literal)? => $help:literal),* $(,)?) => {
        /// Flags that override config-file values, one per config key.
        #[derive(Args, Debug, Default, Clone)]
        pub struct Overrides {
            $(
                #[arg(long = $long, value_name = "VALUE", help = $help $(, alias = $alias)?)]
                pub $field: Option<String>,
            )*
        }

        impl Overrides {
            /// `(config key, value)` for every flag given.
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

overrides! {
    word_dim: "word-dim" | "word_dim" => "word embedding width",
    pos_dim: "pos-dim" | "pos_dim" => "POS embedding width",
    h_dim: "h-dim" | "h_dim" => "BiLSTM output width (both directions)",
    g_dim: "g-dim" | "g_dim" => "GCN width",
    gcn_layers: "gcn-layers" | "gcn_layers" => "number of GCN layers",
    latent_labels: "latent-labels" | "latent_labels" => "number of latent labels",
    a: "a" => "weight of the direct consistency loss",
    b: "b" => "weight of the discriminator consistency loss",
    c: "c" => "weight of the latent-label consistency loss",
    alpha: "alpha" => "weight of the tagging loss",
    beta: "beta" => "weight of the sentence classification loss",
    gamma: "gamma" => "weight of the dependency path loss",
    eta: "eta" => "weight of the combined consistency losses",
    learning_rate: "learning-rate" | "learning_rate" => "Adam learning rate",
    adam_beta1: "adam-beta1" | "adam_beta1" => "Adam first-moment decay",
    adam_beta2: "adam-beta2" | "adam_beta2" => "Adam second-moment decay",
    adam_eps: "adam-eps" | "adam_eps" => "Adam epsilon",
    epochs: "epochs" => "maximum number of epochs",
    patience: "patience" => "early-stopping patience in epochs (needs a dev set)",
    seed: "seed" => "seed for every random choice",
    dropout: "dropout" => "dropout rate during training",
    grad_clip: "grad-clip" | "grad_clip" => "global gradient norm limit, 0 for none",
    train_path: "train-path" | "train_path" => "training corpus",
    dev_path: "dev-path" | "dev_path" => "development corpus for early stopping",
    test_path: "test-path" | "test_path" => "corpus to evaluate or tag",
    embeddings_path: "embeddings-path" | "embeddings_path" => "pretrained word vectors (text format)",
    checkpoint_path: "checkpoint-path" | "checkpoint_path" => "checkpoint to write or read",
    output_path: "out" | "output_path" => "where to write machine-readable output",
    log_path: "log-path" | "log_path" => "epoch log file",
    tagset: "tagset" => "auto, basic or qualifier",
    granularity: "granularity" => "class (B/I merged) or tag",
    kfold: "kfold" => "run k-fold cross-validation instead of a single evaluation",
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// `key = value` config file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Parser, Debug)]
#[command(name = "defx", version, about = "Joint definition extraction: tagging, classification and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus, or cross-validate with --kfold
    Eval(EvalArgs),
    /// Annotate a corpus with predicted tags, labels and term/definition pairs
    Tag(TagArgs),
    /// Run gradient checks and oracle comparisons
    Verify(VerifyArgs),
    /// Write a synthetic corpus
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Continue from the checkpoint at checkpoint_path if it exists
    #[arg(long)]
    pub resume: bool,
    /// Also write the checkpoint every N epochs (0: only at the end)
    #[arg(long, default_value_t = 0, alias = "checkpoint_every")]
    pub checkpoint_every: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaultArg {
    TransposedTransitions,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Deliberately break a component to confirm the checks catch it
    #[arg(long, value_enum, alias = "inject_fault")]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of sentences
    #[arg(long, default_value_t = 30)]
    pub count: usize,
}

/// Parses `argv` and runs the command, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Tag(a) => cmd_tag(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

pub fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        let text = read(path)?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    for (k, v) in common.overrides.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<Sentence>, CliError> {
    let corpus = parse_corpus(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if corpus.is_empty() {
        return Err(CliError::Usage(format!("{}: no sentences", path.display())));
    }
    Ok(corpus)
}

/// Writes to `path`, or stdout without one.
fn emit(path: Option<&PathBuf>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes()).map_err(internal)
        }
    }
}

fn schema_for(cfg: &Config, corpus: &[Sentence]) -> TagSchema {
    match cfg.tagset {
        TagsetChoice::Auto => TagSchema::detect(corpus),
        TagsetChoice::Fixed(s) => s,
    }
}

fn examples(model: &Model, corpus: &[Sentence], what: &Path) -> Result<Vec<Example>, CliError> {
    model.examples(corpus).map_err(|e| {
        CliError::Usage(format!(
            "{}: does not fit the model's {} tag set: {e}",
            what.display(),
            model.tagset.schema()
        ))
    })
}

/// A fresh model for `train`, with pretrained word vectors when configured.
fn fresh_model(cfg: &Config, train: &[Sentence]) -> Result<Model, CliError> {
    let vocab = Vocab::build(train);
    let tagset = TagSet::new(schema_for(cfg, train));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.hyper.seed);
    let mut model = Model::init(cfg.hyper.clone(), vocab, tagset, &mut rng);
    if let Some(path) = &cfg.embeddings_path {
        let (table, coverage) = load_embeddings(&read(path)?, &model.vocab, &mut rng)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if table.dim != cfg.hyper.word_dim {
            return Err(CliError::Usage(format!(
                "{}: vectors have {} dimensions but word_dim is {}",
                path.display(),
                table.dim,
                cfg.hyper.word_dim
            )));
        }
        *model.params.store.get_mut(model.params.word_emb) = table.matrix;
        eprintln!(
            "embeddings: {} of {} vocabulary words found",
            coverage.found, coverage.total
        );
    }
    Ok(model)
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let train_path = required("train_path", &cfg.train_path)?;
    let ckpt_path = required("checkpoint_path", &cfg.checkpoint_path)?;
    let train = read_corpus(train_path)?;
    let dev = cfg.dev_path.as_ref().map(|p| read_corpus(p)).transpose()?;

    let mut trainer = if args.resume && ckpt_path.exists() {
        let mut t = checkpoint::load(ckpt_path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", ckpt_path.display())))?;
        t.model.hyper.epochs = cfg.hyper.epochs;
        t
    } else {
        Trainer::new(fresh_model(&cfg, &train)?)
    };
    let seed = trainer.model.hyper.seed;
    eprintln!(
        "seed {seed}; {} training sentences; {} tags; {} parameters",
        train.len(),
        trainer.model.tagset.len(),
        trainer.model.params.store.num_scalars()
    );

    let train_ex = examples(&trainer.model, &train, train_path)?;
    let dev_ex = match (&dev, &cfg.dev_path) {
        (Some(d), Some(p)) => Some(examples(&trainer.model, d, p)?),
        _ => None,
    };

    let mut log = match &cfg.log_path {
        Some(p) => {
            let mut f = fs::File::create(p).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", p.display())))?;
            f.write_all(trainer.state.log_text().as_bytes()).map_err(internal)?;
            Some(f)
        }
        None => None,
    };
    let mut io_error = None;
    trainer
        .train(&train_ex, dev_ex.as_deref(), |record, t| {
            eprintln!("{record}");
            if let Some(f) = log.as_mut() {
                if let Err(e) = writeln!(f, "{record}") {
                    io_error = Some(internal(e));
                    return Control::Stop;
                }
            }
            if args.checkpoint_every > 0 && record.epoch % args.checkpoint_every == 0 {
                if let Err(e) = checkpoint::save(ckpt_path, t) {
                    io_error = Some(internal(e));
                    return Control::Stop;
                }
            }
            Control::Continue
        })
        .map_err(internal)?;
    if let Some(e) = io_error {
        return Err(e);
    }
    checkpoint::save(ckpt_path, &trainer).map_err(internal)?;
    let last = trainer.state.log.last();
    println!(
        "seed {seed}: trained {} epochs, final mean loss {}, checkpoint {}",
        trainer.state.epoch,
        last.map_or("-".to_string(), |r| r.mean_loss.to_string()),
        ckpt_path.display()
    );
    if dev_ex.is_some() {
        println!(
            "best dev macro F1 {:.4} at epoch {}",
            trainer.state.best_f1, trainer.state.best_epoch
        );
    }
    Ok(())
}

/// Token and sentence scores of `model` on a labeled corpus.
pub fn evaluate(model: &Model, corpus: &[Sentence], ex: &[Example], cfg: &Config) -> Result<Metrics, CliError> {
    let preds = model.predict_batch(ex).map_err(internal)?;
    let mut gold_tags = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.iter().enumerate() {
        let tags = s
            .gold_tags
            .clone()
            .ok_or_else(|| CliError::Usage(format!("sentence {} has no gold tags", i + 1)))?;
        gold_tags.push(tags);
    }
    let pred_tags: Vec<Vec<String>> = preds.iter().map(|p| model.tagset.decode(&p.tags)).collect();
    let mut m = metrics::token_macro_prf(&pred_tags, &gold_tags, &model.tagset, cfg.granularity).map_err(internal)?;
    let (mut pl, mut gl) = (Vec::new(), Vec::new());
    for (p, s) in preds.iter().zip(corpus) {
        if let Some(g) = s.sent_label {
            pl.push(p.definitional);
            gl.push(g);
        }
    }
    let scores = metrics::sentence_prf(&pl, &gl).map_err(internal)?;
    m.set_sentence_scores(scores, gl.len());
    Ok(m)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    seed: u64,
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct Summary {
    mean: f64,
    std: f64,
}

fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Summary { mean, std: var.sqrt() }
}

#[derive(Serialize)]
struct KfoldOutput {
    seed: u64,
    k: usize,
    folds: Vec<Metrics>,
    macro_p: Summary,
    macro_r: Summary,
    macro_f1: Summary,
    sentence_f1: Summary,
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    if let Some(k) = cfg.kfold {
        return cmd_kfold(&cfg, k);
    }
    let ckpt_path = required("checkpoint_path", &cfg.checkpoint_path)?;
    let test_path = required("test_path", &cfg.test_path)?;
    let model = checkpoint::load(ckpt_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", ckpt_path.display())))?
        .model;
    let corpus = read_corpus(test_path)?;
    let ex = examples(&model, &corpus, test_path)?;
    let m = evaluate(&model, &corpus, &ex, &cfg)?;
    // The seed that produced the checkpoint, not the (unused) config one.
    println!("seed {}", model.hyper.seed);
    print!("{}", m.report());
    if let Some(out) = &cfg.output_path {
        let doc = EvalOutput {
            seed: model.hyper.seed,
            metrics: &m,
        };
        write(out, &serde_json::to_string_pretty(&doc).map_err(internal)?)?;
    }
    Ok(())
}

fn cmd_kfold(cfg: &Config, k: usize) -> Result<(), CliError> {
    let train_path = required("train_path", &cfg.train_path)?;
    let corpus = read_corpus(train_path)?;
    let folds = metrics::kfold_split(corpus.len(), k, cfg.hyper.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let schema = schema_for(cfg, &corpus);
    let fold_cfg = Config {
        tagset: TagsetChoice::Fixed(schema),
        ..cfg.clone()
    };

    let results = crate::par::map(&folds, |fold| -> Result<Metrics, CliError> {
        let train: Vec<Sentence> = fold.train.iter().map(|&i| corpus[i].clone()).collect();
        let test: Vec<Sentence> = fold.test.iter().map(|&i| corpus[i].clone()).collect();
        let model = fresh_model(&fold_cfg, &train)?;
        let mut trainer = Trainer::new(model);
        let train_ex = examples(&trainer.model, &train, train_path)?;
        trainer.train(&train_ex, None, |_, _| Control::Continue).map_err(internal)?;
        let test_ex = examples(&trainer.model, &test, train_path)?;
        evaluate(&trainer.model, &test, &test_ex, &fold_cfg)
    });
    let folds_m = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    println!("seed {}; {k}-fold cross-validation over {} sentences", cfg.hyper.seed, corpus.len());
    for (i, m) in folds_m.iter().enumerate() {
        println!("\nfold {}", i + 1);
        print!("{}", m.report());
    }
    let pick = |f: fn(&Metrics) -> f64| folds_m.iter().map(f).collect::<Vec<_>>();
    let out = KfoldOutput {
        seed: cfg.hyper.seed,
        k,
        macro_p: summarize(&pick(|m| m.macro_p)),
        macro_r: summarize(&pick(|m| m.macro_r)),
        macro_f1: summarize(&pick(|m| m.macro_f1)),
        sentence_f1: summarize(&pick(|m| m.sentence_f1)),
        folds: folds_m,
    };
    println!("\nmean over {k} folds");
    for (name, s) in [
        ("macro precision", &out.macro_p),
        ("macro recall", &out.macro_r),
        ("macro f1", &out.macro_f1),
        ("sentence f1", &out.sentence_f1),
    ] {
        println!("{name:<16} {:.4} ± {:.4}", s.mean, s.std);
    }
    if let Some(path) = &cfg.output_path {
        write(path, &serde_json::to_string_pretty(&out).map_err(internal)?)?;
    }
    Ok(())
}

fn span_text(s: &Sentence, span: crate::corpus::Span) -> String {
    s.tokens[span.start..=span.end].join(" ")
}

fn cmd_tag(args: &TagArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let ckpt_path = required("checkpoint_path", &cfg.checkpoint_path)?;
    let input = required("test_path", &cfg.test_path)?;
    let model = checkpoint::load(ckpt_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", ckpt_path.display())))?
        .model;
    let corpus: Vec<Sentence> = read_corpus(input)?
        .into_iter()
        .map(|mut s| {
            s.gold_tags = None;
            s.spans.clear();
            s.sent_label = None;
            s
        })
        .collect();
    let ex = examples(&model, &corpus, input)?;
    let preds = model.predict_batch(&ex).map_err(internal)?;

    let mut out = String::new();
    for (i, (s, p)) in corpus.iter().zip(&preds).enumerate() {
        let tagged = model.annotate(s, p);
        let comments: Vec<String> = extract_pairs(&tagged.spans)
            .into_iter()
            .map(|(t, d)| {
                format!(
                    "pair: term {}-{} \"{}\" definition {}-{} \"{}\"",
                    t.start + 1,
                    t.end + 1,
                    span_text(&tagged, t),
                    d.start + 1,
                    d.end + 1,
                    span_text(&tagged, d)
                )
            })
            .collect();
        if i > 0 {
            out.push('\n');
        }
        render_sentence_with(&tagged, &comments, &mut out);
    }
    emit(cfg.output_path.as_ref(), &out)?;
    eprintln!("seed {}; tagged {} sentences", model.hyper.seed, corpus.len());
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let opts = VerifyOptions {
        seed: cfg.hyper.seed,
        fault: args.inject_fault.map(|f| match f {
            FaultArg::TransposedTransitions => Fault::TransposedTransitions,
        }),
        ..VerifyOptions::default()
    };
    let report = verify::run(&opts);
    println!("{report}");
    if let Some(path) = &cfg.output_path {
        write(path, &format!("{report}\n"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Internal(format!("verification failed: {}", names.join(", "))))
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    if args.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let corpus = make_synthetic_corpus(cfg.hyper.seed, args.count);
    emit(cfg.output_path.as_ref(), &render_corpus(&corpus))?;
    eprintln!("seed {}; wrote {} sentences", cfg.hyper.seed, corpus.len());
    Ok(())
}
