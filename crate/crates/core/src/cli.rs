//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Training knobs come from defaults, then a `key=value` config file
//! (`--config`, or the path in `MIDL_CONFIG`), then individual flags.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{train_baseline, BaselineKind};
use crate::evaluation::{
    breakdown_to_tsv, curve_to_tsv, evaluate, learning_curve, probabilities, user_activity_breakdown, EvalError,
};
use crate::ingest::{
    ingest_dump, read_bags, reference_stats, split, stats, write_bags, Bag, DatasetSplit, ForumStats, Tokenizer, Vocab,
    DEFAULT_MAX_LEN, DEFAULT_MIN_COUNT,
};
use crate::mil_ntn::predict;
use crate::synthdata::{generate, synthetic_vocab, SynthConfig};
use crate::training::checkpoint::{load_checkpoint_file, save_checkpoint_file, Checkpoint};
use crate::training::gradcheck::{model_gradcheck, GradCheckSetup};
use crate::training::{log_to_tsv, pretrained_embeddings, train, Dims, TrainConfig, TrainError};

pub const CONFIG_ENV: &str = "MIDL_CONFIG";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ if e.is_numeric() => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::BadFraction(_) => CliError::Usage(format!("--fractions: {e}")),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "midl", version, about = "Multiple-instance answer-quality prediction for Q&A forums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a Posts.xml dump into bags and a vocabulary.
    Ingest(IngestArgs),
    /// Question, answer, user and satisfied-fraction counts of a bags file.
    Stats(StatsArgs),
    /// Generate the synthetic trigger-token dataset.
    Synth(SynthArgs),
    /// Pretrain skip-gram word embeddings and export them as text.
    Pretrain(PretrainArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Per-bag probability and predicted label.
    Predict(PredictArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck(GradcheckArgs),
    /// Held-out metrics versus amount of training data.
    Curve(CurveArgs),
    /// Held-out metrics grouped by asker activity.
    Breakdown(BreakdownArgs),
    /// Bag-of-words logistic baselines.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Posts.xml from a Stack Exchange dump.
    posts: PathBuf,
    /// Output bags file (one JSON bag per line).
    #[arg(long)]
    out: PathBuf,
    /// Output vocabulary (token, id, count per line).
    #[arg(long)]
    vocab: PathBuf,
    /// Maximum tokens kept per text.
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Minimum corpus frequency for a token to get its own id.
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Bags file.
    bags: PathBuf,
    /// Also print the published counts for this forum and the difference.
    #[arg(long)]
    reference: Option<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of bags.
    #[arg(long, default_value_t = 2000)]
    bags: usize,
    /// Vocabulary size, including the two reserved ids.
    #[arg(long, default_value_t = 50)]
    vocab_size: usize,
    /// Fraction of positive bags.
    #[arg(long, default_value_t = 0.5)]
    trigger_rate: f64,
    /// Trigger token id.
    #[arg(long, default_value_t = 2)]
    trigger: u32,
    /// Fewest answers per bag.
    #[arg(long, default_value_t = 1)]
    min_answers: usize,
    /// Most answers per bag.
    #[arg(long, default_value_t = 4)]
    max_answers: usize,
    /// Shortest question or answer, in tokens.
    #[arg(long, default_value_t = 4)]
    min_tokens: usize,
    /// Longest question or answer, in tokens.
    #[arg(long, default_value_t = 12)]
    max_tokens: usize,
    /// Number of distinct askers.
    #[arg(long, default_value_t = 200)]
    users: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output bags file.
    #[arg(long)]
    out: PathBuf,
    /// Output vocabulary for the synthetic ids.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

/// Training hyperparameters. Each overrides the config file.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// key=value config file; defaults to $MIDL_CONFIG when set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// L2 weight.
    #[arg(long)]
    lambda: Option<String>,
    /// Initial learning rate.
    #[arg(long)]
    rho: Option<String>,
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<String>,
    /// Seed for the split, the init and the bag order.
    #[arg(long)]
    seed: Option<String>,
    /// Word embedding size.
    #[arg(long)]
    word_dim: Option<String>,
    /// LSTM state size per direction.
    #[arg(long)]
    hidden_dim: Option<String>,
    /// Asker embedding size.
    #[arg(long)]
    user_dim: Option<String>,
    /// Number of tensor slices.
    #[arg(long)]
    slices: Option<String>,
    /// Global gradient-norm clip, or "none".
    #[arg(long)]
    clip: Option<String>,
    /// true to keep word embeddings fixed after pretraining.
    #[arg(long)]
    freeze_embeddings: Option<String>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<String>,
    /// Probability threshold for a positive prediction.
    #[arg(long)]
    threshold: Option<String>,
    /// Half-width of the uniform parameter init.
    #[arg(long)]
    init_scale: Option<String>,
    /// Skip-gram context window on each side.
    #[arg(long)]
    skipgram_window: Option<String>,
    /// Negative samples per context pair.
    #[arg(long)]
    skipgram_negatives: Option<String>,
    /// Skip-gram epochs; 0 disables pretraining.
    #[arg(long)]
    skipgram_epochs: Option<String>,
    /// Skip-gram starting learning rate.
    #[arg(long)]
    skipgram_lr: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> [(&'static str, &'static str, &Option<String>); 17] {
        [
            ("lambda", "--lambda", &self.lambda),
            ("rho", "--rho", &self.rho),
            ("epochs", "--epochs", &self.epochs),
            ("seed", "--seed", &self.seed),
            ("word_dim", "--word-dim", &self.word_dim),
            ("hidden_dim", "--hidden-dim", &self.hidden_dim),
            ("user_dim", "--user-dim", &self.user_dim),
            ("slices", "--slices", &self.slices),
            ("clip", "--clip", &self.clip),
            ("freeze_embeddings", "--freeze-embeddings", &self.freeze_embeddings),
            ("patience", "--patience", &self.patience),
            ("threshold", "--threshold", &self.threshold),
            ("init_scale", "--init-scale", &self.init_scale),
            ("skipgram_window", "--skipgram-window", &self.skipgram_window),
            ("skipgram_negatives", "--skipgram-negatives", &self.skipgram_negatives),
            ("skipgram_epochs", "--skipgram-epochs", &self.skipgram_epochs),
            ("skipgram_lr", "--skipgram-lr", &self.skipgram_lr),
        ]
    }

    fn resolve(&self) -> CliResult<TrainConfig> {
        let mut config = TrainConfig::default();
        let file = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        if let Some(path) = file {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            config
                .apply_lines(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        }
        for (key, flag, value) in self.overrides() {
            if let Some(v) = value {
                config.set(key, v).map_err(|e| CliError::Usage(format!("{flag}: {e}")))?;
            }
        }
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// Output text embeddings: token followed by its vector.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Per-epoch training log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// Evaluate every bag in the file instead of the held-out split.
    #[arg(long)]
    all: bool,
    /// Write the metrics here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Word embedding size.
    #[arg(long, default_value_t = 5)]
    word_dim: usize,
    /// LSTM state size per direction.
    #[arg(long, default_value_t = 4)]
    hidden_dim: usize,
    /// Asker embedding size.
    #[arg(long, default_value_t = 3)]
    user_dim: usize,
    /// Number of tensor slices.
    #[arg(long, default_value_t = 3)]
    slices: usize,
    /// Answers in the random bag.
    #[arg(long, default_value_t = 3)]
    answers: usize,
    /// Seed for the random model and bag.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// L2 weight added to the checked objective.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = crate::numerics::DEFAULT_GRADCHECK_EPSILON)]
    epsilon: f64,
    /// Fail (exit 3) when any group exceeds this relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// Comma-separated training fractions in (0, 1].
    #[arg(long, default_value = "0.1,0.25,0.5,1.0")]
    fractions: String,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct BreakdownArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// Bags file (one JSON bag per line).
    bags: PathBuf,
    /// Vocabulary the bags were encoded with.
    #[arg(long)]
    vocab: PathBuf,
    /// mean, max or both.
    #[arg(long, default_value = "both")]
    kind: String,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Breakdown(a) => cmd_breakdown(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| data_err(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| data_err(path, e))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| data_err(path, e))
}

/// Writes `text` to `path`, or to standard output.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            std::io::stdout()
                .flush()
                .map_err(|e| CliError::Data(format!("standard output: {e}")))
        }
    }
}

fn load_bags(path: &Path) -> CliResult<Vec<Bag>> {
    read_bags(open(path)?).map_err(|e| data_err(path, e))
}

fn load_vocab(path: &Path) -> CliResult<Vocab> {
    Vocab::read_tsv(open(path)?).map_err(|e| data_err(path, e))
}

fn check_bags(bags: &[Bag], vocab: &Vocab, path: &Path) -> CliResult<()> {
    for b in bags {
        b.validate(vocab.len()).map_err(|e| data_err(path, e))?;
    }
    Ok(())
}

fn load_model(path: &Path, vocab: &Vocab, vocab_path: &Path) -> CliResult<Checkpoint> {
    let cp = load_checkpoint_file(path).map_err(|e| data_err(path, e))?;
    cp.check_vocab(&vocab.hash())
        .map_err(|e| CliError::Data(format!("{} vs {}: {e}", path.display(), vocab_path.display())))?;
    Ok(cp)
}

fn split_or_err(bags: &[Bag], seed: u64, path: &Path) -> CliResult<DatasetSplit> {
    split(bags, seed).map_err(|e| data_err(path, e))
}

fn cmd_ingest(a: IngestArgs) -> CliResult<()> {
    if a.max_len == 0 {
        return Err(CliError::Usage("--max-len must be at least 1".into()));
    }
    let out = ingest_dump(open(&a.posts)?, &Tokenizer::new(a.max_len), a.min_count).map_err(|e| data_err(&a.posts, e))?;
    let mut bag_out = create(&a.out)?;
    write_bags(&out.report.bags, &mut bag_out).map_err(|e| data_err(&a.out, e))?;
    bag_out.flush().map_err(|e| data_err(&a.out, e))?;
    let mut vocab_out = create(&a.vocab)?;
    out.vocab
        .write_tsv(&mut vocab_out)
        .and_then(|_| vocab_out.flush())
        .map_err(|e| data_err(&a.vocab, e))?;
    let r = &out.report;
    println!("posts\t{}", out.post_count);
    println!("skipped_rows\t{}", out.tally.skipped);
    println!("rejected_rows\t{}", out.tally.rejected);
    println!("bags\t{}", r.bags.len());
    println!("dropped_unanswered\t{}", r.dropped_unanswered);
    println!("dropped_no_owner\t{}", r.dropped_no_owner);
    println!("orphan_answers\t{}", r.orphan_answers);
    println!("vocab_size\t{}", out.vocab.len());
    Ok(())
}

fn stats_row(name: &str, s: &ForumStats) -> String {
    format!(
        "{name}\t{}\t{}\t{}\t{:.1}\n",
        s.question_count,
        s.answer_count,
        s.user_count,
        100.0 * s.satisfied_fraction
    )
}

fn cmd_stats(a: StatsArgs) -> CliResult<()> {
    let s = stats(&load_bags(&a.bags)?);
    let reference = match &a.reference {
        Some(name) => Some(
            reference_stats(name)
                .ok_or_else(|| CliError::Usage(format!("--reference: unknown forum {name:?}")))?,
        ),
        None => None,
    };
    if a.json {
        let mut doc = serde_json::json!({ "dataset": s });
        if let Some(r) = reference {
            doc["reference"] = serde_json::json!(r);
        }
        println!("{}", serde_json::to_string_pretty(&doc).expect("stats serialize"));
        return Ok(());
    }
    let mut out = String::from("source\tquestions\tanswers\tusers\tsatisfied_pct\n");
    out.push_str(&stats_row("dataset", &s));
    if let Some(r) = reference {
        out.push_str(&stats_row("reference", &r));
        out.push_str(&format!(
            "difference\t{}\t{}\t{}\t{:.1}\n",
            s.question_count as i64 - r.question_count as i64,
            s.answer_count as i64 - r.answer_count as i64,
            s.user_count as i64 - r.user_count as i64,
            100.0 * (s.satisfied_fraction - r.satisfied_fraction)
        ));
    }
    emit(None, &out)
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        bags: a.bags,
        vocab_size: a.vocab_size,
        answers_per_bag: a.min_answers..=a.max_answers,
        tokens_per_text: a.min_tokens..=a.max_tokens,
        trigger: a.trigger,
        positive_fraction: a.trigger_rate,
        user_pool: a.users,
        seed: a.seed,
    };
    let bags = generate(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = create(&a.out)?;
    write_bags(&bags, &mut out).map_err(|e| data_err(&a.out, e))?;
    out.flush().map_err(|e| data_err(&a.out, e))?;
    if let Some(path) = &a.vocab {
        let mut v = create(path)?;
        synthetic_vocab(a.vocab_size)
            .write_tsv(&mut v)
            .and_then(|_| v.flush())
            .map_err(|e| data_err(path, e))?;
    }
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> CliResult<()> {
    let config = a.config.resolve()?;
    let vocab = load_vocab(&a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let table = pretrained_embeddings(&bags, &config, vocab.len())?;
    write_file(&a.out, &table.to_text(|id| vocab.token(id as u32)))
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let config = a.config.resolve()?;
    let vocab = load_vocab(&a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let data = split_or_err(&bags, config.seed, &a.bags)?;
    let outcome = train(&data, &config, vocab.len())?;
    let cp = Checkpoint {
        config,
        params: outcome.params,
        vocab_hash: vocab.hash(),
        epoch: outcome.best_epoch,
        best_metric: outcome.best_val_accuracy,
    };
    save_checkpoint_file(&cp, &a.model).map_err(|e| data_err(&a.model, e))?;
    let log = log_to_tsv(&outcome.log);
    match &a.log {
        Some(path) => write_file(path, &log)?,
        None => eprint!("{log}"),
    }
    Ok(())
}

fn eval_bags(bags: Vec<Bag>, cp: &Checkpoint, all: bool, path: &Path) -> CliResult<Vec<Bag>> {
    if all {
        Ok(bags)
    } else {
        Ok(split_or_err(&bags, cp.config.seed, path)?.test)
    }
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let vocab = load_vocab(&a.vocab)?;
    let cp = load_model(&a.model, &vocab, &a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let bags = eval_bags(bags, &cp, a.all, &a.bags)?;
    let m = evaluate(&cp.params, &bags, cp.config.threshold)?;
    let text = if a.json { m.to_json() + "\n" } else { m.to_tsv() };
    emit(a.out.as_deref(), &text)
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let vocab = load_vocab(&a.vocab)?;
    let cp = load_model(&a.model, &vocab, &a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let probs = probabilities(&cp.params, &bags)?;
    let mut out = String::from("id\tprob\tlabel\n");
    for (b, p) in bags.iter().zip(probs) {
        let label = if predict(p, cp.config.threshold).is_positive() { "+1" } else { "-1" };
        out.push_str(&format!("{}\t{p:.6}\t{label}\n", b.question_id));
    }
    emit(None, &out)
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let setup = GradCheckSetup {
        dims: Dims {
            word: a.word_dim,
            hidden: a.hidden_dim,
            user: a.user_dim,
            slices: a.slices,
        },
        answers: a.answers,
        seed: a.seed,
        lambda: a.lambda,
        epsilon: a.epsilon,
        ..GradCheckSetup::default()
    };
    if !(a.epsilon > 0.0) {
        return Err(CliError::Usage("--epsilon must be positive".into()));
    }
    if [a.word_dim, a.hidden_dim, a.user_dim, a.slices].contains(&0) {
        return Err(CliError::Usage("gradcheck dimensions must be at least 1".into()));
    }
    let report = model_gradcheck(&setup)?;
    let worst = report.max_rel_error();
    emit(None, &format!("{}max_rel_error\t{worst:.3e}\n", report.to_tsv()))?;
    if worst >= a.tolerance {
        return Err(CliError::Numeric(format!(
            "max relative error {worst:.3e} exceeds --tolerance {:e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn parse_fractions(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--fractions: {f:?} is not a number")))
        })
        .collect()
}

fn cmd_curve(a: CurveArgs) -> CliResult<()> {
    let config = a.config.resolve()?;
    let fractions = parse_fractions(&a.fractions)?;
    let vocab = load_vocab(&a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let data = split_or_err(&bags, config.seed, &a.bags)?;
    let rows = learning_curve(&fractions, &data, &config, vocab.len())?;
    let text = if a.json {
        serde_json::to_string_pretty(&rows).expect("curve serialize") + "\n"
    } else {
        curve_to_tsv(&rows)
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_breakdown(a: BreakdownArgs) -> CliResult<()> {
    let vocab = load_vocab(&a.vocab)?;
    let cp = load_model(&a.model, &vocab, &a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let data = split_or_err(&bags, cp.config.seed, &a.bags)?;
    let preds: Vec<_> = probabilities(&cp.params, &data.test)?
        .into_iter()
        .map(|p| predict(p, cp.config.threshold))
        .collect();
    let rows = user_activity_breakdown(&data.train, &data.test, &preds)?;
    let text = if a.json {
        serde_json::to_string_pretty(&rows).expect("breakdown serialize") + "\n"
    } else {
        breakdown_to_tsv(&rows)
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_baseline(a: BaselineArgs) -> CliResult<()> {
    let kinds = match a.kind.as_str() {
        "mean" => vec![BaselineKind::Mean],
        "max" => vec![BaselineKind::Max],
        "both" => vec![BaselineKind::Mean, BaselineKind::Max],
        other => return Err(CliError::Usage(format!("--kind: expected mean, max or both, got {other:?}"))),
    };
    let config = a.config.resolve()?;
    let vocab = load_vocab(&a.vocab)?;
    let bags = load_bags(&a.bags)?;
    check_bags(&bags, &vocab, &a.bags)?;
    let data = split_or_err(&bags, config.seed, &a.bags)?;
    let mut out = format!("model\t{}\n", crate::evaluation::METRIC_COLUMNS);
    for kind in kinds {
        let outcome = train_baseline(&data, &config, vocab.len(), kind)?;
        out.push_str(&format!("{}\t{}\n", kind.name(), outcome.metrics.tsv_fields()));
    }
    emit(a.out.as_deref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "rho=0.2\nepochs=3\n").unwrap();
        let args = ConfigArgs {
            config: Some(path.clone()),
            epochs: Some("7".into()),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.rho, cfg.epochs), (0.2, 7));

        std::fs::write(&path, "rho=0.2\nbogus=1\n").unwrap();
        let err = ConfigArgs {
            config: Some(path),
            ..Default::default()
        }
        .resolve()
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.message().contains("bogus"), "{}", err.message());
    }

    #[test]
    fn bad_flag_value_names_the_flag() {
        let err = ConfigArgs {
            rho: Some("fast".into()),
            ..Default::default()
        }
        .resolve()
        .unwrap_err();
        assert!(err.message().starts_with("--rho"), "{}", err.message());
    }

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(run(["midl", "--help"]), 0);
        assert_eq!(run(["midl", "train", "--help"]), 0);
        assert_eq!(run(["midl", "frobnicate"]), 1);
        assert_eq!(run(["midl", "stats"]), 1);
    }

    #[test]
    fn every_flag_is_documented() {
        use clap::CommandFactory;
        let cmd = Cli::command();
        for sub in cmd.get_subcommands() {
            assert!(sub.get_about().is_some(), "{}", sub.get_name());
            for arg in sub.get_arguments() {
                assert!(arg.get_help().is_some(), "{} {}", sub.get_name(), arg.get_id());
            }
        }
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_fractions("0.1, 1").unwrap(), vec![0.1, 1.0]);
        assert!(parse_fractions("0.1,x").is_err());
    }
}
