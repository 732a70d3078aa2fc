//! `translit`: build vocabularies, train the reverse-transliteration model,
//! run it over text, and score predictions against references.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use translit_core::checkpoint::{load_checkpoint, save_checkpoint};
use translit_core::data::{
    clean_filter, load_pairs, split, ColumnOrder, DataFormat, FilterStats, TranslitPair,
};
use translit_core::metrics::{corpus_bleu, corpus_report, grapheme_cer, micro_cer};
use translit_core::model::{init_params, train, ModelConfig, TrainConfig};
use translit_core::optim::AdamConfig;
use translit_core::pipeline::transliterate_sentence;
use translit_core::util::write_atomic;
use translit_core::vocab::{build_vocab, load_vocab, save_vocab, Side, Vocabulary};
use translit_core::{Error, Result};

const SOURCE_VOCAB: &str = "source.vocab.json";
const TARGET_VOCAB: &str = "target.vocab.json";

#[derive(Parser)]
#[command(name = "translit", version, about = "Romanized-to-native transliteration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build source and target character vocabularies from a pairs file.
    Vocab(VocabArgs),
    /// Train a model and write a checkpoint plus a run manifest.
    Train(TrainArgs),
    /// Transliterate text line by line using a trained checkpoint.
    Transliterate(TransliterateArgs),
    /// Score predictions against references and render report files.
    Evaluate(EvaluateArgs),
}

/// Flags shared by every command that reads a pairs file.
#[derive(Args)]
struct DataArgs {
    /// Pairs file with native and romanized columns.
    #[arg(long)]
    pairs: PathBuf,
    /// File format: tsv, csv, or jsonl.
    #[arg(long, default_value = "tsv")]
    format: DataFormat,
    /// Skip the first record as a header (tsv/csv only).
    #[arg(long)]
    has_header: bool,
    /// Column order: native-first or roman-first.
    #[arg(long, default_value = "native-first")]
    order: ColumnOrder,
}

#[derive(Args)]
struct VocabArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory that receives source.vocab.json and target.vocab.json.
    #[arg(long)]
    out: PathBuf,
    /// Source (Latin) vocabulary size cap, PAD/UNK included.
    #[arg(long, default_value_t = 28)]
    max_source: usize,
    /// Target (native) vocabulary size cap, PAD/UNK included.
    #[arg(long, default_value_t = 76)]
    max_target: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory holding source.vocab.json and target.vocab.json.
    #[arg(long)]
    vocab_dir: PathBuf,
    /// JSON file overriding model/train defaults (see README).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint path; a .manifest.json lands beside it.
    #[arg(long)]
    out: PathBuf,
    /// Master seed: drives initialization, shuffling, and the split.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of kept pairs used for training.
    #[arg(long, default_value_t = 0.95)]
    train_ratio: f64,
}

#[derive(Args)]
struct TransliterateArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    model: PathBuf,
    /// Directory holding source.vocab.json and target.vocab.json.
    #[arg(long)]
    vocab_dir: PathBuf,
    /// Input text, one sentence per line (default: stdin).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (default: stdout). Written atomically.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions, one sentence per line.
    #[arg(long)]
    pred: PathBuf,
    /// References, one sentence per line.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Write the summary report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-sentence score table as CSV.
    #[arg(long)]
    distribution: Option<PathBuf>,
    /// Write the character confusion table as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Also print corpus-level (micro-averaged) CER.
    #[arg(long)]
    micro_cer: bool,
    /// Also print pooled corpus-level BLEU.
    #[arg(long)]
    corpus_bleu: bool,
    /// Also print grapheme-cluster CER.
    #[arg(long)]
    grapheme_cer: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Vocab(args) => cmd_vocab(args),
        Command::Train(args) => cmd_train(args),
        Command::Transliterate(args) => cmd_transliterate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

// ---------------------------------------------------------------- vocab ----

fn cmd_vocab(args: VocabArgs) -> Result<()> {
    let pairs = load_pairs_at(&args.data)?;
    let source = build_vocab(&pairs, Side::Source, args.max_source)?;
    let target = build_vocab(&pairs, Side::Target, args.max_target)?;
    fs::create_dir_all(&args.out).map_err(|e| annotate(&args.out, e))?;
    save_vocab(&source, &args.out.join(SOURCE_VOCAB))?;
    save_vocab(&target, &args.out.join(TARGET_VOCAB))?;
    println!("read {} pairs from {}", pairs.len(), args.data.pairs.display());
    print_vocab_summary("source", &source, distinct_chars(&pairs, Side::Source));
    print_vocab_summary("target", &target, distinct_chars(&pairs, Side::Target));
    println!("vocabularies written to {}", args.out.display());
    Ok(())
}

fn distinct_chars(pairs: &[TranslitPair], side: Side) -> usize {
    let mut set = BTreeSet::new();
    for pair in pairs {
        match side {
            Side::Source => set.extend(pair.romanized.to_lowercase().chars()),
            Side::Target => set.extend(pair.native.chars()),
        }
    }
    set.len()
}

fn print_vocab_summary(label: &str, vocab: &Vocabulary, distinct: usize) {
    let kept = vocab.size() - 2;
    let dropped = distinct - kept;
    if dropped == 0 {
        println!("{label} vocabulary: {} ids ({kept} characters + PAD/UNK)", vocab.size());
    } else {
        println!(
            "{label} vocabulary: {} ids ({kept} characters + PAD/UNK, {dropped} rare dropped)",
            vocab.size()
        );
    }
}

// ---------------------------------------------------------------- train ----

/// Optional overrides read from `--config`; anything absent keeps its default.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    model: ModelOverrides,
    train: TrainOverrides,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelOverrides {
    max_src_len: Option<usize>,
    max_tgt_len: Option<usize>,
    emb_dim: Option<usize>,
    enc_hidden: Option<usize>,
    proj_dim: Option<usize>,
    dec_hidden: Option<usize>,
    src_vocab: Option<usize>,
    tgt_vocab: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainOverrides {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    adam: AdamOverrides,
    seed: Option<u64>,
    shuffle: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AdamOverrides {
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct ManifestData {
    pairs: FileDigest,
    source_vocab: FileDigest,
    target_vocab: FileDigest,
}

#[derive(Serialize)]
struct ManifestCounts {
    loaded: usize,
    kept: usize,
    dropped_empty: usize,
    dropped_non_alpha: usize,
    dropped_too_long: usize,
    dropped_oov: usize,
    train: usize,
    validation: usize,
}

#[derive(Serialize)]
struct FinalMetrics {
    train_loss: f64,
    val_loss: Option<f64>,
    val_char_acc: Option<f64>,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    split_ratio: f64,
    data: ManifestData,
    counts: ManifestCounts,
    model: ModelConfig,
    train: TrainConfig,
    r#final: Option<FinalMetrics>,
    wall_secs: f64,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let overrides: ConfigFile = match &args.config {
        Some(path) => serde_json::from_str(&read_file(path)?)?,
        None => ConfigFile::default(),
    };
    let source_vocab_path = args.vocab_dir.join(SOURCE_VOCAB);
    let target_vocab_path = args.vocab_dir.join(TARGET_VOCAB);
    let src_vocab = load_vocab_at(&source_vocab_path)?;
    let tgt_vocab = load_vocab_at(&target_vocab_path)?;

    let pairs = load_pairs_at(&args.data)?;
    let loaded = pairs.len();

    let md = ModelConfig::default();
    let max_src_len = overrides.model.max_src_len.unwrap_or(md.max_src_len);
    let target_chars: BTreeSet<char> = tgt_vocab.chars().iter().copied().collect();
    let (kept, stats) = clean_filter(pairs, max_src_len, Some(&target_chars));
    print_filter_summary(loaded, kept.len(), &stats);

    // The decoder width defaults to the longest kept native word plus one
    // terminating PAD, capped at the stock width.
    let longest_native = kept.iter().map(|p| p.native.chars().count()).max().unwrap_or(0);
    let derived_tgt_len = (longest_native + 1).clamp(2, md.max_tgt_len);
    let model_cfg = ModelConfig {
        max_src_len,
        max_tgt_len: overrides.model.max_tgt_len.unwrap_or(derived_tgt_len),
        emb_dim: overrides.model.emb_dim.unwrap_or(md.emb_dim),
        enc_hidden: overrides.model.enc_hidden.unwrap_or(md.enc_hidden),
        proj_dim: overrides.model.proj_dim.unwrap_or(md.proj_dim),
        dec_hidden: overrides.model.dec_hidden.unwrap_or(md.dec_hidden),
        src_vocab: overrides
            .model
            .src_vocab
            .unwrap_or_else(|| md.src_vocab.max(src_vocab.size())),
        tgt_vocab: overrides
            .model
            .tgt_vocab
            .unwrap_or_else(|| md.tgt_vocab.max(tgt_vocab.size())),
    };

    let seed = args.seed.or(overrides.train.seed).unwrap_or(0);
    let td = TrainConfig::default();
    let ad = AdamConfig::default();
    let train_cfg = TrainConfig {
        epochs: overrides.train.epochs.unwrap_or(td.epochs),
        batch_size: overrides.train.batch_size.unwrap_or(td.batch_size),
        adam: AdamConfig {
            learning_rate: overrides.train.adam.learning_rate.unwrap_or(ad.learning_rate),
            beta1: overrides.train.adam.beta1.unwrap_or(ad.beta1),
            beta2: overrides.train.adam.beta2.unwrap_or(ad.beta2),
            epsilon: overrides.train.adam.epsilon.unwrap_or(ad.epsilon),
        },
        seed,
        shuffle: overrides.train.shuffle.unwrap_or(td.shuffle),
    };

    let dataset = split(kept, args.train_ratio, seed)?;
    println!(
        "training on {} pairs, validating on {} (seed {seed})",
        dataset.train.len(),
        dataset.validation.len()
    );

    let mut params = init_params(&model_cfg, seed)?;
    let history = train(
        &mut params,
        &model_cfg,
        &train_cfg,
        &dataset.train,
        &dataset.validation,
        &src_vocab,
        &tgt_vocab,
    )?;
    for e in &history.epochs {
        let mut line = format!(
            "epoch {}/{}: train loss {:.4}",
            e.epoch, train_cfg.epochs, e.train_loss
        );
        if let Some(v) = e.val_loss {
            line.push_str(&format!(", val loss {v:.4}"));
        }
        if let Some(a) = e.val_char_acc {
            line.push_str(&format!(", val char acc {:.2}%", a * 100.0));
        }
        println!("{line}");
    }
    println!("trained in {:.1}s", history.wall_secs);

    save_checkpoint(&args.out, &model_cfg, &params)?;
    println!("checkpoint written to {}", args.out.display());

    let manifest = Manifest {
        seed,
        split_ratio: dataset.ratio,
        data: ManifestData {
            pairs: digest(&args.data.pairs)?,
            source_vocab: digest(&source_vocab_path)?,
            target_vocab: digest(&target_vocab_path)?,
        },
        counts: ManifestCounts {
            loaded,
            kept: dataset.train.len() + dataset.validation.len(),
            dropped_empty: stats.empty_field,
            dropped_non_alpha: stats.non_alpha,
            dropped_too_long: stats.too_long,
            dropped_oov: stats.oov_target,
            train: dataset.train.len(),
            validation: dataset.validation.len(),
        },
        model: model_cfg,
        train: train_cfg,
        r#final: history.epochs.last().map(|e| FinalMetrics {
            train_loss: e.train_loss,
            val_loss: e.val_loss,
            val_char_acc: e.val_char_acc,
        }),
        wall_secs: history.wall_secs,
    };
    let manifest_path = args.out.with_extension("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    write_atomic(&manifest_path, body.as_bytes())?;
    println!("manifest written to {}", manifest_path.display());
    Ok(())
}

fn print_filter_summary(loaded: usize, kept: usize, stats: &FilterStats) {
    if stats.rejected() == 0 {
        println!("kept all {kept} of {loaded} pairs");
    } else {
        println!(
            "kept {kept} of {loaded} pairs (dropped: {} empty, {} non-alphabetic, {} too long, {} out-of-vocabulary)",
            stats.empty_field, stats.non_alpha, stats.too_long, stats.oov_target
        );
    }
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = read_bytes(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let mut sha256 = String::with_capacity(64);
    for byte in hasher.finalize() {
        sha256.push_str(&format!("{byte:02x}"));
    }
    Ok(FileDigest { path: path.display().to_string(), sha256 })
}

// -------------------------------------------------------- transliterate ----

fn cmd_transliterate(args: TransliterateArgs) -> Result<()> {
    let (config, params) = load_checkpoint_at(&args.model)?;
    let src_vocab = load_vocab_at(&args.vocab_dir.join(SOURCE_VOCAB))?;
    let tgt_vocab = load_vocab_at(&args.vocab_dir.join(TARGET_VOCAB))?;
    if src_vocab.size() > config.src_vocab || tgt_vocab.size() > config.tgt_vocab {
        return Err(Error::InvalidArgument(format!(
            "vocabulary sizes ({}, {}) exceed the model's tables ({}, {})",
            src_vocab.size(),
            tgt_vocab.size(),
            config.src_vocab,
            config.tgt_vocab
        )));
    }

    let text = match &args.input {
        Some(path) => read_file(path)?,
        None => {
            let mut buf = String::new();
            io::stdin().read_to_string(&mut buf)?;
            buf
        }
    };
    let mut lines = Vec::new();
    for line in text.lines() {
        lines.push(transliterate_sentence(&params, &config, &src_vocab, &tgt_vocab, line)?);
    }

    match &args.output {
        Some(path) => {
            let mut joined = lines.join("\n");
            if !lines.is_empty() {
                joined.push('\n');
            }
            write_atomic(path, joined.as_bytes())?;
        }
        None => {
            let stdout = io::stdout();
            let mut handle = stdout.lock();
            for line in &lines {
                writeln!(handle, "{line}")?;
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------- evaluate ----

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let pred_text = read_file(&args.pred)?;
    let ref_text = read_file(&args.reference)?;
    let preds: Vec<&str> = pred_text.lines().collect();
    let refs: Vec<&str> = ref_text.lines().collect();

    let report = corpus_report(&preds, &refs)?;
    println!("CER / WER / BLEU (%): {}", report.summary_line());
    println!("{} sentences", report.per_sentence.len());
    if args.micro_cer {
        println!("micro CER: {:.1}%", micro_cer(&preds, &refs)? * 100.0);
    }
    if args.grapheme_cer {
        let mut total = 0.0;
        for (p, r) in preds.iter().zip(&refs) {
            total += grapheme_cer(p, r)?;
        }
        println!("grapheme CER: {:.1}%", total / preds.len() as f64 * 100.0);
    }
    if args.corpus_bleu {
        println!("corpus BLEU: {:.1}%", corpus_bleu(&preds, &refs, 4)? * 100.0);
    }

    if let Some(path) = &args.report {
        let mut body = report.summary_json();
        body.push('\n');
        write_atomic(path, body.as_bytes())?;
    }
    if let Some(path) = &args.distribution {
        write_atomic(path, report.distribution_csv().as_bytes())?;
    }
    if let Some(path) = &args.confusion {
        write_atomic(path, report.confusion_csv().as_bytes())?;
    }
    Ok(())
}

// -------------------------------------------------------------- helpers ----

/// Re-wraps an io error with the offending path, which the raw error lacks.
fn annotate(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| annotate(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| annotate(path, e))
}

fn load_vocab_at(path: &Path) -> Result<Vocabulary> {
    load_vocab(path).map_err(|e| match e {
        Error::Io(io) => annotate(path, io),
        other => other,
    })
}

fn load_pairs_at(data: &DataArgs) -> Result<Vec<TranslitPair>> {
    load_pairs(&data.pairs, data.format, data.has_header, data.order).map_err(|e| match e {
        Error::Io(io) => annotate(&data.pairs, io),
        other => other,
    })
}

fn load_checkpoint_at(
    path: &Path,
) -> Result<(ModelConfig, translit_core::model::ModelParams)> {
    load_checkpoint(path).map_err(|e| match e {
        Error::Io(io) => annotate(path, io),
        other => other,
    })
}
