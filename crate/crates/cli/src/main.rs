use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bgm_han::checkpoint::Checkpoint;
use bgm_han::config::{Profile as RunProfile, RunConfig};
use bgm_han::data::{generate_synthetic, labels, load_profiles, save_profiles, Profile};
use bgm_han::embedding::train_tokenizer;
use bgm_han::eval::{compute_metrics, majority_report, run_ablation, tfidf_baseline, LogRegConfig, MetricReport};
use bgm_han::pipeline::{checkpoint, encode_split, evaluate, expected_hash, split, train_model};
use bgm_han::tokenizer::Tokenizer;
use bgm_han::train::{read_history, write_history, EncodedSet, EpochRecord};
use clap::{Args, Parser, Subcommand};

mod plot;

/// Hierarchical attention classifier for applicant profiles.
#[derive(Debug, Parser)]
#[command(name = "bgm-han", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic profile dataset as JSON lines.
    GenData(GenData),
    /// Train a tokenizer on the training split and write its vocab file.
    Tokenize(Tokenize),
    /// Train a model; writes checkpoint, history, config and test metrics.
    Train(Train),
    /// Score a checkpoint on a dataset's test split.
    Eval(Eval),
    /// Train every component variant under every ablation seed.
    Ablate(Ablate),
    /// Render training curves from history files.
    Report(Report),
}

/// Options every subcommand understands. Later layers win: profile
/// defaults, then `--config`, then `--set`, then the dedicated flags.
#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in defaults to start from.
    #[arg(long, value_parser = ["paper", "desk"])]
    profile: Option<String>,
    /// Seed for data generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Any config field, e.g. `--set train.max_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// data.n
    #[arg(long)]
    n: Option<usize>,
    /// data.signal_strength
    #[arg(long)]
    signal_strength: Option<f64>,
    /// tokenizer.target_size
    #[arg(long)]
    target_size: Option<usize>,
    /// train.max_epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// train.learning_rate
    #[arg(long)]
    lr: Option<f64>,
    /// train.batch_size
    #[arg(long)]
    batch_size: Option<usize>,
    /// model.use_bpe
    #[arg(long)]
    use_bpe: Option<bool>,
    /// model.use_mha
    #[arg(long)]
    use_mha: Option<bool>,
    /// model.use_grc
    #[arg(long)]
    use_grc: Option<bool>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let profile = self.profile.as_deref().map(str::parse::<RunProfile>).transpose()?;
        let text = match &self.config {
            Some(path) => Some(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?),
            None => None,
        };
        let mut overrides = self.overrides.clone();
        let mut flag = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                overrides.push(format!("{key}={v}"));
            }
        };
        flag("data.seed", self.seed.map(|s| s.to_string()));
        flag("train.seed", self.seed.map(|s| s.to_string()));
        flag("data.n", self.n.map(|v| v.to_string()));
        flag("data.signal_strength", self.signal_strength.map(|v| v.to_string()));
        flag("tokenizer.target_size", self.target_size.map(|v| v.to_string()));
        flag("train.max_epochs", self.epochs.map(|v| v.to_string()));
        flag("train.learning_rate", self.lr.map(|v| v.to_string()));
        flag("train.batch_size", self.batch_size.map(|v| v.to_string()));
        flag("model.use_bpe", self.use_bpe.map(|v| v.to_string()));
        flag("model.use_mha", self.use_mha.map(|v| v.to_string()));
        flag("model.use_grc", self.use_grc.map(|v| v.to_string()));
        Ok(RunConfig::layered(profile, text.as_deref(), &overrides)?)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

#[derive(Debug, Args)]
struct GenData {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Tokenize {
    /// Dataset to split; only its training part is read.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Train {
    /// Dataset; a synthetic one is generated from the config when omitted.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Vocab file from `tokenize`; trained on the fly when omitted.
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Eval {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Score every profile instead of the test split.
    #[arg(long)]
    all: bool,
    /// Also report the TF-IDF + logistic-regression baseline.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Ablate {
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Report {
    /// `history.jsonl` files written by `train`.
    #[arg(required = true, value_name = "HISTORY")]
    histories: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn load_or_generate(data: Option<&Path>, cfg: &RunConfig) -> Result<Vec<Profile>> {
    match data {
        Some(path) => {
            let (profiles, report) =
                load_profiles(path).with_context(|| format!("loading {}", path.display()))?;
            if !report.missing.is_empty() {
                eprintln!("{report}");
            }
            Ok(profiles)
        }
        None => Ok(generate_synthetic(&cfg.synthetic(), cfg.data.seed)?),
    }
}

fn gen_data(args: GenData) -> Result<()> {
    let cfg = args.common.run_config()?;
    let profiles = generate_synthetic(&cfg.synthetic(), cfg.data.seed)?;
    let out = args.common.out_or("data.jsonl");
    save_profiles(&out, &profiles)?;
    let pos = profiles.iter().filter(|p| p.label()).count();
    println!("wrote {} profiles ({pos} positive) to {}", profiles.len(), out.display());
    Ok(())
}

fn tokenize(args: Tokenize) -> Result<()> {
    let cfg = args.common.run_config()?;
    let profiles = load_or_generate(Some(&args.data), &cfg)?;
    let parts = split(&profiles, &cfg)?;
    let tok = train_tokenizer(cfg.tokenizer_kind(), &parts.train, cfg.tokenizer.target_size)?;
    let out = args.common.out_or("vocab.txt");
    fs::write(&out, tok.to_text())?;
    println!("wrote {} symbols to {}", tok.vocab_size(), out.display());
    Ok(())
}

fn train(args: Train) -> Result<()> {
    let cfg = args.common.run_config()?;
    let profiles = load_or_generate(args.data.as_deref(), &cfg)?;
    let parts = split(&profiles, &cfg)?;
    let tok = match &args.vocab {
        Some(path) => {
            let tok = Tokenizer::from_text(&fs::read_to_string(path)?)?;
            if tok.kind() != cfg.tokenizer_kind() {
                bail!("{} holds a {:?} vocabulary but the config asks for {:?}", path.display(), tok.kind(), cfg.tokenizer_kind());
            }
            tok
        }
        None => train_tokenizer(cfg.tokenizer_kind(), &parts.train, cfg.tokenizer.target_size)?,
    };
    let prepared = encode_split(parts, tok, &cfg);
    let outcome = train_model(&cfg, &prepared)?;
    for r in &outcome.history {
        println!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.1e}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        );
    }
    let report = evaluate(&outcome.best, &prepared.test, cfg.train.batch_size)?;
    let dir = args.common.out_or("run");
    fs::create_dir_all(&dir)?;
    checkpoint(&cfg, &outcome, &prepared.tokenizer).save(dir.join("checkpoint.json"))?;
    write_history(dir.join("history.jsonl"), &outcome.history)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "best epoch {} (val_acc {:.4}){}",
        outcome.best_epoch,
        outcome.best_val_acc,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    println!("test split:\n{report}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(args: Eval) -> Result<()> {
    let cfg = args.common.run_config()?;
    let ckpt = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    ckpt.ensure_hash(&expected_hash(&cfg, ckpt.tokenizer.vocab_size()))?;
    let profiles = load_or_generate(args.data.as_deref(), &cfg)?;
    let parts = split(&profiles, &cfg)?;
    let (train_part, scored): (&[Profile], &[Profile]) = if args.all {
        (&parts.train, &profiles)
    } else {
        (&parts.train, &parts.test)
    };
    let set = EncodedSet::encode(scored, &ckpt.tokenizer, cfg.grid());
    let report = evaluate(&ckpt.model, &set, cfg.train.batch_size)?;
    println!("model on {} profiles:\n{report}", scored.len());
    let mut out = serde_json::json!({ "model": report });
    let majority = majority_report(&labels(train_part), &set.labels)?;
    println!("majority class accuracy {:.4}", majority.accuracy);
    out["majority"] = serde_json::to_value(&majority)?;
    if args.baseline {
        let preds = tfidf_baseline(train_part, scored, &LogRegConfig::default())?;
        let base: MetricReport = compute_metrics(&preds, &set.labels)?;
        println!("TF-IDF baseline:\n{base}");
        out["tfidf"] = serde_json::to_value(&base)?;
    }
    if let Some(path) = &args.common.out {
        fs::write(path, serde_json::to_string_pretty(&out)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn ablate(args: Ablate) -> Result<()> {
    let cfg = args.common.run_config()?;
    let profiles = load_or_generate(args.data.as_deref(), &cfg)?;
    let report = run_ablation(&profiles, &cfg)?;
    let table = report.to_table();
    print!("{table}");
    let dir = args.common.out_or("ablation");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ablation.txt"), &table)?;
    fs::write(dir.join("ablation.json"), report.to_json())?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn report(args: Report) -> Result<()> {
    let mut text = String::new();
    for path in &args.histories {
        let history: Vec<EpochRecord> =
            read_history(path).with_context(|| format!("reading {}", path.display()))?;
        if history.is_empty() {
            bail!("{} has no epochs", path.display());
        }
        text.push_str(&plot::history_report(&path.display().to_string(), &history));
    }
    match &args.common.out {
        Some(path) => {
            fs::write(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Tokenize(a) => tokenize(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}
