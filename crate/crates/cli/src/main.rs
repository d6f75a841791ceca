use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use clear_core::augment::{AugmentationPipeline, Lexicon};
use clear_core::checkpoint::inspect_checkpoint;
use clear_core::encoder::Pooling;
use clear_core::objectives::LossMode;
use clear_core::optim::WeightDecayStyle;
use clear_core::rng::mix;
use clear_core::run::{embed_with_checkpoint, eval_with_checkpoint, pretrain, RunConfig};
use clear_core::synthetic::{generate_corpus, generate_paraphrase_pairs};
use clear_core::text::{build_vocab, read_corpus, LengthFilter, Vocabulary};

/// Contrastive sentence representation learning.
#[derive(Debug, Parser)]
#[command(name = "clear", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary file from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Print one augmented view per corpus sentence.
    Augment(AugmentArgs),
    /// Pre-train an encoder and write a run directory.
    Pretrain(PretrainArgs),
    /// Write one embedding per input sentence.
    Embed(EmbedArgs),
    /// Correlate embedding similarity with gold scores.
    EvalSts(EvalStsArgs),
    /// Print a checkpoint's header and tensor directory.
    InspectCheckpoint(InspectArgs),
    /// Write a synthetic corpus and paraphrase pairs.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Debug, Args)]
struct LengthArgs {
    /// Shortest kept sentence, in tokens.
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    /// Longest kept sentence, in tokens.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

impl LengthArgs {
    fn filter(&self) -> LengthFilter {
        LengthFilter {
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    /// Maximum entries, special tokens included.
    #[arg(long, default_value_t = 30_000)]
    max_size: usize,
    #[command(flatten)]
    lengths: LengthArgs,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Augmentation or composition, e.g. `del-span` or `subs+del-word`.
    #[arg(long)]
    kind: AugmentationPipeline,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary file; built from the corpus when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Synonym lexicon for `subs`.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Run config supplying augmentation parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    lengths: LengthArgs,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Total optimizer steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    augmentation: Option<AugmentationPipeline>,
    /// `mlm_only`, `cl_only` or `mlm_plus_cl`.
    #[arg(long)]
    mode: Option<LossMode>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    pooling: Option<Pooling>,
    /// `decoupled` or `l2`.
    #[arg(long)]
    wd_style: Option<WeightDecayStyle>,
    /// Gradient-norm ceiling, 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Batch-preparation threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

impl PretrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            seed => seed,
            corpus => corpus,
            vocab => vocab,
            lexicon => lexicon,
            run_dir => run_dir,
            steps => train.schedule.total_steps,
            warmup_steps => train.schedule.warmup_steps,
            peak_lr => train.schedule.peak_lr,
            batch_size => batch_size,
            augmentation => augmentation,
            mode => train.loss.mode,
            temperature => train.loss.temperature,
            pooling => train.pooling,
            wd_style => train.adam.wd_style,
            grad_clip => train.grad_clip,
            checkpoint_every => checkpoint_every,
            workers => workers,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "cls")]
    pooling: Pooling,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalStsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `sentence_a<TAB>sentence_b<TAB>gold` lines.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value = "cls")]
    pooling: Pooling,
    /// Directory receiving `report.txt` and `scores.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 256)]
    sentences: usize,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives `corpus.txt` and `pairs.tsv`.
    #[arg(long)]
    out_dir: PathBuf,
}

fn build_vocab_cmd(a: &BuildVocabArgs) -> Result<()> {
    let texts = read_corpus(&a.corpus, a.lengths.filter())?;
    let vocab = build_vocab(&texts, a.min_freq, a.max_size)?;
    vocab.save(&a.out)?;
    eprintln!("{} sentences, {} vocabulary entries", texts.len(), vocab.len());
    Ok(())
}

fn augment_cmd(a: &AugmentArgs) -> Result<()> {
    let params = match &a.config {
        Some(p) => RunConfig::load(p)?.augmentation_params,
        None => Default::default(),
    };
    params.validate()?;
    let texts = read_corpus(&a.corpus, a.lengths.filter())?;
    let vocab = match &a.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocab(&texts, 1, usize::MAX)?,
    };
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::load(p, &vocab)?,
        None => Lexicon::empty(),
    };
    if a.kind.is_unstable() {
        eprintln!("warning: '{}' alone is known to make contrastive training unstable", a.kind);
    }
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, text) in texts.iter().enumerate() {
        let ids = vocab.encode_text(text);
        let view = a.kind.apply(&ids, &params, mix(a.seed, &[i as u64]), &lexicon)?;
        writeln!(out, "{}", vocab.decode(&view).join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn pretrain_cmd(a: &PretrainArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let out = pretrain(&cfg, &mut |line| eprintln!("{line}"))?;
    eprintln!(
        "finished {} steps; run directory {}",
        out.metrics.len(),
        cfg.run_dir.display()
    );
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect())
}

fn embed_cmd(a: &EmbedArgs) -> Result<()> {
    let texts = read_lines(&a.input)?;
    let vectors = embed_with_checkpoint(&a.checkpoint, &texts, a.pooling)?;
    let mut body = String::new();
    for v in vectors {
        let row: Vec<String> = v.iter().map(f32::to_string).collect();
        body.push_str(&row.join("\t"));
        body.push('\n');
    }
    match &a.output {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn eval_sts_cmd(a: &EvalStsArgs) -> Result<()> {
    let result = eval_with_checkpoint(&a.checkpoint, &a.pairs, a.pooling)?;
    let report = result.report(a.pooling);
    print!("{report}");
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.txt"), &report)?;
        fs::write(dir.join("scores.csv"), result.per_pair_csv())?;
    }
    Ok(())
}

fn inspect_cmd(a: &InspectArgs) -> Result<()> {
    print!("{}", inspect_checkpoint(&a.checkpoint)?);
    Ok(())
}

fn gen_synthetic_cmd(a: &GenSyntheticArgs) -> Result<()> {
    if a.sentences == 0 {
        bail!("--sentences must be positive");
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut corpus = generate_corpus(a.sentences, a.seed).join("\n");
    corpus.push('\n');
    fs::write(a.out_dir.join("corpus.txt"), corpus)?;
    let mut pairs = String::new();
    for p in generate_paraphrase_pairs(a.pairs, mix(a.seed, &[1])) {
        pairs.push_str(&format!("{}\t{}\t{}\n", p.a, p.b, p.gold));
    }
    fs::write(a.out_dir.join("pairs.tsv"), pairs)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildVocab(a) => build_vocab_cmd(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Embed(a) => embed_cmd(a),
        Command::EvalSts(a) => eval_sts_cmd(a),
        Command::InspectCheckpoint(a) => inspect_cmd(a),
        Command::GenSynthetic(a) => gen_synthetic_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", msg.join(": ").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
