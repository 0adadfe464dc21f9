//! `ftt` command line: data generation, training, adaptation, decoding and evaluation.
//!
//! Every command writes its outputs plus a `manifest.json` of the resolved
//! arguments under `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{
    load_checkpoint, read_features, read_text, save_checkpoint, transcripts, write_features, write_text, DataConfig,
    ExperimentData, Utterance, Vocab,
};
use crate::decode::{decode_corpus, write_hypotheses, BeamConfig, DEFAULT_MAX_SYMBOLS};
use crate::model::{
    AnyModel, FactorizedTransducer, LanguageModel, LmConfig, ModelConfig, StandardTransducer, StepModel,
};
use crate::trainer::{
    adapt_lm_with, configure_threads, eval_ppl, eval_wer, train, train_lm, AdaptConfig, EvalSet, TrainConfig,
    DEFAULT_LAMBDA, DEFAULT_SWEEPS,
};

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_TRAIN_BATCH: usize = 16;
pub const DEFAULT_ADAPT_BATCH: usize = 32;
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.5, 1.0];

#[derive(Parser, Debug)]
#[command(name = "ftt", version, about = "Standard and factorized transducers on a synthetic two-domain task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate source/target corpora.
    GenData(GenData),
    /// Train a transducer or a standalone LM from scratch.
    Train(Train),
    /// Fine-tune a factorized model's vocabulary predictor on text.
    Adapt(Adapt),
    /// Decode a feature archive to JSON-lines hypotheses.
    Decode(Decode),
    /// Decode and score against the references.
    Eval(Decode),
    /// Perplexity of a model's LM on a text corpus.
    Ppl(Ppl),
    /// Train one factorized model per lambda and report PPL/WER.
    SweepLambda(SweepLambda),
}

#[derive(Args, Debug, Serialize)]
struct GenData {
    /// TOML data configuration; defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the source domain seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Standard,
    Factorized,
    Lm,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_BATCH)]
    batch_size: usize,
}

#[derive(Args, Debug, Serialize)]
struct Train {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// LM training text; defaults to the data directory's adaptation text.
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct Adapt {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SWEEPS)]
    sweeps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_ADAPT_BATCH)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Held-out text for per-sweep perplexity.
    #[arg(long)]
    eval_text: Option<PathBuf>,
    /// Feature archive for per-sweep WER.
    #[arg(long)]
    eval_feats: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct DecodeOpts {
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 0.0)]
    fusion_weight: f64,
    /// LM checkpoint for shallow fusion.
    #[arg(long)]
    fusion_lm: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_SYMBOLS)]
    max_symbols: usize,
}

#[derive(Args, Debug, Serialize)]
struct Decode {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    feats: PathBuf,
    #[command(flatten)]
    decode: DecodeOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct Ppl {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SweepLambda {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID)]
    values: Vec<f64>,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: &Command) -> anyhow::Result<()> {
    let out = match cmd {
        Command::GenData(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::Adapt(a) => &a.out,
        Command::Decode(a) | Command::Eval(a) => &a.out,
        Command::Ppl(a) => &a.out,
        Command::SweepLambda(a) => &a.out,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cmd {
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => run_train(a)?,
        Command::Adapt(a) => run_adapt(a)?,
        Command::Decode(a) => run_decode(a, false)?,
        Command::Eval(a) => run_decode(a, true)?,
        Command::Ppl(a) => run_ppl(a)?,
        Command::SweepLambda(a) => sweep_lambda(a)?,
    }
    write_json(&out.join("manifest.json"), &Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: cmd,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    command: &'a Command,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

const SPLITS: [&str; 5] = ["source_train", "source_dev", "source_test", "target_dev", "target_test"];

fn gen_data(a: &GenData) -> anyhow::Result<()> {
    let mut cfg = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<DataConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => DataConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.task.domain_seed = seed;
    }
    if cfg.task.domain_seed == cfg.target_domain_seed {
        bail!("source and target domain seeds must differ");
    }
    let data = ExperimentData::generate(&cfg)?;
    let sets: [&[Utterance]; 5] = [
        &data.source_train,
        &data.source_dev,
        &data.source_test,
        &data.target_dev,
        &data.target_test,
    ];
    for (name, utts) in SPLITS.iter().zip(sets) {
        write_features(&a.out.join(format!("{name}.feats")), utts)?;
        write_text(&a.out.join(format!("{name}.txt")), &data.vocab, &transcripts(utts))?;
    }
    write_text(&a.out.join("adapt_text.txt"), &data.vocab, &data.adapt_text)?;
    write_json(&a.out.join("vocab.json"), &data.vocab)?;
    fs::write(a.out.join("data_config.toml"), toml::to_string(&cfg)?)?;
    Ok(())
}

fn load_vocab(data: &Path) -> anyhow::Result<Vocab> {
    let p = data.join("vocab.json");
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn train_config(o: &TrainOpts, lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        lr: o.lr,
        epochs: o.epochs,
        batch_size: o.batch_size,
        seed: o.seed,
        ..Default::default()
    }
}

/// LM sized like the factorized model's vocabulary predictor.
pub fn desk_lm_config(seed: u64) -> LmConfig {
    let m = ModelConfig::desk(1, seed);
    LmConfig {
        predictor: m.predictor,
        proj_dim: m.joint_dim,
        init_scale: m.init_scale,
        seed,
    }
}

fn run_train(a: &Train) -> anyhow::Result<()> {
    let vocab = load_vocab(&a.data)?;
    let cfg = train_config(&a.opts, a.lambda);
    let (model, log) = if a.model == ModelArg::Lm {
        let path = a.text.clone().unwrap_or_else(|| a.data.join("adapt_text.txt"));
        let text = read_text(&path, &vocab)?;
        let mut lm = LanguageModel::new(desk_lm_config(a.opts.seed), vocab)?;
        let log = train_lm(&mut lm, &text, &cfg, None)?;
        (AnyModel::Lm(lm), log)
    } else {
        let utts = read_features(&a.data.join("source_train.feats"))?;
        let dim = utts.first().map(|u| u.features.cols()).context("empty training archive")?;
        let mcfg = ModelConfig::desk(dim, a.opts.seed);
        if a.model == ModelArg::Standard {
            let mut m = StandardTransducer::new(mcfg, vocab)?;
            let log = train(&mut m, &utts, &cfg)?;
            (AnyModel::Standard(m), log)
        } else {
            let mut m = FactorizedTransducer::new(mcfg, vocab)?;
            let log = train(&mut m, &utts, &cfg)?;
            (AnyModel::Factorized(m), log)
        }
    };
    save_checkpoint(&model, &a.out.join("model.ckpt"))?;
    log.write_jsonl(&a.out.join("metrics.jsonl"))?;
    Ok(())
}

fn run_adapt(a: &Adapt) -> anyhow::Result<()> {
    let mut model = load_checkpoint(&a.checkpoint)?.into_factorized()?;
    let text = read_text(&a.text, model.vocab())?;
    let eval_text = a.eval_text.as_deref().map(|p| read_text(p, model.vocab())).transpose()?;
    let eval_utts = a.eval_feats.as_deref().map(read_features).transpose()?;
    let eval = EvalSet {
        text: eval_text.as_deref(),
        utterances: eval_utts.as_deref(),
        ..Default::default()
    };
    let cfg = AdaptConfig {
        sweeps: a.sweeps,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        ..Default::default()
    };
    let log = adapt_lm_with(&mut model, &text, &cfg, &eval, |m, sweep| {
        save_checkpoint(&AnyModel::Factorized(m.clone()), &a.out.join(format!("sweep_{sweep}.ckpt")))
    })?;
    save_checkpoint(&AnyModel::Factorized(model), &a.out.join("adapted.ckpt"))?;
    log.write_jsonl(&a.out.join("metrics.jsonl"))?;
    let rows: Vec<Vec<String>> = log
        .records()
        .iter()
        .map(|r| vec![r.pass.to_string(), fmt_opt(r.ppl), fmt_opt(r.wer)])
        .collect();
    fs::write(a.out.join("report.txt"), render_table(&["sweep", "ppl", "wer"], &rows))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        padded.join("  ") + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| &"----------------"[..(*w).min(16)]).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn run_decode(a: &Decode, score: bool) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let fusion = a.decode.fusion_lm.as_deref().map(load_checkpoint).transpose()?;
    let fusion_lm = match fusion {
        Some(AnyModel::Lm(lm)) => Some(lm),
        Some(AnyModel::Factorized(f)) => Some(f.vocab_predictor()?),
        Some(other) => bail!("fusion LM checkpoint has kind {}", other.kind()),
        None => None,
    };
    let cfg = BeamConfig {
        beam_size: a.decode.beam,
        max_symbols_per_frame: a.decode.max_symbols,
        fusion_weight: a.decode.fusion_weight,
        fusion_lm: fusion_lm.as_ref(),
    };
    let utts = read_features(&a.feats)?;
    let step: &dyn StepModel = match &model {
        AnyModel::Standard(m) => m,
        AnyModel::Factorized(m) => m,
        AnyModel::Lm(_) => bail!("cannot decode audio with a language-model checkpoint"),
    };
    let hyps = decode_corpus(step, &utts, &cfg)?;
    let file = fs::File::create(a.out.join("hyps.jsonl"))?;
    write_hypotheses(std::io::BufWriter::new(file), &utts, &hyps)?;
    if score {
        let report = eval_wer(step, &utts, &cfg)?;
        write_json(&a.out.join("wer.json"), &report)?;
        println!("WER {:.2}", report.wer);
    }
    Ok(())
}

fn run_ppl(a: &Ppl) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let ppl = match &model {
        AnyModel::Lm(m) => eval_ppl(m, &read_text(&a.text, m.vocab())?)?,
        AnyModel::Factorized(m) => eval_ppl(m, &read_text(&a.text, m.vocab())?)?,
        AnyModel::Standard(_) => bail!("a standard transducer has no separable LM"),
    };
    write_json(&a.out.join("ppl.json"), &serde_json::json!({ "ppl": ppl }))?;
    println!("PPL {ppl:.3}");
    Ok(())
}

#[derive(Serialize)]
struct LambdaRow {
    lambda: f64,
    ppl: f64,
    wer: f64,
}

fn sweep_lambda(a: &SweepLambda) -> anyhow::Result<()> {
    let vocab = load_vocab(&a.data)?;
    let utts = read_features(&a.data.join("source_train.feats"))?;
    let test = read_features(&a.data.join("source_test.feats"))?;
    let dim = utts.first().map(|u| u.features.cols()).context("empty training archive")?;
    let text = transcripts(&test);
    let greedy = BeamConfig {
        beam_size: 1,
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut jsonl = String::new();
    for &lambda in &a.values {
        let mut m = FactorizedTransducer::new(ModelConfig::desk(dim, a.opts.seed), vocab.clone())?;
        let log = train(&mut m, &utts, &train_config(&a.opts, lambda))?;
        let dir = a.out.join(format!("lambda_{lambda}"));
        fs::create_dir_all(&dir)?;
        save_checkpoint(&AnyModel::Factorized(m.clone()), &dir.join("model.ckpt"))?;
        log.write_jsonl(&dir.join("metrics.jsonl"))?;
        let row = LambdaRow {
            lambda,
            ppl: eval_ppl(&m, &text)?,
            wer: eval_wer(&m, &test, &greedy)?.wer,
        };
        jsonl += &(serde_json::to_string(&row)? + "\n");
        rows.push(vec![format!("{lambda}"), format!("{:.2}", row.ppl), format!("{:.2}", row.wer)]);
    }
    fs::write(a.out.join("report.jsonl"), jsonl)?;
    let table = render_table(&["lambda", "ppl", "wer"], &rows);
    fs::write(a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
