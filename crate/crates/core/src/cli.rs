//! `vbpe` command-line interface.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info, LevelFilter};

use crate::error::{Error, Result};
use crate::eval::{
    expand_embeddings, ngram_nll, split_train_eval, EmbeddingSpec, EvalSequence, MarkovGridSource,
};
use crate::format::{load_grids, save_grids};
use crate::grid::{IdLayout, QuantGrid, TokenGrid, TokenId};
use crate::plan::{default_plan, PlanFile};
use crate::stats::{ranked_pairs, scan_adjacencies, write_tsv};
use crate::tokenizer::{
    assemble, decode, encode_batch, read_records, write_records, EncodedRecord,
};
use crate::trainer::{train_with_progress, TrainStatus, TrainerConfig};
use crate::vocab::Vocabulary;

#[derive(Debug, Parser)]
#[command(
    name = "vbpe",
    version,
    about = "2D byte-pair encoding over vector-quantized image grids"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

/// Optional layout assertion checked against the vocabulary file.
#[derive(Debug, Clone, Default, Args)]
pub struct LayoutArgs {
    #[arg(long)]
    pub n_text: Option<u32>,
    #[arg(long)]
    pub base_k: Option<u32>,
    #[arg(long)]
    pub ext_size: Option<u32>,
}

impl LayoutArgs {
    fn check(&self, vocab: &Vocabulary) -> Result<()> {
        let l = vocab.layout();
        let pairs = [
            ("n-text", self.n_text, l.n_text),
            ("base-k", self.base_k, l.base_k),
            ("ext-size", self.ext_size, l.ext_size),
        ];
        for (name, given, actual) in pairs {
            if let Some(g) = given {
                if g != actual {
                    return Err(Error::LayoutViolation(format!(
                        "--{name} {g} does not match the vocabulary file ({actual})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a vocabulary on a grid corpus.
    TrainVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        base_k: u32,
        #[arg(long)]
        ext_size: u32,
        #[arg(long, default_value_t = IdLayout::DEFAULT_N_TEXT)]
        n_text: u32,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 32)]
        top_k: usize,
        #[arg(long, default_value_t = 0.9)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a grid corpus into tokens.jsonl.
    Encode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Decode tokens.jsonl back into a grid corpus.
    Decode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Splice text ids and image tokens into unified sequences.
    Assemble {
        #[arg(long)]
        vocab: PathBuf,
        /// One line of whitespace-separated text ids per image record.
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Dump the top pairs of a corpus as TSV.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Encode with this vocabulary before counting.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Per-cell n-gram NLL of raw and encoded sequences.
    EvalNll {
        #[arg(long)]
        corpus: PathBuf,
        /// Vocabulary to compare against raw indices; may be repeated.
        #[arg(long)]
        vocab: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Write the multi-stage training plan.
    Plan {
        #[arg(long, default_value = "default")]
        stages: String,
        #[arg(long)]
        n_layers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an expanded embedding table.
    ExpandEmbeddings {
        /// Take the layout from this vocabulary.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        dim: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Generate a synthetic 2D Markov grid corpus.
    GenMarkov {
        #[arg(long, default_value_t = 2)]
        n_symbols: usize,
        #[arg(long, default_value_t = 0.9)]
        stay_right: f64,
        #[arg(long, default_value_t = 0.9)]
        stay_down: f64,
        #[arg(long, default_value_t = 16)]
        height: u32,
        #[arg(long, default_value_t = 16)]
        width: u32,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` and runs the subcommand. Returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on any other failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            error!("could not configure {n} threads: {e}");
        }
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            1
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_corpus(path: &Path) -> Result<Vec<QuantGrid>> {
    let grids = load_grids(path)?;
    info!("loaded {} grids from {}", grids.len(), path.display());
    Ok(grids)
}

fn load_vocab(path: &Path, layout: &LayoutArgs) -> Result<Vocabulary> {
    let vocab = Vocabulary::load(path)?;
    layout.check(&vocab)?;
    Ok(vocab)
}

fn load_records(path: &Path) -> Result<Vec<EncodedRecord>> {
    read_records(BufReader::new(File::open(path)?))
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainVocab {
            corpus,
            base_k,
            ext_size,
            n_text,
            alpha,
            sigma,
            top_k,
            tau,
            seed,
            out,
        } => {
            let grids = load_corpus(&corpus)?;
            let cfg = TrainerConfig {
                target_ext_size: ext_size,
                alpha,
                sigma,
                top_k,
                tau,
                seed,
                n_text,
            };
            let stderr = io::stderr();
            let training = train_with_progress(&grids, base_k, &cfg, |r| {
                let _ = writeln!(
                    stderr.lock(),
                    "iter {}\tpair ({}, {}) {}\tP {:.6}\tregions {}",
                    r.iteration,
                    r.pair.left,
                    r.pair.right,
                    r.orientation,
                    r.priority,
                    r.regions
                );
            })?;
            if let TrainStatus::Exhausted { merges } = training.status {
                eprintln!("warning: corpus exhausted after {merges} of {ext_size} merges");
            }
            let fallbacks = training.fallbacks().count();
            if fallbacks > 0 {
                eprintln!(
                    "note: diversity filter fell back to the unfiltered best {fallbacks} times"
                );
            }
            training.vocab.save(&out)
        }
        Command::Encode {
            vocab,
            corpus,
            out,
            layout,
        } => {
            let vocab = load_vocab(&vocab, &layout)?;
            let grids = load_corpus(&corpus)?;
            let encoded = encode_batch(&grids, &vocab)?;
            let records: Vec<_> = grids
                .iter()
                .zip(&encoded)
                .map(|(g, e)| EncodedRecord::new(g.height(), g.width(), &e.sequence.ids))
                .collect();
            write_records(create(&out)?, &records)
        }
        Command::Decode {
            vocab,
            tokens,
            out,
            layout,
        } => {
            let vocab = load_vocab(&vocab, &layout)?;
            let grids = load_records(&tokens)?
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    decode(&r.token_ids(), &vocab, r.h, r.w).map_err(|e| match e {
                        Error::MalformedSequence(m) => {
                            Error::MalformedSequence(format!("record {i}: {m}"))
                        }
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            save_grids(&out, &grids)
        }
        Command::Assemble {
            vocab,
            text,
            tokens,
            out,
            layout,
        } => {
            let vocab = load_vocab(&vocab, &layout)?;
            let id_layout = vocab.layout();
            let records = load_records(&tokens)?;
            let text_lines = read_text_ids(&text)?;
            if text_lines.len() < records.len() {
                return Err(Error::MalformedSequence(format!(
                    "{} text lines for {} image records",
                    text_lines.len(),
                    records.len()
                )));
            }
            let mut w = create(&out)?;
            for (txt, rec) in text_lines.iter().zip(&records) {
                let seq = assemble(txt, &rec.token_ids(), &id_layout)?;
                serde_json::to_writer(
                    &mut w,
                    &serde_json::json!({"version": 1, "ids": seq.raw()}),
                )?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Stats {
            corpus,
            vocab,
            top,
            alpha,
            sigma,
            out,
            layout,
        } => {
            let grids = load_corpus(&corpus)?;
            let token_grids: Vec<TokenGrid> = match vocab {
                Some(p) => encode_batch(&grids, &load_vocab(&p, &layout)?)?
                    .into_iter()
                    .map(|e| e.grid)
                    .collect(),
                None => {
                    let base_k = layout.base_k.unwrap_or_else(|| {
                        grids
                            .iter()
                            .filter_map(QuantGrid::max_index)
                            .max()
                            .map_or(1, |m| m + 1)
                    });
                    for g in &grids {
                        g.check_range(base_k)?;
                    }
                    let l = IdLayout::new(
                        layout.n_text.unwrap_or(IdLayout::DEFAULT_N_TEXT),
                        base_k,
                        0,
                    )?;
                    grids.iter().map(|g| TokenGrid::from_quant(g, &l)).collect()
                }
            };
            let table = scan_adjacencies(&token_grids);
            let mut ranked = ranked_pairs(&table, alpha, sigma)?;
            ranked.truncate(top);
            match out {
                Some(p) => write_tsv(create(&p)?, &ranked)?,
                None => write_tsv(io::stdout().lock(), &ranked)?,
            }
            Ok(())
        }
        Command::EvalNll {
            corpus,
            vocab,
            order,
            lambda,
            train_frac,
            layout,
        } => {
            if !(0.0..1.0).contains(&train_frac) || train_frac == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "train-frac {train_frac} not in (0, 1)"
                )));
            }
            let grids = load_corpus(&corpus)?;
            let vocabs = vocab
                .iter()
                .map(|p| Ok((p.display().to_string(), load_vocab(p, &layout)?)))
                .collect::<Result<Vec<_>>>()?;
            let base_k = match (vocabs.first(), layout.base_k) {
                (Some((_, v)), _) => v.base_size(),
                (None, Some(k)) => k,
                (None, None) => grids
                    .iter()
                    .filter_map(QuantGrid::max_index)
                    .max()
                    .map_or(1, |m| m + 1),
            };
            if let Some((name, _)) = vocabs.iter().find(|(_, v)| v.base_size() != base_k) {
                return Err(Error::LayoutViolation(format!(
                    "{name} has a different base size"
                )));
            }
            let (train, eval) = split_train_eval(&grids, train_frac);
            let mut out = io::stdout().lock();
            writeln!(out, "config\torder\tlambda\tvocab_size\ttrain_grids\teval_grids\ttokens\tcells\tnll_per_cell\tnll_per_token")?;
            let raw: Vec<EvalSequence> = grids.iter().map(EvalSequence::raw).collect();
            let (rt, re) = raw.split_at(train.len());
            let report = ngram_nll(rt, re, order, lambda, base_k as u64)?;
            writeln!(
                out,
                "raw\t{order}\t{lambda}\t{base_k}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                train.len(),
                eval.len(),
                report.tokens,
                report.cells,
                report.per_cell(),
                report.per_token()
            )?;
            for (name, v) in &vocabs {
                let seqs = grids
                    .iter()
                    .map(|g| EvalSequence::encoded(g, v))
                    .collect::<Result<Vec<_>>>()?;
                let (st, se) = seqs.split_at(train.len());
                let size = v.layout().visual_size() as u64;
                let report = ngram_nll(st, se, order, lambda, size)?;
                writeln!(
                    out,
                    "{name}\t{order}\t{lambda}\t{size}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                    train.len(),
                    eval.len(),
                    report.tokens,
                    report.cells,
                    report.per_cell(),
                    report.per_token()
                )?;
            }
            Ok(())
        }
        Command::Plan {
            stages,
            n_layers,
            out,
        } => {
            if stages != "default" {
                return Err(Error::InvalidParameter(format!(
                    "unknown stage preset {stages:?} (only \"default\" is available)"
                )));
            }
            PlanFile::build(&default_plan(), n_layers)?.save(&out)
        }
        Command::ExpandEmbeddings {
            vocab,
            dim,
            seed,
            out,
            layout,
        } => {
            let l = match vocab {
                Some(p) => load_vocab(&p, &layout)?.layout(),
                None => IdLayout::new(
                    layout.n_text.unwrap_or(IdLayout::DEFAULT_N_TEXT),
                    layout.base_k.unwrap_or(IdLayout::DEFAULT_BASE_K),
                    layout.ext_size.unwrap_or(IdLayout::DEFAULT_EXT_SIZE),
                )?,
            };
            let spec = EmbeddingSpec {
                n_text: l.n_text,
                base_k: l.base_k,
                ext_size: l.ext_size,
                dim,
                seed,
            };
            expand_embeddings(&spec)?.save(&out)
        }
        Command::GenMarkov {
            n_symbols,
            stay_right,
            stay_down,
            height,
            width,
            count,
            seed,
            out,
        } => {
            let src = MarkovGridSource::sticky(n_symbols, stay_right, stay_down, seed)?;
            save_grids(&out, &src.generate(height, width, count))
        }
    }
}

fn read_text_ids(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    BufReader::new(File::open(path)?)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line?
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map(TokenId).map_err(|e| {
                        Error::MalformedSequence(format!("text line {}: {tok:?}: {e}", i + 1))
                    })
                })
                .collect()
        })
        .collect()
}
