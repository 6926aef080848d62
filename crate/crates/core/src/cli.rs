//! Command-line front end: `synth`, `train`, `generate`, `evaluate`.
//!
//! Exit codes: 0 success, 1 usage, 2 validation or compatibility, 3 runtime
//! abort.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::corpus::{build_vocabulary, generate_synthetic_corpus, load_corpus, split_dataset, SynthConfig};
use crate::decoding::generate_explanation;
use crate::error::Error;
use crate::metrics::evaluate;
use crate::trainer::{train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "promptrec", version, about = "Explainable recommendation with ID prompts and joint MF training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 50)]
        items: usize,
        #[arg(long, default_value_t = 500)]
        records: usize,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a corpus and write the best checkpoint plus an epoch log.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Flat JSON training configuration; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Epoch log path (default: `<out>.log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print a generated explanation for one user/item pair.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Evaluate a checkpoint on one split of a corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        on: Part,
        /// Machine-readable report path (default: `<checkpoint>.report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Range { .. }
            | Error::NotFound { .. }
            | Error::Compatibility(_)
            | Error::Integrity(_)
            | Error::UnsupportedVersion { .. }
            | Error::UndefinedInput(_)
            | Error::Json(_) => EXIT_VALIDATION,
            Error::Domain(_) | Error::SequenceTooLong { .. } | Error::NonFiniteLoss { .. } | Error::Io(_) => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn existing(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out`. Returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Synth {
            users,
            items,
            records,
            rank,
            noise,
            seed,
            out: path,
        } => {
            let cfg = SynthConfig {
                n_users: users,
                n_items: items,
                n_records: records,
                latent_rank: rank,
                noise_sd: noise,
                seed,
                ..SynthConfig::default()
            };
            generate_synthetic_corpus(&cfg, &path)?;
            writeln!(out, "wrote {records} records to {}", path.display())?;
        }
        Command::Train {
            corpus,
            config,
            seed,
            split_seed,
            max_epochs,
            batch_size,
            out: path,
            log,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    existing(p, "config file")?;
                    TrainConfig::load(p)?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = split_seed {
                cfg.split_seed = Some(s);
            }
            if let Some(m) = max_epochs {
                cfg.max_epochs = m;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            let corpus_path = corpus
                .or_else(|| cfg.corpus.clone())
                .ok_or_else(|| usage("no corpus given (--corpus or config key `corpus`)"))?;
            existing(&corpus_path, "corpus")?;
            cfg.corpus = Some(corpus_path.clone());
            cfg.validate()?;

            let data = load_corpus(&corpus_path)?;
            let split = split_dataset(&data.records, cfg.split_seed());
            let log_path = log.unwrap_or_else(|| with_suffix(&path, ".log.jsonl"));
            let mut sink = BufWriter::new(File::create(&log_path)?);
            let outcome = train(&cfg, &data, &split, Some(&mut sink))?;
            sink.flush()?;
            outcome.checkpoint.save(&path)?;
            writeln!(
                out,
                "trained {} epochs (best epoch {}); split {}/{}/{}; checkpoint {}; log {}",
                outcome.log.len(),
                outcome.best_epoch,
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                path.display(),
                log_path.display()
            )?;
        }
        Command::Generate {
            checkpoint,
            user,
            item,
            max_len,
        } => {
            existing(&checkpoint, "checkpoint")?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let u = ckpt.users.get(&user).ok_or(Error::NotFound { kind: "user", id: user.clone() })?;
            let i = ckpt.items.get(&item).ok_or(Error::NotFound { kind: "item", id: item.clone() })?;
            let max_len = max_len.unwrap_or(ckpt.config.max_gen_len);
            if max_len == 0 {
                return Err(usage("--max-len must be >= 1"));
            }
            let words = generate_explanation(&ckpt, u, i, max_len)?;
            writeln!(out, "{}", words.join(" "))?;
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            split_seed,
            on,
            report,
        } => {
            existing(&checkpoint, "checkpoint")?;
            existing(&corpus, "corpus")?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = load_corpus(&corpus)?;
            let vocab = build_vocabulary(&data.records, ckpt.config.min_count);
            if vocab.content_hash() != ckpt.vocab.content_hash() {
                return Err(Error::Compatibility(format!(
                    "corpus vocabulary hash {} differs from checkpoint {}",
                    vocab.content_hash(),
                    ckpt.vocab.content_hash()
                ))
                .into());
            }
            let split = split_dataset(&data.records, split_seed.unwrap_or(ckpt.config.split_seed()));
            let part = match on {
                Part::Train => &split.train,
                Part::Validation => &split.validation,
                Part::Test => &split.test,
            };
            let (rep, _) = evaluate(&ckpt, part, &data)?;
            write!(out, "{rep}")?;
            let report_path = report.unwrap_or_else(|| with_suffix(&checkpoint, ".report.json"));
            fs::write(&report_path, rep.to_json()?)?;
        }
    }
    Ok(())
}
