use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qmds::dataforge::{
    alignment_histogram, build_qmdscnn, filter_qmdsir, make_query_variant, read_jsonl, triplet_stats, write_jsonl,
    Article, IrRecord, QmdscnnConfig, QueryVariant,
};
use qmds::herosumm::check::{check_component, check_model, toy_config, Component};
use qmds::herosumm::ModelConfig;
use qmds::runway::{
    decode_triplets, evaluate, load_triplets, train, transfer, Checkpoint, DecodeConfig, EvalMode, Source, TrainConfig,
    TransferConfig,
};

/// Largest relative error a gradient check may report.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "qmds", version, about = "Query-focused multi-document summarization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build QMDSCNN triplets from an article corpus.
    BuildQmdscnn {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Foreign chunks retrieved per triplet.
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter IR records into QMDSIR triplets.
    BuildQmdsir {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reject_log: Option<PathBuf>,
    },
    /// Corpus statistics of a triplet file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Rewrite the queries of a triplet file.
    QueryVariant {
        #[arg(long = "in")]
        input: PathBuf,
        /// original, distractor, dull or dissimilar.
        #[arg(long)]
        variant: QueryVariant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Histogram of summary-sentence alignment spans.
    AlignHist {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Decode summaries to JSON lines.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Decode and score against the reference summaries.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// f1 or recall250.
        #[arg(long, default_value = "f1")]
        mode: EvalMode,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Train or load on a source, optionally fine-tune, evaluate in recall mode.
    Transfer {
        /// Checkpoint directory, or triplet files joined with '+'.
        #[arg(long)]
        source: String,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        finetune: Option<PathBuf>,
        #[arg(long, default_value = "transfer-run")]
        work_dir: PathBuf,
        /// JSON transfer config; desk defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks at toy dimensions.
    GradCheck {
        /// A component name or "model"; all of them when omitted.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    min_len: usize,
    #[arg(long, default_value_t = 100)]
    max_len: usize,
    #[arg(long)]
    block_trigrams: bool,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            alpha: self.alpha,
            min_len: self.min_len,
            max_len: self.max_len,
            block_trigrams: self.block_trigrams,
            ..DecodeConfig::default()
        }
    }
}

/// A gradient check over tolerance; reported like a numerical abort.
#[derive(Debug)]
struct GradFailure(usize);

impl std::fmt::Display for GradFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient check(s) above {GRAD_TOLERANCE:e}", self.0)
    }
}

impl std::error::Error for GradFailure {}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn grad_check(module: Option<&str>, seed: u64) -> anyhow::Result<()> {
    let mut checks: Vec<(String, ModelConfig, Option<Component>)> = Vec::new();
    let all_on = toy_config();
    match module {
        Some("model") | None => {
            for bits in 0..8u8 {
                let config = ModelConfig {
                    use_query_encoder: bits & 1 != 0,
                    query_layers: usize::from(bits & 1 != 0),
                    baseline_query_prepend: bits & 1 == 0,
                    use_hierarchical_merge: bits & 2 != 0,
                    use_ordering: bits & 4 != 0,
                    ..all_on.clone()
                };
                let name = format!("model q{} m{} o{}", bits & 1, (bits >> 1) & 1, bits >> 2);
                checks.push((name, config, None));
            }
        }
        _ => {}
    }
    match module {
        Some("model") => {}
        Some(name) => {
            let c: Component = name.parse()?;
            checks.push((c.to_string(), all_on.clone(), Some(c)));
        }
        None => checks.extend(Component::ALL.map(|c| (c.to_string(), all_on.clone(), Some(c)))),
    }
    let mut failed = 0;
    for (name, config, component) in checks {
        let report = match component {
            Some(c) => check_component(&config, c, seed)?,
            None => check_model(&config, seed)?,
        };
        let ok = report.max_rel_error < GRAD_TOLERANCE && report.coordinates > 0;
        failed += usize::from(!ok);
        println!(
            "{} {name:<22} max rel err {:.3e} over {} coords ({} skipped){}",
            if ok { "PASS" } else { "FAIL" },
            report.max_rel_error,
            report.coordinates,
            report.skipped,
            report.worst.map(|w| format!(", worst {w}")).unwrap_or_default()
        );
    }
    if failed > 0 {
        return Err(GradFailure(failed).into());
    }
    Ok(())
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for line in lines {
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::BuildQmdscnn { corpus, seed, k, out } => {
            let articles: Vec<Article> = read_jsonl(&corpus)?;
            let config = QmdscnnConfig {
                k_retrieved: k,
                ..QmdscnnConfig::default()
            };
            let triplets = build_qmdscnn(&articles, seed, &config)?;
            write_jsonl(&out, &triplets)?;
            eprintln!("wrote {} triplets to {}", triplets.len(), out.display());
        }
        Command::BuildQmdsir { records, out, reject_log } => {
            let records: Vec<IrRecord> = read_jsonl(&records)?;
            let outcome = filter_qmdsir(&records);
            write_jsonl(&out, &outcome.kept)?;
            if let Some(log) = reject_log {
                write_jsonl(&log, &outcome.rejected)?;
            }
            eprintln!("kept {} of {} records", outcome.kept.len(), records.len());
        }
        Command::Stats { input } => print_json(&triplet_stats(&load_triplets(&input)?)?)?,
        Command::QueryVariant {
            input,
            variant,
            out,
            seed,
        } => {
            let triplets = make_query_variant(&load_triplets(&input)?, variant, seed)?;
            write_jsonl(&out, &triplets)?;
        }
        Command::AlignHist { input } => {
            let hist: BTreeMap<usize, usize> = alignment_histogram(&load_triplets(&input)?)?;
            let total: usize = hist.values().sum();
            println!("span\tcount\tshare");
            for (span, count) in hist {
                println!("{span}\t{count}\t{:.4}", count as f64 / total.max(1) as f64);
            }
        }
        Command::Train { config } => {
            let outcome = train(&TrainConfig::load(&config)?)?;
            print_json(&outcome.state)?;
            eprintln!("best checkpoint: {}", outcome.best.display());
        }
        Command::Decode {
            ckpt,
            input,
            out,
            decode,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let decoded = decode_triplets(&ckpt, &load_triplets(&input)?, &decode.config())?;
            write_lines(&out, decoded.iter().map(|d| serde_json::to_string(d).expect("serializable")))?;
        }
        Command::Evaluate {
            ckpt,
            input,
            mode,
            decode,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let report = evaluate(&ckpt, &load_triplets(&input)?, &decode.config(), mode)?;
            print!("{}", report.table());
        }
        Command::Transfer {
            source,
            eval,
            finetune,
            work_dir,
            config,
        } => {
            let config = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<TransferConfig>(&text)
                        .map_err(|e| qmds::Error::Invalid(format!("{}: {e}", path.display())))?
                }
                None => TransferConfig::desk(&work_dir),
            };
            let report = transfer(&Source::parse(&source)?, &eval, finetune.as_deref(), &config, &work_dir)?;
            print!("{}", report.table());
        }
        Command::GradCheck { module, seed } => grad_check(module.as_deref(), seed)?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.downcast_ref::<qmds::Error>().is_some_and(qmds::Error::is_numerical)
        || err.downcast_ref::<GradFailure>().is_some();
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
