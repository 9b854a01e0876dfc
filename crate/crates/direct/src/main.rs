use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use direct::corpus::{corpus_stats, load_dataset, scan_relations, Corpus, RelationSchema};
use direct::costmodel::{dataset_cost, Tokenization};
use direct::error::{data, usage, DirectError};
use direct::evaluation::{score, MatchMode};
use direct::manifest::RunManifest;
use direct::model::Checkpoint;
use direct::mtl::{train, AblationFlags, TrainConfig};
use direct::pipeline::{load_predictions, predict_file};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Adjacency-list-oriented relational triple extraction.
#[derive(Parser)]
#[command(name = "direct", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    /// Small transformer trained from scratch.
    Toy,
    /// Full-size encoder dimensions (12 blocks, hidden 768).
    Pretrained,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    /// One entity head shared by the subject and object tasks.
    Shared,
    /// All task weights fixed to 1.
    Equal,
    /// Pair each start with the nearest above-threshold end.
    Threshold,
    /// Update every head's optimizer state on every step.
    PlainOptim,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Partial,
    Exact,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TokArg {
    Whitespace,
    PunctuationSplit,
    Both,
}

/// Options shared by the commands that take a training configuration.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file with training hyper-parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder size preset.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Ablation switches (repeatable).
    #[arg(long, value_enum)]
    ablation: Vec<AblationArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a public release file into the canonical corpus format.
    Ingest {
        /// Release-format JSON (array or JSON lines).
        #[arg(long)]
        input: PathBuf,
        /// Output canonical corpus path.
        #[arg(long)]
        out: PathBuf,
        /// Optional file with one relation label per line; defaults to the
        /// labels found in the input.
        #[arg(long)]
        relations: Option<PathBuf>,
    },
    /// Overlap-pattern and triplet-count statistics for a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Emit JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
    /// Train a model on a canonical corpus.
    Train {
        /// Canonical training corpus.
        #[arg(long)]
        train: PathBuf,
        /// Canonical validation corpus (defaults to the training corpus).
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Output directory for the checkpoint, training log and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the peak learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the extraction cascade over a corpus.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output predictions path (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a predictions file against gold triples.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "partial")]
        mode: ModeArg,
        /// Emit JSON instead of the text table.
        #[arg(long)]
        json: bool,
        /// Also write the JSON report to this path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-model output-logit cost analysis for a corpus.
    Cost {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        tokenization: TokArg,
        /// Emit JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
    /// Write the bundled synthetic corpus (release format) to a directory.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(classify(&e));
    }
}

/// Map an error chain onto the exit-code policy: usage 1, data 2, runtime 3.
fn classify(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(d) = cause.downcast_ref::<DirectError>() {
            return d.exit_code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    3
}

/// Directory for manifests: $DIRECT_HOME if set, else the artifact's directory.
fn manifest_dir(artifact: &Path) -> PathBuf {
    match std::env::var_os("DIRECT_HOME") {
        Some(home) => PathBuf::from(home),
        None => artifact
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    }
}

fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let content = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str::<TrainConfig>(&content)
                .map_err(|e| usage(format!("bad config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(BackendArg::Pretrained) = args.backend {
        cfg.hidden = 768;
        cfg.n_heads = 12;
        cfg.n_blocks = 12;
        cfg.ffn = 3072;
    }
    for a in &args.ablation {
        let f: &mut AblationFlags = &mut cfg.ablation;
        match a {
            AblationArg::Shared => f.shared_heads = true,
            AblationArg::Equal => f.equal_weights = true,
            AblationArg::Threshold => f.threshold_decode = true,
            AblationArg::PlainOptim => f.plain_optimizer = true,
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            out,
            relations,
        } => {
            let labels = match &relations {
                Some(path) => {
                    let content = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read {}", path.display()))?;
                    content
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect()
                }
                None => scan_relations(&input)?,
            };
            let schema = RelationSchema::new(labels)?;
            let corpus = load_dataset(&input, &schema)?;
            corpus.save(&out)?;
            let mut m = RunManifest::new("ingest");
            m.add_input(&input)?;
            m.add_output(&out);
            m.append(&manifest_dir(&out))?;
            println!(
                "{}",
                serde_json::to_string(&serde_json::json!({
                    "sentences": corpus.len(),
                    "relations": corpus.schema.len(),
                    "unaligned_entities": corpus.unaligned_entities,
                    "out": out,
                }))?
            );
            Ok(())
        }

        Command::Stats { corpus, json } => {
            let corpus = Corpus::load(&corpus)?;
            let stats = corpus_stats(&corpus);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.render_table());
            }
            Ok(())
        }

        Command::Train {
            train: train_path,
            valid,
            out,
            epochs,
            learning_rate,
            batch_size,
            cfg,
        } => {
            let mut config = load_config(&cfg)?;
            if let Some(e) = epochs {
                config.epochs = e;
            }
            if let Some(lr) = learning_rate {
                config.learning_rate = lr;
            }
            if let Some(b) = batch_size {
                config.batch_size = b;
            }
            config.validate()?;

            let train_corpus = Corpus::load(&train_path)?;
            let valid_corpus = valid.as_ref().map(|p| Corpus::load(p)).transpose()?;
            let outcome = train(&train_corpus, valid_corpus.as_ref(), &config)?;

            std::fs::create_dir_all(&out)
                .with_context(|| format!("cannot create {}", out.display()))?;
            let ckpt_path = out.join("model.json");
            Checkpoint::from_model(&outcome.model).save(&ckpt_path)?;
            let log_path = out.join("train_log.jsonl");
            let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
            for entry in &outcome.log {
                writeln!(log_file, "{}", serde_json::to_string(entry)?)?;
            }
            drop(log_file);

            let mut m = RunManifest::new("train");
            m.seed = Some(config.seed);
            m.config = Some(serde_json::to_value(&config)?);
            m.add_input(&train_path)?;
            if let Some(v) = &valid {
                m.add_input(v)?;
            }
            m.add_output(&ckpt_path);
            m.add_output(&log_path);
            m.append(&manifest_dir(&ckpt_path))?;

            println!(
                "{}",
                serde_json::to_string(&serde_json::json!({
                    "best_f1": outcome.best_f1,
                    "epochs_run": outcome.epochs_run,
                    "steps": outcome.log.len(),
                    "checkpoint": ckpt_path,
                }))?
            );
            Ok(())
        }

        Command::Predict {
            corpus,
            checkpoint,
            out,
            cfg,
        } => {
            let config = load_config(&cfg)?;
            let n = predict_file(&corpus, &checkpoint, &out, &config)?;
            let mut m = RunManifest::new("predict");
            m.config = Some(serde_json::to_value(&config)?);
            m.add_input(&corpus)?;
            m.add_input(&checkpoint)?;
            m.add_output(&out);
            m.append(&manifest_dir(&out))?;
            println!(
                "{}",
                serde_json::to_string(&serde_json::json!({ "sentences": n, "out": out }))?
            );
            Ok(())
        }

        Command::Evaluate {
            predictions,
            corpus,
            mode,
            json,
            report,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let lines = load_predictions(&predictions)?;
            let preds: BTreeMap<String, Vec<(String, String, String)>> = lines
                .into_iter()
                .map(|l| (l.id, l.triples))
                .collect();
            let gold: BTreeMap<_, _> = corpus
                .sentences
                .iter()
                .map(|(s, t)| (s.id.clone(), t.clone()))
                .collect();
            let mode = match mode {
                ModeArg::Partial => MatchMode::Partial,
                ModeArg::Exact => MatchMode::Exact,
            };
            let rep = score(&preds, &gold, mode)?;
            if let Some(path) = &report {
                std::fs::write(path, serde_json::to_string_pretty(&rep)?)?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                print!("{}", rep.render_table());
            }
            Ok(())
        }

        Command::Cost {
            corpus,
            tokenization,
            json,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let toks = match tokenization {
                TokArg::Whitespace => vec![Tokenization::Whitespace],
                TokArg::PunctuationSplit => vec![Tokenization::PunctuationSplit],
                TokArg::Both => vec![Tokenization::Whitespace, Tokenization::PunctuationSplit],
            };
            let reports = toks
                .into_iter()
                .map(|t| dataset_cost(&corpus, t))
                .collect::<Result<Vec<_>>>()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            } else {
                for r in &reports {
                    print!("{}", r.render_table());
                }
            }
            Ok(())
        }

        Command::Fixture { out } => {
            if out.as_os_str().is_empty() {
                return Err(data("fixture output directory must not be empty"));
            }
            direct::fixture::write_files(&out)?;
            println!(
                "{}",
                serde_json::to_string(&serde_json::json!({
                    "train": out.join("train.json"),
                    "valid": out.join("valid.json"),
                }))?
            );
            Ok(())
        }
    }
}
