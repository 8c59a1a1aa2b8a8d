use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use callsense_core::aggregation::{corpus_rollup, CallRecord};
use callsense_core::context::{ContextPolicy, LengthMix};
use callsense_core::evaluation::{comparison_table, corpus_stats, split_corpus, AnnotationCache, EvalReport, SplitSpec};
use callsense_core::fraction::Fraction;
use callsense_core::io::{load_config, read_jsonl, read_transcripts, to_canonical_json, write_transcripts};
use callsense_core::simulator::{generate_corpus, CorpusConfig, NoiseProfile};
use callsense_service::api::{router, AppState};
use callsense_service::batch::{batch_annotate_file, BatchOptions};
use callsense_service::{Engine, ServiceConfig, SessionManager};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "callsense", version, about = "Turn-level annotation of collection calls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "CALLSENSE_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with gold labels.
    Simulate {
        /// Calls per scenario type.
        #[arg(long, default_value_t = 10, conflicts_with = "corpus_config")]
        per_type: usize,
        /// JSON or TOML file with per-type counts and script overrides.
        #[arg(long)]
        corpus_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `none`, `moderate`, or a JSON/TOML file of rates.
        #[arg(long, default_value = "moderate")]
        noise: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate a transcript file and aggregate call records.
    Annotate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        backend: Option<String>,
        /// `full`, `last:K` or `chars:N`.
        #[arg(long)]
        policy: Option<ContextPolicy>,
        /// Raw-output cache; reruns resume from it.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, env = "CALLSENSE_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Write instruction-tuning triples from a gold corpus.
    ExportTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        policy: ContextPolicy,
        /// JSON or TOML length-mix file.
        #[arg(long)]
        mix: Option<PathBuf>,
        #[arg(long, env = "CALLSENSE_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Score a backend against a gold test corpus.
    Eval {
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        policy: Option<ContextPolicy>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, env = "CALLSENSE_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Compare eval reports, or summarize call records.
    Report {
        #[arg(long = "eval", num_args = 1..)]
        evals: Vec<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Corpus size and turns per conversation, optionally after a split.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Seed for a train/validation split.
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long, default_value = "9/10", requires = "split_seed")]
        train_fraction: String,
        /// Write the two sides as transcript files with this prefix.
        #[arg(long, requires = "split_seed")]
        write_split: Option<PathBuf>,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn service_config(path: Option<&Path>) -> Result<ServiceConfig, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default().with_env(|k| std::env::var(k).ok()),
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Serve { config } => serve(service_config(config.as_deref())?),
        Command::Simulate {
            per_type,
            corpus_config,
            seed,
            noise,
            out,
        } => {
            let corpus_config = match corpus_config {
                Some(path) => load_config::<CorpusConfig>(&path)?,
                None => CorpusConfig::uniform(per_type),
            };
            let noise = match noise.as_str() {
                "none" => NoiseProfile::none(),
                "moderate" => NoiseProfile::moderate(),
                path => load_config(Path::new(path))?,
            };
            let calls = generate_corpus(&corpus_config, &noise, seed)?;
            let corpus: Vec<_> = calls.into_iter().map(|c| c.conversation).collect();
            write_transcripts(&out, &corpus)?;
            println!("{}", to_canonical_json(&corpus_stats(&corpus)));
            Ok(())
        }
        Command::Annotate {
            input,
            out_dir,
            backend,
            policy,
            cache,
            config,
        } => {
            let config = service_config(config.as_deref())?;
            let engine = Engine::from_config(&config)?;
            let cache = cache.map(|p| AnnotationCache::open(&p)).transpose()?;
            let options = BatchOptions {
                backend: backend.unwrap_or(config.default_backend),
                policy: policy.unwrap_or(config.default_policy),
                max_in_flight: config.max_in_flight,
            };
            let output = batch_annotate_file(&engine, &input, &out_dir, &options, cache.as_ref())?;
            println!("{}", to_canonical_json(&output.manifest));
            Ok(())
        }
        Command::ExportTrain {
            input,
            out,
            policy,
            mix,
            config,
        } => {
            let config = service_config(config.as_deref())?;
            let engine = Engine::from_config(&config)?;
            let mix = match mix {
                Some(path) => load_config::<LengthMix>(&path)?,
                None => LengthMix::default(),
            };
            let corpus = read_transcripts(&input)?;
            let mut writer = BufWriter::new(File::create(&out)?);
            let report = engine.builder().write_training_jsonl(&corpus, policy, &mix, &mut writer)?;
            std::io::Write::flush(&mut writer)?;
            println!("{}", to_canonical_json(&report));
            Ok(())
        }
        Command::Eval {
            backend,
            test,
            out,
            policy,
            cache,
            config,
        } => {
            let config = service_config(config.as_deref())?;
            let engine = Engine::from_config(&config)?;
            let backend = engine.backend(backend.as_deref().unwrap_or(&config.default_backend))?;
            let corpus = read_transcripts(&test)?;
            let cache = match cache {
                Some(path) => AnnotationCache::open(&path)?,
                None => AnnotationCache::in_memory(),
            };
            let evaluator = engine.evaluator(policy.unwrap_or(config.default_policy), config.max_in_flight);
            let run = evaluator.run(backend.as_ref(), &corpus, &cache, engine.audit())?;
            tracing::info!(
                calls = run.stats.backend_calls,
                cache_hits = run.stats.cache_hits,
                errors = run.stats.backend_errors,
                "eval finished"
            );
            let json = run.report.to_canonical_json();
            match out {
                Some(path) => std::fs::write(path, json + "\n")?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Report { evals, records } => {
            if evals.is_empty() && records.is_none() {
                return Err("give --eval report files, --records, or both".into());
            }
            if !evals.is_empty() {
                let reports = evals
                    .iter()
                    .map(|p| -> Result<EvalReport, Box<dyn std::error::Error>> {
                        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                print!("{}", comparison_table(&reports));
            }
            if let Some(path) = records {
                let records: Vec<CallRecord> = read_jsonl(&path)?;
                println!("{}", to_canonical_json(&corpus_rollup(&records)));
            }
            Ok(())
        }
        Command::Stats {
            input,
            split_seed,
            train_fraction,
            write_split,
        } => {
            let corpus = read_transcripts(&input)?;
            let Some(seed) = split_seed else {
                println!("{}", to_canonical_json(&corpus_stats(&corpus)));
                return Ok(());
            };
            let train_fraction =
                Fraction::parse(&train_fraction).ok_or_else(|| format!("bad train fraction {train_fraction:?}"))?;
            let (train, valid) = split_corpus(&corpus, &SplitSpec { train_fraction, seed })?;
            println!(
                "{}",
                to_canonical_json(&serde_json::json!({
                    "all": corpus_stats(&corpus),
                    "train": corpus_stats(&train),
                    "valid": corpus_stats(&valid),
                }))
            );
            if let Some(prefix) = write_split {
                let with_suffix = |suffix: &str| {
                    let mut name = prefix.clone().into_os_string();
                    name.push(suffix);
                    PathBuf::from(name)
                };
                write_transcripts(&with_suffix(".train.jsonl"), &train)?;
                write_transcripts(&with_suffix(".valid.jsonl"), &valid)?;
            }
            Ok(())
        }
    }
}

#[tokio::main]
async fn serve(config: ServiceConfig) -> CliResult {
    let engine = Arc::new(Engine::from_config(&config)?);
    engine.backend(&config.default_backend)?;
    let sessions = SessionManager::new(engine.clone(), &config.data_dir.join("sessions"), config.max_in_flight)?
        .with_defaults(&config.default_backend, config.default_policy);
    let state = AppState {
        sessions: Arc::new(sessions),
        engine: engine.clone(),
        data_dir: config.data_dir.clone(),
        auth_token: config.auth_token.clone(),
        default_backend: config.default_backend.clone(),
        default_policy: config.default_policy,
        max_in_flight: config.max_in_flight,
    };
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, backends = ?engine.backend_ids(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
