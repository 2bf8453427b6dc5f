use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use manta_core::index::DocKind;
use manta_core::ingest::{ingest_file, IngestOptions};
use manta_core::llm::{Criterion, Gateway};
use manta_core::pipeline::SystemMode;
use manta_core::{Config, Pipeline, RunRecord, RunRequest};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "manta", version, about = "Prompt to checkpoint, adapters and enhanced prompt")]
struct Cli {
    /// TOML or JSON config file. Defaults are fully offline (mock providers, stub backend).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `data_dir` from the config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Checkpoint,
    Adapter,
}

#[derive(Clone, Copy, ValueEnum)]
enum Against {
    Base,
    NoEnhance,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a model dump into a collection snapshot.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Collection name; defaults to the configured name for the kind.
        #[arg(long)]
        collection: Option<String>,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Embed title plus description instead of the exemplar prompt.
        #[arg(long)]
        metadata_baseline: bool,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Run the full pipeline and print the run record.
    Run {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        cfg: Option<f64>,
        /// Details per enhanced concept.
        #[arg(long)]
        details: Option<usize>,
        #[arg(long)]
        seed: Option<i64>,
        /// Token budget for this run.
        #[arg(long)]
        budget: Option<u64>,
        /// Print only the generation workflow.
        #[arg(long)]
        dump_workflow: bool,
    },
    /// img2img on one image of a stored run.
    Refine {
        #[arg(long)]
        run: String,
        #[arg(long)]
        image: usize,
        #[arg(long)]
        denoise: Option<f64>,
    },
    /// Judge the full system against a baseline.
    Eval {
        /// One prompt per line, or a JSON array of strings.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, value_enum)]
        against: Against,
        #[arg(long, value_delimiter = ',', default_value = "diversity,quality,alignment")]
        criteria: Vec<Criterion>,
        /// Write the full JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the JSON API (and /ui when configured).
    Serve {
        #[arg(long)]
        host: Option<IpAddr>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn read_prompts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Print a record, or report its failure on stderr.
fn finish(record: &RunRecord) -> Result<ExitCode> {
    print_json(record)?;
    match &record.failure {
        None => Ok(ExitCode::SUCCESS),
        Some(f) => {
            eprintln!("run {} failed at {}: {}", record.request_id, f.stage, f.message);
            Ok(ExitCode::from(2))
        }
    }
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map(|r| format!("{:.1}%", r * 100.0)).unwrap_or_else(|| "n/a".into())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Ingest {
            input,
            collection,
            kind,
            metadata_baseline,
            batch_size,
        } => {
            let kind = match kind {
                Kind::Checkpoint => DocKind::Checkpoint,
                Kind::Adapter => DocKind::Adapter,
            };
            let name = collection.unwrap_or_else(|| match kind {
                DocKind::Checkpoint => config.collections.checkpoints.clone(),
                DocKind::Adapter => config.collections.adapters.clone(),
            });
            let gateway = Gateway::from_config(&config.embedding)?;
            let opts = IngestOptions {
                batch_size,
                ..IngestOptions::default()
            };
            let out = config.collection_path(&name);
            let report = ingest_file(&input, kind, &name, &out, &gateway, metadata_baseline, opts)?;
            print_json(&report)?;
        }
        Command::Run {
            prompt,
            cfg,
            details,
            seed,
            budget,
            dump_workflow,
        } => {
            let mut knobs = config.knobs.clone();
            if let Some(cfg) = cfg {
                knobs.cfg_scale = cfg;
            }
            if seed.is_some() {
                knobs.seed = seed;
            }
            let pipeline = Pipeline::open(config)?;
            let mut req = RunRequest::new(prompt);
            req.knobs = Some(knobs);
            req.details = details;
            req.budget = budget;
            let record = pipeline.run(&req)?;
            if dump_workflow {
                if let Some(w) = &record.workflow {
                    print_json(w)?;
                }
                if let Some(f) = &record.failure {
                    eprintln!("run {} failed at {}: {}", record.request_id, f.stage, f.message);
                    return Ok(ExitCode::from(2));
                }
                return Ok(ExitCode::SUCCESS);
            }
            return finish(&record);
        }
        Command::Refine { run, image, denoise } => {
            let pipeline = Pipeline::open(config)?;
            return finish(&pipeline.refine(&run, image, denoise)?);
        }
        Command::Eval {
            prompts,
            against,
            criteria,
            out,
        } => {
            let prompts = read_prompts(&prompts)?;
            if prompts.is_empty() {
                bail!("no prompts in file");
            }
            let against = match against {
                Against::Base => SystemMode::Base,
                Against::NoEnhance => SystemMode::NoEnhance,
            };
            let pipeline = Pipeline::open(config)?;
            let run = pipeline.evaluate(&prompts, against, &criteria);
            if let Some(out) = out {
                fs::write(&out, serde_json::to_string_pretty(&run.to_json())?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            println!(
                "{} vs {} over {} prompts ({} failed)",
                run.system_a,
                run.system_b,
                prompts.len(),
                run.failed_prompts()
            );
            println!("{:<10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}", "criterion", "wins", "losses", "incons", "win", "loss", "incons");
            for row in run.summary() {
                println!(
                    "{:<10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
                    row.criterion.as_str(),
                    row.wins_a,
                    row.wins_b,
                    row.inconsistent,
                    fmt_rate(row.win_rate),
                    fmt_rate(row.loss_rate),
                    fmt_rate(row.inconsistent_rate)
                );
            }
            let t = &run.token_totals;
            println!("tokens: {} {}, {} {}, judge {}", run.system_a, t.system_a, run.system_b, t.system_b, t.judge);
        }
        Command::Serve { host, port } => {
            let host = match host {
                Some(h) => h,
                None => config.service.host.parse().context("service.host")?,
            };
            let addr = SocketAddr::new(host, port.unwrap_or(config.service.port));
            let pipeline = Arc::new(Pipeline::open(config)?);
            tokio::runtime::Runtime::new()?.block_on(manta_service::serve(pipeline, addr))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("MANTA_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
