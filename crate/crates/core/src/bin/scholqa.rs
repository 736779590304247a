use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::error;

use scholqa_core::config::{BackendKind, Overrides, PipelineConfig};
use scholqa_core::fixtures;
use scholqa_core::pipeline::{self, Pipeline, RunOptions};
use scholqa_core::sparql::{HttpTransport, OfflineTransport, Transport};

#[derive(Parser)]
#[command(name = "scholqa", version, about = "Scholarly hybrid question answering over DBLP and SemOpenAlex")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of cached endpoint responses.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Extractive QA backend.
    #[arg(long, global = true, value_parser = ["stub", "remote"])]
    backend: Option<String>,
    /// Base URL of the remote QA service.
    #[arg(long, global = true)]
    qa_url: Option<String>,
    /// Gold answers (JSON array of {"id", "answer"}).
    #[arg(long, global = true)]
    gold: Option<PathBuf>,
    /// Recorded responses served before the network.
    #[arg(long, global = true)]
    replay_dir: Option<PathBuf>,
    /// Directory for intermediate stage files.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Fail any query that is neither cached nor recorded.
    #[arg(long, global = true)]
    offline: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Route questions into breakdown sets.
    Classify { questions: Option<PathBuf> },
    /// Query the endpoints for every routed question.
    Fetch,
    /// Build QA contexts and the direct and combined answer streams.
    Context,
    /// Run the QA backend on eligible questions.
    Predict,
    /// Merge the answer streams.
    Merge,
    /// Write the answers file.
    Emit {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score an answers file against the gold answers.
    Evaluate { answers: Option<PathBuf> },
    /// Run every stage, resuming from existing stage files.
    Run {
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Ignore existing stage files.
        #[arg(long)]
        fresh: bool,
    },
    /// Record endpoint responses for offline replay.
    Record {
        #[arg(long)]
        out: PathBuf,
        questions: Option<PathBuf>,
    },
    /// Check that recordings cover every query the fetch stage issues.
    CheckFixtures {
        #[arg(long)]
        recordings: PathBuf,
        questions: Option<PathBuf>,
    },
}

fn load_config(g: &Global, questions: Option<PathBuf>, output: Option<PathBuf>) -> Result<PipelineConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(Overrides {
        cache_dir: g.cache_dir.clone(),
        backend: g.backend.as_deref().map(str::parse::<BackendKind>).transpose()?,
        qa_url: g.qa_url.clone(),
        gold: g.gold.clone(),
        replay_dir: g.replay_dir.clone(),
        questions,
        output,
        work_dir: g.work_dir.clone(),
    });
    Ok(cfg)
}

fn network(g: &Global) -> Arc<dyn Transport> {
    if g.offline {
        Arc::new(OfflineTransport)
    } else {
        Arc::new(HttpTransport::new())
    }
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let g = &cli.global;
    match cli.command {
        Command::Classify { questions } => {
            let cfg = load_config(g, questions, None)?;
            let path = cfg.questions_path()?.to_owned();
            let summary = Pipeline::with_transport(cfg, network(g)).classify(&path)?;
            for (set, n) in &summary.counts {
                println!("{set}\t{n}");
            }
            println!("total\t{}", summary.total());
        }
        Command::Fetch => {
            let p = Pipeline::with_transport(load_config(g, None, None)?, network(g));
            let s = p.fetch()?;
            println!("questions\t{}\nqueries\t{}\nfailed\t{}", s.questions, s.queries, s.failed);
        }
        Command::Context => Pipeline::with_transport(load_config(g, None, None)?, network(g)).context()?,
        Command::Predict => {
            let n = Pipeline::with_transport(load_config(g, None, None)?, network(g)).predict()?;
            println!("predicted\t{n}");
        }
        Command::Merge => {
            let n = Pipeline::with_transport(load_config(g, None, None)?, network(g)).merge()?;
            println!("merged\t{n}");
        }
        Command::Emit { output } => {
            let n = Pipeline::with_transport(load_config(g, None, output)?, network(g)).emit()?;
            println!("answers\t{n}");
        }
        Command::Evaluate { answers } => {
            let cfg = load_config(g, None, None)?;
            let answers = answers.unwrap_or_else(|| cfg.output.clone());
            let gold = cfg.gold.clone().ok_or("no gold file configured (use --gold)")?;
            let report = Pipeline::with_transport(cfg, network(g)).evaluate(&answers, &gold)?;
            print!("{}", report.render_table());
        }
        Command::Run { questions, output, fresh } => {
            let p = Pipeline::with_transport(load_config(g, questions, output)?, network(g));
            let s = p.run(RunOptions { fresh })?;
            for stage in &s.skipped {
                log::info!("skipped {} (up to date)", stage.name());
            }
            println!("answers\t{}\t{}", s.answers, p.config.output.display());
            if let Some(r) = s.report {
                print!("{}", r.render_table());
            }
        }
        Command::Record { out, questions } => {
            let cfg = load_config(g, questions, None)?;
            cfg.validate()?;
            let qs = pipeline::load_questions(cfg.questions_path()?)?;
            let routed = pipeline::classify(&qs, &cfg.lexicon()?);
            let cov = fixtures::record_fixtures(&cfg, &routed, network(g), &out)?;
            println!("queries\t{}\ngaps\t{}", cov.queries, cov.gaps.len());
        }
        Command::CheckFixtures { recordings, questions } => {
            let cfg = load_config(g, questions, None)?;
            let qs = pipeline::load_questions(cfg.questions_path()?)?;
            let routed = pipeline::classify(&qs, &cfg.lexicon()?);
            let cov = fixtures::check_completeness(&cfg, &routed, &recordings)?;
            println!("queries\t{}\ngaps\t{}", cov.queries, cov.gaps.len());
            for gap in &cov.gaps {
                eprintln!("missing {} {:?} ({})", gap.endpoint, gap.question_ids, gap.error);
            }
            if !cov.is_complete() {
                return Err("recordings are incomplete".into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
