use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use errr::cli::{export_distillation, ingest, report_files, run_eval, Overrides, RunConfig};
use errr::pipelines::PipelineKind;

#[derive(Parser)]
#[command(name = "errr", version, about = "Extract-Refine-Retrieve-Read question answering runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one pipeline over a dataset slice.
    Run(Common),
    /// Export teacher query outputs as student training pairs.
    ExportDistill(Common),
    /// Build and persist a dense index from a corpus file.
    Ingest {
        /// JSONL corpus of {"id","title","text","embedding"} records.
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Index directory; defaults to retriever.dense.index_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare runs from their transcript files.
    Report {
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
        /// Parallelism the runs used, stated in the table footer.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    pipeline: Option<PipelineKind>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Passages handed to the reader.
    #[arg(long)]
    k: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            pipeline: self.pipeline,
            dataset: self.dataset.clone(),
            limit: self.limit,
            out_dir: self.out.clone(),
            total_k: self.k,
        });
        Ok(config)
    }
}

async fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.load()?;
            let out = run_eval(&config, args.limit, None).await?;
            print!("{}", out.report.render());
            println!(
                "\nn={} EM={:.4} F1={:.4}; wrote {}",
                out.summary.scores.n,
                out.summary.scores.em,
                out.summary.scores.f1,
                out.dir.display()
            );
        }
        Command::ExportDistill(args) => {
            let config = args.load()?;
            let out = export_distillation(&config, args.limit, None).await?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} pairs, {} skipped; wrote {}", out.pairs, out.skipped, out.path.display());
        }
        Command::Ingest { corpus, config, out } => {
            let dense = match &config {
                Some(path) => RunConfig::load(path)?.retriever.and_then(|r| r.dense),
                None => None,
            };
            let index_dir = match (out, &dense) {
                (Some(dir), _) => dir,
                (None, Some(d)) => d.index_dir.clone(),
                (None, None) => bail!("no index directory: pass --out or configure retriever.dense.index_dir"),
            };
            let manifest = ingest(&corpus, &index_dir, dense.map(|d| d.embedding.dim))
                .with_context(|| format!("ingesting {}", corpus.display()))?;
            println!(
                "indexed N={} dim={} checksum={} into {}",
                manifest.n,
                manifest.dim,
                manifest.checksum,
                index_dir.display()
            );
        }
        Command::Report {
            transcripts,
            parallelism,
            json,
        } => {
            let table = report_files(&transcripts, parallelism)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                print!("{}", table.render());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime starts");
    match runtime.block_on(execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
