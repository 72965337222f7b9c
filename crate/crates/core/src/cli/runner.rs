use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::config::{ensure_writable, ConfigError, ResolvedDataset, RunConfig};
use super::report::{build_report, ReportError, ReportTable};
use crate::evaluation::{exact_match, f1, load_dataset, summarize, DatasetError, EvalSummary, ExampleScore, QAExample};
use crate::gateway::{ChatTransport, Gateway, HttpTransport, ResponseCache, Throttle, UsageLedger, UsageStats};
use crate::pipelines::prompts::ELICITING_PREFIX;
use crate::pipelines::{render_student_input, OptimizerStyle, Pipeline, PipelineKind, Transcript};
use crate::retrieval::{
    ingest_corpus, load_index, read_corpus, save_index, DenseRetriever, EmbeddingClient, FixtureRetriever,
    IndexManifest, RetrievalError, Retriever, WebSearchClient,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The two external dependencies of a run. Tests substitute scripted ones.
#[derive(Clone)]
pub struct Backends {
    pub transport: Arc<dyn ChatTransport>,
    pub retriever: Option<Arc<dyn Retriever>>,
}

impl Backends {
    /// HTTP chat transport plus the configured retriever, if `kind` needs one.
    /// Web search and embeddings share `throttle` with the gateway.
    pub fn from_config(config: &RunConfig, kind: PipelineKind, throttle: &Throttle) -> Result<Self, RunError> {
        let transport: Arc<dyn ChatTransport> = Arc::new(HttpTransport::new(Duration::from_secs(120)));
        let retriever = if kind.needs_retriever() {
            Some(build_retriever(config, throttle)?)
        } else {
            None
        };
        Ok(Self { transport, retriever })
    }
}

fn build_retriever(config: &RunConfig, throttle: &Throttle) -> Result<Arc<dyn Retriever>, RunError> {
    let cfg = config
        .retriever
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("no [retriever] section".into()))?;
    if let Some(web) = &cfg.web {
        return Ok(Arc::new(WebSearchClient::new(web.clone(), throttle.clone())?));
    }
    if let Some(dense) = &cfg.dense {
        let index = load_index(&dense.index_dir)?;
        if index.dim() != dense.embedding.dim {
            return Err(RetrievalError::DimensionMismatch {
                record: None,
                expected: dense.embedding.dim,
                found: index.dim(),
            }
            .into());
        }
        let embedder = EmbeddingClient::new(dense.embedding.clone(), throttle.clone());
        return Ok(Arc::new(DenseRetriever::new(Arc::new(index), Arc::new(embedder))));
    }
    if let Some(fixture) = &cfg.fixture {
        return Ok(Arc::new(FixtureRetriever::from_file(&fixture.path)?));
    }
    Err(ConfigError::Invalid("[retriever] needs one of web, dense or fixture".into()).into())
}

fn build_gateway(config: &RunConfig, transport: Arc<dyn ChatTransport>, throttle: Throttle) -> Gateway {
    let mut gateway = Gateway::new(transport)
        .with_throttle(throttle)
        .with_ledger(Arc::new(UsageLedger::default()))
        .charge_cached(config.charge_cached);
    if let Some(dir) = &config.cache_dir {
        gateway = gateway.with_cache(ResponseCache::new(dir));
    }
    gateway
}

fn load_examples(spec: &crate::evaluation::DatasetSpec, limit: Option<usize>) -> Result<Vec<QAExample>, RunError> {
    let mut examples = load_dataset(spec)?;
    if let Some(limit) = limit {
        examples.truncate(limit);
    }
    Ok(examples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub pipeline: PipelineKind,
    #[serde(flatten)]
    pub scores: EvalSummary,
    pub llm_calls: u64,
    pub cached_llm_calls: u64,
    /// Questions that took at least one fallback.
    pub degraded: usize,
    pub parallelism: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub transcripts: PathBuf,
    pub summary_path: PathBuf,
    pub report_path: PathBuf,
    pub report_json_path: PathBuf,
    pub summary: RunSummary,
    pub report: ReportTable,
}

/// Directory a run of `kind` over dataset `key` writes to.
pub fn run_dir(out_dir: &Path, dataset_key: &str, kind: PipelineKind) -> PathBuf {
    out_dir.join(format!("{dataset_key}_{}", kind.as_str().to_ascii_lowercase()))
}

/// Evaluates `config.pipeline` over the selected dataset and writes
/// `transcripts.jsonl`, `summary.json`, `report.txt` and `report.json`.
///
/// Transcripts are written in dataset order whatever the completion order.
/// Per-question failures degrade into the transcript; only configuration,
/// dataset and output errors abort.
pub async fn run_eval(
    config: &RunConfig,
    limit: Option<usize>,
    backends: Option<Backends>,
) -> Result<RunOutputs, RunError> {
    let kind = config.pipeline;
    config.validate_for_run(kind)?;
    let dataset = config.dataset(None)?;
    let dir = run_dir(&config.out_dir, &dataset.key, kind);
    ensure_writable(&dir)?;
    let examples = load_examples(&dataset.eval, limit)?;
    if examples.is_empty() {
        return Err(ConfigError::Invalid(format!("dataset '{}' selected no questions", dataset.key)).into());
    }

    let throttle = Throttle::new(config.parallelism);
    let backends = match backends {
        Some(b) => b,
        None => Backends::from_config(config, kind, &throttle)?,
    };
    let pipeline = build_pipeline(config, &dataset, backends, throttle)?;
    pipeline
        .validate(kind)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let transcripts: Vec<Transcript> = stream::iter(examples.iter())
        .map(|example| run_one(&pipeline, kind, example))
        .buffered(config.parallelism)
        .collect()
        .await;

    write_outputs(config, &dataset, kind, dir, &transcripts)
}

fn build_pipeline(
    config: &RunConfig,
    dataset: &ResolvedDataset,
    backends: Backends,
    throttle: Throttle,
) -> Result<Pipeline, RunError> {
    let gateway = Arc::new(build_gateway(config, backends.transport, throttle));
    let mut pipeline = Pipeline::new(gateway, config.reader()?)
        .with_demonstrations(&dataset.demonstrations)
        .with_sampling(config.sampling.clone());
    if let Some(optimizer) = config.optimizer()? {
        pipeline = pipeline.with_optimizer(optimizer, config.roles.optimizer_style);
    }
    if let Some(retriever) = backends.retriever {
        pipeline = pipeline.with_retriever(retriever);
    }
    if let Some(r) = &config.retriever {
        pipeline = pipeline.with_total_k(r.total_k, r.mode);
    }
    Ok(pipeline)
}

async fn run_one(pipeline: &Pipeline, kind: PipelineKind, example: &QAExample) -> Transcript {
    let mut transcript = match pipeline.run(kind, &example.id, &example.question).await {
        Ok(t) => t,
        Err(e) => {
            tracing::warn!(id = %example.id, error = %e, "question failed");
            Transcript {
                id: example.id.clone(),
                pipeline: kind,
                question: example.question.clone(),
                stages: Vec::new(),
                passages: Vec::new(),
                answer: String::new(),
                em: None,
                f1: None,
                totals: UsageStats::default(),
                notes: vec![format!("question failed: {e}")],
            }
        }
    };
    transcript.em = Some(exact_match(&transcript.answer, &example.gold_answers));
    transcript.f1 = Some(f1(&transcript.answer, &example.gold_answers));
    transcript
}

fn write_outputs(
    config: &RunConfig,
    dataset: &ResolvedDataset,
    kind: PipelineKind,
    dir: PathBuf,
    transcripts: &[Transcript],
) -> Result<RunOutputs, RunError> {
    let transcripts_path = dir.join("transcripts.jsonl");
    let mut body = String::new();
    for t in transcripts {
        body.push_str(&t.to_json_line());
        body.push('\n');
    }
    std::fs::write(&transcripts_path, body).map_err(io_error(&transcripts_path))?;

    let scores: Vec<ExampleScore> = transcripts
        .iter()
        .map(|t| ExampleScore {
            em: t.em.unwrap_or(0.0),
            f1: t.f1.unwrap_or(0.0),
            usage: t.stage_usage_sum(),
        })
        .collect();
    let scores = summarize(&scores).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let summary = RunSummary {
        dataset: dataset.key.clone(),
        pipeline: kind,
        scores,
        llm_calls: transcripts.iter().map(|t| t.llm_calls() as u64).sum(),
        cached_llm_calls: transcripts
            .iter()
            .flat_map(|t| &t.stages)
            .filter(|s| s.name.is_llm_call() && s.cached)
            .count() as u64,
        degraded: transcripts.iter().filter(|t| !t.notes.is_empty()).count(),
        parallelism: config.parallelism,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;

    let label = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = build_report([(label, transcripts)], Some(config.parallelism));
    let report_path = dir.join("report.txt");
    std::fs::write(&report_path, report.render()).map_err(io_error(&report_path))?;
    let report_json_path = dir.join("report.json");
    write_json(&report_json_path, &report)?;

    tracing::info!(
        n = summary.scores.n,
        em = summary.scores.em,
        f1 = summary.scores.f1,
        cost_usd = summary.scores.totals.cost_usd,
        "run finished"
    );
    Ok(RunOutputs {
        dir,
        transcripts: transcripts_path,
        summary_path,
        report_path,
        report_json_path,
        summary,
        report,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(io_error(path))
}

/// One training example for the student optimizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillationPair {
    /// Exactly what the student will be shown.
    pub input: String,
    /// The teacher's raw query output, terminators included.
    pub target: String,
}

impl DistillationPair {
    pub fn is_valid(&self) -> bool {
        !self.target.trim().is_empty() && self.input.starts_with(ELICITING_PREFIX)
    }
}

#[derive(Debug, Clone)]
pub struct ExportOutcome {
    pub path: PathBuf,
    pub pairs: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

/// Runs extraction and optimization against the teacher for every question of
/// the dataset's training split and writes `distill_<dataset>.jsonl` of
/// [`DistillationPair`]s. Questions the teacher fails on are skipped.
pub async fn export_distillation(
    config: &RunConfig,
    limit: Option<usize>,
    transport: Option<Arc<dyn ChatTransport>>,
) -> Result<ExportOutcome, RunError> {
    config.validate_for_export()?;
    let dataset = config.dataset(None)?;
    let train = dataset
        .train
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid(format!("dataset '{}' has no train_path", dataset.key)))?;
    ensure_writable(&config.out_dir)?;
    let examples = load_examples(train, limit)?;

    let teacher = config.teacher()?;
    let throttle = Throttle::new(config.parallelism);
    let transport = transport.unwrap_or_else(|| Arc::new(HttpTransport::new(Duration::from_secs(120))));
    let gateway = Arc::new(build_gateway(config, transport, throttle));
    let pipeline = Pipeline::new(gateway, Arc::clone(&teacher))
        .with_optimizer(teacher, OptimizerStyle::Instruct)
        .with_demonstrations(&dataset.demonstrations)
        .with_sampling(config.sampling.clone());

    let results: Vec<Option<DistillationPair>> = stream::iter(examples.iter())
        .map(|example| distill_one(&pipeline, example))
        .buffered(config.parallelism)
        .collect()
        .await;

    let mut warnings = Vec::new();
    if examples.is_empty() {
        let msg = format!("training split of '{}' selected no questions; wrote an empty file", dataset.key);
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    let path = config.out_dir.join(format!("distill_{}.jsonl", dataset.key));
    let mut body = String::new();
    let mut pairs = 0;
    for pair in results.iter().flatten() {
        body.push_str(&serde_json::to_string(pair).expect("serializable"));
        body.push('\n');
        pairs += 1;
    }
    std::fs::write(&path, body).map_err(io_error(&path))?;
    let skipped = results.len() - pairs;
    if skipped > 0 {
        warnings.push(format!("teacher failed on {skipped} of {} questions", results.len()));
    }
    Ok(ExportOutcome {
        path,
        pairs,
        skipped,
        warnings,
    })
}

async fn distill_one(pipeline: &Pipeline, example: &QAExample) -> Option<DistillationPair> {
    let document = match pipeline.extract_parametric_knowledge(&example.question).await.outcome {
        Ok(d) => d,
        Err(e) => {
            tracing::warn!(id = %example.id, error = %e, "teacher extraction failed; skipping");
            return None;
        }
    };
    let queries = match pipeline.optimize_queries(&document, &example.question).await.outcome {
        Ok(q) => q,
        Err(e) => {
            tracing::warn!(id = %example.id, error = %e, "teacher optimization failed; skipping");
            return None;
        }
    };
    let input = render_student_input(pipeline.prompts(), &document.text, &example.question).ok()?;
    let pair = DistillationPair {
        input,
        target: queries.raw,
    };
    pair.is_valid().then_some(pair)
}

/// Reads a corpus file, builds the index and persists it under `index_dir`.
pub fn ingest(corpus: &Path, index_dir: &Path, expected_dim: Option<usize>) -> Result<IndexManifest, RunError> {
    let index = ingest_corpus(read_corpus(corpus)?, expected_dim)?;
    std::fs::create_dir_all(index_dir).map_err(io_error(index_dir))?;
    Ok(save_index(&index, index_dir)?)
}
