//! The four single-turn pipelines: Direct, RAG, Rewrite-Retrieve-Read (RRR)
//! and Extract-Refine-Retrieve-Read (ERRR).
//!
//! ERRR first asks the reader model for a background document drawn from its
//! own parametric knowledge, then asks the optimizer for search queries that
//! validate or fill in that document, retrieves for those queries, and
//! finally answers the *original* question from the retrieved passages. The
//! background document itself never reaches the reader.

pub mod parse;
pub mod prompts;
mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gateway::{ChatRequest, ChatResponse, Gateway, GatewayError, LlmEndpoint, UsageStats};
use crate::retrieval::{retrieve_multi, MergeMode, MultiRetrieval, Passage, RetrievalError, Retriever, DEFAULT_TOTAL_K};

pub use parse::{format_query_list, parse_answer, parse_query_list, ParseEmpty};
pub use prompts::{Demonstrations, PromptSet, PromptTemplate, TemplateError};
pub use transcript::{PipelineKind, StageName, StageRecord, Transcript, UnknownPipeline};

/// Optimizer context used when extraction yields nothing.
pub const NO_BACKGROUND: &str = "(no background available)";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{kind} pipeline needs {what}")]
    MissingComponent { kind: PipelineKind, what: &'static str },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("extraction produced an empty document")]
    ExtractionEmpty,
    #[error(transparent)]
    ParseEmpty(#[from] ParseEmpty),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Extracted parametric knowledge: the background document and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDocument {
    pub text: String,
    pub usage: UsageStats,
}

/// Retrieval queries produced by a rewriter or optimizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    pub queries: Vec<String>,
    /// Unparsed model output.
    pub raw: String,
}

impl QuerySet {
    /// Parses raw model output; fails if no query survives.
    pub fn from_raw(raw: impl Into<String>) -> Result<Self, ParseEmpty> {
        let raw = raw.into();
        Ok(Self {
            queries: parse_query_list(&raw)?,
            raw,
        })
    }

    /// The question itself as the only query.
    pub fn single(query: impl Into<String>) -> Self {
        let query = query.into();
        Self {
            raw: query.clone(),
            queries: vec![query],
        }
    }
}

/// Output of one pipeline stage: its transcript record and its result.
#[derive(Debug)]
pub struct Stage<T> {
    pub record: StageRecord,
    pub outcome: Result<T, PipelineError>,
}

impl<T> Stage<T> {
    pub fn into_result(self) -> Result<T, PipelineError> {
        self.outcome
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSampling {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl StageSampling {
    pub fn new(max_tokens: u32) -> Self {
        Self {
            temperature: 0.0,
            max_tokens,
            stop: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub extract: StageSampling,
    pub optimize: StageSampling,
    pub rewrite: StageSampling,
    pub read: StageSampling,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            extract: StageSampling::new(512),
            optimize: StageSampling::new(256),
            rewrite: StageSampling::new(256),
            read: StageSampling::new(128),
        }
    }
}

/// How the optimizer prompt is laid out for the configured optimizer model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStyle {
    /// Full instruction prompt with demonstrations, for a general chat model.
    #[default]
    Instruct,
    /// Eliciting prefix plus context and question, for a distilled student.
    Student,
}

/// Renders the student-optimizer input for one question.
pub fn render_student_input(prompts: &PromptSet, context: &str, question: &str) -> Result<String, TemplateError> {
    prompts
        .student_optimizer
        .render(&[(prompts::CONTEXT, context), (prompts::QUESTION, question)])
}

/// Passages for the `{doc}` slot: title line (when present) then text, one
/// blank line between passages, in retrieval order.
pub fn render_passages(passages: &[Passage]) -> String {
    passages
        .iter()
        .map(|p| match &p.title {
            Some(title) if !title.is_empty() => format!("{title}\n{}", p.text),
            _ => p.text.clone(),
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub struct Pipeline {
    gateway: Arc<Gateway>,
    reader: Arc<LlmEndpoint>,
    optimizer: Option<Arc<LlmEndpoint>>,
    retriever: Option<Arc<dyn Retriever>>,
    prompts: PromptSet,
    sampling: SamplingConfig,
    total_k: usize,
    merge_mode: MergeMode,
    optimizer_style: OptimizerStyle,
}

impl Pipeline {
    pub fn new(gateway: Arc<Gateway>, reader: Arc<LlmEndpoint>) -> Self {
        Self {
            gateway,
            reader,
            optimizer: None,
            retriever: None,
            prompts: PromptSet::new(&Demonstrations::builtin("custom")),
            sampling: SamplingConfig::default(),
            total_k: DEFAULT_TOTAL_K,
            merge_mode: MergeMode::default(),
            optimizer_style: OptimizerStyle::default(),
        }
    }

    pub fn with_optimizer(mut self, optimizer: Arc<LlmEndpoint>, style: OptimizerStyle) -> Self {
        self.optimizer = Some(optimizer);
        self.optimizer_style = style;
        self
    }

    pub fn with_retriever(mut self, retriever: Arc<dyn Retriever>) -> Self {
        self.retriever = Some(retriever);
        self
    }

    pub fn with_demonstrations(mut self, demos: &Demonstrations) -> Self {
        self.prompts = PromptSet::new(demos);
        self
    }

    pub fn with_sampling(mut self, sampling: SamplingConfig) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_total_k(mut self, total_k: usize, mode: MergeMode) -> Self {
        self.total_k = total_k;
        self.merge_mode = mode;
        self
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    /// Checks that every component `kind` needs is configured.
    pub fn validate(&self, kind: PipelineKind) -> Result<(), PipelineError> {
        if kind.needs_retriever() && self.retriever.is_none() {
            return Err(PipelineError::MissingComponent { kind, what: "a retriever" });
        }
        if kind.needs_optimizer() && self.optimizer.is_none() {
            return Err(PipelineError::MissingComponent {
                kind,
                what: "an optimizer endpoint",
            });
        }
        if self.total_k == 0 {
            return Err(PipelineError::InvalidArgument("total_k must be at least 1".into()));
        }
        Ok(())
    }

    fn optimizer_endpoint(&self, kind: PipelineKind) -> Result<&Arc<LlmEndpoint>, PipelineError> {
        self.optimizer.as_ref().ok_or(PipelineError::MissingComponent {
            kind,
            what: "an optimizer endpoint",
        })
    }

    async fn call(
        &self,
        name: StageName,
        endpoint: &Arc<LlmEndpoint>,
        prompt: String,
        sampling: &StageSampling,
    ) -> (StageRecord, Result<ChatResponse, GatewayError>) {
        let request = ChatRequest {
            endpoint: Arc::clone(endpoint),
            prompt,
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
            stop: sampling.stop.clone(),
        };
        let result = self.gateway.complete(&request).await;
        let mut record = StageRecord::new(name, request.prompt);
        match &result {
            Ok(response) => {
                record.raw = response.text.clone();
                record.usage = response.usage;
                record.latency_ms = response.usage.latency_ms;
                record.cached = response.cached;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        (record, result)
    }

    fn stage_failed<T>(name: StageName, error: PipelineError) -> Stage<T> {
        let mut record = StageRecord::new(name, String::new());
        record.error = Some(error.to_string());
        Stage {
            record,
            outcome: Err(error),
        }
    }

    /// One reader-model call with the extraction prompt; the output is kept verbatim.
    pub async fn extract_parametric_knowledge(&self, question: &str) -> Stage<PseudoDocument> {
        if question.trim().is_empty() {
            return Self::stage_failed(StageName::Extract, PipelineError::InvalidArgument("question is empty".into()));
        }
        let prompt = match self.prompts.extraction.render(&[(prompts::QUESTION, question)]) {
            Ok(p) => p,
            Err(e) => return Self::stage_failed(StageName::Extract, e.into()),
        };
        let (mut record, result) = self
            .call(StageName::Extract, &self.reader, prompt, &self.sampling.extract)
            .await;
        let outcome = match result {
            Err(e) => Err(e.into()),
            Ok(response) if response.text.trim().is_empty() => Err(PipelineError::ExtractionEmpty),
            Ok(response) => Ok(PseudoDocument {
                text: response.text,
                usage: response.usage,
            }),
        };
        match &outcome {
            Ok(doc) => record.parsed = Value::String(doc.text.clone()),
            Err(e) if record.error.is_none() => record.error = Some(e.to_string()),
            Err(_) => {}
        }
        Stage { record, outcome }
    }

    fn query_stage(mut record: StageRecord, result: Result<ChatResponse, GatewayError>) -> Stage<QuerySet> {
        let outcome = result
            .map_err(PipelineError::from)
            .and_then(|response| QuerySet::from_raw(response.text).map_err(PipelineError::from));
        match &outcome {
            Ok(set) => record.parsed = json!(set.queries),
            Err(e) if record.error.is_none() => record.error = Some(e.to_string()),
            Err(_) => {}
        }
        Stage { record, outcome }
    }

    /// ERRR query optimization over the extracted background document.
    pub async fn optimize_queries(&self, document: &PseudoDocument, question: &str) -> Stage<QuerySet> {
        if question.trim().is_empty() {
            return Self::stage_failed(StageName::Optimize, PipelineError::InvalidArgument("question is empty".into()));
        }
        let endpoint = match self.optimizer_endpoint(PipelineKind::Errr) {
            Ok(e) => Arc::clone(e),
            Err(e) => return Self::stage_failed(StageName::Optimize, e),
        };
        let rendered = match self.optimizer_style {
            OptimizerStyle::Instruct => self
                .prompts
                .optimizer
                .render(&[(prompts::CONTEXT, &document.text), (prompts::QUESTION, question)]),
            OptimizerStyle::Student => render_student_input(&self.prompts, &document.text, question),
        };
        let prompt = match rendered {
            Ok(p) => p,
            Err(e) => return Self::stage_failed(StageName::Optimize, e.into()),
        };
        let (record, result) = self
            .call(StageName::Optimize, &endpoint, prompt, &self.sampling.optimize)
            .await;
        Self::query_stage(record, result)
    }

    /// RRR query rewriting from the question alone.
    pub async fn rewrite_queries(&self, question: &str) -> Stage<QuerySet> {
        if question.trim().is_empty() {
            return Self::stage_failed(StageName::Rewrite, PipelineError::InvalidArgument("question is empty".into()));
        }
        let endpoint = match self.optimizer_endpoint(PipelineKind::Rrr) {
            Ok(e) => Arc::clone(e),
            Err(e) => return Self::stage_failed(StageName::Rewrite, e),
        };
        let prompt = match self.prompts.rewriter.render(&[(prompts::QUESTION, question)]) {
            Ok(p) => p,
            Err(e) => return Self::stage_failed(StageName::Rewrite, e.into()),
        };
        let (record, result) = self
            .call(StageName::Rewrite, &endpoint, prompt, &self.sampling.rewrite)
            .await;
        Self::query_stage(record, result)
    }

    pub async fn retrieve(&self, queries: &QuerySet) -> Stage<MultiRetrieval> {
        let mut record = StageRecord::new(StageName::Retrieve, queries.queries.join("\n"));
        let outcome = match &self.retriever {
            None => Err(PipelineError::InvalidArgument("no retriever configured".into())),
            Some(r) => retrieve_multi(r.as_ref(), &queries.queries, self.total_k, self.merge_mode)
                .await
                .map_err(PipelineError::from),
        };
        match &outcome {
            Ok(found) => {
                record.parsed = json!(found.passages.iter().map(|p| &p.id).collect::<Vec<_>>());
                record.latency_ms = found.latency_ms;
                record.usage.latency_ms = found.latency_ms;
                if !found.failures.is_empty() {
                    record.error = Some(
                        found
                            .failures
                            .iter()
                            .map(|f| format!("{:?}: {}", f.query, f.error))
                            .collect::<Vec<_>>()
                            .join("; "),
                    );
                }
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        Stage { record, outcome }
    }

    /// Final answer. Direct uses the no-context prompt; every other kind uses
    /// the reader prompt over `passages` (possibly none).
    pub async fn read(&self, question: &str, passages: &[Passage], kind: PipelineKind) -> Stage<String> {
        if question.trim().is_empty() {
            return Self::stage_failed(StageName::Read, PipelineError::InvalidArgument("question is empty".into()));
        }
        let rendered = match kind {
            PipelineKind::Direct if !passages.is_empty() => {
                return Self::stage_failed(
                    StageName::Read,
                    PipelineError::InvalidArgument("Direct reading takes no passages".into()),
                )
            }
            PipelineKind::Direct => self.prompts.direct.render(&[(prompts::QUESTION, question)]),
            _ => {
                let doc = render_passages(passages);
                self.prompts
                    .reader
                    .render(&[(prompts::DOCUMENTS, &doc), (prompts::QUESTION, question)])
            }
        };
        let prompt = match rendered {
            Ok(p) => p,
            Err(e) => return Self::stage_failed(StageName::Read, e.into()),
        };
        let (mut record, result) = self.call(StageName::Read, &self.reader, prompt, &self.sampling.read).await;
        let outcome = result.map(|r| parse_answer(&r.text)).map_err(PipelineError::from);
        if let Ok(answer) = &outcome {
            record.parsed = Value::String(answer.clone());
        }
        Stage { record, outcome }
    }

    /// Runs one question end to end. Stage failures are recorded and degraded
    /// around; only missing components or an empty question are errors.
    pub async fn run(&self, kind: PipelineKind, id: &str, question: &str) -> Result<Transcript, PipelineError> {
        self.validate(kind)?;
        if question.trim().is_empty() {
            return Err(PipelineError::InvalidArgument(format!("question {id} is empty")));
        }
        let mut stages = Vec::with_capacity(4);
        let mut notes = Vec::new();

        let queries = match kind {
            PipelineKind::Direct => None,
            PipelineKind::Rag => Some(QuerySet::single(question)),
            PipelineKind::Rrr => {
                let stage = self.rewrite_queries(question).await;
                stages.push(stage.record);
                Some(stage.outcome.unwrap_or_else(|e| {
                    notes.push(format!("rewrite failed ({e}); retrieving with the original question"));
                    QuerySet::single(question)
                }))
            }
            PipelineKind::Errr => {
                let extracted = self.extract_parametric_knowledge(question).await;
                stages.push(extracted.record);
                let document = extracted.outcome.unwrap_or_else(|e| {
                    notes.push(format!("extraction failed ({e}); optimizing without background"));
                    PseudoDocument {
                        text: NO_BACKGROUND.to_owned(),
                        usage: UsageStats::default(),
                    }
                });
                let optimized = self.optimize_queries(&document, question).await;
                stages.push(optimized.record);
                Some(optimized.outcome.unwrap_or_else(|e| {
                    notes.push(format!("optimization failed ({e}); retrieving with the original question"));
                    QuerySet::single(question)
                }))
            }
        };

        let mut passages = Vec::new();
        if let Some(queries) = queries {
            let retrieved = self.retrieve(&queries).await;
            stages.push(retrieved.record);
            match retrieved.outcome {
                Ok(found) => {
                    for failure in &found.failures {
                        notes.push(format!("retrieval failed for {:?}: {}", failure.query, failure.error));
                    }
                    passages = found.passages;
                }
                Err(e) => notes.push(format!("retrieval failed ({e}); reading without passages")),
            }
        }

        let read = self.read(question, &passages, kind).await;
        stages.push(read.record);
        let answer = read.outcome.unwrap_or_else(|e| {
            notes.push(format!("reading failed ({e}); answer left empty"));
            String::new()
        });

        let totals = stages.iter().map(|s| &s.usage).sum();
        Ok(Transcript {
            id: id.to_owned(),
            pipeline: kind,
            question: question.to_owned(),
            stages,
            passages,
            answer,
            em: None,
            f1: None,
            totals,
            notes,
        })
    }
}
