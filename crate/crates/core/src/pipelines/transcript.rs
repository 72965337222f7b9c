use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::UsageStats;
use crate::retrieval::Passage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineKind {
    #[serde(alias = "direct")]
    Direct,
    #[serde(rename = "RAG", alias = "rag")]
    Rag,
    #[serde(rename = "RRR", alias = "rrr")]
    Rrr,
    #[serde(rename = "ERRR", alias = "errr")]
    Errr,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 4] = [Self::Direct, Self::Rag, Self::Rrr, Self::Errr];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Direct => "Direct",
            Self::Rag => "RAG",
            Self::Rrr => "RRR",
            Self::Errr => "ERRR",
        }
    }

    pub fn needs_retriever(self) -> bool {
        !matches!(self, Self::Direct)
    }

    pub fn needs_optimizer(self) -> bool {
        matches!(self, Self::Rrr | Self::Errr)
    }

    /// Stage sequence this kind produces.
    pub fn stages(self) -> &'static [StageName] {
        use StageName::*;
        match self {
            Self::Direct => &[Read],
            Self::Rag => &[Retrieve, Read],
            Self::Rrr => &[Rewrite, Retrieve, Read],
            Self::Errr => &[Extract, Optimize, Retrieve, Read],
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pipeline '{0}' (expected direct, rag, rrr or errr)")]
pub struct UnknownPipeline(pub String);

impl FromStr for PipelineKind {
    type Err = UnknownPipeline;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "rag" => Ok(Self::Rag),
            "rrr" => Ok(Self::Rrr),
            "errr" => Ok(Self::Errr),
            _ => Err(UnknownPipeline(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Extract,
    Optimize,
    Rewrite,
    Retrieve,
    Read,
}

impl StageName {
    pub fn is_llm_call(self) -> bool {
        !matches!(self, Self::Retrieve)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Extract => "extract",
            Self::Optimize => "optimize",
            Self::Rewrite => "rewrite",
            Self::Retrieve => "retrieve",
            Self::Read => "read",
        }
    }
}

/// One stage of one question. For the retrieve stage, `prompt` holds the
/// queries (one per line) and `parsed` the retrieved passage ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: StageName,
    pub prompt: String,
    pub raw: String,
    pub parsed: Value,
    pub usage: UsageStats,
    pub latency_ms: f64,
    #[serde(default)]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    pub(crate) fn new(name: StageName, prompt: String) -> Self {
        Self {
            name,
            prompt,
            raw: String::new(),
            parsed: Value::Null,
            usage: UsageStats::default(),
            latency_ms: 0.0,
            cached: false,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub pipeline: PipelineKind,
    pub question: String,
    pub stages: Vec<StageRecord>,
    pub passages: Vec<Passage>,
    pub answer: String,
    #[serde(default)]
    pub em: Option<f64>,
    #[serde(default)]
    pub f1: Option<f64>,
    pub totals: UsageStats,
    /// Fallbacks taken and recoverable failures, in the order they happened.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Transcript {
    pub fn llm_calls(&self) -> usize {
        self.stages.iter().filter(|s| s.name.is_llm_call()).count()
    }

    pub fn stage_names(&self) -> Vec<StageName> {
        self.stages.iter().map(|s| s.name).collect()
    }

    pub fn stage(&self, name: StageName) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn stage_usage_sum(&self) -> UsageStats {
        self.stages.iter().map(|s| &s.usage).sum()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }
}
