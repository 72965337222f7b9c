#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use errr::cli::{Backends, RunConfig};
use errr::gateway::mock::{ScriptedReply, ScriptedTransport};
use errr::gateway::{ChatRequest, TransportFailure};
use errr::pipelines::prompts;
use errr::retrieval::{FixtureRetriever, Passage, PassageSource};

/// Questions are "Who wrote novel #<i>?" with gold "Author <i>".
pub fn write_dataset(path: &Path, n: usize) {
    let mut f = std::fs::File::create(path).unwrap();
    for i in 0..n {
        writeln!(
            f,
            r#"{{"id":"q{i}","question":"Who wrote novel #{i}?","answers":["Author {i}","A. {i}"]}}"#
        )
        .unwrap();
    }
}

fn novel_number(prompt: &str) -> usize {
    let at = prompt.rfind("novel #").expect("prompt names a novel") + "novel #".len();
    prompt[at..]
        .chars()
        .take_while(char::is_ascii_digit)
        .collect::<String>()
        .parse()
        .unwrap()
}

fn starts_like(prompt: &str, template: &str) -> bool {
    prompt.starts_with(&template[..30])
}

/// Deterministic stand-in for a chat model that understands every prompt in
/// the catalog. Every third question is answered wrongly.
pub fn scripted_llm() -> ScriptedTransport {
    ScriptedTransport::new(scripted_reply)
}

pub fn scripted_reply(req: &ChatRequest) -> Result<ScriptedReply, TransportFailure> {
    let p = &req.prompt;
    let i = novel_number(p);
    let text = if starts_like(p, prompts::EXTRACTION) {
        format!("Novel #{i} is usually credited to Author {i}, who wrote it in {}.", 1900 + i)
    } else if starts_like(p, prompts::ERRR_OPTIMIZER) || starts_like(p, prompts::STUDENT_OPTIMIZER) {
        format!("author of novel {i}; Author {i} bibliography**")
    } else if starts_like(p, prompts::RRR_REWRITER) {
        format!("novel {i} writer**")
    } else if i.is_multiple_of(3) {
        "Unknown**".to_owned()
    } else {
        format!("Author {i}**")
    };
    Ok(ScriptedReply::text(text).with_latency((p.len() % 50) as f64 + 1.5))
}

pub fn passage(id: &str, title: &str, text: &str) -> Passage {
    Passage {
        id: id.into(),
        title: Some(title.into()),
        text: text.into(),
        score: 1.0,
        source: PassageSource::Web,
    }
}

pub fn fixture_passages() -> Vec<Passage> {
    vec![
        passage("w1", "Library catalogue", "The catalogue lists every numbered novel with its writer."),
        passage("w2", "Publishing history", "Most numbered novels appeared between 1900 and 2100."),
        passage("w3", "Reading lists", "Reading lists often group novels by author."),
    ]
}

pub fn write_fixture_retriever(path: &Path) {
    let line = serde_json::json!({ "passages": fixture_passages() });
    std::fs::write(path, format!("{line}\n")).unwrap();
}

pub struct MockRun {
    pub dir: tempfile::TempDir,
    pub config: RunConfig,
}

impl MockRun {
    /// A config over `n` questions with a fixture retriever and a disk cache.
    pub fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("questions.jsonl"), n);
        write_fixture_retriever(&dir.path().join("passages.jsonl"));
        let text = r#"
pipeline = "errr"
dataset = "custom"
parallelism = 4
cache_dir = "cache"
out_dir = "out"

[endpoints.chat]
base_url = "http://mock.invalid/v1"
model_id = "chat-model"
price = { prompt_rate = 5e-7, completion_rate = 1.5e-6 }

[roles]
reader = "chat"
optimizer = "chat"

[datasets.custom]
path = "questions.jsonl"
train_path = "questions.jsonl"

[retriever]
total_k = 5
fixture = { path = "passages.jsonl" }
"#;
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, text).unwrap();
        let config = RunConfig::load(&config_path).unwrap();
        Self { dir, config }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn backends(&self, transport: Arc<ScriptedTransport>) -> Backends {
        Backends {
            transport,
            retriever: Some(Arc::new(FixtureRetriever::from_file(&self.path("passages.jsonl")).unwrap())),
        }
    }
}
