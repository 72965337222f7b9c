use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::UsageStats;
use crate::pipelines::{PipelineKind, StageName, Transcript};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTokens {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One method's aggregate over a set of transcripts. Usage totals are
/// recomputed from the per-stage records, not taken from `Transcript::totals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub pipeline: PipelineKind,
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub llm_calls: u64,
    pub totals: UsageStats,
    pub stages: BTreeMap<String, StageTokens>,
}

impl ReportRow {
    pub fn llm_calls_per_question(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.llm_calls as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    /// Concurrent outbound calls the runs used, when known.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    em: Vec<f64>,
    f1: Vec<f64>,
    llm_calls: u64,
    totals: UsageStats,
    stages: BTreeMap<String, StageTokens>,
}

impl Accumulator {
    fn add(&mut self, t: &Transcript) {
        self.n += 1;
        self.em.push(t.em.unwrap_or(0.0));
        self.f1.push(t.f1.unwrap_or(0.0));
        for stage in &t.stages {
            self.totals.add(&stage.usage);
            if stage.name.is_llm_call() {
                self.llm_calls += 1;
            }
            let entry = self.stages.entry(stage.name.as_str().to_owned()).or_default();
            entry.calls += 1;
            entry.prompt_tokens += stage.usage.prompt_tokens;
            entry.completion_tokens += stage.usage.completion_tokens;
        }
    }

    fn finish(mut self, method: String, pipeline: PipelineKind) -> ReportRow {
        let mean = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        ReportRow {
            method,
            pipeline,
            n: self.n,
            em: mean(&mut self.em),
            f1: mean(&mut self.f1),
            llm_calls: self.llm_calls,
            totals: self.totals,
            stages: self.stages,
        }
    }
}

/// Groups transcripts into one row per (source, pipeline) pair, in first-seen
/// order. `sources` pairs a label with that source's transcripts.
pub fn build_report<'a, I>(sources: I, parallelism: Option<usize>) -> ReportTable
where
    I: IntoIterator<Item = (String, &'a [Transcript])>,
{
    let mut groups: Vec<((String, PipelineKind), Accumulator)> = Vec::new();
    let mut labels: Vec<(String, PipelineKind)> = Vec::new();
    for (label, transcripts) in sources {
        for t in transcripts {
            let key = (label.clone(), t.pipeline);
            let pos = match groups.iter().position(|(k, _)| *k == key) {
                Some(p) => p,
                None => {
                    labels.push(key.clone());
                    groups.push((key, Accumulator::default()));
                    groups.len() - 1
                }
            };
            groups[pos].1.add(t);
        }
    }
    // A label is only needed when one pipeline appears in several sources.
    let rows = groups
        .into_iter()
        .map(|((label, kind), acc)| {
            let ambiguous = labels.iter().filter(|(_, k)| *k == kind).count() > 1;
            let method = if ambiguous { format!("{kind} ({label})") } else { kind.to_string() };
            acc.finish(method, kind)
        })
        .collect();
    ReportTable { rows, parallelism }
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, ReportError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| ReportError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ReportError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line).map_err(|e| ReportError::Format {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

/// Reads transcript files and builds the comparison table, labelling each
/// file by its parent directory name (or file stem).
pub fn report_files(paths: &[impl AsRef<Path>], parallelism: Option<usize>) -> Result<ReportTable, ReportError> {
    let mut loaded = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .or_else(|| path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        loaded.push((label, read_transcripts(path)?));
    }
    Ok(build_report(loaded.iter().map(|(l, t)| (l.clone(), t.as_slice())), parallelism))
}

impl ReportTable {
    /// Plain-text table. Cost is USD to 4 decimals; latency is the sum of
    /// per-call latencies.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let header = [
            "Method", "n", "EM", "F1", "LLM calls/q", "Prompt tok", "Compl. tok", "Cost (USD)", "Latency (s)",
        ];
        let rows: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.n.to_string(),
                    format!("{:.4}", r.em),
                    format!("{:.4}", r.f1),
                    format!("{:.2}", r.llm_calls_per_question()),
                    r.totals.prompt_tokens.to_string(),
                    r.totals.completion_tokens.to_string(),
                    format!("${:.4}", r.totals.cost_usd),
                    format!("{:.3}", r.totals.latency_ms / 1000.0),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[&str]| {
            let mut s = String::from("|");
            for (cell, w) in cells.iter().zip(&widths) {
                let _ = write!(s, " {cell:<w$} |");
            }
            s.push('\n');
            s
        };
        out.push_str(&line(&header));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&line(&rule.iter().map(String::as_str).collect::<Vec<_>>()));
        for r in &rows {
            out.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
        }

        out.push_str("\nTokens by stage (prompt / completion):\n");
        for r in &self.rows {
            let _ = write!(out, "  {}:", r.method);
            for name in [StageName::Extract, StageName::Optimize, StageName::Rewrite, StageName::Read] {
                if let Some(s) = r.stages.get(name.as_str()) {
                    let _ = write!(out, " {} {}/{}", name.as_str(), s.prompt_tokens, s.completion_tokens);
                }
            }
            out.push('\n');
        }
        match self.parallelism {
            Some(p) => {
                let _ = writeln!(out, "\nParallelism: {p} concurrent calls; latency is summed over calls, not wall time.");
            }
            None => out.push_str("\nLatency is summed over calls, not wall time.\n"),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::StageRecord;
    use serde_json::Value;

    fn transcript(kind: PipelineKind, em: f64, cost: f64) -> Transcript {
        let stages = kind
            .stages()
            .iter()
            .map(|&name| StageRecord {
                name,
                prompt: String::new(),
                raw: String::new(),
                parsed: Value::Null,
                usage: UsageStats {
                    prompt_tokens: 10,
                    completion_tokens: 2,
                    cost_usd: if name.is_llm_call() { cost } else { 0.0 },
                    latency_ms: 100.0,
                },
                latency_ms: 100.0,
                cached: false,
                error: None,
            })
            .collect::<Vec<_>>();
        let totals = stages.iter().map(|s| &s.usage).sum();
        Transcript {
            id: "q".into(),
            pipeline: kind,
            question: "?".into(),
            stages,
            passages: vec![],
            answer: String::new(),
            em: Some(em),
            f1: Some(em),
            totals,
            notes: vec![],
        }
    }

    #[test]
    fn two_runs_two_rows() {
        let rag = vec![transcript(PipelineKind::Rag, 1.0, 0.001), transcript(PipelineKind::Rag, 0.0, 0.001)];
        let errr = vec![transcript(PipelineKind::Errr, 1.0, 0.002); 2];
        let table = build_report([("a".into(), rag.as_slice()), ("b".into(), errr.as_slice())], Some(4));
        assert_eq!(table.rows.len(), 2);
        let (r, e) = (&table.rows[0], &table.rows[1]);
        assert_eq!((r.method.as_str(), r.n, r.em, r.llm_calls), ("RAG", 2, 0.5, 2));
        assert_eq!((e.method.as_str(), e.n, e.em, e.llm_calls), ("ERRR", 2, 1.0, 6));
        assert!(e.llm_calls_per_question() >= r.llm_calls_per_question());
        assert!((e.totals.cost_usd - 0.012).abs() < 1e-12);
        assert_eq!(e.stages["extract"].prompt_tokens, 20);
        let text = table.render();
        assert!(text.contains("$0.0120"), "{text}");
        assert!(text.contains("Parallelism: 4"));
    }

    #[test]
    fn same_pipeline_in_two_sources_is_labelled() {
        let a = vec![transcript(PipelineKind::Errr, 1.0, 0.0)];
        let table = build_report([("x".into(), a.as_slice()), ("y".into(), a.as_slice())], None);
        let methods: Vec<_> = table.rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, ["ERRR (x)", "ERRR (y)"]);
    }

    #[test]
    fn files_round_trip_and_bad_lines_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcripts.jsonl");
        let lines: Vec<String> = (0..3).map(|_| transcript(PipelineKind::Rrr, 1.0, 0.5).to_json_line()).collect();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let table = report_files(&[&path], None).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].n, 3);
        assert_eq!(table.rows[0].totals.latency_ms, 900.0);

        std::fs::write(&path, format!("{}\n{{not json\n", lines[0])).unwrap();
        match report_files(&[&path], None) {
            Err(ReportError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
