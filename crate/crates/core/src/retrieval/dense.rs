use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::embed::Embedder;
use super::{Passage, PassageSource, Ranked, RetrievalError, Retriever};
use crate::gateway::elapsed_ms;

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct IndexEntry {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

/// Immutable exact-search index. Row `i` of `vectors` belongs to entry `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    vectors: Vec<f32>,
    entries: Vec<IndexEntry>,
}

impl DenseIndex {
    pub(crate) fn from_parts(dim: usize, vectors: Vec<f32>, entries: Vec<IndexEntry>) -> Self {
        debug_assert_eq!(vectors.len(), dim * entries.len());
        Self { dim, vectors, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn id(&self, row: usize) -> &str {
        &self.entries[row].id
    }

    pub(crate) fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub(crate) fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    fn passage(&self, row: usize, distance_sq: f64) -> Passage {
        let entry = &self.entries[row];
        Passage {
            id: entry.id.clone(),
            title: entry.title.clone(),
            text: entry.text.clone(),
            score: -distance_sq.sqrt(),
            source: PassageSource::Dense,
        }
    }
}

/// Squared Euclidean distance, accumulated in f64.
pub fn l2_distance_squared(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    row: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// The `k` rows nearest to `query`, by ascending L2 distance, ties broken by
/// ascending row.
pub fn dense_top_k(index: &DenseIndex, query: &[f32], k: usize) -> Result<Vec<Passage>, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if query.len() != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            record: None,
            expected: index.dim,
            found: query.len(),
        });
    }
    if k == 0 || k > index.len() {
        return Err(RetrievalError::InvalidArgument(format!(
            "k must be in 1..={}, got {k}",
            index.len()
        )));
    }

    // Max-heap holding the k best seen so far; the root is the worst of them.
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (row, vector) in index.vectors.chunks_exact(index.dim).enumerate() {
        let candidate = Candidate {
            distance: l2_distance_squared(query, vector),
            row,
        };
        if heap.len() < k {
            heap.push(candidate);
        } else if candidate < *heap.peek().expect("heap holds k > 0 items") {
            heap.pop();
            heap.push(candidate);
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| index.passage(c.row, c.distance))
        .collect())
}

/// Builds an index in input order. Every vector must share the dimensionality
/// of the first record (or `expected_dim`, when given).
pub fn ingest_corpus<I>(records: I, expected_dim: Option<usize>) -> Result<DenseIndex, RetrievalError>
where
    I: IntoIterator<Item = Result<CorpusRecord, RetrievalError>>,
{
    let mut dim = expected_dim;
    let mut vectors = Vec::new();
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for record in records {
        let record = record?;
        let expected = *dim.get_or_insert(record.embedding.len());
        if record.embedding.len() != expected || expected == 0 {
            return Err(RetrievalError::DimensionMismatch {
                record: Some(record.id),
                expected,
                found: record.embedding.len(),
            });
        }
        if record.text.trim().is_empty() {
            return Err(RetrievalError::InvalidArgument(format!("record {} has empty text", record.id)));
        }
        if !ids.insert(record.id.clone()) {
            return Err(RetrievalError::InvalidArgument(format!("duplicate record id {}", record.id)));
        }
        vectors.extend_from_slice(&record.embedding);
        entries.push(IndexEntry {
            id: record.id,
            title: record.title,
            text: record.text,
        });
    }
    Ok(DenseIndex::from_parts(dim.unwrap_or(0), vectors, entries))
}

/// Streams a line-delimited JSON corpus file. Blank lines are skipped.
pub fn read_corpus(
    path: &Path,
) -> Result<impl Iterator<Item = Result<CorpusRecord, RetrievalError>>, RetrievalError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(RetrievalError::Io(e))),
            Ok(line) if line.trim().is_empty() => None,
            Ok(line) => Some(serde_json::from_str(&line).map_err(|e| RetrievalError::Format {
                line: i + 1,
                message: e.to_string(),
            })),
        }))
}

/// Dense retriever: embeds the query, then scans the index.
pub struct DenseRetriever {
    index: Arc<DenseIndex>,
    embedder: Arc<dyn Embedder>,
}

impl DenseRetriever {
    pub fn new(index: Arc<DenseIndex>, embedder: Arc<dyn Embedder>) -> Self {
        Self { index, embedder }
    }
}

#[async_trait]
impl Retriever for DenseRetriever {
    async fn retrieve(&self, query: &str, k: usize) -> Result<Ranked, RetrievalError> {
        let start = Instant::now();
        if self.index.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let vector = self.embedder.embed(query).await?;
        let index = Arc::clone(&self.index);
        let k = k.min(index.len());
        let passages = tokio::task::spawn_blocking(move || dense_top_k(&index, &vector, k))
            .await
            .map_err(|e| RetrievalError::Transport(e.to_string()))??;
        Ok(Ranked {
            passages,
            latency_ms: elapsed_ms(start),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, v: Vec<f32>) -> Result<CorpusRecord, RetrievalError> {
        Ok(CorpusRecord {
            id: id.into(),
            title: None,
            text: format!("passage {id}"),
            embedding: v,
        })
    }

    fn grid(n: usize, dim: usize) -> DenseIndex {
        let records = (0..n).map(|i| record(&format!("r{i}"), (0..dim).map(|j| ((i * 31 + j * 7) % 13) as f32).collect()));
        ingest_corpus(records, None).unwrap()
    }

    #[test]
    fn distance_identity_and_symmetry() {
        let a = [1.0, -2.0, 3.5];
        let b = [0.5, 4.0, -1.0];
        assert_eq!(l2_distance_squared(&a, &a), 0.0);
        assert_eq!(l2_distance_squared(&a, &b), l2_distance_squared(&b, &a));
        assert_eq!(l2_distance_squared(&[0.0, 0.0], &[3.0, 4.0]), 25.0);
    }

    #[test]
    fn self_match_is_first_with_zero_distance() {
        let index = grid(20, 8);
        let query = index.vector(7).to_vec();
        let top = dense_top_k(&index, &query, 3).unwrap();
        assert_eq!(top[0].id, "r7");
        assert_eq!(top[0].score, 0.0);
        assert_eq!(top[0].source, PassageSource::Dense);
    }

    #[test]
    fn ties_break_by_lower_row() {
        let records = vec![
            record("far", vec![10.0, 10.0]),
            record("east", vec![1.0, 0.0]),
            record("north", vec![0.0, 1.0]),
            record("west", vec![-1.0, 0.0]),
        ];
        let index = ingest_corpus(records, None).unwrap();
        let top = dense_top_k(&index, &[0.0, 0.0], 3).unwrap();
        let ids: Vec<_> = top.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["east", "north", "west"]);
        assert!(top.iter().all(|p| p.score == -1.0));
    }

    #[test]
    fn query_errors() {
        let index = grid(5, 4);
        assert!(matches!(
            dense_top_k(&index, &[0.0; 3], 1),
            Err(RetrievalError::DimensionMismatch { expected: 4, found: 3, .. })
        ));
        assert!(matches!(dense_top_k(&index, &[0.0; 4], 0), Err(RetrievalError::InvalidArgument(_))));
        assert!(matches!(dense_top_k(&index, &[0.0; 4], 6), Err(RetrievalError::InvalidArgument(_))));
        assert_eq!(dense_top_k(&index, &[0.0; 4], 5).unwrap().len(), 5);
    }

    #[test]
    fn empty_ingest_then_query_is_empty_index() {
        let index = ingest_corpus(std::iter::empty(), Some(768)).unwrap();
        assert_eq!(index.len(), 0);
        assert_eq!(index.dim(), 768);
        assert!(matches!(dense_top_k(&index, &[0.0; 768], 1), Err(RetrievalError::EmptyIndex)));
    }

    #[test]
    fn ingest_conserves_count_and_order() {
        let records = (0..100).map(|i| record(&format!("doc-{i}"), vec![i as f32; 768]));
        let index = ingest_corpus(records, None).unwrap();
        assert_eq!(index.len(), 100);
        assert_eq!(index.dim(), 768);
        for i in 0..100 {
            assert_eq!(index.id(i), format!("doc-{i}"));
            assert!(index.vector(i).iter().all(|&x| x == i as f32));
        }
    }

    #[test]
    fn inconsistent_dimension_names_the_record() {
        let records = (0..100).map(|i| {
            let dim = if i == 42 { 512 } else { 768 };
            record(&i.to_string(), vec![0.0; dim])
        });
        let err = ingest_corpus(records, None).unwrap_err();
        assert!(err.to_string().contains("record 42"), "{err}");
        match err {
            RetrievalError::DimensionMismatch { record, expected, found } => {
                assert_eq!(record.as_deref(), Some("42"));
                assert_eq!((expected, found), (768, 512));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let records = vec![record("a", vec![0.0]), record("a", vec![1.0])];
        assert!(matches!(ingest_corpus(records, None), Err(RetrievalError::InvalidArgument(_))));
    }

    #[test]
    fn read_corpus_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"title\":\"A\",\"text\":\"alpha\",\"embedding\":[1,2]}\n\n{\"id\":\"b\",\"text\":\"beta\"}\n",
        )
        .unwrap();
        let results: Vec<_> = read_corpus(&path).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].as_ref().unwrap().title.as_deref(), Some("A"));
        assert!(matches!(results[1], Err(RetrievalError::Format { line: 3, .. })));
    }
}
