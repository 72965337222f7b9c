use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    AmbigNQ,
    PopQA,
    HotpotQA,
    #[serde(rename = "custom")]
    Custom,
}

impl DatasetName {
    /// Evaluation slice applied when none is configured: the first 1000
    /// AmbigNQ questions, the first 997 PopQA questions, all of HotpotQA.
    pub fn preset_slice(self) -> Option<Slice> {
        match self {
            Self::AmbigNQ => Some(Slice { offset: 0, len: 1000 }),
            Self::PopQA => Some(Slice { offset: 0, len: 997 }),
            Self::HotpotQA | Self::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AmbigNQ => "AmbigNQ",
            Self::PopQA => "PopQA",
            Self::HotpotQA => "HotpotQA",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = std::convert::Infallible;

    /// Unrecognized names are custom datasets.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ambignq" | "ambigqa" => Self::AmbigNQ,
            "popqa" => Self::PopQA,
            "hotpotqa" => Self::HotpotQA,
            _ => Self::Custom,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub path: PathBuf,
    pub slice: Option<Slice>,
}

impl DatasetSpec {
    /// Spec with the dataset's preset slice.
    pub fn preset(name: DatasetName, path: impl Into<PathBuf>) -> Self {
        Self {
            name,
            path: path.into(),
            slice: name.preset_slice(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub dataset: DatasetName,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("slice {offset}+{len} is out of range for {available} examples")]
    SliceOutOfRange { offset: usize, len: usize, available: usize },
    #[error("slice length must be at least 1")]
    EmptySlice,
}

#[derive(Deserialize)]
struct Record {
    id: Value,
    question: String,
    answers: Vec<String>,
}

/// Reads the unified `{"id","question","answers":[...]}` line format, in file
/// order, applying the spec's slice. Reading stops once the slice is filled.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<QAExample>, DatasetError> {
    let path = spec.path.display().to_string();
    if spec.slice.is_some_and(|s| s.len == 0) {
        return Err(DatasetError::EmptySlice);
    }
    let file = File::open(&spec.path).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    let end = spec.slice.map(|s| s.offset + s.len);
    let format_error = |line: usize, message: String| DatasetError::Format {
        path: path.clone(),
        line,
        message,
    };

    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        if end.is_some_and(|end| examples.len() >= end) {
            break;
        }
        let line_no = i + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| format_error(line_no, e.to_string()))?;
        let id = match record.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => return Err(format_error(line_no, format!("id must be a string or number, got {other}"))),
        };
        if record.question.trim().is_empty() {
            return Err(format_error(line_no, "question is empty".into()));
        }
        if record.answers.is_empty() || record.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(format_error(line_no, "answers must be a non-empty list of non-empty strings".into()));
        }
        examples.push(QAExample {
            id,
            question: record.question,
            gold_answers: record.answers,
            dataset: spec.name,
        });
    }

    match spec.slice {
        None => Ok(examples),
        Some(Slice { offset, len }) => {
            if offset + len > examples.len() {
                return Err(DatasetError::SliceOutOfRange {
                    offset,
                    len,
                    available: examples.len(),
                });
            }
            examples.truncate(offset + len);
            Ok(examples.split_off(offset))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(n: usize) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..n {
            writeln!(f, r#"{{"id":"q{i}","question":"Question {i}?","answers":["A{i}","alias {i}"]}}"#).unwrap();
        }
        f
    }

    #[test]
    fn ambignq_preset_takes_first_1000() {
        let f = fixture(1500);
        let examples = load_dataset(&DatasetSpec::preset(DatasetName::AmbigNQ, f.path())).unwrap();
        assert_eq!(examples.len(), 1000);
        assert_eq!(examples[0].id, "q0");
        assert_eq!(examples[999].id, "q999");
        assert_eq!(examples[5].gold_answers, ["A5", "alias 5"]);
    }

    #[test]
    fn popqa_preset_takes_997() {
        let f = fixture(997);
        assert_eq!(load_dataset(&DatasetSpec::preset(DatasetName::PopQA, f.path())).unwrap().len(), 997);
        let f = fixture(1200);
        assert_eq!(load_dataset(&DatasetSpec::preset(DatasetName::PopQA, f.path())).unwrap().len(), 997);
    }

    #[test]
    fn hotpotqa_preset_is_full_set() {
        let f = fixture(1234);
        assert_eq!(load_dataset(&DatasetSpec::preset(DatasetName::HotpotQA, f.path())).unwrap().len(), 1234);
    }

    #[test]
    fn explicit_slice() {
        let f = fixture(12);
        let spec = |offset, len| DatasetSpec {
            name: DatasetName::Custom,
            path: f.path().into(),
            slice: Some(Slice { offset, len }),
        };
        let ids: Vec<_> = load_dataset(&spec(3, 4)).unwrap().into_iter().map(|e| e.id).collect();
        assert_eq!(ids, ["q3", "q4", "q5", "q6"]);
        assert!(matches!(
            load_dataset(&spec(10, 5)),
            Err(DatasetError::SliceOutOfRange { offset: 10, len: 5, available: 12 })
        ));
        assert!(matches!(load_dataset(&spec(0, 0)), Err(DatasetError::EmptySlice)));
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":1,"question":"ok?","answers":["yes"]}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"id":2,"question":"no answers?","answers":[]}}"#).unwrap();
        let spec = DatasetSpec {
            name: DatasetName::Custom,
            path: f.path().into(),
            slice: None,
        };
        match load_dataset(&spec) {
            Err(DatasetError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn names_parse_leniently() {
        assert_eq!("hotpotqa".parse::<DatasetName>().unwrap(), DatasetName::HotpotQA);
        assert_eq!("AmbigQA".parse::<DatasetName>().unwrap(), DatasetName::AmbigNQ);
        assert_eq!("my-set".parse::<DatasetName>().unwrap(), DatasetName::Custom);
    }
}
