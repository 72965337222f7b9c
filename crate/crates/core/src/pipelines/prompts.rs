//! Prompt catalog and few-shot demonstrations.
//!
//! The five pipeline prompts are kept verbatim as text resources under
//! `prompts/`. Placeholders are written `{name}`; the catalog uses
//! `{demonstration}`, `{x}` (the question), `{doc}` (retrieved passages) and
//! `{Parametric Knowledge}` (the extracted background document).

use std::path::Path;

use serde::Deserialize;

pub const DIRECT: &str = include_str!("../../prompts/direct.txt");
pub const READER: &str = include_str!("../../prompts/reader.txt");
pub const RRR_REWRITER: &str = include_str!("../../prompts/rrr_rewriter.txt");
pub const EXTRACTION: &str = include_str!("../../prompts/extraction.txt");
pub const ERRR_OPTIMIZER: &str = include_str!("../../prompts/errr_optimizer.txt");
/// Input layout for a distilled student optimizer: the eliciting prefix
/// followed by the context and question, with no demonstrations.
pub const STUDENT_OPTIMIZER: &str = include_str!("../../prompts/student_optimizer.txt");

/// Instruction prefix every student-optimizer input starts with.
pub const ELICITING_PREFIX: &str =
    "Rewrite better search queries to acquire or validate the knowledge needed for the question:";

pub const DEMONSTRATION: &str = "demonstration";
pub const QUESTION: &str = "x";
pub const DOCUMENTS: &str = "doc";
pub const CONTEXT: &str = "Parametric Knowledge";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template '{template}' has no value for placeholder {{{placeholder}}}")]
    Unresolved { template: String, placeholder: String },
    #[error("template '{template}' has an unterminated placeholder")]
    Unterminated { template: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub demonstrations: Vec<String>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
            demonstrations: Vec::new(),
        }
    }

    pub fn with_demonstrations(mut self, demonstrations: Vec<String>) -> Self {
        self.demonstrations = demonstrations;
        self
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut names = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    names.push(&after[..close]);
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        names
    }

    /// Substitutes every placeholder. `{demonstration}` is filled from the
    /// template's own exemplars, one per line; everything else must be in `vars`.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let demonstrations = self.demonstrations.join("\n");
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or_else(|| TemplateError::Unterminated {
                template: self.name.clone(),
            })?;
            let name = &after[..close];
            let value = if name == DEMONSTRATION {
                demonstrations.as_str()
            } else {
                vars.iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::Unresolved {
                        template: self.name.clone(),
                        placeholder: name.to_owned(),
                    })?
            };
            out.push_str(value);
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

const BUILTIN_OPTIMIZER: &str = include_str!("../../demos/optimizer.toml");

#[derive(Debug, Deserialize)]
struct DemoFile {
    #[serde(default)]
    reader: Vec<String>,
    #[serde(default)]
    rewriter: Vec<String>,
    #[serde(default)]
    optimizer: Option<Vec<String>>,
}

/// Few-shot exemplars for one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstrations {
    /// Question/answer exemplars for the Direct and Reader prompts.
    pub reader: Vec<String>,
    /// Exemplars for the RRR rewriter.
    pub rewriter: Vec<String>,
    /// The optimizer exemplars; the same for every dataset.
    pub optimizer: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DemonstrationError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl Demonstrations {
    /// Built-in exemplars for a dataset name (`ambignq`, `popqa`, `hotpotqa`);
    /// anything else gets the generic set.
    pub fn builtin(dataset: &str) -> Self {
        let text = match dataset.to_ascii_lowercase().as_str() {
            "ambignq" | "ambigqa" => include_str!("../../demos/ambignq.toml"),
            "popqa" => include_str!("../../demos/popqa.toml"),
            "hotpotqa" => include_str!("../../demos/hotpotqa.toml"),
            _ => include_str!("../../demos/custom.toml"),
        };
        Self::parse(text, "<builtin>").expect("built-in demonstrations parse")
    }

    pub fn from_file(path: &Path) -> Result<Self, DemonstrationError> {
        let text = std::fs::read_to_string(path).map_err(|source| DemonstrationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn parse(text: &str, origin: &str) -> Result<Self, DemonstrationError> {
        let file: DemoFile = toml::from_str(text).map_err(|e| DemonstrationError::Parse {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        let optimizer = match file.optimizer {
            Some(list) => list,
            None => {
                let shared: DemoFile = toml::from_str(BUILTIN_OPTIMIZER).expect("built-in optimizer exemplars parse");
                shared.optimizer.unwrap_or_default()
            }
        };
        Ok(Self {
            reader: file.reader,
            rewriter: file.rewriter,
            optimizer,
        })
    }
}

/// The templates one pipeline uses, with demonstrations attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub direct: PromptTemplate,
    pub reader: PromptTemplate,
    pub rewriter: PromptTemplate,
    pub extraction: PromptTemplate,
    pub optimizer: PromptTemplate,
    pub student_optimizer: PromptTemplate,
}

impl PromptSet {
    pub fn new(demos: &Demonstrations) -> Self {
        Self {
            direct: PromptTemplate::new("direct", DIRECT).with_demonstrations(demos.reader.clone()),
            reader: PromptTemplate::new("reader", READER).with_demonstrations(demos.reader.clone()),
            rewriter: PromptTemplate::new("rrr_rewriter", RRR_REWRITER).with_demonstrations(demos.rewriter.clone()),
            extraction: PromptTemplate::new("extraction", EXTRACTION),
            optimizer: PromptTemplate::new("errr_optimizer", ERRR_OPTIMIZER)
                .with_demonstrations(demos.optimizer.clone()),
            student_optimizer: PromptTemplate::new("student_optimizer", STUDENT_OPTIMIZER),
        }
    }
}
