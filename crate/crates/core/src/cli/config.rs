use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::evaluation::{DatasetName, DatasetSpec, Slice};
use crate::gateway::{LlmEndpoint, PriceTable, DEFAULT_PARALLELISM};
use crate::pipelines::{Demonstrations, OptimizerStyle, PipelineKind, SamplingConfig};
use crate::retrieval::{EmbeddingProviderConfig, MergeMode, WebSearchConfig, DEFAULT_TOTAL_K};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("environment variable {var} (needed by {used_by}) is not set")]
    MissingEnv { var: String, used_by: String },
    #[error("{role} refers to unknown endpoint '{name}'")]
    UnknownEndpoint { role: String, name: String },
    #[error("unknown dataset '{0}'")]
    UnknownDataset(String),
    #[error("{0}")]
    Invalid(String),
    #[error("output directory {path} is not writable: {source}")]
    OutDir {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub price: PriceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub reader: String,
    /// Rewriter for RRR and query optimizer for ERRR.
    #[serde(default)]
    pub optimizer: Option<String>,
    #[serde(default)]
    pub optimizer_style: OptimizerStyle,
    /// Endpoint used for distillation export; defaults to `optimizer`.
    #[serde(default)]
    pub teacher: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Preset name (`AmbigNQ`, `PopQA`, `HotpotQA`); defaults to the table key.
    #[serde(default)]
    pub name: Option<String>,
    pub path: PathBuf,
    /// Training split, read by distillation export.
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    /// Overrides the preset slice.
    #[serde(default)]
    pub slice: Option<Slice>,
    /// Demonstrations file; the built-in set for `name` otherwise.
    #[serde(default)]
    pub demonstrations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseConfig {
    pub index_dir: PathBuf,
    pub embedding: EmbeddingProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub path: PathBuf,
}

/// Exactly one backend table (`web`, `dense` or `fixture`) must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverConfig {
    #[serde(default = "default_total_k")]
    pub total_k: usize,
    #[serde(default)]
    pub mode: MergeMode,
    #[serde(default)]
    pub web: Option<WebSearchConfig>,
    #[serde(default)]
    pub dense: Option<DenseConfig>,
    #[serde(default)]
    pub fixture: Option<FixtureConfig>,
}

fn default_total_k() -> usize {
    DEFAULT_TOTAL_K
}

fn default_parallelism() -> usize {
    DEFAULT_PARALLELISM
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_pipeline() -> PipelineKind {
    PipelineKind::Errr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_pipeline")]
    pub pipeline: PipelineKind,
    /// Key into `datasets` used when none is given on the command line.
    #[serde(default)]
    pub dataset: Option<String>,
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub roles: Roles,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    #[serde(default)]
    pub retriever: Option<RetrieverConfig>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Bill cache hits at their recorded cost instead of zero.
    #[serde(default)]
    pub charge_cached: bool,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub pipeline: Option<PipelineKind>,
    pub dataset: Option<String>,
    pub limit: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub total_k: Option<usize>,
}

/// A dataset entry with its preset resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDataset {
    pub key: String,
    pub name: DatasetName,
    pub eval: DatasetSpec,
    pub train: Option<DatasetSpec>,
    pub demonstrations: Demonstrations,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_owned(),
            message: e.to_string(),
        })
    }

    /// Parses the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for dataset in self.datasets.values_mut() {
            fix(&mut dataset.path);
            dataset.train_path.iter_mut().for_each(fix);
            dataset.demonstrations.iter_mut().for_each(fix);
        }
        if let Some(retriever) = &mut self.retriever {
            if let Some(d) = &mut retriever.dense {
                fix(&mut d.index_dir);
            }
            if let Some(f) = &mut retriever.fixture {
                fix(&mut f.path);
            }
        }
        self.cache_dir.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(kind) = overrides.pipeline {
            self.pipeline = kind;
        }
        if let Some(dataset) = &overrides.dataset {
            self.dataset = Some(dataset.clone());
        }
        if let Some(out) = &overrides.out_dir {
            self.out_dir = out.clone();
        }
        if let Some(k) = overrides.total_k {
            if let Some(retriever) = &mut self.retriever {
                retriever.total_k = k;
            }
        }
    }

    pub fn endpoint(&self, role: &str, name: &str) -> Result<Arc<LlmEndpoint>, ConfigError> {
        let cfg = self.endpoints.get(name).ok_or_else(|| ConfigError::UnknownEndpoint {
            role: role.to_owned(),
            name: name.to_owned(),
        })?;
        let endpoint = LlmEndpoint {
            name: name.to_owned(),
            base_url: cfg.base_url.clone(),
            model_id: cfg.model_id.clone(),
            api_key_env: cfg.api_key_env.clone(),
            price: cfg.price,
        };
        endpoint
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("endpoint '{name}': {e}")))?;
        Ok(Arc::new(endpoint))
    }

    pub fn reader(&self) -> Result<Arc<LlmEndpoint>, ConfigError> {
        self.endpoint("roles.reader", &self.roles.reader)
    }

    pub fn optimizer(&self) -> Result<Option<Arc<LlmEndpoint>>, ConfigError> {
        self.roles
            .optimizer
            .as_deref()
            .map(|name| self.endpoint("roles.optimizer", name))
            .transpose()
    }

    pub fn teacher(&self) -> Result<Arc<LlmEndpoint>, ConfigError> {
        match (&self.roles.teacher, &self.roles.optimizer) {
            (Some(name), _) => self.endpoint("roles.teacher", name),
            (None, Some(name)) => self.endpoint("roles.optimizer", name),
            (None, None) => Err(ConfigError::Invalid(
                "distillation export needs roles.teacher or roles.optimizer".into(),
            )),
        }
    }

    pub fn dataset(&self, key: Option<&str>) -> Result<ResolvedDataset, ConfigError> {
        let key = key
            .or(self.dataset.as_deref())
            .ok_or_else(|| ConfigError::Invalid("no dataset selected (set `dataset` or pass --dataset)".into()))?;
        let cfg = self
            .datasets
            .get(key)
            .or_else(|| self.datasets.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v))
            .ok_or_else(|| ConfigError::UnknownDataset(key.to_owned()))?;
        let label = cfg.name.as_deref().unwrap_or(key);
        let name: DatasetName = label.parse().unwrap_or(DatasetName::Custom);
        let slice = cfg.slice.or(name.preset_slice());
        let demonstrations = match &cfg.demonstrations {
            Some(path) => Demonstrations::from_file(path).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => Demonstrations::builtin(label),
        };
        Ok(ResolvedDataset {
            key: key.to_owned(),
            name,
            eval: DatasetSpec {
                name,
                path: cfg.path.clone(),
                slice,
            },
            train: cfg.train_path.as_ref().map(|path| DatasetSpec {
                name,
                path: path.clone(),
                slice: None,
            }),
            demonstrations,
        })
    }

    fn retriever_backend_count(&self) -> usize {
        self.retriever.as_ref().map_or(0, |r| {
            [r.web.is_some(), r.dense.is_some(), r.fixture.is_some()]
                .into_iter()
                .filter(|&b| b)
                .count()
        })
    }

    /// Checks everything an evaluation run of `kind` needs, including that
    /// every API key variable it will read is set.
    pub fn validate_for_run(&self, kind: PipelineKind) -> Result<(), ConfigError> {
        self.validate_common()?;
        let mut env_users: Vec<(String, String)> = Vec::new();
        let reader = self.reader()?;
        push_endpoint_env(&mut env_users, &reader);
        if kind.needs_optimizer() {
            let optimizer = self.optimizer()?.ok_or_else(|| {
                ConfigError::Invalid(format!("{kind} needs roles.optimizer"))
            })?;
            push_endpoint_env(&mut env_users, &optimizer);
        }
        if kind.needs_retriever() {
            let retriever = self
                .retriever
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid(format!("{kind} needs a [retriever] section")))?;
            if self.retriever_backend_count() != 1 {
                return Err(ConfigError::Invalid(
                    "[retriever] needs exactly one of web, dense or fixture".into(),
                ));
            }
            if retriever.total_k == 0 {
                return Err(ConfigError::Invalid("retriever.total_k must be at least 1".into()));
            }
            if let Some(web) = &retriever.web {
                env_users.push((web.api_key_env.clone(), "retriever.web".into()));
            }
            if let Some(dense) = &retriever.dense {
                if let Some(var) = &dense.embedding.api_key_env {
                    env_users.push((var.clone(), "retriever.dense.embedding".into()));
                }
            }
        }
        check_env(&env_users)
    }

    pub fn validate_for_export(&self) -> Result<(), ConfigError> {
        self.validate_common()?;
        let mut env_users = Vec::new();
        let teacher = self.teacher()?;
        push_endpoint_env(&mut env_users, &teacher);
        check_env(&env_users)
    }

    fn validate_common(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

fn push_endpoint_env(users: &mut Vec<(String, String)>, endpoint: &LlmEndpoint) {
    if let Some(var) = &endpoint.api_key_env {
        users.push((var.clone(), format!("endpoint '{}'", endpoint.name)));
    }
}

fn check_env(users: &[(String, String)]) -> Result<(), ConfigError> {
    for (var, used_by) in users {
        match std::env::var(var) {
            Ok(v) if !v.is_empty() => {}
            _ => {
                return Err(ConfigError::MissingEnv {
                    var: var.clone(),
                    used_by: used_by.clone(),
                })
            }
        }
    }
    Ok(())
}

/// Creates `dir` if needed and proves it is writable.
pub fn ensure_writable(dir: &Path) -> Result<(), ConfigError> {
    let err = |source| ConfigError::OutDir {
        path: dir.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    tempfile::NamedTempFile::new_in(dir).map(drop).map_err(err)
}
