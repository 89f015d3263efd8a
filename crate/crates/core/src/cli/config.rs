use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::hpo::{AshaConfig, SearchSpace};
use crate::models::{Arch, Mode, ModelSpec};
use crate::training::TrainConfig;

/// A dataset descriptor given inline or as a path to a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Path(PathBuf),
    Inline(DatasetDescriptor),
}

impl DatasetRef {
    /// The descriptor and the directory its relative paths resolve against.
    pub fn resolve(&self, base: &Path) -> Result<(DatasetDescriptor, PathBuf)> {
        match self {
            DatasetRef::Inline(d) => Ok((d.clone(), base.to_path_buf())),
            DatasetRef::Path(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let d: DatasetDescriptor = serde_json::from_str(&text)
                    .map_err(|e| Error::Schema(format!("dataset descriptor {}: {e}", path.display())))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((d, dir))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub mode: Mode,
    pub hidden: usize,
    /// GRU layers or TCN blocks; 1 for GRU and 10 for TCN when unset.
    pub depth: Option<usize>,
    pub kernel: usize,
    pub residual: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gru,
            mode: Mode::Nar,
            hidden: 32,
            depth: None,
            kernel: 2,
            residual: true,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, output_dim: usize) -> ModelSpec {
        let depth = self.depth.unwrap_or(match self.arch {
            Arch::Gru => 1,
            Arch::Tcn => 10,
        });
        let mut spec = ModelSpec::new(self.arch, self.mode, input_dim, output_dim, self.hidden, depth);
        spec.kernel = self.kernel;
        spec.residual = self.residual;
        spec.dropout = self.dropout;
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub batch_size: usize,
    pub repeats: usize,
    pub hidden: usize,
    pub gru_depth: usize,
    pub tcn_depth: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1023, 2048, 4096],
            batch_size: 16,
            repeats: 5,
            hidden: 32,
            gru_depth: 1,
            tcn_depth: 10,
        }
    }
}

impl BenchConfig {
    /// GRU-NAR, GRU-AR, TCN-NAR, TCN-AR with one input and one output.
    pub fn specs(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for (arch, depth) in [(Arch::Gru, self.gru_depth), (Arch::Tcn, self.tcn_depth)] {
            for mode in [Mode::Nar, Mode::Ar] {
                out.push(ModelSpec::new(arch, mode, 1, 1, self.hidden, depth));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub space: SearchSpace,
    pub asha: AshaConfig,
    pub budget: usize,
    pub workers: usize,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            asha: AshaConfig::default(),
            budget: 27,
            workers: 1,
        }
    }
}

/// Everything a command needs. Only `dataset` lacks a default, and only the
/// commands that read data require it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: Option<DatasetRef>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub hpo: HpoConfig,
    pub out_dir: PathBuf,
    /// Seeds model initialization, window sampling and search; overrides
    /// `train.seed`.
    pub seed: u64,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const FIELDS: [&str; 7] = ["dataset", "model", "train", "bench", "hpo", "out_dir", "seed"];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
            hpo: HpoConfig::default(),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            base_dir: PathBuf::new(),
        }
    }
}

fn section<T: DeserializeOwned + Default>(obj: &serde_json::Map<String, Value>, key: &str, problems: &mut Vec<String>) -> T {
    match obj.get(key) {
        None => T::default(),
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            problems.push(format!("{key}: {e}"));
            T::default()
        }),
    }
}

impl RunConfig {
    /// Parses and validates a config. Every problem found is reported in a
    /// single schema error.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("config is not valid JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(Error::Schema("config must be a JSON object".into()));
        };
        let mut problems: Vec<String> = obj
            .keys()
            .filter(|k| !FIELDS.contains(&k.as_str()))
            .map(|k| format!("unknown field '{k}'"))
            .collect();
        let dataset = match obj.get("dataset") {
            None | Some(Value::Null) => None,
            Some(v) => match serde_json::from_value::<DatasetRef>(v.clone()) {
                Ok(DatasetRef::Inline(d)) => {
                    if let Err(e) = d.validate() {
                        problems.push(e.to_string());
                    }
                    Some(DatasetRef::Inline(d))
                }
                Ok(r) => Some(r),
                Err(_) => {
                    problems.push("dataset: expected a descriptor path or an inline descriptor object".into());
                    None
                }
            },
        };
        let mut cfg = RunConfig {
            dataset,
            model: section(&obj, "model", &mut problems),
            train: section(&obj, "train", &mut problems),
            bench: section(&obj, "bench", &mut problems),
            hpo: section(&obj, "hpo", &mut problems),
            out_dir: match obj.get("out_dir") {
                None => PathBuf::from("runs"),
                Some(Value::String(s)) => PathBuf::from(s),
                Some(_) => {
                    problems.push("out_dir: expected a string".into());
                    PathBuf::new()
                }
            },
            seed: match obj.get("seed") {
                None => 0,
                Some(v) => v.as_u64().unwrap_or_else(|| {
                    problems.push("seed: expected a non-negative integer".into());
                    0
                }),
            },
            base_dir: base_dir.to_path_buf(),
        };
        cfg.train.seed = cfg.seed;
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Schema(format!("invalid config: {}", problems.join("; "))))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Semantic checks on already parsed sections.
    pub fn problems(&self) -> Vec<String> {
        let mut p: Vec<String> = self.train.problems().into_iter().map(|s| format!("train: {s}")).collect();
        if let Err(e) = self.model.spec(1, 1).validate() {
            p.push(format!("model: {e}"));
        }
        if self.model.hidden == 0 {
            p.push("model.hidden must be >= 1".into());
        }
        let b = &self.bench;
        if b.lengths.is_empty() || b.lengths.contains(&0) {
            p.push("bench.lengths must be non-empty and positive".into());
        }
        if b.batch_size == 0 || b.repeats == 0 || b.hidden == 0 || b.gru_depth == 0 || b.tcn_depth == 0 {
            p.push("bench: batch_size, repeats, hidden and depths must be >= 1".into());
        }
        if let Err(e) = self.hpo.space.validate() {
            p.push(format!("hpo.space: {e}"));
        }
        if let Err(e) = self.hpo.asha.validate() {
            p.push(format!("hpo.asha: {e}"));
        }
        if self.hpo.budget == 0 || self.hpo.workers == 0 {
            p.push("hpo: budget and workers must be >= 1".into());
        }
        p
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn require_dataset(&self) -> Result<(DatasetDescriptor, PathBuf)> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::Schema("invalid config: missing required field 'dataset'".into()))?
            .resolve(&self.base_dir)
    }

    pub fn out_path(&self) -> PathBuf {
        self.base_dir.join(&self.out_dir)
    }
}
