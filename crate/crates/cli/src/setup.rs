//! Loading datasets, models and search spaces from paths.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use fairprobe::data::{load_schema, load_tabular, load_text, Dataset};
use fairprobe::engine::{EngineConfig, SearchSpace, TextKnowledge};
use fairprobe::knowledge::{expand_with_embeddings, load_graph, EmbeddingStore};
use fairprobe::model::{ExternalPredictor, Predictor, TrainedModel};
use fairprobe::synth::PlantedBias;
use fairprobe::types::{FeatureSchema, Value};

/// Everything needed to reproduce a `test` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub model_file: Option<PathBuf>,
    pub external: Option<String>,
    pub protected: Vec<String>,
    pub graph: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub expand_threshold: f64,
    pub epsilon_source: String,
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).map_err(fairprobe::Error::from)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).map_err(fairprobe::Error::from)? + "\n")?;
        Ok(())
    }
}

pub fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Schema from `path`, with the protected set replaced when `protected` is nonempty.
pub fn schema_with(path: &Path, protected: &[String]) -> Result<FeatureSchema> {
    let schema = load_schema(path).with_context(|| format!("loading schema {}", path.display()))?;
    if protected.is_empty() {
        Ok(schema)
    } else {
        Ok(schema.with_protected(protected)?)
    }
}

pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    let ds = if schema.is_text() {
        load_text(path).with_context(|| format!("loading corpus {}", path.display()))?.with_schema(schema.clone())?
    } else {
        load_tabular(path, schema).with_context(|| format!("loading data {}", path.display()))?
    };
    info!("loaded {} samples from {}", ds.len(), path.display());
    Ok(ds)
}

/// A model file, an external adapter, or the built-in planted-bias
/// classifier (`planted` as the model file name).
pub fn load_predictor(
    model_file: Option<&Path>,
    external: Option<&str>,
    schema: &FeatureSchema,
) -> Result<Box<dyn Predictor>> {
    match (model_file, external) {
        (Some(_), Some(_)) => bail!(fairprobe::Error::InvalidConfig("give either --model-file or --external".into())),
        (Some(p), None) if p.as_os_str() == "planted" => Ok(Box::new(PlantedBias::standard())),
        (Some(p), None) => {
            let m = TrainedModel::load(p).with_context(|| format!("loading model {}", p.display()))?;
            if m.labels() != schema.label_names() {
                bail!(fairprobe::Error::InvalidConfig(format!(
                    "model labels {:?} differ from schema labels {:?}",
                    m.labels(),
                    schema.label_names()
                )));
            }
            Ok(Box::new(m))
        }
        (None, Some(addr)) => Ok(Box::new(ExternalPredictor::connect(addr, schema.clone())?)),
        (None, None) => bail!(fairprobe::Error::InvalidConfig("one of --model-file or --external is required".into())),
    }
}

/// Tabular space, or a text space whose graph is expanded with embedding
/// neighbours of the corpus vocabulary.
pub fn build_space(
    schema: &FeatureSchema,
    dataset: &Dataset,
    graph: Option<&Path>,
    embeddings: Option<&Path>,
    threshold: f64,
) -> Result<SearchSpace> {
    if !schema.is_text() {
        return Ok(SearchSpace::tabular(schema.clone())?);
    }
    let (Some(g), Some(e)) = (graph, embeddings) else {
        bail!(fairprobe::Error::InvalidConfig("text mode needs --graph and --embeddings".into()));
    };
    let graph = load_graph(g).with_context(|| format!("loading graph {}", g.display()))?;
    let store = EmbeddingStore::load(e).with_context(|| format!("loading embeddings {}", e.display()))?;
    let vocab: BTreeSet<&str> = dataset
        .samples
        .iter()
        .flat_map(|s| s.values.iter())
        .filter_map(|v| match v {
            Value::Token(t) => Some(t.as_str()),
            _ => None,
        })
        .collect();
    let candidates: Vec<&str> = vocab.into_iter().collect();
    let (expanded, stats) = expand_with_embeddings(&graph, &store, &candidates, threshold);
    info!(
        "knowledge graph: {} nodes, {} similarity edges added, {} words without vectors",
        expanded.node_count(),
        stats.edges_added,
        stats.oov_skipped
    );
    Ok(SearchSpace::text(schema.clone(), TextKnowledge::new(expanded, store))?)
}
