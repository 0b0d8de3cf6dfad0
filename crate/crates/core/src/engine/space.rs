//! Where the sensitive positions of a sample are, what their protected
//! variants look like, and how other positions may be rewritten.

use std::collections::{BTreeSet, HashMap};
use std::sync::RwLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::knowledge::{get_pair, synonyms, EmbeddingStore, KnowledgeGraph};
use crate::types::{FeatureKind, FeatureSchema, Sample, Value};

/// Cap on protected values enumerated per multi-valued tabular feature.
pub const MAX_PROTECTED_VALUES: usize = 10;
/// Synonym candidates considered per token mutation.
const SYNONYM_POOL: usize = 10;

/// Graph and embeddings backing text-mode sensitivity and mutation.
pub struct TextKnowledge {
    pub graph: KnowledgeGraph,
    pub store: EmbeddingStore,
    sensitive: RwLock<HashMap<String, Option<String>>>,
    neighbors: RwLock<HashMap<String, Option<Vec<String>>>>,
}

impl TextKnowledge {
    pub fn new(graph: KnowledgeGraph, store: EmbeddingStore) -> Self {
        TextKnowledge { graph, store, sensitive: RwLock::default(), neighbors: RwLock::default() }
    }
}

/// The input space searched by the engine.
pub struct SearchSpace {
    schema: FeatureSchema,
    text: Option<TextKnowledge>,
}

impl SearchSpace {
    pub fn tabular(schema: FeatureSchema) -> Result<Self> {
        if schema.is_text() {
            return Err(Error::InvalidConfig("tabular search space needs a tabular schema".into()));
        }
        Ok(SearchSpace { schema, text: None })
    }

    pub fn text(schema: FeatureSchema, knowledge: TextKnowledge) -> Result<Self> {
        if !schema.is_text() {
            return Err(Error::InvalidConfig("text search space needs a text schema".into()));
        }
        Ok(SearchSpace { schema, text: Some(knowledge) })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn is_text(&self) -> bool {
        self.text.is_some()
    }

    pub fn knowledge(&self) -> Option<&TextKnowledge> {
        self.text.as_ref()
    }

    /// Protected attribute a token relates to, memoised.
    pub fn word_attr(&self, word: &str) -> Option<String> {
        let kn = self.text.as_ref()?;
        if let Some(hit) = kn.sensitive.read().expect("cache lock").get(word) {
            return hit.clone();
        }
        let attr = kn.graph.is_sensitive(word, self.schema.protected());
        kn.sensitive.write().expect("cache lock").insert(word.to_string(), attr.clone());
        attr
    }

    /// `(position, attribute)` for every position related to a protected attribute.
    pub fn sensitive_positions(&self, x: &Sample) -> Vec<(usize, String)> {
        if self.is_text() {
            x.values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| match v {
                    Value::Token(t) => self.word_attr(t).map(|a| (i, a)),
                    _ => None,
                })
                .collect()
        } else {
            self.schema.protected_positions().into_iter().map(|(i, a)| (i, a.to_string())).collect()
        }
    }

    pub fn protected_mask(&self, x: &Sample) -> BTreeSet<usize> {
        self.sensitive_positions(x).into_iter().map(|(i, _)| i).collect()
    }

    pub fn is_sensitive_position(&self, x: &Sample, position: usize) -> bool {
        if self.is_text() {
            x.token(position).is_some_and(|t| self.word_attr(t).is_some())
        } else {
            self.schema.features()[position]
                .relates_to
                .as_ref()
                .is_some_and(|p| self.schema.protected().contains(p))
        }
    }

    /// Protected-value substitutions for `position`. Tabular features
    /// enumerate their domain (evenly subsampled beyond the cap); text
    /// positions yield the `<ã, ¬ã>` pair.
    pub fn variants(&self, x: &Sample, position: usize, attr: &str) -> Result<Vec<Value>> {
        match &self.text {
            Some(kn) => {
                let word = x.token(position).ok_or_else(|| Error::InvalidSample(format!("no token at {position}")))?;
                let pair = get_pair(word, attr, &kn.graph, self.schema.markers())?;
                Ok(vec![Value::Token(pair.tilde), Value::Token(pair.neg_tilde)])
            }
            None => Ok(protected_values(&self.schema.features()[position].kind)),
        }
    }

    /// Up to [`SYNONYM_POOL`] non-sensitive neighbours of `word`; `None` when OOV.
    pub fn synonym_pool(&self, word: &str) -> Option<Vec<String>> {
        let kn = self.text.as_ref()?;
        if let Some(hit) = kn.neighbors.read().expect("cache lock").get(word) {
            return hit.clone();
        }
        let found = synonyms(word, &kn.store, SYNONYM_POOL, &kn.graph, self.schema.protected()).ok();
        kn.neighbors.write().expect("cache lock").insert(word.to_string(), found.clone());
        found
    }

    /// A different value for a non-sensitive tabular position.
    pub fn mutate_tabular<R: Rng>(&self, position: usize, current: &Value, rng: &mut R) -> Value {
        match (&self.schema.features()[position].kind, current) {
            (FeatureKind::Categorical { domain }, Value::Category(c)) => {
                if domain.len() < 2 {
                    return current.clone();
                }
                let mut pick = rng.gen_range(0..domain.len() - 1);
                if pick >= *c {
                    pick += 1;
                }
                Value::Category(pick)
            }
            (FeatureKind::Numeric { min, max, step }, Value::Numeric(v)) => {
                let u = rng.gen_range(1..=5i64);
                let delta = if rng.gen_bool(0.5) { u * step } else { -u * step };
                Value::Numeric((v + delta).clamp(*min, *max))
            }
            _ => current.clone(),
        }
    }

    /// Uniform draw from the tabular feature space.
    pub fn random_tabular<R: Rng>(&self, rng: &mut R) -> Sample {
        let values = self
            .schema
            .features()
            .iter()
            .map(|f| {
                let n = f.kind.cardinality().unwrap_or(1);
                f.kind.nth_value(rng.gen_range(0..n)).expect("within cardinality")
            })
            .collect();
        Sample::new(values)
    }
}

/// Domain of a protected tabular feature, evenly subsampled to the cap.
pub fn protected_values(kind: &FeatureKind) -> Vec<Value> {
    let all = kind.values();
    if all.len() <= MAX_PROTECTED_VALUES {
        return all;
    }
    let n = all.len();
    (0..MAX_PROTECTED_VALUES)
        .map(|i| all[i * (n - 1) / (MAX_PROTECTED_VALUES - 1)].clone())
        .collect()
}
