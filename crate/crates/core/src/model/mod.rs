//! The black-box prediction interface and the built-in classifiers.
//!
//! The search only ever calls [`Predictor::predict_proba`]; built-in models
//! and the external adapter are interchangeable behind it.

mod external;
mod network;

use std::sync::atomic::{AtomicU64, Ordering};
use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode_into, encoded_dim, Dataset};
use crate::error::{Error, Result};
use crate::types::{FeatureSchema, Sample, Value};

pub use external::{serve, ExternalPredictor};
pub use network::{Dense, Network};

/// A classifier queried only through its output probabilities.
///
/// Implementations must be pure (same input, same output) and callable
/// from several threads at once.
pub trait Predictor: Send + Sync {
    fn labels(&self) -> &[String];

    /// Probability vector over [`labels`](Self::labels).
    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>>;

    /// Number of `predict_proba` calls served so far.
    fn query_count(&self) -> u64;

    fn predict_label(&self, sample: &Sample) -> Result<usize> {
        Ok(argmax(&self.predict_proba(sample)?))
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn labels(&self) -> &[String] {
        (**self).labels()
    }
    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        (**self).predict_proba(sample)
    }
    fn query_count(&self) -> u64 {
        (**self).query_count()
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn labels(&self) -> &[String] {
        (**self).labels()
    }
    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        (**self).predict_proba(sample)
    }
    fn query_count(&self) -> u64 {
        (**self).query_count()
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Monotone query counter shared across threads.
#[derive(Debug, Default)]
pub struct QueryCounter(AtomicU64);

impl QueryCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl Clone for QueryCounter {
    fn clone(&self) -> Self {
        QueryCounter::default()
    }
}

/// Wraps a closure as a predictor. Used for synthetic benchmarks and stubs.
pub struct FnPredictor<F> {
    labels: Vec<String>,
    f: F,
    queries: QueryCounter,
}

impl<F> FnPredictor<F>
where
    F: Fn(&Sample) -> Vec<f64> + Send + Sync,
{
    pub fn new(labels: Vec<String>, f: F) -> Self {
        FnPredictor { labels, f, queries: QueryCounter::default() }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&Sample) -> Vec<f64> + Send + Sync,
{
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.queries.bump();
        Ok((self.f)(sample))
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp { layers: usize, neurons: usize },
    TextBow { vocab_size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
}

fn default_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn logistic(seed: u64) -> Self {
        TrainConfig { model_kind: ModelKind::Logistic, epochs: 60, learning_rate: 0.5, rng_seed: seed, batch_size: 32, l2: 1e-4 }
    }

    /// Five hidden layers of 128 units unless overridden.
    pub fn mlp(seed: u64) -> Self {
        TrainConfig {
            model_kind: ModelKind::Mlp { layers: 5, neurons: 128 },
            epochs: 20,
            learning_rate: 0.05,
            rng_seed: seed,
            batch_size: 32,
            l2: 0.0,
        }
    }

    pub fn text_bow(seed: u64) -> Self {
        TrainConfig {
            model_kind: ModelKind::TextBow { vocab_size: 5000 },
            epochs: 40,
            learning_rate: 0.5,
            rng_seed: seed,
            batch_size: 16,
            l2: 1e-4,
        }
    }

    fn check(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        match self.model_kind {
            ModelKind::Mlp { layers, neurons } if layers == 0 || neurons == 0 => {
                Err(Error::InvalidConfig("mlp needs at least one nonempty hidden layer".into()))
            }
            ModelKind::TextBow { vocab_size: 0 } => Err(Error::InvalidConfig("vocab_size must be > 0".into())),
            _ => Ok(()),
        }
    }
}

/// Maps a sample to the network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Featurizer {
    Tabular,
    /// Token presence over a fixed vocabulary. Multi-word tokens are split.
    BagOfWords { vocab: Vec<String> },
}

impl Featurizer {
    fn dim(&self, schema: &FeatureSchema) -> usize {
        match self {
            Featurizer::Tabular => encoded_dim(schema),
            Featurizer::BagOfWords { vocab } => vocab.len(),
        }
    }

    fn features(&self, schema: &FeatureSchema, index: Option<&HashMap<String, usize>>, sample: &Sample) -> Vec<f64> {
        match self {
            Featurizer::Tabular => {
                let mut out = Vec::new();
                encode_into(sample, schema, &mut out);
                out
            }
            Featurizer::BagOfWords { vocab } => {
                let mut out = vec![0.0; vocab.len()];
                if let Some(index) = index {
                    for v in &sample.values {
                        if let Value::Token(t) = v {
                            for w in t.split_whitespace() {
                                if let Some(&i) = index.get(w) {
                                    out[i] = 1.0;
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

/// A trained built-in classifier. Immutable after training apart from its
/// query counter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub schema: FeatureSchema,
    pub featurizer: Featurizer,
    pub network: Network,
    pub training_accuracy: f64,
    #[serde(skip)]
    vocab_index: Option<HashMap<String, usize>>,
    #[serde(skip)]
    queries: QueryCounter,
}

impl TrainedModel {
    pub fn from_parts(kind: ModelKind, schema: FeatureSchema, featurizer: Featurizer, network: Network) -> Self {
        let mut model = TrainedModel {
            kind,
            schema,
            featurizer,
            network,
            training_accuracy: f64::NAN,
            vocab_index: None,
            queries: QueryCounter::default(),
        };
        model.index_vocab();
        model
    }

    /// Multinomial logistic model with explicit per-class weight rows.
    pub fn logistic_from_weights(schema: FeatureSchema, weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let inputs = encoded_dim(&schema);
        if weights.len() != schema.label_names().len() || bias.len() != weights.len() {
            return Err(Error::InvalidConfig("one weight row and bias per label required".into()));
        }
        if weights.iter().any(|w| w.len() != inputs) {
            return Err(Error::InvalidConfig(format!("weight rows must have length {inputs}")));
        }
        let layer = Dense::from_rows(weights, bias);
        Ok(TrainedModel::from_parts(ModelKind::Logistic, schema, Featurizer::Tabular, Network::new(vec![layer])))
    }

    fn index_vocab(&mut self) {
        if let Featurizer::BagOfWords { vocab } = &self.featurizer {
            self.vocab_index = Some(vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect());
        }
    }

    pub fn features(&self, sample: &Sample) -> Vec<f64> {
        self.featurizer.features(&self.schema, self.vocab_index.as_ref(), sample)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut model: TrainedModel = serde_json::from_str(&text)?;
        model.index_vocab();
        Ok(model)
    }

    /// Fraction of labeled samples whose argmax prediction matches.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let labels = dataset.labels.as_ref().ok_or_else(|| Error::InvalidConfig("dataset has no labels".into()))?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        let mut hit = 0usize;
        for (s, &l) in dataset.samples.iter().zip(labels) {
            if argmax(&self.network.forward(&self.features(s))) == l {
                hit += 1;
            }
        }
        Ok(hit as f64 / labels.len() as f64)
    }
}

impl Predictor for TrainedModel {
    fn labels(&self) -> &[String] {
        self.schema.label_names()
    }

    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.queries.bump();
        Ok(self.network.forward(&self.features(sample)))
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}

/// Vocabulary of the `size` most frequent words; ties break lexicographically.
pub fn build_vocab(dataset: &Dataset, size: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &dataset.samples {
        for v in &s.values {
            if let Value::Token(t) = v {
                for w in t.split_whitespace() {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
    }
    let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    words.into_iter().take(size).map(|(w, _)| w.to_string()).collect()
}

/// Trains a built-in classifier. Deterministic given `config.rng_seed`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.check()?;
    let labels = dataset.labels.as_ref().ok_or_else(|| Error::InvalidConfig("training data needs labels".into()))?;
    let schema = dataset.schema.clone();
    let n_classes = schema.label_names().len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let featurizer = match &config.model_kind {
        ModelKind::TextBow { vocab_size } => {
            if !schema.is_text() {
                return Err(Error::InvalidConfig("bag-of-words model needs a text dataset".into()));
            }
            Featurizer::BagOfWords { vocab: build_vocab(dataset, *vocab_size) }
        }
        _ => {
            if schema.is_text() {
                return Err(Error::InvalidConfig("tabular model needs a tabular dataset".into()));
            }
            Featurizer::Tabular
        }
    };
    let input_dim = featurizer.dim(&schema);
    let hidden: Vec<usize> = match config.model_kind {
        ModelKind::Mlp { layers, neurons } => vec![neurons; layers],
        _ => Vec::new(),
    };
    let network = Network::glorot(input_dim, &hidden, n_classes, &mut rng);
    let mut model = TrainedModel::from_parts(config.model_kind.clone(), schema, featurizer, network);

    let xs: Vec<Vec<f64>> = dataset.samples.iter().map(|s| model.features(s)).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let loss = model.network.sgd_epoch(&xs, labels, &order, config.batch_size, config.learning_rate, config.l2);
        if !loss.is_finite() || !model.network.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    model.training_accuracy = model.accuracy(dataset)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureSpec;

    fn two_numeric() -> FeatureSchema {
        FeatureSchema::tabular(
            vec![FeatureSpec::numeric("x0", 0, 10, 1), FeatureSpec::numeric("x1", 0, 10, 1)],
            vec!["neg".into(), "pos".into()],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn logistic_at_origin_is_even() {
        let model =
            TrainedModel::logistic_from_weights(two_numeric(), vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.0, 0.0])
                .unwrap();
        let p = model.predict_proba(&Sample::new(vec![Value::Numeric(0), Value::Numeric(0)])).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert_eq!(model.query_count(), 1);
    }

    #[test]
    fn logistic_matches_closed_form_sigmoid() {
        let (w0, w1, b) = (1.7, -2.3, 0.4);
        let model = TrainedModel::logistic_from_weights(
            two_numeric(),
            vec![vec![0.0, 0.0], vec![w0, w1]],
            vec![0.0, b],
        )
        .unwrap();
        for a in 0..=10 {
            for c in 0..=10 {
                let x = [a as f64 / 10.0, c as f64 / 10.0];
                let z = w0 * x[0] + w1 * x[1] + b;
                let sig = 1.0 / (1.0 + (-z).exp());
                let p = model.predict_proba(&Sample::new(vec![Value::Numeric(a), Value::Numeric(c)])).unwrap();
                assert!((p[1] - sig).abs() < 1e-9);
                assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let ds = Dataset::new(two_numeric(), vec![], Some(vec![])).unwrap();
        let mut cfg = TrainConfig::logistic(0);
        cfg.epochs = 0;
        assert!(matches!(train(&ds, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn diverging_training_reports_epoch() {
        let samples: Vec<Sample> =
            (0..40).map(|i| Sample::new(vec![Value::Numeric(i % 11), Value::Numeric((i * 7) % 11)])).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let ds = Dataset::new(two_numeric(), samples, Some(labels)).unwrap();
        let mut cfg = TrainConfig::mlp(3);
        cfg.model_kind = ModelKind::Mlp { layers: 3, neurons: 16 };
        cfg.learning_rate = 1e300;
        assert!(matches!(train(&ds, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn constant_stub_is_constant() {
        let stub = FnPredictor::new(vec!["a".into(), "b".into()], |_| vec![0.3, 0.7]);
        let a = stub.predict_proba(&Sample::new(vec![Value::Numeric(1)])).unwrap();
        let b = stub.predict_proba(&Sample::from_tokens(&["x"])).unwrap();
        assert_eq!(a, b);
        assert_eq!(stub.query_count(), 2);
    }

    #[test]
    fn model_file_round_trip() {
        let samples: Vec<Sample> =
            (0..60).map(|i| Sample::new(vec![Value::Numeric(i % 11), Value::Numeric((i * 3) % 11)])).collect();
        let labels: Vec<usize> = samples.iter().map(|s| usize::from(s.values[0] > Value::Numeric(5))).collect();
        let ds = Dataset::new(two_numeric(), samples.clone(), Some(labels)).unwrap();
        let model = train(&ds, &TrainConfig::logistic(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        for s in &samples {
            assert_eq!(model.predict_proba(s).unwrap(), back.predict_proba(s).unwrap());
        }
    }
}
