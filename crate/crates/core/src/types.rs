//! Domain types shared by every stage of the search.
//!
//! A tabular [`Sample`] is a vector of [`Value`]s indexed like the schema's
//! features. A text sample is a token sequence; its positions are token
//! indices and the schema carries no per-position features.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::SchemaConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Categorical { domain: Vec<String> },
    /// Integer grid `min, min+step, ..., <= max`.
    Numeric { min: i64, max: i64, step: i64 },
    Token,
}

impl FeatureKind {
    /// Number of admissible values, `None` for tokens.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            FeatureKind::Categorical { domain } => Some(domain.len()),
            FeatureKind::Numeric { min, max, step } => Some(((max - min) / step) as usize + 1),
            FeatureKind::Token => None,
        }
    }

    /// The `i`-th value of the domain in canonical order.
    pub fn nth_value(&self, i: usize) -> Option<Value> {
        match self {
            FeatureKind::Categorical { domain } => (i < domain.len()).then_some(Value::Category(i)),
            FeatureKind::Numeric { min, step, .. } => {
                let n = self.cardinality()?;
                (i < n).then(|| Value::Numeric(min + step * i as i64))
            }
            FeatureKind::Token => None,
        }
    }

    pub fn values(&self) -> Vec<Value> {
        let n = self.cardinality().unwrap_or(0);
        (0..n).filter_map(|i| self.nth_value(i)).collect()
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (FeatureKind::Categorical { domain }, Value::Category(i)) => *i < domain.len(),
            (FeatureKind::Numeric { min, max, step }, Value::Numeric(v)) => {
                v >= min && v <= max && (v - min) % step == 0
            }
            (FeatureKind::Token, Value::Token(t)) => !t.is_empty(),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Protected attribute this feature is related to, if any.
    pub relates_to: Option<String>,
}

impl FeatureSpec {
    pub fn categorical(name: &str, domain: &[&str]) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Categorical { domain: domain.iter().map(|s| s.to_string()).collect() },
            relates_to: None,
        }
    }

    pub fn numeric(name: &str, min: i64, max: i64, step: i64) -> Self {
        FeatureSpec { name: name.to_string(), kind: FeatureKind::Numeric { min, max, step }, relates_to: None }
    }

    pub fn related_to(mut self, attr: &str) -> Self {
        self.relates_to = Some(attr.to_string());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaMode {
    Tabular,
    Text,
}

/// Declarative description of the input space plus its protected attributes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaConfig", into = "SchemaConfig")]
pub struct FeatureSchema {
    mode: SchemaMode,
    features: Vec<FeatureSpec>,
    label_names: Vec<String>,
    protected: BTreeSet<String>,
    /// Per-attribute value markers used to build counterpart phrases
    /// in text mode (`gender -> ("male", "female")`).
    markers: BTreeMap<String, (String, String)>,
}

impl FeatureSchema {
    pub fn tabular(features: Vec<FeatureSpec>, label_names: Vec<String>, protected: &[&str]) -> Result<Self> {
        let schema = FeatureSchema {
            mode: SchemaMode::Tabular,
            features,
            label_names,
            protected: protected.iter().map(|s| s.to_string()).collect(),
            markers: BTreeMap::new(),
        };
        schema.check()?;
        Ok(schema)
    }

    pub fn text(
        label_names: Vec<String>,
        protected: &[&str],
        markers: BTreeMap<String, (String, String)>,
    ) -> Result<Self> {
        let schema = FeatureSchema {
            mode: SchemaMode::Text,
            features: Vec::new(),
            label_names,
            protected: protected.iter().map(|s| s.to_string()).collect(),
            markers,
        };
        schema.check()?;
        Ok(schema)
    }

    pub(crate) fn from_parts(
        mode: SchemaMode,
        features: Vec<FeatureSpec>,
        label_names: Vec<String>,
        protected: BTreeSet<String>,
        markers: BTreeMap<String, (String, String)>,
    ) -> Result<Self> {
        let schema = FeatureSchema { mode, features, label_names, protected, markers };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<()> {
        if self.label_names.len() < 2 {
            return Err(Error::InvalidSchema("at least two labels required".into()));
        }
        let mut seen = HashSet::new();
        for label in &self.label_names {
            if !seen.insert(label) {
                return Err(Error::InvalidSchema(format!("duplicate label {label:?}")));
            }
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate feature {:?}", f.name)));
            }
            match &f.kind {
                FeatureKind::Categorical { domain } => {
                    if domain.is_empty() {
                        return Err(Error::InvalidSchema(format!("{:?} has an empty domain", f.name)));
                    }
                    let uniq: HashSet<_> = domain.iter().collect();
                    if uniq.len() != domain.len() {
                        return Err(Error::InvalidSchema(format!("{:?} has duplicate categories", f.name)));
                    }
                }
                FeatureKind::Numeric { min, max, step } => {
                    if min > max || *step <= 0 {
                        return Err(Error::InvalidSchema(format!("{:?} needs min <= max and step > 0", f.name)));
                    }
                }
                FeatureKind::Token => {
                    if self.mode == SchemaMode::Tabular {
                        return Err(Error::InvalidSchema(format!("token feature {:?} in tabular schema", f.name)));
                    }
                }
            }
        }
        // Text-mode attributes resolve through the knowledge graph instead.
        if self.mode == SchemaMode::Tabular {
            for p in &self.protected {
                if !self.features.iter().any(|f| f.relates_to.as_deref() == Some(p)) {
                    return Err(Error::InvalidSchema(format!("protected attribute {p:?} has no related feature")));
                }
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> SchemaMode {
        self.mode
    }

    pub fn is_text(&self) -> bool {
        self.mode == SchemaMode::Text
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn protected(&self) -> &BTreeSet<String> {
        &self.protected
    }

    pub fn markers(&self) -> &BTreeMap<String, (String, String)> {
        &self.markers
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == label)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Returns a copy restricted to a different protected set. Tabular
    /// attributes must still be referenced by some feature.
    pub fn with_protected(&self, protected: &[String]) -> Result<Self> {
        let mut schema = self.clone();
        schema.protected = protected.iter().cloned().collect();
        schema.check()?;
        Ok(schema)
    }

    pub fn with_markers(&self, markers: BTreeMap<String, (String, String)>) -> Self {
        let mut schema = self.clone();
        schema.markers = markers;
        schema
    }

    /// Positions whose feature relates to a protected attribute in `P`.
    pub fn protected_positions(&self) -> Vec<(usize, &str)> {
        self.features
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match &f.relates_to {
                Some(p) if self.protected.contains(p) => Some((i, p.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        match self.mode {
            SchemaMode::Tabular => {
                if sample.values.len() != self.features.len() {
                    return Err(Error::InvalidSample(format!(
                        "expected {} values, got {}",
                        self.features.len(),
                        sample.values.len()
                    )));
                }
                for (f, v) in self.features.iter().zip(&sample.values) {
                    if !f.kind.contains(v) {
                        return Err(Error::InvalidSample(format!("{v:?} outside domain of {:?}", f.name)));
                    }
                }
            }
            SchemaMode::Text => {
                for v in &sample.values {
                    match v {
                        Value::Token(t) if !t.is_empty() => {}
                        other => return Err(Error::InvalidSample(format!("{other:?} is not a nonempty token"))),
                    }
                }
            }
        }
        Ok(())
    }

    /// Human-readable rendering of `value` at `position`.
    pub fn render(&self, position: usize, value: &Value) -> String {
        match value {
            Value::Category(i) => match self.features.get(position).map(|f| &f.kind) {
                Some(FeatureKind::Categorical { domain }) => domain.get(*i).cloned().unwrap_or_else(|| i.to_string()),
                _ => i.to_string(),
            },
            Value::Numeric(v) => v.to_string(),
            Value::Token(t) => t.clone(),
        }
    }

    /// Inverse of [`render`](Self::render).
    pub fn parse_value(&self, position: usize, raw: &str) -> Result<Value> {
        if self.is_text() {
            if raw.is_empty() {
                return Err(Error::InvalidSample("empty token".into()));
            }
            return Ok(Value::Token(raw.to_string()));
        }
        let f = self
            .features
            .get(position)
            .ok_or_else(|| Error::InvalidSample(format!("position {position} beyond schema")))?;
        match &f.kind {
            FeatureKind::Categorical { domain } => domain
                .iter()
                .position(|d| d == raw)
                .map(Value::Category)
                .ok_or_else(|| Error::UnknownCategory { feature: f.name.clone(), value: raw.to_string() }),
            FeatureKind::Numeric { .. } => {
                let v: i64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::OutOfRange { feature: f.name.clone(), value: raw.to_string() })?;
                let value = Value::Numeric(v);
                if f.kind.contains(&value) {
                    Ok(value)
                } else {
                    Err(Error::OutOfRange { feature: f.name.clone(), value: raw.to_string() })
                }
            }
            FeatureKind::Token => Ok(Value::Token(raw.to_string())),
        }
    }

    pub fn render_sample(&self, sample: &Sample) -> Vec<String> {
        sample.values.iter().enumerate().map(|(i, v)| self.render(i, v)).collect()
    }

    pub fn parse_sample(&self, raw: &[String]) -> Result<Sample> {
        let values = raw.iter().enumerate().map(|(i, r)| self.parse_value(i, r)).collect::<Result<Vec<_>>>()?;
        let sample = Sample::new(values);
        self.validate(&sample)?;
        Ok(sample)
    }

    /// Size of the full tabular input space, saturating.
    pub fn space_size(&self) -> u64 {
        self.features
            .iter()
            .map(|f| f.kind.cardinality().unwrap_or(0) as u64)
            .fold(1u64, |acc, n| acc.saturating_mul(n))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Category(usize),
    Numeric(i64),
    Token(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    #[default]
    Original,
    Seed,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub values: Vec<Value>,
    pub origin: Origin,
    pub seed_id: Option<u64>,
}

impl Sample {
    pub fn new(values: Vec<Value>) -> Self {
        Sample { values, origin: Origin::Original, seed_id: None }
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        Sample::new(tokens.iter().map(|t| Value::Token(t.as_ref().to_string())).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with the value at `position` replaced.
    pub fn replaced(&self, position: usize, value: Value) -> Sample {
        let mut out = self.clone();
        out.values[position] = value;
        out
    }

    pub fn token(&self, position: usize) -> Option<&str> {
        match self.values.get(position) {
            Some(Value::Token(t)) => Some(t),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEntry {
    pub index: usize,
    pub score: f64,
}

/// Importance-ordered explanation of one prediction. Rank 1 is the entry
/// with the largest absolute score; ties go to the smaller index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    entries: Vec<ExplanationEntry>,
}

impl Explanation {
    pub fn from_scores(scores: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut entries: Vec<ExplanationEntry> =
            scores.into_iter().map(|(index, score)| ExplanationEntry { index, score }).collect();
        entries.sort_by(|a, b| b.score.abs().total_cmp(&a.score.abs()).then(a.index.cmp(&b.index)));
        entries.dedup_by_key(|e| e.index);
        Explanation { entries }
    }

    pub fn entries(&self) -> &[ExplanationEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `position`.
    pub fn rank_of(&self, position: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.index == position).map(|r| r + 1)
    }

    pub fn score_of(&self, position: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.index == position).map(|e| e.score)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub sample: Sample,
    /// `|p' - p''|` of `witness`, once evaluated.
    pub fitness: Option<f64>,
    pub witness: Option<(f64, f64)>,
    /// Sensitive position used for fitness.
    pub focus: Option<usize>,
}

impl Individual {
    pub fn new(sample: Sample) -> Self {
        Individual { sample, fitness: None, witness: None, focus: None }
    }

    pub fn with_focus(sample: Sample, focus: usize) -> Self {
        Individual { sample, fitness: None, witness: None, focus: Some(focus) }
    }

    pub fn set_witness(&mut self, p_a: f64, p_b: f64) {
        self.witness = Some((p_a, p_b));
        self.fitness = Some((p_a - p_b).abs());
    }

    pub fn clear_fitness(&mut self) {
        self.fitness = None;
        self.witness = None;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedScope {
    AllSeeds,
    SingleSeed { seed_id: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Individual>,
    pub generation: usize,
    pub scope: SeedScope,
}

impl Population {
    pub fn new(members: Vec<Individual>, scope: SeedScope) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("population must be nonempty".into()));
        }
        if let SeedScope::SingleSeed { seed_id } = scope {
            let len = members[0].sample.len();
            if members.iter().any(|m| m.sample.len() != len || m.sample.seed_id != Some(seed_id)) {
                return Err(Error::InvalidConfig("text population members must share seed and length".into()));
            }
        }
        Ok(Population { members, generation: 0, scope })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A verified discriminatory sample with its witness pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatoryRecord {
    pub sample: Sample,
    pub sensitive_index: usize,
    pub variant_a: Sample,
    pub variant_b: Sample,
    pub label_a: String,
    pub label_b: String,
    pub dedupe_key: Vec<u8>,
}

impl DiscriminatoryRecord {
    pub fn key_str(&self) -> String {
        String::from_utf8_lossy(&self.dedupe_key).into_owned()
    }
}

/// Raw counters of one run. Ratios are always recomputed from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tsn: u64,
    pub dsn: u64,
    pub elapsed: f64,
}

impl RunMetrics {
    pub fn dss(&self) -> Option<f64> {
        crate::metrics::dss(self.elapsed, self.dsn)
    }

    pub fn sur(&self) -> f64 {
        crate::metrics::sur(self.dsn, self.tsn)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tsn": self.tsn,
            "dsn": self.dsn,
            "elapsed": self.elapsed,
            "dss": self.dss(),
            "sur": self.sur(),
        })
    }
}

/// Canonical identity of a sample with protected-related positions masked.
pub fn dedupe_key(sample: &Sample, protected_positions: &BTreeSet<usize>) -> Vec<u8> {
    let mut key = String::new();
    for (i, v) in sample.values.iter().enumerate() {
        if i > 0 {
            key.push('|');
        }
        if protected_positions.contains(&i) {
            key.push('*');
            continue;
        }
        match v {
            Value::Category(c) => {
                let _ = write!(key, "c{c}");
            }
            Value::Numeric(n) => {
                let _ = write!(key, "n{n}");
            }
            Value::Token(t) => {
                key.push('t');
                for ch in t.chars() {
                    if matches!(ch, '|' | '\\' | '*') {
                        key.push('\\');
                    }
                    key.push(ch);
                }
            }
        }
    }
    key.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn census_like() -> FeatureSchema {
        FeatureSchema::tabular(
            vec![
                FeatureSpec::numeric("age", 10, 90, 1).related_to("age"),
                FeatureSpec::categorical("sex", &["male", "female"]).related_to("gender"),
                FeatureSpec::numeric("hours-per-week", 1, 99, 1),
            ],
            vec!["<=50K".into(), ">50K".into()],
            &["gender"],
        )
        .unwrap()
    }

    #[test]
    fn dedupe_masks_protected_positions() {
        let schema = census_like();
        let masked: BTreeSet<usize> = schema.protected_positions().iter().map(|p| p.0).collect();
        let a = Sample::new(vec![Value::Numeric(30), Value::Category(0), Value::Numeric(40)]);
        let b = a.replaced(1, Value::Category(1));
        let c = a.replaced(2, Value::Numeric(45));
        assert_eq!(dedupe_key(&a, &masked), dedupe_key(&b, &masked));
        assert_ne!(dedupe_key(&a, &masked), dedupe_key(&c, &masked));
        assert_eq!(dedupe_key(&a, &masked), dedupe_key(&a.clone(), &masked));
    }

    #[test]
    fn dedupe_escapes_tokens() {
        let none = BTreeSet::new();
        let a = Sample::from_tokens(&["a|b", "c"]);
        let b = Sample::from_tokens(&["a", "b|c"]);
        assert_ne!(dedupe_key(&a, &none), dedupe_key(&b, &none));
    }

    #[test]
    fn schema_rejects_bad_definitions() {
        let dup = FeatureSchema::tabular(
            vec![FeatureSpec::numeric("a", 0, 1, 1), FeatureSpec::numeric("a", 0, 1, 1)],
            vec!["0".into(), "1".into()],
            &[],
        );
        assert!(dup.is_err());
        let one_label = FeatureSchema::tabular(vec![FeatureSpec::numeric("a", 0, 1, 1)], vec!["0".into()], &[]);
        assert!(one_label.is_err());
        let bad_step = FeatureSchema::tabular(vec![FeatureSpec::numeric("a", 0, 1, 0)], vec!["0".into(), "1".into()], &[]);
        assert!(bad_step.is_err());
        let unresolved = FeatureSchema::tabular(
            vec![FeatureSpec::numeric("a", 0, 1, 1)],
            vec!["0".into(), "1".into()],
            &["gender"],
        );
        assert!(unresolved.is_err());
        let empty_domain = FeatureSchema::tabular(
            vec![FeatureSpec::categorical("c", &[])],
            vec!["0".into(), "1".into()],
            &[],
        );
        assert!(empty_domain.is_err());
    }

    #[test]
    fn validate_checks_grid() {
        let schema = census_like();
        let ok = Sample::new(vec![Value::Numeric(30), Value::Category(1), Value::Numeric(40)]);
        assert!(schema.validate(&ok).is_ok());
        let off = ok.replaced(0, Value::Numeric(91));
        assert!(schema.validate(&off).is_err());
        let short = Sample::new(vec![Value::Numeric(30)]);
        assert!(schema.validate(&short).is_err());
    }

    #[test]
    fn explanation_is_totally_ordered() {
        let e = Explanation::from_scores(vec![(0, 0.1), (1, -0.3), (2, 0.3), (3, 0.05)]);
        let order: Vec<usize> = e.entries().iter().map(|x| x.index).collect();
        assert_eq!(order, vec![1, 2, 0, 3]);
        assert_eq!(e.rank_of(2), Some(2));
        assert_eq!(e.rank_of(9), None);
    }

    #[test]
    fn metrics_identities() {
        let m = RunMetrics { tsn: 10, dsn: 4, elapsed: 2.0 };
        assert_eq!(m.sur(), 0.4);
        assert_eq!(m.dss(), Some(0.5));
        let empty = RunMetrics { tsn: 0, dsn: 0, elapsed: 1.0 };
        assert_eq!(empty.sur(), 0.0);
        assert_eq!(empty.dss(), None);
    }

    #[test]
    fn individual_fitness_tracks_witness() {
        let mut ind = Individual::new(Sample::new(vec![]));
        ind.set_witness(0.8, 0.6);
        assert!((ind.fitness.unwrap() - 0.2).abs() < 1e-12);
    }
}
