//! Dataset ingestion, schema files, and numeric encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FeatureKind, FeatureSchema, FeatureSpec, Sample, SchemaMode, Value};

/// Name of the optional label column in dataset CSVs.
pub const LABEL_COLUMN: &str = "__label__";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relates_to: Option<String>,
}

/// On-disk (JSON) form of a [`FeatureSchema`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    #[serde(default = "default_mode")]
    pub mode: SchemaMode,
    #[serde(default)]
    pub features: Vec<FeatureConfig>,
    pub labels: Vec<String>,
    #[serde(default)]
    pub protected: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub markers: BTreeMap<String, (String, String)>,
}

fn default_mode() -> SchemaMode {
    SchemaMode::Tabular
}

impl TryFrom<SchemaConfig> for FeatureSchema {
    type Error = Error;

    fn try_from(cfg: SchemaConfig) -> Result<Self> {
        let mut features = Vec::with_capacity(cfg.features.len());
        for f in cfg.features {
            let kind = match f.kind.as_str() {
                "categorical" => FeatureKind::Categorical {
                    domain: f
                        .domain
                        .ok_or_else(|| Error::InvalidSchema(format!("{:?} lacks a domain", f.name)))?,
                },
                "numeric" => {
                    let (Some(min), Some(max)) = (f.min, f.max) else {
                        return Err(Error::InvalidSchema(format!("{:?} lacks min/max", f.name)));
                    };
                    FeatureKind::Numeric { min, max, step: f.step.unwrap_or(1) }
                }
                "token" => FeatureKind::Token,
                other => return Err(Error::InvalidSchema(format!("unknown feature kind {other:?}"))),
            };
            features.push(FeatureSpec { name: f.name, kind, relates_to: f.relates_to });
        }
        FeatureSchema::from_parts(
            cfg.mode,
            features,
            cfg.labels,
            cfg.protected.into_iter().collect::<BTreeSet<_>>(),
            cfg.markers,
        )
    }
}

impl From<FeatureSchema> for SchemaConfig {
    fn from(schema: FeatureSchema) -> Self {
        let features = schema
            .features()
            .iter()
            .map(|f| {
                let mut out = FeatureConfig {
                    name: f.name.clone(),
                    kind: String::new(),
                    domain: None,
                    min: None,
                    max: None,
                    step: None,
                    relates_to: f.relates_to.clone(),
                };
                match &f.kind {
                    FeatureKind::Categorical { domain } => {
                        out.kind = "categorical".into();
                        out.domain = Some(domain.clone());
                    }
                    FeatureKind::Numeric { min, max, step } => {
                        out.kind = "numeric".into();
                        out.min = Some(*min);
                        out.max = Some(*max);
                        out.step = Some(*step);
                    }
                    FeatureKind::Token => out.kind = "token".into(),
                }
                out
            })
            .collect();
        SchemaConfig {
            mode: schema.mode(),
            features,
            labels: schema.label_names().to_vec(),
            protected: schema.protected().iter().cloned().collect(),
            markers: schema.markers().clone(),
        }
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<FeatureSchema> {
    let text = fs::read_to_string(path)?;
    let cfg: SchemaConfig = serde_json::from_str(&text)?;
    FeatureSchema::try_from(cfg)
}

pub fn save_schema(schema: &FeatureSchema, path: impl AsRef<Path>) -> Result<()> {
    let cfg = SchemaConfig::from(schema.clone());
    fs::write(path, serde_json::to_string_pretty(&cfg)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub samples: Vec<Sample>,
    /// Label indices into `schema.label_names()`.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, samples: Vec<Sample>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::InvalidConfig(format!("{} labels for {} samples", l.len(), samples.len())));
            }
            if let Some(bad) = l.iter().find(|&&i| i >= schema.label_names().len()) {
                return Err(Error::InvalidConfig(format!("label index {bad} out of range")));
            }
        }
        for s in &samples {
            schema.validate(s)?;
        }
        Ok(Dataset { schema, samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Replaces the schema; samples are revalidated.
    pub fn with_schema(self, schema: FeatureSchema) -> Result<Self> {
        if let Some(labels) = &self.labels {
            // Remap label indices by name.
            let mut remapped = Vec::with_capacity(labels.len());
            for &l in labels {
                let name = &self.schema.label_names()[l];
                let idx = schema
                    .label_index(name)
                    .ok_or_else(|| Error::InvalidSchema(format!("label {name:?} missing from schema")))?;
                remapped.push(idx);
            }
            return Dataset::new(schema, self.samples, Some(remapped));
        }
        Dataset::new(schema, self.samples, None)
    }

    /// Stratified split into `(train, test)`; `train_fraction` of each class
    /// (rounded) goes to train. Unlabeled data is split without strata.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            let key = self.labels.as_ref().map_or(0, |l| l[i]);
            strata.entry(key).or_default().push(i);
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (_, mut idx) in strata {
            idx.shuffle(&mut rng);
            let cut = (idx.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// `n` distinct samples drawn without replacement (fewer if the dataset is smaller).
    pub fn sample_indices(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx
    }
}

/// Reads a header-first CSV. Columns must equal the schema's feature names
/// in order, optionally followed by [`LABEL_COLUMN`].
pub fn load_tabular(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    read_tabular(file, schema)
}

pub fn read_tabular<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    let has_label = header.len() == names.len() + 1 && header.get(names.len()) == Some(LABEL_COLUMN);
    let feature_cols: Vec<&str> = header.iter().take(names.len()).collect();
    if feature_cols != names || !(header.len() == names.len() || has_label) {
        return Err(Error::MalformedRow { line: 1, reason: "header does not match schema".into() });
    }

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| Error::MalformedRow { line, reason: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(names.len());
        for (i, raw) in record.iter().take(names.len()).enumerate() {
            let raw = raw.trim();
            if raw == "?" || raw.is_empty() {
                return Err(Error::MalformedRow { line, reason: format!("missing value for {:?}", names[i]) });
            }
            values.push(schema.parse_value(i, raw)?);
        }
        samples.push(Sample::new(values));
        if has_label {
            let raw = record.get(names.len()).unwrap_or("").trim();
            let idx = schema
                .label_index(raw)
                .ok_or_else(|| Error::MalformedRow { line, reason: format!("unknown label {raw:?}") })?;
            labels.push(idx);
        }
    }
    Dataset::new(schema.clone(), samples, has_label.then_some(labels))
}

pub fn save_tabular(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_tabular(dataset, file)
}

pub fn write_tabular<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = dataset.schema.features().iter().map(|f| f.name.clone()).collect();
    if dataset.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    wtr.write_record(&header)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let mut row = dataset.schema.render_sample(s);
        if let Some(labels) = &dataset.labels {
            row.push(dataset.schema.label_names()[labels[i]].clone());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Lowercase, split on whitespace, strip leading/trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Splits `doc<TAB>label`; the label is optional.
fn split_labeled(line: &str) -> (&str, Option<&str>) {
    match line.rsplit_once('\t') {
        Some((doc, label)) if !label.trim().is_empty() => (doc, Some(label.trim())),
        _ => (line, None),
    }
}

/// Loads a text corpus: one document per line (or per file when `path` is a
/// directory), each optionally followed by a tab and a label. Label names
/// are the sorted distinct labels; the protected set starts empty.
pub fn load_text(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut docs: Vec<String> = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            if e.file_type()?.is_file() {
                docs.push(fs::read_to_string(e.path())?.trim_end_matches(['\n', '\r']).to_string());
            }
        }
    } else {
        docs.extend(fs::read_to_string(path)?.lines().map(str::to_string));
    }
    parse_text_docs(docs.iter().map(String::as_str))
}

pub fn parse_text_docs<'a>(docs: impl IntoIterator<Item = &'a str>) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut raw_labels: Vec<Option<String>> = Vec::new();
    for (line_no, line) in docs.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (doc, label) = split_labeled(line);
        let tokens = tokenize(doc);
        if tokens.is_empty() {
            return Err(Error::MalformedRow { line: line_no + 1, reason: "document has no tokens".into() });
        }
        samples.push(Sample::from_tokens(&tokens));
        raw_labels.push(label.map(str::to_string));
    }
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let labeled = raw_labels.iter().filter(|l| l.is_some()).count();
    if labeled != 0 && labeled != raw_labels.len() {
        return Err(Error::MalformedRow { line: 0, reason: "some documents lack labels".into() });
    }
    let mut names: BTreeSet<String> = raw_labels.iter().flatten().cloned().collect();
    for pad in ["0", "1"] {
        if names.len() < 2 {
            names.insert(pad.to_string());
        }
    }
    let names: Vec<String> = names.into_iter().collect();
    let schema = FeatureSchema::text(names.clone(), &[], BTreeMap::new())?;
    let labels = (labeled > 0).then(|| {
        raw_labels
            .iter()
            .map(|l| names.iter().position(|n| Some(n) == l.as_ref()).unwrap())
            .collect()
    });
    Dataset::new(schema, samples, labels)
}

/// Width of the one-hot + min-max encoding of `schema`.
pub fn encoded_dim(schema: &FeatureSchema) -> usize {
    schema
        .features()
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Categorical { domain } => domain.len(),
            FeatureKind::Numeric { .. } => 1,
            FeatureKind::Token => 0,
        })
        .sum()
}

/// Categorical features become one-hot blocks, numerics are scaled to [0,1].
pub fn encode(sample: &Sample, schema: &FeatureSchema) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(schema));
    encode_into(sample, schema, &mut out);
    out
}

pub fn encode_into(sample: &Sample, schema: &FeatureSchema, out: &mut Vec<f64>) {
    out.clear();
    for (f, v) in schema.features().iter().zip(&sample.values) {
        match (&f.kind, v) {
            (FeatureKind::Categorical { domain }, Value::Category(c)) => {
                let start = out.len();
                out.resize(start + domain.len(), 0.0);
                out[start + c] = 1.0;
            }
            (FeatureKind::Numeric { min, max, .. }, Value::Numeric(x)) => {
                out.push(if max > min { (x - min) as f64 / (max - min) as f64 } else { 0.0 });
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::tabular(
            vec![
                FeatureSpec::categorical("c", &["a", "b", "c"]),
                FeatureSpec::numeric("n", 0, 100, 1),
                FeatureSpec::categorical("sex", &["male", "female"]).related_to("gender"),
            ],
            vec!["no".into(), "yes".into()],
            &["gender"],
        )
        .unwrap()
    }

    #[test]
    fn one_hot_and_minmax() {
        let s = schema();
        let x = Sample::new(vec![Value::Category(1), Value::Numeric(50), Value::Category(0)]);
        assert_eq!(encode(&x, &s), vec![0.0, 1.0, 0.0, 0.5, 1.0, 0.0]);
        assert_eq!(encoded_dim(&s), 6);
    }

    #[test]
    fn header_only_csv_is_empty() {
        let ds = read_tabular("c,n,sex,__label__\n".as_bytes(), &schema()).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.labels, Some(vec![]));
    }

    #[test]
    fn unknown_category_names_feature() {
        let err = read_tabular("c,n,sex\nz,1,male\n".as_bytes(), &schema()).unwrap_err();
        match err {
            Error::UnknownCategory { feature, value } => {
                assert_eq!(feature, "c");
                assert_eq!(value, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_and_out_of_range() {
        assert!(matches!(
            read_tabular("c,n,sex\na,?,male\n".as_bytes(), &schema()),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            read_tabular("c,n,sex\na,101,male\n".as_bytes(), &schema()),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            read_tabular("n,c,sex\n1,a,male\n".as_bytes(), &schema()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        let ds = parse_text_docs(["This master actor is great .\t1", "bad film\t0"]).unwrap();
        assert_eq!(ds.samples[0].len(), 5);
        assert_eq!(ds.samples[0].token(1), Some("master"));
        assert_eq!(ds.labels.as_ref().unwrap()[0], 1);
        assert_eq!(ds.schema.label_names(), &["0".to_string(), "1".to_string()]);
    }

    #[test]
    fn nineteen_word_document() {
        let doc = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen sixteen seventeen eighteen nineteen";
        let ds = parse_text_docs([doc]).unwrap();
        assert_eq!(ds.samples[0].len(), 19);
        assert!(ds.labels.is_none());
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(parse_text_docs(Vec::<&str>::new()), Err(Error::EmptyCorpus)));
        assert!(matches!(parse_text_docs(["", "  "]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn schema_config_round_trip() {
        let s = schema();
        let json = serde_json::to_string(&s).unwrap();
        let back: FeatureSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn stratified_split_keeps_class_ratio() {
        let s = schema();
        let samples: Vec<Sample> =
            (0..100).map(|i| Sample::new(vec![Value::Category(0), Value::Numeric(i), Value::Category(0)])).collect();
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i < 30)).collect();
        let ds = Dataset::new(s, samples, Some(labels)).unwrap();
        let (train, test) = ds.split(0.8, 1);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        assert_eq!(train.labels.unwrap().iter().filter(|&&l| l == 1).count(), 24);
    }
}
