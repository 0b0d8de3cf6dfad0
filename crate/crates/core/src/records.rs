//! `records.csv`: discriminatory records on disk, and an offline re-check.
//!
//! Tabular files have one column per feature; text files keep the token
//! list as a JSON array in a `tokens` column. Both end with
//! `sensitive_index,value_a,value_b,label_a,label_b,dedupe_key`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::engine::SearchSpace;
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::types::{dedupe_key, DiscriminatoryRecord, FeatureSchema, Origin, Sample};

const TAIL: [&str; 6] = ["sensitive_index", "value_a", "value_b", "label_a", "label_b", "dedupe_key"];

fn header(schema: &FeatureSchema) -> Vec<String> {
    let mut h: Vec<String> = if schema.is_text() {
        vec!["tokens".into()]
    } else {
        schema.features().iter().map(|f| f.name.clone()).collect()
    };
    h.extend(TAIL.iter().map(|s| s.to_string()));
    h
}

pub fn write_records<W: Write>(records: &[DiscriminatoryRecord], schema: &FeatureSchema, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(schema))?;
    for r in records {
        let mut row: Vec<String> = if schema.is_text() {
            vec![serde_json::to_string(&schema.render_sample(&r.sample))?]
        } else {
            schema.render_sample(&r.sample)
        };
        let i = r.sensitive_index;
        row.push(i.to_string());
        row.push(schema.render(i, &r.variant_a.values[i]));
        row.push(schema.render(i, &r.variant_b.values[i]));
        row.push(r.label_a.clone());
        row.push(r.label_b.clone());
        row.push(r.key_str());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_records(records: &[DiscriminatoryRecord], schema: &FeatureSchema, path: impl AsRef<Path>) -> Result<()> {
    write_records(records, schema, std::fs::File::create(path)?)
}

pub fn read_records<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<DiscriminatoryRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let expected = header(schema);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(Error::MalformedRow { line: 1, reason: format!("expected header {expected:?}, found {got:?}") });
    }
    let width = if schema.is_text() { 1 } else { schema.features().len() };
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let bad = |reason: String| Error::MalformedRow { line, reason };
        let raw: Vec<String> = if schema.is_text() {
            serde_json::from_str(&row[0]).map_err(|e| bad(format!("tokens: {e}")))?
        } else {
            row.iter().take(width).map(str::to_string).collect()
        };
        let mut sample = schema.parse_sample(&raw)?;
        sample.origin = Origin::Generated;
        let index: usize = row[width].parse().map_err(|_| bad("sensitive_index is not an integer".into()))?;
        if index >= sample.len() {
            return Err(bad(format!("sensitive_index {index} beyond sample length {}", sample.len())));
        }
        let va = schema.parse_value(index, &row[width + 1])?;
        let vb = schema.parse_value(index, &row[width + 2])?;
        out.push(DiscriminatoryRecord {
            variant_a: sample.replaced(index, va),
            variant_b: sample.replaced(index, vb),
            sample,
            sensitive_index: index,
            label_a: row[width + 3].to_string(),
            label_b: row[width + 4].to_string(),
            dedupe_key: row[width + 5].as_bytes().to_vec(),
        });
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<DiscriminatoryRecord>> {
    read_records(std::fs::File::open(path)?, schema)
}

/// Why a record failed the re-check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NotSensitive,
    VariantsDifferElsewhere,
    LabelMismatch { side: char, recorded: String, actual: String },
    SameLabel,
    KeyMismatch,
}

/// Re-derives a record from the model alone: the changed position must be
/// protected-related, the variants must differ only there, the model must
/// give them the recorded labels, and those labels must differ.
pub fn verify_record<P: Predictor + ?Sized>(
    record: &DiscriminatoryRecord,
    f: &P,
    space: &SearchSpace,
) -> Result<Vec<Violation>> {
    let mut v = Vec::new();
    let i = record.sensitive_index;
    if !space.is_sensitive_position(&record.sample, i) {
        v.push(Violation::NotSensitive);
    }
    let (a, b) = (&record.variant_a, &record.variant_b);
    let elsewhere = a.len() != b.len()
        || a.len() != record.sample.len()
        || (0..a.len()).any(|j| j != i && (a.values[j] != b.values[j] || a.values[j] != record.sample.values[j]));
    if elsewhere {
        v.push(Violation::VariantsDifferElsewhere);
    }
    let names = f.labels();
    let la = &names[f.predict_label(a)?];
    let lb = &names[f.predict_label(b)?];
    if *la != record.label_a {
        v.push(Violation::LabelMismatch { side: 'a', recorded: record.label_a.clone(), actual: la.clone() });
    }
    if *lb != record.label_b {
        v.push(Violation::LabelMismatch { side: 'b', recorded: record.label_b.clone(), actual: lb.clone() });
    }
    if la == lb {
        v.push(Violation::SameLabel);
    }
    let mask: BTreeSet<usize> = space.protected_mask(&record.sample);
    if dedupe_key(&record.sample, &mask) != record.dedupe_key {
        v.push(Violation::KeyMismatch);
    }
    Ok(v)
}

/// Row indices (0-based) of records that fail the re-check, with reasons.
pub fn verify_all<P: Predictor + ?Sized>(
    records: &[DiscriminatoryRecord],
    f: &P,
    space: &SearchSpace,
) -> Result<Vec<(usize, Vec<Violation>)>> {
    let mut bad = Vec::new();
    for (n, r) in records.iter().enumerate() {
        let v = verify_record(r, f, space)?;
        if !v.is_empty() {
            bad.push((n, v));
        }
    }
    Ok(bad)
}

/// Convenience for re-reading samples without records.
pub fn samples_of(records: &[DiscriminatoryRecord]) -> Vec<Sample> {
    records.iter().map(|r| r.sample.clone()).collect()
}
