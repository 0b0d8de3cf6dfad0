//! Data augmentation from discriminatory records and before/after evaluation.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{check_discriminatory, run, EngineConfig, SearchSpace};
use crate::error::{Error, Result};
use crate::model::{argmax, train, Predictor, TrainConfig, TrainedModel};
use crate::types::{DiscriminatoryRecord, Origin, Value};

/// How the shared label of an augmented variant pair is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPolicy {
    /// Majority prediction over the full protected domain.
    #[default]
    Majority,
    /// The dataset label when the sample is in the dataset, else majority.
    Original,
}

/// Number of records the augmentation draws.
pub fn augmentation_count(dataset_len: usize, records_len: usize, fraction: f64, text: bool) -> usize {
    let base = if text { records_len } else { dataset_len };
    (fraction * base as f64).ceil() as usize
}

fn domain_values(record: &DiscriminatoryRecord, space: &SearchSpace) -> Vec<Value> {
    let pos = record.sensitive_index;
    if space.is_text() {
        let mut vals = vec![record.variant_a.values[pos].clone(), record.variant_b.values[pos].clone()];
        vals.dedup();
        vals
    } else {
        space.schema().features()[pos].kind.values()
    }
}

/// Majority label of `f` over the protected domain at the record's
/// sensitive position; ties go to the lexicographically smallest name.
pub fn majority_label<P: Predictor + ?Sized>(
    record: &DiscriminatoryRecord,
    f: &P,
    space: &SearchSpace,
) -> Result<usize> {
    let x = &record.sample;
    let mut votes = vec![0usize; f.labels().len()];
    for v in domain_values(record, space) {
        votes[argmax(&f.predict_proba(&x.replaced(record.sensitive_index, v))?)] += 1;
    }
    let best = *votes.iter().max().unwrap_or(&0);
    let names = f.labels();
    let winner = (0..votes.len())
        .filter(|&i| votes[i] == best)
        .min_by(|&a, &b| names[a].cmp(&names[b]))
        .expect("at least two labels");
    Ok(winner)
}

/// Adds both variants of the first `augmentation_count` records to `dataset`,
/// each pair with one shared label.
pub fn augment_dataset<P: Predictor + ?Sized>(
    dataset: &Dataset,
    records: &[DiscriminatoryRecord],
    fraction: f64,
    f: &P,
    space: &SearchSpace,
    policy: LabelPolicy,
) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("augmentation fraction {fraction} outside (0, 1]")));
    }
    let labels = dataset.labels.as_ref().ok_or_else(|| Error::InvalidConfig("dataset has no labels".into()))?;
    let needed = augmentation_count(dataset.len(), records.len(), fraction, space.is_text());
    if records.is_empty() || needed > records.len() {
        return Err(Error::NotEnoughRecords { needed, available: records.len() });
    }
    let original: BTreeMap<&[Value], usize> = match policy {
        LabelPolicy::Original => dataset.samples.iter().map(|s| s.values.as_slice()).zip(labels.iter().copied()).collect(),
        LabelPolicy::Majority => BTreeMap::new(),
    };
    // predictor label order may differ from the schema's
    let remap: Vec<usize> = f
        .labels()
        .iter()
        .map(|n| {
            dataset
                .schema
                .label_index(n)
                .ok_or_else(|| Error::InvalidConfig(format!("model label {n:?} not in schema")))
        })
        .collect::<Result<_>>()?;

    let mut samples = dataset.samples.clone();
    let mut out_labels = labels.clone();
    for record in &records[..needed] {
        let label = match original.get(record.sample.values.as_slice()) {
            Some(&l) => l,
            None => remap[majority_label(record, f, space)?],
        };
        for variant in [&record.variant_a, &record.variant_b] {
            let mut s = variant.clone();
            s.origin = Origin::Generated;
            s.seed_id = None;
            samples.push(s);
            out_labels.push(label);
        }
    }
    Dataset::new(dataset.schema.clone(), samples, Some(out_labels))
}

/// Fails when any holdout record shares a dedupe key with the augmentation set.
pub fn assert_disjoint(augment: &[DiscriminatoryRecord], holdout: &[DiscriminatoryRecord]) -> Result<()> {
    let keys: HashSet<&[u8]> = augment.iter().map(|r| r.dedupe_key.as_slice()).collect();
    match holdout.iter().find(|r| keys.contains(r.dedupe_key.as_slice())) {
        Some(r) => Err(Error::HoldoutOverlap { key: r.key_str() }),
        None => Ok(()),
    }
}

/// Splits records into an augmentation half and a holdout half such that
/// no dedupe key straddles the two.
pub fn split_records(records: &[DiscriminatoryRecord]) -> (Vec<DiscriminatoryRecord>, Vec<DiscriminatoryRecord>) {
    let mut seen = HashSet::new();
    let unique: Vec<&DiscriminatoryRecord> = records.iter().filter(|r| seen.insert(r.dedupe_key.clone())).collect();
    let half = unique.len().div_ceil(2);
    let a = unique[..half].iter().map(|r| (*r).clone()).collect();
    let b = unique[half..].iter().map(|r| (*r).clone()).collect();
    (a, b)
}

/// Argmax accuracy of any predictor on a labeled dataset.
pub fn accuracy<P: Predictor + ?Sized>(f: &P, dataset: &Dataset) -> Result<f64> {
    let labels = dataset.labels.as_ref().ok_or_else(|| Error::InvalidConfig("dataset has no labels".into()))?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let names = f.labels();
    let mut hit = 0usize;
    for (s, &l) in dataset.samples.iter().zip(labels) {
        if names[f.predict_label(s)?] == dataset.schema.label_names()[l] {
            hit += 1;
        }
    }
    Ok(hit as f64 / labels.len() as f64)
}

/// Fraction of `records` whose sample is still discriminatory under `f`.
pub fn still_discriminatory<P: Predictor + ?Sized>(
    records: &[DiscriminatoryRecord],
    f: &P,
    space: &SearchSpace,
) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut hit = 0usize;
    for r in records {
        if check_discriminatory(&r.sample, f, space)?.is_some() {
            hit += 1;
        }
    }
    Ok(hit as f64 / records.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub fraction: f64,
    pub label_policy: LabelPolicy,
    pub train: TrainConfig,
    pub engine: EngineConfig,
}

/// DSS/SUR of one engine run, with its counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub tsn: u64,
    pub dsn: u64,
    pub elapsed: f64,
    pub dss: Option<f64>,
    pub sur: f64,
}

impl From<&crate::types::RunMetrics> for EngineSummary {
    fn from(m: &crate::types::RunMetrics) -> Self {
        EngineSummary { tsn: m.tsn, dsn: m.dsn, elapsed: m.elapsed, dss: m.dss(), sur: m.sur() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeforeAfter<T> {
    pub before: T,
    pub after: T,
}

/// Before/after comparison around retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub samples_added: usize,
    pub records_used: usize,
    pub holdout_size: usize,
    pub normal_sample_testing_accuracy: BeforeAfter<f64>,
    pub discriminatory_sample_testing_percentage: BeforeAfter<f64>,
    pub dss: BeforeAfter<Option<f64>>,
    pub sur: BeforeAfter<f64>,
    pub engine: BeforeAfter<EngineSummary>,
}

impl FairnessReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Retrains on `train` augmented with `augment`, then compares the old
/// and new models on `test`, on `holdout` and with a fresh engine run.
pub fn retrain_and_evaluate<P: Predictor + ?Sized>(
    train_set: &Dataset,
    test_set: &Dataset,
    augment: &[DiscriminatoryRecord],
    holdout: &[DiscriminatoryRecord],
    before: &P,
    space: &SearchSpace,
    config: &RetrainConfig,
) -> Result<(FairnessReport, TrainedModel)> {
    assert_disjoint(augment, holdout)?;
    let augmented = augment_dataset(train_set, augment, config.fraction, before, space, config.label_policy)?;
    let records_used = augmentation_count(train_set.len(), augment.len(), config.fraction, space.is_text());
    let after = train(&augmented, &config.train)?;

    let run_before = run(train_set, space, before, &config.engine)?;
    let run_after = run(train_set, space, &after, &config.engine)?;
    let eb = EngineSummary::from(&run_before.metrics);
    let ea = EngineSummary::from(&run_after.metrics);
    let report = FairnessReport {
        samples_added: augmented.len() - train_set.len(),
        records_used,
        holdout_size: holdout.len(),
        normal_sample_testing_accuracy: BeforeAfter {
            before: accuracy(before, test_set)?,
            after: accuracy(&after, test_set)?,
        },
        discriminatory_sample_testing_percentage: BeforeAfter {
            before: still_discriminatory(holdout, before, space)?,
            after: still_discriminatory(holdout, &after, space)?,
        },
        dss: BeforeAfter { before: eb.dss, after: ea.dss },
        sur: BeforeAfter { before: eb.sur, after: ea.sur },
        engine: BeforeAfter { before: eb, after: ea },
    };
    Ok((report, after))
}
