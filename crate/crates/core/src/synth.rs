//! Synthetic benchmarks: a classifier with a planted discriminatory region
//! and a Census-shaped tabular generator.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::Result;
use crate::model::{Predictor, QueryCounter};
use crate::types::{FeatureSchema, FeatureSpec, Sample, Value};

/// `sex` (protected) plus three non-sensitive features with domain 0..=7.
pub fn planted_schema() -> FeatureSchema {
    FeatureSchema::tabular(
        vec![
            FeatureSpec::categorical("sex", &["male", "female"]).related_to("sex"),
            FeatureSpec::numeric("tenure", 0, 7, 1),
            FeatureSpec::numeric("grade", 0, 7, 1),
            FeatureSpec::numeric("hours", 0, 7, 1),
        ],
        vec!["no".into(), "yes".into()],
        &["sex"],
    )
    .expect("static schema")
}

/// Classifier whose label depends on `sex` exactly inside the box
/// `tenure >= tenure_min && grade <= grade_max`.
///
/// Outside the box the sex term shrinks geometrically with the distance to
/// the box but always stays below the smallest base margin, so no label flips
/// there. Inside, it dominates every base margin.
#[derive(Debug, Default)]
pub struct PlantedBias {
    pub tenure_min: i64,
    pub grade_max: i64,
    labels: Vec<String>,
    queries: QueryCounter,
}

impl PlantedBias {
    pub fn new(tenure_min: i64, grade_max: i64) -> Self {
        PlantedBias { tenure_min, grade_max, labels: vec!["no".into(), "yes".into()], queries: QueryCounter::default() }
    }

    /// The benchmark configuration: one eighth of the non-protected space.
    pub fn standard() -> Self {
        Self::new(6, 3)
    }

    fn nums(x: &Sample) -> (i64, i64, i64) {
        let n = |i: usize| match x.values[i] {
            Value::Numeric(v) => v,
            _ => 0,
        };
        (n(1), n(2), n(3))
    }

    pub fn in_region(&self, x: &Sample) -> bool {
        let (tenure, grade, _) = Self::nums(x);
        tenure >= self.tenure_min && grade <= self.grade_max
    }

    /// Label the model would give with the sex term removed.
    pub fn blind_label(&self, x: &Sample) -> usize {
        usize::from(Self::base(x) > 0.0)
    }

    fn base(x: &Sample) -> f64 {
        let (_, grade, hours) = Self::nums(x);
        0.25 + 0.5 * (grade + hours - 7) as f64
    }

    fn logit(&self, x: &Sample) -> f64 {
        let (tenure, grade, _) = Self::nums(x);
        let dist = (self.tenure_min - tenure).max(0) + (grade - self.grade_max).max(0);
        let strength = if dist == 0 { 4.0 } else { 0.2 * 0.5f64.powi(dist as i32 - 1) };
        let male = matches!(x.values[0], Value::Category(0));
        Self::base(x) + if male { strength } else { -strength }
    }
}

impl Predictor for PlantedBias {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict_proba(&self, x: &Sample) -> Result<Vec<f64>> {
        self.queries.bump();
        let p = 1.0 / (1.0 + (-self.logit(x)).exp());
        Ok(vec![1.0 - p, p])
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}

/// `n` samples over the planted schema labeled by `f`. With `skewed`,
/// high tenure is rare (about 2.5% of samples fall in the standard box).
pub fn planted_dataset(f: &PlantedBias, n: usize, skewed: bool, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tenure_w: [f64; 8] = if skewed { [25.0, 21.0, 17.0, 14.0, 11.0, 7.0, 3.0, 2.0] } else { [1.0; 8] };
    let tenure = WeightedIndex::new(tenure_w).expect("positive weights");
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = Sample::new(vec![
            Value::Category(rng.gen_range(0..2)),
            Value::Numeric(tenure.sample(&mut rng) as i64),
            Value::Numeric(rng.gen_range(0..8)),
            Value::Numeric(rng.gen_range(0..8)),
        ]);
        labels.push(f.predict_label(&x).expect("infallible"));
        samples.push(x);
    }
    Dataset::new(planted_schema(), samples, Some(labels)).expect("valid by construction")
}

/// Thirteen features with the value ranges of the common preprocessed
/// Census income data; `sex` and `race` are protected-related.
pub fn census_schema() -> FeatureSchema {
    FeatureSchema::tabular(
        vec![
            FeatureSpec::numeric("age", 1, 9, 1).related_to("age"),
            FeatureSpec::numeric("workclass", 0, 7, 1),
            FeatureSpec::numeric("education", 0, 15, 1),
            FeatureSpec::numeric("education_num", 1, 16, 1),
            FeatureSpec::numeric("marital_status", 0, 6, 1),
            FeatureSpec::numeric("occupation", 0, 13, 1),
            FeatureSpec::numeric("relationship", 0, 5, 1),
            FeatureSpec::numeric("race", 0, 4, 1).related_to("race"),
            FeatureSpec::categorical("sex", &["female", "male"]).related_to("sex"),
            FeatureSpec::numeric("capital_gain", 0, 99, 1),
            FeatureSpec::numeric("capital_loss", 0, 39, 1),
            FeatureSpec::numeric("hours_per_week", 0, 99, 1),
            FeatureSpec::numeric("native_country", 0, 39, 1),
        ],
        vec!["<=50K".into(), ">50K".into()],
        &["sex"],
    )
    .expect("static schema")
}

/// Census-shaped samples whose labels come from a noisy linear rule with an
/// extra sex term for married, older, highly educated people.
pub fn census_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = census_schema();
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let age = rng.gen_range(1..=9i64);
        let education_num = rng.gen_range(1..=16i64);
        let marital = rng.gen_range(0..=6i64);
        let male = rng.gen_bool(0.5);
        let gain = if rng.gen_bool(0.1) { rng.gen_range(1..=99i64) } else { 0 };
        let hours = (40 + (rng.gen_range(-20..=20i64))).clamp(0, 99);
        let x = Sample::new(vec![
            Value::Numeric(age),
            Value::Numeric(rng.gen_range(0..=7)),
            Value::Numeric((education_num - 1).clamp(0, 15)),
            Value::Numeric(education_num),
            Value::Numeric(marital),
            Value::Numeric(rng.gen_range(0..=13)),
            Value::Numeric(rng.gen_range(0..=5)),
            Value::Numeric(rng.gen_range(0..=4)),
            Value::Category(usize::from(male)),
            Value::Numeric(gain),
            Value::Numeric(if rng.gen_bool(0.05) { rng.gen_range(1..=39) } else { 0 }),
            Value::Numeric(hours),
            Value::Numeric(rng.gen_range(0..=39)),
        ]);
        let mut score = 0.35 * (education_num - 10) as f64 + 0.4 * (age - 4) as f64 + 0.05 * (hours - 40) as f64
            + 0.08 * gain as f64
            - 0.5;
        if marital == 2 && age >= 5 && education_num >= 9 {
            score += if male { 2.5 } else { -2.5 };
        }
        score += rng.gen_range(-0.5..0.5);
        labels.push(usize::from(score > 0.0));
        samples.push(x);
    }
    Dataset::new(schema, samples, Some(labels)).expect("valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::argmax;

    #[test]
    fn planted_region_is_exact() {
        let f = PlantedBias::standard();
        for t in 0..8 {
            for g in 0..8 {
                for h in 0..8 {
                    let x = |s| Sample::new(vec![Value::Category(s), Value::Numeric(t), Value::Numeric(g), Value::Numeric(h)]);
                    let (a, b) = (x(0), x(1));
                    let differ = argmax(&f.predict_proba(&a).unwrap()) != argmax(&f.predict_proba(&b).unwrap());
                    assert_eq!(differ, f.in_region(&a), "{t} {g} {h}");
                }
            }
        }
    }

    #[test]
    fn skewed_data_rarely_hits_region() {
        let f = PlantedBias::standard();
        let ds = planted_dataset(&f, 4000, true, 1);
        let frac = ds.samples.iter().filter(|x| f.in_region(x)).count() as f64 / 4000.0;
        assert!((0.015..0.04).contains(&frac), "{frac}");
    }

    #[test]
    fn census_labels_are_mixed() {
        let ds = census_dataset(2000, 3);
        let pos = ds.labels.as_ref().unwrap().iter().filter(|&&l| l == 1).count();
        assert!((300..1700).contains(&pos), "{pos}");
    }
}
