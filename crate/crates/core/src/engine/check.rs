//! Fitness and the discriminatory check.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{argmax, Predictor};
use crate::types::{dedupe_key, DiscriminatoryRecord, Sample, Value};

use super::space::SearchSpace;

/// Model outputs for every protected variant at one position.
struct VariantProbs {
    values: Vec<Value>,
    probs: Vec<Vec<f64>>,
}

fn variant_probs<P: Predictor + ?Sized>(
    x: &Sample,
    position: usize,
    attr: &str,
    f: &P,
    space: &SearchSpace,
) -> Result<VariantProbs> {
    let values = space.variants(x, position, attr)?;
    let mut probs = Vec::with_capacity(values.len());
    for v in &values {
        probs.push(f.predict_proba(&x.replaced(position, v.clone()))?);
    }
    Ok(VariantProbs { values, probs })
}

/// `|Prob(x', l) - Prob(x'', l)|` for the variant pair that maximises the
/// gap, together with the two probabilities (in variant order). With two
/// variants this is exactly the pair gap.
pub fn fitness_from_probs(probs: &[Vec<f64>], target: usize) -> (f64, (f64, f64)) {
    if probs.len() < 2 {
        let p = probs.first().map_or(0.0, |p| p[target]);
        return (0.0, (p, p));
    }
    let (mut hi, mut lo) = (0, 0);
    for (i, p) in probs.iter().enumerate() {
        if p[target] > probs[hi][target] {
            hi = i;
        }
        if p[target] < probs[lo][target] {
            lo = i;
        }
    }
    if hi == lo {
        return (0.0, (probs[0][target], probs[1][target]));
    }
    let (a, b) = if hi < lo { (hi, lo) } else { (lo, hi) };
    let (pa, pb) = (probs[a][target], probs[b][target]);
    ((pa - pb).abs(), (pa, pb))
}

fn first_differing_pair(labels: &[usize]) -> Option<(usize, usize)> {
    let first = *labels.first()?;
    labels.iter().position(|&l| l != first).map(|j| (0, j))
}

fn build_record<P: Predictor + ?Sized>(
    x: &Sample,
    position: usize,
    vp: &VariantProbs,
    (a, b): (usize, usize),
    f: &P,
    space: &SearchSpace,
) -> DiscriminatoryRecord {
    let labels = f.labels();
    DiscriminatoryRecord {
        sample: x.clone(),
        sensitive_index: position,
        variant_a: x.replaced(position, vp.values[a].clone()),
        variant_b: x.replaced(position, vp.values[b].clone()),
        label_a: labels[argmax(&vp.probs[a])].clone(),
        label_b: labels[argmax(&vp.probs[b])].clone(),
        dedupe_key: dedupe_key(x, &space.protected_mask(x)),
    }
}

/// Fitness of `x` against the model's own label for `x`, using the
/// sensitive position `focus` (or the first sensitive position).
pub fn fitness<P: Predictor + ?Sized>(
    x: &Sample,
    focus: Option<usize>,
    f: &P,
    space: &SearchSpace,
) -> Result<(f64, (f64, f64))> {
    Ok(evaluate_inner(x, focus, f, space, false)?.0)
}

/// Returns a record for the first sensitive position whose protected
/// variants get different labels, trying positions in index order.
pub fn check_discriminatory<P: Predictor + ?Sized>(
    x: &Sample,
    f: &P,
    space: &SearchSpace,
) -> Result<Option<DiscriminatoryRecord>> {
    for (pos, attr) in space.sensitive_positions(x) {
        let vp = match variant_probs(x, pos, &attr, f, space) {
            Ok(vp) => vp,
            Err(Error::NoPairAvailable { .. }) => continue,
            Err(e) => return Err(e),
        };
        let labels: Vec<usize> = vp.probs.iter().map(|p| argmax(p)).collect();
        if let Some(pair) = first_differing_pair(&labels) {
            return Ok(Some(build_record(x, pos, &vp, pair, f, space)));
        }
    }
    Ok(None)
}

/// Result of checking one candidate.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub fitness: f64,
    pub witness: (f64, f64),
    pub record: Option<DiscriminatoryRecord>,
}

/// Check and fitness in one pass, sharing variant queries between them.
pub fn evaluate<P: Predictor + ?Sized>(
    x: &Sample,
    focus: Option<usize>,
    f: &P,
    space: &SearchSpace,
) -> Result<Evaluation> {
    let ((fitness, witness), record) = evaluate_inner(x, focus, f, space, true)?;
    Ok(Evaluation { fitness, witness, record })
}

type Inner = ((f64, (f64, f64)), Option<DiscriminatoryRecord>);

fn evaluate_inner<P: Predictor + ?Sized>(
    x: &Sample,
    focus: Option<usize>,
    f: &P,
    space: &SearchSpace,
    check: bool,
) -> Result<Inner> {
    let positions = space.sensitive_positions(x);
    let mut cache: HashMap<usize, VariantProbs> = HashMap::new();
    let mut record = None;
    if check {
        for (pos, attr) in &positions {
            let vp = match variant_probs(x, *pos, attr, f, space) {
                Ok(vp) => vp,
                Err(Error::NoPairAvailable { .. }) => continue,
                Err(e) => return Err(e),
            };
            let labels: Vec<usize> = vp.probs.iter().map(|p| argmax(p)).collect();
            let found = first_differing_pair(&labels);
            if let Some(pair) = found {
                record = Some(build_record(x, *pos, &vp, pair, f, space));
            }
            cache.insert(*pos, vp);
            if record.is_some() {
                break;
            }
        }
    }

    let chosen = focus
        .and_then(|fp| positions.iter().find(|(p, _)| *p == fp))
        .or_else(|| positions.first());
    let Some((pos, attr)) = chosen else {
        return Ok(((0.0, (0.0, 0.0)), record));
    };
    if !cache.contains_key(pos) {
        match variant_probs(x, *pos, attr, f, space) {
            Ok(vp) => {
                cache.insert(*pos, vp);
            }
            Err(Error::NoPairAvailable { .. }) => return Ok(((0.0, (0.0, 0.0)), record)),
            Err(e) => return Err(e),
        }
    }
    let vp = &cache[pos];
    let own = match vp.values.iter().position(|v| *v == x.values[*pos]) {
        Some(i) => vp.probs[i].clone(),
        None => f.predict_proba(x)?,
    };
    let target = argmax(&own);
    Ok((fitness_from_probs(&vp.probs, target), record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_gap() {
        let (fit, w) = fitness_from_probs(&[vec![0.2, 0.8], vec![0.4, 0.6]], 1);
        assert!((fit - 0.2).abs() < 1e-12);
        assert_eq!(w, (0.8, 0.6));
        let (fit, _) = fitness_from_probs(&[vec![0.1, 0.9], vec![0.9, 0.1]], 1);
        assert!((fit - 0.8).abs() < 1e-12);
        let (fit, _) = fitness_from_probs(&[vec![0.5, 0.5], vec![0.5, 0.5]], 0);
        assert_eq!(fit, 0.0);
    }

    #[test]
    fn differing_pair_is_first() {
        assert_eq!(first_differing_pair(&[1, 1, 0, 0]), Some((0, 2)));
        assert_eq!(first_differing_pair(&[1, 1]), None);
    }
}
