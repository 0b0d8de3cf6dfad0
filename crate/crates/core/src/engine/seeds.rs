//! Seed selection and initial populations.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::explain::{explain_prediction, ExplainerConfig};
use crate::model::Predictor;
use crate::types::{Individual, Origin, Population, Sample, SeedScope, Value};

use super::operators::TokenHistory;
use super::space::SearchSpace;

/// A dataset sample whose sensitive position ranks within epsilon.
#[derive(Clone, Debug, PartialEq)]
pub struct Seed {
    pub sample: Sample,
    /// Sensitive position with the best rank.
    pub position: usize,
    pub rank: usize,
}

/// Best (smallest) explanation rank over the sensitive positions of `x`,
/// or `None` when `x` has no sensitive position.
pub fn best_sensitive_rank<P: Predictor + ?Sized>(
    x: &Sample,
    f: &P,
    space: &SearchSpace,
    config: &ExplainerConfig,
    stream: u64,
) -> Result<Option<(usize, usize)>> {
    let positions = space.sensitive_positions(x);
    if positions.is_empty() {
        return Ok(None);
    }
    let (_, e) = explain_prediction(x, f, space.schema(), config, stream)?;
    let mut best: Option<(usize, usize)> = None;
    for (pos, _) in positions {
        if let Some(r) = e.rank_of(pos) {
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((pos, r));
            }
        }
    }
    Ok(best)
}

fn pool(workers: usize) -> Option<rayon::ThreadPool> {
    (workers > 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool"))
}

/// Scans `dataset` in order and keeps samples with a sensitive position
/// ranked `<= epsilon`, stopping after `seed_num` seeds. Explanations for
/// sample `i` use RNG stream `i`, so results do not depend on `workers`.
pub fn select_seeds<P: Predictor + ?Sized>(
    dataset: &Dataset,
    space: &SearchSpace,
    f: &P,
    config: &ExplainerConfig,
    epsilon: usize,
    seed_num: usize,
    workers: usize,
) -> Result<Vec<Seed>> {
    if !dataset.samples.iter().any(|x| !space.sensitive_positions(x).is_empty()) {
        return Err(Error::NoSensitiveFeature);
    }
    let mut seeds = Vec::new();
    let chunk = workers.max(1) * 8;
    let threads = pool(workers);
    let mut start = 0;
    while start < dataset.len() && seeds.len() < seed_num {
        let end = (start + chunk).min(dataset.len());
        let job = |i: usize| best_sensitive_rank(&dataset.samples[i], f, space, config, i as u64);
        let ranks: Vec<Result<Option<(usize, usize)>>> = match &threads {
            Some(tp) => tp.install(|| (start..end).into_par_iter().map(job).collect()),
            None => (start..end).map(job).collect(),
        };
        for (i, r) in (start..end).zip(ranks) {
            if seeds.len() >= seed_num {
                break;
            }
            if let Some((position, rank)) = r? {
                if rank <= epsilon {
                    let mut sample = dataset.samples[i].clone();
                    sample.origin = Origin::Seed;
                    sample.seed_id = Some(i as u64);
                    seeds.push(Seed { sample, position, rank });
                }
            }
        }
        start = end;
    }
    if seeds.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    Ok(seeds)
}

/// Rank threshold admitting roughly the best fifth of `samples`: the
/// `ceil(0.2 n)`-th smallest best-sensitive-rank (the 20th of 100).
pub fn auto_epsilon<P: Predictor + ?Sized>(
    samples: &[Sample],
    space: &SearchSpace,
    f: &P,
    config: &ExplainerConfig,
) -> Result<usize> {
    let mut ranks = Vec::new();
    for (i, x) in samples.iter().enumerate() {
        if let Some((_, r)) = best_sensitive_rank(x, f, space, config, i as u64)? {
            ranks.push(r);
        }
    }
    epsilon_from_ranks(ranks)
}

pub fn epsilon_from_ranks(mut ranks: Vec<usize>) -> Result<usize> {
    if ranks.is_empty() {
        return Err(Error::NoSensitiveFeature);
    }
    ranks.sort_unstable();
    let idx = ((ranks.len() as f64 * 0.2).ceil() as usize).clamp(1, ranks.len()) - 1;
    Ok(ranks[idx])
}

/// Initial populations plus, for text, the per-population token history.
pub struct InitialPopulations {
    pub populations: Vec<Population>,
    pub histories: Vec<TokenHistory>,
    /// Synonym lookups that failed (out-of-vocabulary words).
    pub oov_skips: usize,
}

/// Tabular: one population holding every seed. Text: one population per
/// seed with `k` extra members, each replacing one randomly chosen
/// non-sensitive token by a synonym.
pub fn init_population<R: Rng>(
    seeds: &[Seed],
    space: &SearchSpace,
    k: usize,
    rng: &mut R,
) -> Result<InitialPopulations> {
    if seeds.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    if !space.is_text() {
        let members = seeds.iter().map(|s| Individual::with_focus(s.sample.clone(), s.position)).collect();
        return Ok(InitialPopulations {
            populations: vec![Population::new(members, SeedScope::AllSeeds)?],
            histories: vec![TokenHistory::default()],
            oov_skips: 0,
        });
    }

    let mut populations = Vec::with_capacity(seeds.len());
    let mut histories = Vec::with_capacity(seeds.len());
    let mut oov_skips = 0;
    for seed in seeds {
        let x = &seed.sample;
        let seed_id = x.seed_id.unwrap_or(0);
        let mut history = TokenHistory::default();
        for (i, v) in x.values.iter().enumerate() {
            if let Value::Token(t) = v {
                history.record(i, t);
            }
        }
        let mut members = vec![Individual::with_focus(x.clone(), seed.position)];
        let mut candidates: Vec<usize> = (0..x.len()).filter(|&i| !space.is_sensitive_position(x, i)).collect();
        candidates.shuffle(rng);
        // Positions are revisited round-robin when there are fewer than k.
        let mut tried = vec![0usize; x.len()];
        let mut attempts = 0;
        let mut cursor = 0;
        while members.len() < k + 1 && !candidates.is_empty() && attempts < k * 4 {
            attempts += 1;
            let pos = candidates[cursor % candidates.len()];
            cursor += 1;
            let word = x.token(pos).unwrap_or_default().to_string();
            let Some(pool) = space.synonym_pool(&word) else {
                oov_skips += 1;
                continue;
            };
            let Some(pick) = pool.get(tried[pos]).cloned() else { continue };
            tried[pos] += 1;
            history.record(pos, &pick);
            let mut variant = x.replaced(pos, Value::Token(pick));
            variant.origin = Origin::Generated;
            members.push(Individual::with_focus(variant, seed.position));
        }
        populations.push(Population::new(members, SeedScope::SingleSeed { seed_id })?);
        histories.push(history);
    }
    Ok(InitialPopulations { populations, histories, oov_skips })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_order_statistic() {
        assert_eq!(epsilon_from_ranks(vec![1; 100]).unwrap(), 1);
        let mut ranks: Vec<usize> = (1..=100).collect();
        ranks.reverse();
        assert_eq!(epsilon_from_ranks(ranks).unwrap(), 20);
        assert!(matches!(epsilon_from_ranks(vec![]), Err(Error::NoSensitiveFeature)));
        assert_eq!(epsilon_from_ranks(vec![3]).unwrap(), 3);
    }
}
