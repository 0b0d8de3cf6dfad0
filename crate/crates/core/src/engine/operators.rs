//! Selection, crossover and mutation.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::types::{Population, Value};

use super::space::SearchSpace;

/// Selection probabilities `fit(x) / sumFit`; uniform when every fitness is zero.
pub fn selection_probabilities(pop: &Population) -> Vec<f64> {
    let fits: Vec<f64> = pop.members.iter().map(|m| m.fitness.unwrap_or(0.0).max(0.0)).collect();
    let sum: f64 = fits.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        fits.into_iter().map(|f| f / sum).collect()
    } else {
        vec![1.0 / fits.len() as f64; fits.len()]
    }
}

/// Roulette-wheel resampling with replacement; size is preserved.
pub fn select<R: Rng>(pop: &Population, rng: &mut R) -> Population {
    let probs = selection_probabilities(pop);
    let wheel = WeightedIndex::new(&probs).expect("nonempty, nonnegative, positive-sum weights");
    let members = (0..pop.len()).map(|_| pop.members[wheel.sample(rng)].clone()).collect();
    Population { members, generation: pop.generation, scope: pop.scope }
}

/// Exchanges positions `i..=j` between two value vectors.
pub fn swap_fragment(a: &mut [Value], b: &mut [Value], i: usize, j: usize) {
    a[i..=j].swap_with_slice(&mut b[i..=j]);
}

/// Each member, with probability `cr`, swaps a random contiguous fragment
/// with a random partner.
pub fn crossover<R: Rng>(pop: &mut Population, cr: f64, rng: &mut R) {
    let n = pop.len();
    if n < 2 || cr <= 0.0 {
        return;
    }
    for m in 0..n {
        if !rng.gen_bool(cr.min(1.0)) {
            continue;
        }
        let mut partner = rng.gen_range(0..n - 1);
        if partner >= m {
            partner += 1;
        }
        let len = pop.members[m].sample.len().min(pop.members[partner].sample.len());
        if len == 0 {
            continue;
        }
        let (mut i, mut j) = (rng.gen_range(0..len), rng.gen_range(0..len));
        if i > j {
            std::mem::swap(&mut i, &mut j);
        }
        let (lo, hi) = (m.min(partner), m.max(partner));
        let (left, right) = pop.members.split_at_mut(hi);
        let (x, y) = (&mut left[lo], &mut right[0]);
        swap_fragment(&mut x.sample.values, &mut y.sample.values, i, j);
        x.clear_fitness();
        y.clear_fitness();
    }
}

/// Words already tried at each token position of one text population.
#[derive(Clone, Debug, Default)]
pub struct TokenHistory {
    used: Vec<BTreeSet<String>>,
}

impl TokenHistory {
    pub fn record(&mut self, position: usize, word: &str) {
        if self.used.len() <= position {
            self.used.resize(position + 1, BTreeSet::new());
        }
        self.used[position].insert(word.to_string());
    }

    pub fn contains(&self, position: usize, word: &str) -> bool {
        self.used.get(position).is_some_and(|s| s.contains(word))
    }
}

/// Each non-sensitive position changes with probability `mr`.
pub fn mutate<R: Rng>(pop: &mut Population, mr: f64, space: &SearchSpace, history: &mut TokenHistory, rng: &mut R) {
    if mr <= 0.0 {
        return;
    }
    for member in pop.members.iter_mut() {
        let mut changed = false;
        for pos in 0..member.sample.len() {
            if space.is_sensitive_position(&member.sample, pos) || !rng.gen_bool(mr.min(1.0)) {
                continue;
            }
            let current = member.sample.values[pos].clone();
            let next = match &current {
                Value::Token(word) => {
                    let Some(pool) = space.synonym_pool(word) else { continue };
                    if pool.is_empty() {
                        continue;
                    }
                    let pick = pool
                        .iter()
                        .find(|w| !history.contains(pos, w))
                        .cloned()
                        .unwrap_or_else(|| pool[rng.gen_range(0..pool.len())].clone());
                    history.record(pos, &pick);
                    Value::Token(pick)
                }
                other => space.mutate_tabular(pos, other, rng),
            };
            if next != current {
                member.sample.values[pos] = next;
                changed = true;
            }
        }
        if changed {
            member.sample.origin = crate::types::Origin::Generated;
            member.clear_fitness();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Individual, Sample, SeedScope};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop_with_fitness(fits: &[f64]) -> Population {
        let members = fits
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut ind = Individual::new(Sample::new(vec![Value::Numeric(i as i64)]));
                ind.fitness = Some(*f);
                ind
            })
            .collect();
        Population::new(members, SeedScope::AllSeeds).unwrap()
    }

    #[test]
    fn delta_normalisation() {
        assert_eq!(selection_probabilities(&pop_with_fitness(&[1.0, 3.0])), vec![0.25, 0.75]);
        assert_eq!(selection_probabilities(&pop_with_fitness(&[0.2, 0.2, 0.2, 0.2])), vec![0.25; 4]);
        assert_eq!(selection_probabilities(&pop_with_fitness(&[0.0, 0.0])), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_fitness_selection_keeps_size() {
        let pop = pop_with_fitness(&[0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select(&pop, &mut rng).len(), 3);
    }

    #[test]
    fn roulette_frequencies() {
        let pop = pop_with_fitness(&[1.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ones = 0;
        let rounds = 4000;
        for _ in 0..rounds {
            let s = select(&pop, &mut rng);
            ones += s.members.iter().filter(|m| m.sample.values[0] == Value::Numeric(1)).count();
        }
        let frac = ones as f64 / (2 * rounds) as f64;
        assert!((frac - 0.75).abs() < 0.02, "{frac}");
    }

    #[test]
    fn fragment_swap_matches_worked_example() {
        // job, education-num, married, children, hours
        let mut s1 = vec![
            Value::Token("lawyer".into()),
            Value::Token("1".into()),
            Value::Token("yes".into()),
            Value::Token("1".into()),
            Value::Token("36h".into()),
        ];
        let mut s2 = vec![
            Value::Token("teacher".into()),
            Value::Token("3".into()),
            Value::Token("no".into()),
            Value::Token("2".into()),
            Value::Token("40h".into()),
        ];
        swap_fragment(&mut s1, &mut s2, 0, 1);
        assert_eq!(s1[0], Value::Token("teacher".into()));
        assert_eq!(s1[1], Value::Token("3".into()));
        assert_eq!(s2[0], Value::Token("lawyer".into()));
        assert_eq!(s2[1], Value::Token("1".into()));
        assert_eq!(s1[2], Value::Token("yes".into()));
    }

    #[test]
    fn zero_rates_are_identity() {
        let schema = crate::types::FeatureSchema::tabular(
            vec![crate::types::FeatureSpec::numeric("a", 0, 9, 1), crate::types::FeatureSpec::numeric("b", 0, 9, 1)],
            vec!["x".into(), "y".into()],
            &[],
        )
        .unwrap();
        let space = SearchSpace::tabular(schema).unwrap();
        let members = (0..5)
            .map(|i| Individual::new(Sample::new(vec![Value::Numeric(i), Value::Numeric(9 - i)])))
            .collect();
        let original = Population::new(members, SeedScope::AllSeeds).unwrap();
        let mut pop = original.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        crossover(&mut pop, 0.0, &mut rng);
        mutate(&mut pop, 0.0, &space, &mut TokenHistory::default(), &mut rng);
        assert_eq!(pop, original);
    }
}
