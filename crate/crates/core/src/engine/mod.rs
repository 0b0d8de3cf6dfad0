//! The search: seed selection, the generational loop and a random-search
//! baseline sharing the same budget accounting.

mod check;
mod operators;
mod seeds;
mod space;

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::explain::ExplainerConfig;
use crate::model::Predictor;
use crate::types::{DiscriminatoryRecord, Individual, Origin, Population, RunMetrics, Sample, Value};

pub use check::{check_discriminatory, evaluate, fitness, fitness_from_probs, Evaluation};
pub use operators::{crossover, mutate, select, selection_probabilities, swap_fragment, TokenHistory};
pub use seeds::{auto_epsilon, best_sensitive_rank, epsilon_from_ranks, init_population, select_seeds, InitialPopulations, Seed};
pub use space::{protected_values, SearchSpace, TextKnowledge, MAX_PROTECTED_VALUES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Ga,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Seed-selection rank threshold.
    pub epsilon: usize,
    pub seed_num: usize,
    /// Generation budget (`l`).
    pub max_generations: Option<usize>,
    pub time_budget: Option<f64>,
    /// Stop once this many discriminatory checks have run.
    pub tsn_budget: Option<u64>,
    pub cr: f64,
    pub mr: f64,
    /// Text population fan-out.
    pub k: usize,
    pub rng_seed: u64,
    pub mode: SearchMode,
    pub workers: usize,
    pub explainer: ExplainerConfig,
}

impl EngineConfig {
    /// Tabular defaults: cr 0.9, mr 0.05.
    pub fn tabular(epsilon: usize) -> Self {
        EngineConfig {
            epsilon,
            seed_num: 1000,
            max_generations: None,
            time_budget: Some(60.0),
            tsn_budget: None,
            cr: 0.9,
            mr: 0.05,
            k: 20,
            rng_seed: 0,
            mode: SearchMode::Ga,
            workers: 1,
            explainer: ExplainerConfig::default(),
        }
    }

    /// Text defaults: cr 0.5, mr 0.05, 20 generations.
    pub fn text(epsilon: usize) -> Self {
        EngineConfig { cr: 0.5, max_generations: Some(20), time_budget: None, ..Self::tabular(epsilon) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon == 0 {
            return Err(Error::InvalidConfig("epsilon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cr) || !(0.0..=1.0).contains(&self.mr) {
            return Err(Error::InvalidConfig("cr and mr must lie in [0, 1]".into()));
        }
        if self.max_generations.is_none() && self.time_budget.is_none() && self.tsn_budget.is_none() {
            return Err(Error::InvalidConfig("at least one of generations, time or TSN budget must be set".into()));
        }
        if matches!(self.time_budget, Some(t) if !(t >= 0.0)) {
            return Err(Error::InvalidConfig("time budget must be >= 0".into()));
        }
        if self.seed_num == 0 {
            return Err(Error::InvalidConfig("seed_num must be > 0".into()));
        }
        Ok(())
    }
}

/// Counters after one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub tsn: u64,
    pub dsn: u64,
}

pub struct RunOutcome {
    pub records: Vec<DiscriminatoryRecord>,
    pub metrics: RunMetrics,
    pub seeds: Vec<Seed>,
    pub history: Vec<GenerationStats>,
}

/// Accumulates unique findings.
#[derive(Default)]
pub struct DisSet {
    keys: HashSet<Vec<u8>>,
    records: Vec<DiscriminatoryRecord>,
}

impl DisSet {
    /// Inserts unless the dedupe key is already present.
    pub fn insert(&mut self, record: DiscriminatoryRecord) -> bool {
        if self.keys.contains(&record.dedupe_key) {
            return false;
        }
        self.keys.insert(record.dedupe_key.clone());
        self.records.push(record);
        true
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<DiscriminatoryRecord> {
        self.records
    }
}

struct Evaluator<'a, P: ?Sized> {
    f: &'a P,
    space: &'a SearchSpace,
    pool: Option<rayon::ThreadPool>,
}

impl<P: Predictor + ?Sized> Evaluator<'_, P> {
    fn evaluate_all(&self, members: &[Individual]) -> Result<Vec<Evaluation>> {
        let job = |m: &Individual| evaluate(&m.sample, m.focus, self.f, self.space);
        match &self.pool {
            Some(tp) => tp.install(|| members.par_iter().map(job).collect()),
            None => members.iter().map(job).collect(),
        }
    }
}

/// Random perturbation of a text seed: each non-sensitive token is swapped
/// for one of its synonyms with probability one half.
fn random_text_member<R: Rng>(seed: &Sample, space: &SearchSpace, rng: &mut R) -> Sample {
    let mut x = seed.clone();
    for pos in 0..x.len() {
        if space.is_sensitive_position(seed, pos) || !rng.gen_bool(0.5) {
            continue;
        }
        if let Some(pool) = seed.token(pos).and_then(|w| space.synonym_pool(w)) {
            if !pool.is_empty() {
                x.values[pos] = Value::Token(pool[rng.gen_range(0..pool.len())].clone());
            }
        }
    }
    x.origin = Origin::Generated;
    x
}

/// Runs seed selection followed by the generational search.
///
/// Every member produced by a generation is checked once (one TSN unit)
/// and new findings are kept by dedupe key. The loop stops when any
/// configured budget is exhausted; the TSN budget is honoured exactly.
pub fn run<P: Predictor + ?Sized>(
    dataset: &Dataset,
    space: &SearchSpace,
    f: &P,
    config: &EngineConfig,
) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let seeds = select_seeds(dataset, space, f, &config.explainer, config.epsilon, config.seed_num, config.workers)?;
    let outcome = search_from_seeds(seeds, space, f, config, start)?;
    Ok(outcome)
}

/// The optimisation loop alone, starting from already-selected seeds.
pub fn search_from_seeds<P: Predictor + ?Sized>(
    seeds: Vec<Seed>,
    space: &SearchSpace,
    f: &P,
    config: &EngineConfig,
    start: Instant,
) -> Result<RunOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let init = init_population(&seeds, space, config.k, &mut rng)?;
    let mut populations = init.populations;
    let mut histories = init.histories;
    let evaluator = Evaluator {
        f,
        space,
        pool: (config.workers > 1)
            .then(|| rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().expect("thread pool")),
    };

    // Fitness of the initial members drives the first selection; these
    // evaluations are not discriminatory checks.
    if config.mode == SearchMode::Ga {
        for pop in populations.iter_mut() {
            let evals = evaluator.evaluate_all(&pop.members)?;
            for (m, e) in pop.members.iter_mut().zip(evals) {
                m.set_witness(e.witness.0, e.witness.1);
                m.fitness = Some(e.fitness);
            }
        }
    }

    let mut found = DisSet::default();
    let mut tsn: u64 = 0;
    let mut history = Vec::new();
    let mut generation = 0usize;
    let out_of_time = |start: &Instant| config.time_budget.is_some_and(|t| start.elapsed().as_secs_f64() >= t);
    let tsn_left = |tsn: u64| config.tsn_budget.map_or(u64::MAX, |b| b.saturating_sub(tsn));

    'outer: loop {
        if config.max_generations.is_some_and(|g| generation >= g) || tsn_left(tsn) == 0 || out_of_time(&start) {
            break;
        }
        for (pi, pop) in populations.iter_mut().enumerate() {
            if tsn_left(tsn) == 0 || out_of_time(&start) {
                history.push(GenerationStats { generation, tsn, dsn: found.len() as u64 });
                break 'outer;
            }
            match config.mode {
                SearchMode::Ga => {
                    let mut next = select(pop, &mut rng);
                    crossover(&mut next, config.cr, &mut rng);
                    mutate(&mut next, config.mr, space, &mut histories[pi], &mut rng);
                    *pop = next;
                }
                SearchMode::Random => {
                    let seed_sample = pop.members[0].sample.clone();
                    for m in pop.members.iter_mut() {
                        let sample = if space.is_text() {
                            let mut s = random_text_member(&seed_sample, space, &mut rng);
                            s.seed_id = seed_sample.seed_id;
                            s
                        } else {
                            let mut s = space.random_tabular(&mut rng);
                            s.origin = Origin::Generated;
                            s
                        };
                        *m = Individual { sample, fitness: None, witness: None, focus: m.focus };
                    }
                }
            }
            pop.generation = generation + 1;

            let budget = tsn_left(tsn).min(pop.len() as u64) as usize;
            let evals = evaluator.evaluate_all(&pop.members[..budget])?;
            tsn += budget as u64;
            for (m, e) in pop.members.iter_mut().zip(evals) {
                m.set_witness(e.witness.0, e.witness.1);
                m.fitness = Some(e.fitness);
                if let Some(record) = e.record {
                    found.insert(record);
                }
            }
        }
        generation += 1;
        history.push(GenerationStats { generation, tsn, dsn: found.len() as u64 });
    }

    let metrics = RunMetrics { tsn, dsn: found.len() as u64, elapsed: start.elapsed().as_secs_f64() };
    Ok(RunOutcome { records: found.into_records(), metrics, seeds, history })
}

/// Convenience for tests and the CLI: number of sensitive positions across `dataset`.
pub fn count_sensitive(dataset: &Dataset, space: &SearchSpace) -> usize {
    dataset.samples.iter().map(|x| space.sensitive_positions(x).len()).sum()
}

/// All members of a population must still validate against the schema.
pub fn population_is_valid(pop: &Population, space: &SearchSpace) -> bool {
    pop.members.iter().all(|m| space.schema().validate(&m.sample).is_ok())
}
