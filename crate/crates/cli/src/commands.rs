use std::collections::HashSet;
use std::fmt;
use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use fairprobe::data::{save_schema, save_tabular};
use fairprobe::engine::{auto_epsilon, run, EngineConfig, SearchMode};
use fairprobe::explain::{explain_prediction, ExplainerConfig};
use fairprobe::metrics::{compare_runs, dss_or_elapsed, pca_2d, record_rows, write_comparison_json, write_diversity_csv};
use fairprobe::model::{train as train_model, ModelKind, Predictor, TrainConfig, TrainedModel};
use fairprobe::records::{load_records, save_records, verify_all};
use fairprobe::retrain::{augmentation_count, retrain_and_evaluate, split_records, LabelPolicy, RetrainConfig};
use fairprobe::synth::{census_dataset, planted_dataset, PlantedBias};
use fairprobe::{DiscriminatoryRecord, Error};

use crate::setup::{absolute, build_space, load_dataset, load_predictor, schema_with, RunConfig};
use crate::{
    CompareArgs, EngineArgs, ExplainArgs, LabelChoice, ModeChoice, ModelChoice, ReportArgs, RetrainArgs, ServeArgs,
    SourceArgs, SynthArgs, SynthKind, TestArgs, TrainArgs, VerifyArgs,
};

/// Some records of a run did not re-verify.
#[derive(Debug)]
pub struct VerifyFailed {
    pub failed: usize,
    pub total: usize,
}

impl VerifyFailed {
    pub fn exit_code(&self) -> u8 {
        3
    }
}

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} records failed the re-check", self.failed, self.total)
    }
}

impl std::error::Error for VerifyFailed {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| config_error(format!("{flag} is required")))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(Error::from)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let schema = schema_with(&a.schema, &[])?;
    let dataset = load_dataset(&a.data, &schema)?;
    let mut cfg = match a.model {
        ModelChoice::Logistic => TrainConfig::logistic(a.seed),
        ModelChoice::Mlp => TrainConfig::mlp(a.seed),
        ModelChoice::Bow => TrainConfig::text_bow(a.seed),
    };
    if let ModelKind::Mlp { layers, neurons } = &mut cfg.model_kind {
        *layers = a.layers.unwrap_or(*layers);
        *neurons = a.neurons.unwrap_or(*neurons);
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
    let model = train_model(&dataset, &cfg)?;
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("trained {:?}: training accuracy {:.4}", cfg.model_kind, model.training_accuracy);
    Ok(())
}

enum Epsilon {
    Auto,
    Given,
}

fn engine_from(args: &EngineArgs, text: bool) -> Result<(EngineConfig, Epsilon)> {
    let mut e = if text { EngineConfig::text(1) } else { EngineConfig::tabular(1) };
    if args.generations.is_some() || args.budget_seconds.is_some() || args.tsn_budget.is_some() {
        e.max_generations = args.generations;
        e.time_budget = args.budget_seconds;
        e.tsn_budget = args.tsn_budget;
    }
    e.cr = args.cr.unwrap_or(e.cr);
    e.mr = args.mr.unwrap_or(e.mr);
    e.seed_num = args.seed_num;
    e.k = args.k;
    e.rng_seed = args.seed;
    e.mode = match args.mode {
        ModeChoice::Ga => SearchMode::Ga,
        ModeChoice::Random => SearchMode::Random,
    };
    e.explainer = ExplainerConfig { rng_seed: args.seed, ..ExplainerConfig::default() };
    if let Some(n) = args.n_perturb {
        e.explainer.n_perturb = n;
    }
    let eps = if args.epsilon == "auto" {
        Epsilon::Auto
    } else {
        let v: usize = args.epsilon.parse().map_err(|_| config_error(format!("bad --epsilon {:?}", args.epsilon)))?;
        e.epsilon = v;
        Epsilon::Given
    };
    Ok((e, eps))
}

fn run_config_from(source: &SourceArgs, engine: &EngineArgs) -> Result<RunConfig> {
    let schema_path = required(&source.schema, "--schema")?;
    let schema = schema_with(schema_path, &source.protected)?;
    let (engine, eps) = engine_from(engine, schema.is_text())?;
    let model_file = source.model_file.as_ref().map(|p| if p.as_os_str() == "planted" { p.clone() } else { absolute(p) });
    Ok(RunConfig {
        data: absolute(required(&source.data, "--data")?),
        schema: absolute(schema_path),
        model_file,
        external: source.external.clone(),
        protected: schema.protected().iter().cloned().collect(),
        graph: source.graph.as_deref().map(absolute),
        embeddings: source.embeddings.as_deref().map(absolute),
        expand_threshold: source.expand_threshold,
        epsilon_source: match eps {
            Epsilon::Auto => "auto".into(),
            Epsilon::Given => "given".into(),
        },
        engine,
    })
}

/// Number of leading samples the automatic epsilon looks at.
const AUTO_EPSILON_SAMPLES: usize = 100;

pub fn test(a: TestArgs) -> Result<()> {
    let (mut cfg, rerun) = match &a.config {
        Some(p) => (RunConfig::load(p)?, true),
        None => (run_config_from(&a.source, &a.engine)?, false),
    };
    cfg.engine.workers = a.workers.max(1);
    let schema = schema_with(&cfg.schema, &cfg.protected)?;
    let dataset = load_dataset(&cfg.data, &schema)?;
    let f = load_predictor(cfg.model_file.as_deref(), cfg.external.as_deref(), &schema)?;
    let space = build_space(&schema, &dataset, cfg.graph.as_deref(), cfg.embeddings.as_deref(), cfg.expand_threshold)?;
    if cfg.epsilon_source == "auto" && !rerun {
        let n = dataset.len().min(AUTO_EPSILON_SAMPLES);
        cfg.engine.epsilon = auto_epsilon(&dataset.samples[..n], &space, &*f, &cfg.engine.explainer)?;
        info!("automatic epsilon: {}", cfg.engine.epsilon);
    }

    let outcome = run(&dataset, &space, &*f, &cfg.engine)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_records(&outcome.records, &schema, a.out.join("records.csv"))?;
    let mut metrics = outcome.metrics.to_json();
    let obj = metrics.as_object_mut().expect("object");
    obj.insert("mode".into(), json!(cfg.engine.mode));
    obj.insert("epsilon".into(), json!(cfg.engine.epsilon));
    obj.insert("seeds".into(), json!(outcome.seeds.len()));
    obj.insert("queries".into(), json!(f.query_count()));
    obj.insert("history".into(), json!(outcome.history));
    write_json(&a.out.join("metrics.json"), &metrics)?;
    cfg.save(&a.out.join("run_config.json"))?;
    let m = &outcome.metrics;
    println!(
        "seeds {} tsn {} dsn {} sur {:.4} dss {} elapsed {:.2}s",
        outcome.seeds.len(),
        m.tsn,
        m.dsn,
        m.sur(),
        m.dss().map_or("-".to_string(), |d| format!("{d:.4}")),
        m.elapsed
    );
    Ok(())
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let schema = schema_with(&a.schema, &[])?;
    let dataset = load_dataset(&a.data, &schema)?;
    let model = TrainedModel::load(&a.model_file).with_context(|| format!("loading {}", a.model_file.display()))?;
    let x = dataset
        .samples
        .get(a.index)
        .ok_or_else(|| config_error(format!("--index {} beyond {} samples", a.index, dataset.len())))?;
    let cfg = ExplainerConfig { n_perturb: a.n_perturb, rng_seed: a.seed, ..ExplainerConfig::default() };
    let (label, e) = explain_prediction(x, &model, &schema, &cfg, a.index as u64)?;
    println!("prediction: {}", model.labels()[label]);
    println!("rank\tposition\tfeature\tvalue\tscore");
    for (rank, entry) in e.entries().iter().enumerate() {
        let name = if schema.is_text() { "token".to_string() } else { schema.features()[entry.index].name.clone() };
        let value = schema.render(entry.index, &x.values[entry.index]);
        println!("{}\t{}\t{}\t{}\t{:.6}", rank + 1, entry.index, name, value, entry.score);
    }
    Ok(())
}

fn unique_records(records: &[DiscriminatoryRecord]) -> Vec<DiscriminatoryRecord> {
    let mut seen = HashSet::new();
    records.iter().filter(|r| seen.insert(r.dedupe_key.clone())).cloned().collect()
}

pub fn retrain(a: RetrainArgs) -> Result<()> {
    let schema = schema_with(required(&a.source.schema, "--schema")?, &a.source.protected)?;
    let dataset = load_dataset(required(&a.source.data, "--data")?, &schema)?;
    let model_path = required(&a.source.model_file, "--model-file")?;
    let before = TrainedModel::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let space = build_space(
        &schema,
        &dataset,
        a.source.graph.as_deref(),
        a.source.embeddings.as_deref(),
        a.source.expand_threshold,
    )?;
    if !(0.0..1.0).contains(&a.test_fraction) {
        bail!(config_error("--test-fraction must lie in [0, 1)"));
    }
    let (train_set, test_set) = dataset.split(1.0 - a.test_fraction, a.engine.seed);
    let records = load_records(&a.records, &schema)?;
    let (augment, holdout) = if schema.is_text() {
        split_records(&records)
    } else {
        let unique = unique_records(&records);
        let need = augmentation_count(train_set.len(), unique.len(), a.fraction, false);
        if need > unique.len() {
            bail!(Error::NotEnoughRecords { needed: need, available: unique.len() });
        }
        (unique[..need].to_vec(), unique[need..].to_vec())
    };

    let mut tc = match &before.kind {
        ModelKind::Logistic => TrainConfig::logistic(a.engine.seed),
        ModelKind::Mlp { .. } => TrainConfig::mlp(a.engine.seed),
        ModelKind::TextBow { .. } => TrainConfig::text_bow(a.engine.seed),
    };
    tc.model_kind = before.kind.clone();
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    let (mut engine, eps) = engine_from(&a.engine, schema.is_text())?;
    if let Epsilon::Auto = eps {
        let n = train_set.len().min(AUTO_EPSILON_SAMPLES);
        engine.epsilon = auto_epsilon(&train_set.samples[..n], &space, &before, &engine.explainer)?;
        info!("automatic epsilon: {}", engine.epsilon);
    }
    let label_policy = match a.label_policy {
        LabelChoice::Majority => LabelPolicy::Majority,
        LabelChoice::Original => LabelPolicy::Original,
    };
    let rc = RetrainConfig { fraction: a.fraction, label_policy, train: tc, engine };
    let (report, after) = retrain_and_evaluate(&train_set, &test_set, &augment, &holdout, &before, &space, &rc)?;
    std::fs::create_dir_all(&a.out)?;
    report.write_json(&a.out.join("fairness_report.json"))?;
    after.save(a.out.join("model_retrained.json"))?;
    println!(
        "added {} samples; accuracy {:.4} -> {:.4}; holdout still discriminatory {:.4} -> {:.4}; sur {:.4} -> {:.4}",
        report.samples_added,
        report.normal_sample_testing_accuracy.before,
        report.normal_sample_testing_accuracy.after,
        report.discriminatory_sample_testing_percentage.before,
        report.discriminatory_sample_testing_percentage.after,
        report.sur.before,
        report.sur.after
    );
    Ok(())
}

fn read_metrics(dir: &Path) -> Result<serde_json::Value> {
    let p = dir.join("metrics.json");
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn run_dss(dir: &Path) -> Result<f64> {
    let m = read_metrics(dir)?;
    let elapsed = m["elapsed"].as_f64().ok_or_else(|| config_error(format!("{}: metrics lack elapsed", dir.display())))?;
    let dsn = m["dsn"].as_u64().ok_or_else(|| config_error(format!("{}: metrics lack dsn", dir.display())))?;
    Ok(dss_or_elapsed(elapsed, dsn))
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let dss_a = a.runs_a.iter().map(|d| run_dss(d)).collect::<Result<Vec<_>>>()?;
    let dss_b = a.runs_b.iter().map(|d| run_dss(d)).collect::<Result<Vec<_>>>()?;
    let cmp = compare_runs(dss_a, dss_b)?;
    std::fs::create_dir_all(&a.out)?;
    write_comparison_json(&a.out.join("comparison.json"), &cmp)?;
    println!("U {} p {:.6} A12 {:.4}", cmp.u, cmp.p_value, cmp.a12);
    Ok(())
}

fn run_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut summary = String::from("run,mode,tsn,dsn,elapsed,dss,sur\n");
    let mut first_schema = None;
    for dir in &a.runs {
        let cfg = RunConfig::load(&dir.join("run_config.json"))?;
        let schema = schema_with(&cfg.schema, &cfg.protected)?;
        let records = load_records(dir.join("records.csv"), &schema)?;
        let label = run_label(dir);
        let schema = first_schema.get_or_insert(schema);
        for row in record_rows(&records, schema) {
            rows.push(row);
            labels.push(label.clone());
        }
        let m = read_metrics(dir)?;
        let dss = m["dss"].as_f64().map_or("-".to_string(), |d| d.to_string());
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            label,
            m["mode"].as_str().unwrap_or(""),
            m["tsn"],
            m["dsn"],
            m["elapsed"],
            dss,
            m["sur"]
        ));
    }
    // text runs can differ in vocabulary; pad to a common width
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    rows.iter_mut().for_each(|r| r.resize(width, 0.0));
    let points = match pca_2d(&rows) {
        Ok(p) => p.points,
        Err(Error::DegenerateData { points }) => {
            warn!("records span fewer than two dimensions; second coordinate is zero");
            points
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(&a.out)?;
    let tagged: Vec<(f64, f64, String)> = points.into_iter().zip(labels).map(|((x, y), l)| (x, y, l)).collect();
    write_diversity_csv(&a.out.join("diversity.csv"), &tagged)?;
    std::fs::write(a.out.join("summary.csv"), summary)?;
    println!("{} records from {} runs projected", tagged.len(), a.runs.len());
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.run.join("run_config.json"))?;
    let schema = schema_with(&cfg.schema, &cfg.protected)?;
    let dataset = load_dataset(&cfg.data, &schema)?;
    let f = load_predictor(cfg.model_file.as_deref(), cfg.external.as_deref(), &schema)?;
    let space = build_space(&schema, &dataset, cfg.graph.as_deref(), cfg.embeddings.as_deref(), cfg.expand_threshold)?;
    let records = load_records(a.run.join("records.csv"), &schema)?;
    let bad = verify_all(&records, &*f, &space)?;
    for (row, why) in bad.iter().take(20) {
        eprintln!("record {row}: {why:?}");
    }
    println!("{} records checked, {} failed", records.len(), bad.len());
    if bad.is_empty() {
        Ok(())
    } else {
        Err(VerifyFailed { failed: bad.len(), total: records.len() }.into())
    }
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let schema = schema_with(&a.schema, &[])?;
    let f: Box<dyn Predictor> = if a.model_file.as_os_str() == "planted" {
        Box::new(PlantedBias::standard())
    } else {
        Box::new(TrainedModel::load(&a.model_file).with_context(|| format!("loading {}", a.model_file.display()))?)
    };
    match &a.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            println!("listening on {}", listener.local_addr()?);
            std::io::stdout().flush()?;
            let (stream, peer) = listener.accept()?;
            stream.set_nodelay(true)?;
            info!("client {peer}");
            fairprobe::model::serve(&*f, &schema, BufReader::new(stream.try_clone()?), stream)?;
        }
        None => {
            let stdin = std::io::stdin();
            fairprobe::model::serve(&*f, &schema, stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let ds = match a.kind {
        SynthKind::Planted => planted_dataset(&PlantedBias::standard(), a.n, a.skewed, a.seed),
        SynthKind::Census => census_dataset(a.n, a.seed),
    };
    std::fs::create_dir_all(&a.out)?;
    save_tabular(&ds, a.out.join("data.csv"))?;
    save_schema(&ds.schema, a.out.join("schema.json"))?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}
