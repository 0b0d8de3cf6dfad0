//! Sensitive-word knowledge: a relation graph linking words to protected
//! attributes, a word-embedding store, and counterpart-pair construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    IsA,
    RelatedTo,
    DistinctFrom,
    HasA,
    SimilarTo,
}

impl FromStr for Relation {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "IsA" => Ok(Relation::IsA),
            "RelatedTo" => Ok(Relation::RelatedTo),
            "DistinctFrom" => Ok(Relation::DistinctFrom),
            "HasA" => Ok(Relation::HasA),
            "SimilarTo" => Ok(Relation::SimilarTo),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Relation::IsA => "IsA",
            Relation::RelatedTo => "RelatedTo",
            Relation::DistinctFrom => "DistinctFrom",
            Relation::HasA => "HasA",
            Relation::SimilarTo => "SimilarTo",
        };
        f.write_str(s)
    }
}

/// Directed relation graph over lowercase words.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    ids: HashMap<String, usize>,
    names: Vec<String>,
    out: Vec<Vec<(Relation, usize)>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn node(&mut self, word: &str) -> usize {
        let key = word.to_lowercase();
        if let Some(&id) = self.ids.get(&key) {
            return id;
        }
        let id = self.names.len();
        self.ids.insert(key.clone(), id);
        self.names.push(key);
        self.out.push(Vec::new());
        id
    }

    /// Adds `subject -relation-> object`. Self-loops and duplicates are
    /// ignored; returns whether an edge was added.
    pub fn add_edge(&mut self, subject: &str, relation: Relation, object: &str) -> bool {
        if subject.to_lowercase() == object.to_lowercase() {
            return false;
        }
        let s = self.node(subject);
        let o = self.node(object);
        if self.out[s].contains(&(relation, o)) {
            return false;
        }
        self.out[s].push((relation, o));
        true
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [s, r, o] = parts[..] else {
                return Err(Error::MalformedTriple { line: i + 1 });
            };
            let relation: Relation = r.parse().map_err(|_| Error::MalformedTriple { line: i + 1 })?;
            if s.is_empty() || o.is_empty() || s.eq_ignore_ascii_case(o) {
                return Err(Error::MalformedTriple { line: i + 1 });
            }
            g.add_edge(s, relation, o);
        }
        Ok(g)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(&word.to_lowercase())
    }

    pub fn has_edge(&self, subject: &str, relation: Relation, object: &str) -> bool {
        match (self.ids.get(&subject.to_lowercase()), self.ids.get(&object.to_lowercase())) {
            (Some(&s), Some(&o)) => self.out[s].contains(&(relation, o)),
            _ => false,
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, Relation, &str)> + '_ {
        self.out.iter().enumerate().flat_map(move |(s, edges)| {
            edges.iter().map(move |&(r, o)| (self.names[s].as_str(), r, self.names[o].as_str()))
        })
    }

    /// Protected attribute reached by the shortest path from `word`,
    /// ignoring `DistinctFrom` edges. Equal-length paths resolve to the
    /// lexicographically smallest attribute.
    pub fn is_sensitive(&self, word: &str, protected: &BTreeSet<String>) -> Option<String> {
        let start = *self.ids.get(&word.to_lowercase())?;
        let targets: BTreeSet<usize> = protected.iter().filter_map(|p| self.ids.get(&p.to_lowercase()).copied()).collect();
        if targets.is_empty() {
            return None;
        }
        let mut seen = vec![false; self.names.len()];
        let mut frontier = vec![start];
        seen[start] = true;
        while !frontier.is_empty() {
            let hits: BTreeSet<&str> =
                frontier.iter().filter(|n| targets.contains(n)).map(|&n| self.names[n].as_str()).collect();
            if let Some(first) = hits.into_iter().next() {
                return protected.iter().find(|p| p.to_lowercase() == first).cloned();
            }
            let mut next = Vec::new();
            for &n in &frontier {
                for &(rel, o) in &self.out[n] {
                    if rel != Relation::DistinctFrom && !seen[o] {
                        seen[o] = true;
                        next.push(o);
                    }
                }
            }
            frontier = next;
        }
        None
    }

    /// Explicit counterpart of `word` via a `DistinctFrom` edge in either direction.
    pub fn counterpart(&self, word: &str) -> Option<&str> {
        let id = *self.ids.get(&word.to_lowercase())?;
        if let Some(&(_, o)) = self.out[id].iter().find(|(r, _)| *r == Relation::DistinctFrom) {
            return Some(&self.names[o]);
        }
        self.out
            .iter()
            .position(|edges| edges.contains(&(Relation::DistinctFrom, id)))
            .map(|s| self.names[s].as_str())
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    KnowledgeGraph::parse(&std::fs::read_to_string(path)?)
}

/// Fixed-dimension word vectors with case-insensitive lookup.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingStore {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// Unit-normalised vectors, row-major.
    unit: Vec<f64>,
}

impl EmbeddingStore {
    pub fn from_vectors(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut store = EmbeddingStore::default();
        for (word, v) in entries {
            store.insert(word, v)?;
        }
        Ok(store)
    }

    fn insert(&mut self, word: String, v: Vec<f64>) -> Result<()> {
        if self.words.is_empty() {
            self.dim = v.len();
        }
        if v.len() != self.dim || v.is_empty() {
            return Err(Error::InvalidConfig(format!("vector for {word:?} has dimension {}, expected {}", v.len(), self.dim)));
        }
        let key = word.to_lowercase();
        if self.index.contains_key(&key) {
            return Ok(());
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.index.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.unit.extend(v.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }));
        Ok(())
    }

    /// Parses `word v1 ... vd` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut store = EmbeddingStore::default();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::MalformedRow { line: i + 1, reason: "non-numeric vector component".into() })?;
            store.insert(word.to_string(), v)?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn unit(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let ia = *self.index.get(&a.to_lowercase())?;
        let ib = *self.index.get(&b.to_lowercase())?;
        Some(self.unit(ia).iter().zip(self.unit(ib)).map(|(x, y)| x * y).sum())
    }

    /// All store words ranked by cosine to `word` (descending, then
    /// lexicographic), skipping `word` itself and anything `exclude` flags.
    pub fn ranked_neighbors(&self, word: &str, exclude: impl Fn(&str) -> bool) -> Result<Vec<(String, f64)>> {
        let key = word.to_lowercase();
        let i = *self.index.get(&key).ok_or_else(|| Error::OovWord(word.to_string()))?;
        let q = self.unit(i);
        let mut scored: Vec<(String, f64)> = self
            .words
            .iter()
            .enumerate()
            .filter(|(j, w)| *j != i && !exclude(w))
            .map(|(j, w)| (w.clone(), q.iter().zip(self.unit(j)).map(|(x, y)| x * y).sum()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(scored)
    }
}

/// The `k` nearest store words to `word` by cosine, excluding the word and
/// any sensitive word. Ties break lexicographically.
pub fn synonyms(
    word: &str,
    store: &EmbeddingStore,
    k: usize,
    graph: &KnowledgeGraph,
    protected: &BTreeSet<String>,
) -> Result<Vec<String>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let ranked = store.ranked_neighbors(word, |w| graph.is_sensitive(w, protected).is_some())?;
    Ok(ranked.into_iter().take(k).map(|(w, _)| w).collect())
}

/// Report from [`expand_with_embeddings`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExpansionStats {
    pub edges_added: usize,
    pub oov_skipped: usize,
}

/// Links each candidate to every existing graph word whose cosine
/// similarity strictly exceeds `threshold` with a `SimilarTo` edge.
pub fn expand_with_embeddings(
    graph: &KnowledgeGraph,
    store: &EmbeddingStore,
    candidates: &[&str],
    threshold: f64,
) -> (KnowledgeGraph, ExpansionStats) {
    let mut out = graph.clone();
    let mut stats = ExpansionStats::default();
    let existing: Vec<&str> = graph.words().filter(|w| store.contains(w)).collect();
    for &cand in candidates {
        if !store.contains(cand) {
            stats.oov_skipped += 1;
            continue;
        }
        for &w in &existing {
            if w == cand.to_lowercase() {
                continue;
            }
            if store.cosine(cand, w).is_some_and(|c| c > threshold) && out.add_edge(cand, Relation::SimilarTo, w) {
                stats.edges_added += 1;
            }
        }
    }
    (out, stats)
}

/// Two opposite-meaning substitutions for a sensitive word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensitivePair {
    pub original: String,
    pub tilde: String,
    pub neg_tilde: String,
    pub protected_attr: String,
}

/// Builds `<ã, ¬ã>` for `word`: an explicit `DistinctFrom` counterpart
/// when the graph has one, otherwise the attribute's value markers
/// prefixed to the word.
pub fn get_pair(
    word: &str,
    protected_attr: &str,
    graph: &KnowledgeGraph,
    markers: &BTreeMap<String, (String, String)>,
) -> Result<SensitivePair> {
    let lower = word.to_lowercase();
    if let Some(other) = graph.counterpart(&lower) {
        if other != lower {
            return Ok(SensitivePair {
                original: lower.clone(),
                tilde: lower,
                neg_tilde: other.to_string(),
                protected_attr: protected_attr.to_string(),
            });
        }
    }
    if let Some((a, b)) = markers.get(protected_attr) {
        if a != b {
            return Ok(SensitivePair {
                original: lower.clone(),
                tilde: format!("{a} {lower}"),
                neg_tilde: format!("{b} {lower}"),
                protected_attr: protected_attr.to_string(),
            });
        }
    }
    Err(Error::NoPairAvailable { word: word.to_string(), attr: protected_attr.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protected(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    const GRAPH: &str = "# sample\n\
        America\tIsA\tcountry\n\
        master\tIsA\tperson\n\
        person\tHasA\tgender\n\
        actor\tIsA\tperson\n\
        actor\tDistinctFrom\tactress\n\
        actress\tIsA\tperson\n";

    #[test]
    fn parses_triples() {
        let g = KnowledgeGraph::parse(GRAPH).unwrap();
        assert!(g.has_edge("America", Relation::IsA, "country"));
        assert!(g.has_edge("america", Relation::IsA, "Country"));
        assert!(KnowledgeGraph::parse("").unwrap().node_count() == 0);
        assert!(matches!(KnowledgeGraph::parse("a\tIsA\n"), Err(Error::MalformedTriple { line: 1 })));
        assert!(matches!(KnowledgeGraph::parse("a\tLoves\tb\n"), Err(Error::MalformedTriple { line: 1 })));
        assert!(matches!(KnowledgeGraph::parse("a\tIsA\ta\n"), Err(Error::MalformedTriple { line: 1 })));
    }

    #[test]
    fn sensitivity_paths() {
        let g = KnowledgeGraph::parse(GRAPH).unwrap();
        let p = protected(&["gender", "country"]);
        assert_eq!(g.is_sensitive("master", &p).as_deref(), Some("gender"));
        assert_eq!(g.is_sensitive("table", &p), None);
        assert_eq!(g.is_sensitive("America", &protected(&["country"])).as_deref(), Some("country"));
        assert_eq!(g.is_sensitive("master", &protected(&["country"])), None);
    }

    #[test]
    fn distinct_from_is_not_traversed() {
        let g = KnowledgeGraph::parse("foo\tDistinctFrom\tgender\n").unwrap();
        assert_eq!(g.is_sensitive("foo", &protected(&["gender"])), None);
    }

    #[test]
    fn pairs() {
        let g = KnowledgeGraph::parse(GRAPH).unwrap();
        let markers: BTreeMap<String, (String, String)> =
            [("gender".to_string(), ("male".to_string(), "female".to_string()))].into();
        let actor = get_pair("actor", "gender", &g, &markers).unwrap();
        assert_eq!((actor.tilde.as_str(), actor.neg_tilde.as_str()), ("actor", "actress"));
        let actress = get_pair("actress", "gender", &g, &markers).unwrap();
        assert_eq!(actress.neg_tilde, "actor");
        let master = get_pair("master", "gender", &g, &markers).unwrap();
        assert_eq!((master.tilde.as_str(), master.neg_tilde.as_str()), ("male master", "female master"));
        assert!(matches!(get_pair("america", "country", &g, &markers), Err(Error::NoPairAvailable { .. })));
    }

    fn store() -> EmbeddingStore {
        EmbeddingStore::parse(
            "great 1 0 0\nexcellent 0.9 0.1 0\nsuperb 1 0 0\nbad 0 1 0\ntable 0 0 1\nactor 0.95 0 0.05\n",
        )
        .unwrap()
    }

    #[test]
    fn synonym_ranking() {
        let s = store();
        let g = KnowledgeGraph::parse(GRAPH).unwrap();
        let p = protected(&["gender"]);
        assert!(synonyms("great", &s, 0, &g, &p).unwrap().is_empty());
        let syn = synonyms("great", &s, 2, &g, &p).unwrap();
        // duplicate vector first; "actor" is sensitive and skipped
        assert_eq!(syn, vec!["superb".to_string(), "excellent".to_string()]);
        assert!(matches!(synonyms("zzz", &s, 2, &g, &p), Err(Error::OovWord(_))));
        assert_eq!(s.cosine("GREAT", "superb"), Some(1.0));
    }

    #[test]
    fn expansion_threshold_is_strict() {
        let g = KnowledgeGraph::parse("anchor\tIsA\tperson\nperson\tHasA\tgender\n").unwrap();
        // cos(probe, anchor) = 0.7 exactly by construction
        let s = EmbeddingStore::parse("anchor 1 0\nprobe 0.7 0.71414284285428499\ntwin 1 0\northo 0 1\n").unwrap();
        let c = s.cosine("probe", "anchor").unwrap();
        assert!((c - 0.7).abs() < 1e-12);
        let (g2, stats) = expand_with_embeddings(&g, &s, &["twin", "ortho", "ghost"], 0.7);
        assert!(g2.has_edge("twin", Relation::SimilarTo, "anchor"));
        assert!(!g2.has_edge("ortho", Relation::SimilarTo, "anchor"));
        assert_eq!(stats.oov_skipped, 1);
        assert_eq!(g2.is_sensitive("twin", &protected(&["gender"])).as_deref(), Some("gender"));
        let (g3, _) = expand_with_embeddings(&g, &s, &["probe"], c);
        assert!(!g3.has_edge("probe", Relation::SimilarTo, "anchor"));
    }
}
