//! Pre-generated dialogue corpus: strategies, question templates and
//! visit-indexed response ladders with per-category gains.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{Embedding, EmbeddingError, EmbeddingProvider, EmbeddingStore};
use crate::schema::{SchemaError, TaskSchema};
use crate::state::Target;
use crate::GENERAL;

/// Largest target gain a terminal rung may carry, so that repeating an
/// action always ends in non-informative answers.
pub const TERMINAL_GAIN_MAX: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed corpus: {0}")]
    MalformedCorpus(String),
    #[error("response `{response}` has a gain for unknown category `{category}`")]
    UnknownCategoryInGains { response: String, category: String },
    #[error("response `{response}` references missing embedding `{key}`")]
    DanglingEmbeddingKey { response: String, key: String },
    #[error("ladder {strategy}/{category} has no rungs")]
    EmptyLadder { strategy: String, category: String },
    #[error("unknown action {0}")]
    UnknownAction(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("embedding store: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("cannot read corpus `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionTemplate {
    pub strategy: String,
    pub category: String,
    pub text: String,
    /// Values substituted for `{0}`, `{1}`, ... when no arguments are given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fills: Vec<String>,
}

impl QuestionTemplate {
    pub fn placeholder_count(&self) -> Result<usize, String> {
        placeholders(&self.text).map(|p| p.iter().map(|&n| n + 1).max().unwrap_or(0))
    }

    /// Substitutes `{n}` with `args[n]`, falling back to `fills[n]`.
    pub fn realize(&self, args: &[&str]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = open + rest[open..].find('}').unwrap_or(rest.len() - open - 1);
            let n: Option<usize> = rest[open + 1..close].parse().ok();
            match n {
                Some(n) => match args.get(n).copied().or(self.fills.get(n).map(String::as_str)) {
                    Some(v) => out.push_str(v),
                    None => out.push_str(&rest[open..=close]),
                },
                None => out.push_str(&rest[open..=close]),
            }
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        out
    }
}

/// Indices of `{n}` placeholders; rejects unbalanced or non-numeric braces.
fn placeholders(text: &str) -> Result<Vec<usize>, String> {
    let mut found = Vec::new();
    let mut chars = text.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' => {
                let mut digits = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, d)) if d.is_ascii_digit() => digits.push(d),
                        _ => return Err(format!("bad placeholder at byte {i}")),
                    }
                }
                found.push(digits.parse().map_err(|_| format!("empty placeholder at byte {i}"))?);
            }
            '}' => return Err(format!("unmatched `}}` at byte {i}")),
            _ => {}
        }
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub gains: BTreeMap<String, f64>,
    /// Defaults to the response id.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub embedding_key: String,
}

impl Response {
    pub fn key(&self) -> &str {
        if self.embedding_key.is_empty() {
            &self.id
        } else {
            &self.embedding_key
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseLadder {
    pub strategy: String,
    pub category: String,
    pub rungs: Vec<Response>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusDocument {
    pub schema: TaskSchema,
    pub strategies: Vec<String>,
    pub templates: Vec<QuestionTemplate>,
    pub ladders: Vec<ResponseLadder>,
    /// Embedding store path, relative to the corpus file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_store: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub strategy: String,
    pub target: Target,
}

impl Action {
    pub fn label(&self, schema: &TaskSchema) -> String {
        format!("{}/{}", self.strategy, self.target.label(schema))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.strategy, self.target)
    }
}

/// A response resolved against the schema and embedding provider.
#[derive(Debug, Clone)]
pub struct Rung {
    pub response: Response,
    pub gains: Vec<(usize, f64)>,
    pub embedding: Embedding,
}

#[derive(Debug, Clone)]
struct Entry {
    action: Action,
    template: QuestionTemplate,
    rungs: Vec<Rung>,
}

/// Validated corpus with one ladder per action, in enumeration order.
#[derive(Debug, Clone)]
pub struct Corpus {
    schema: TaskSchema,
    strategies: Vec<String>,
    entries: Vec<Entry>,
    lookup: HashMap<(String, Target), usize>,
    provider: EmbeddingProvider,
    document: Arc<CorpusDocument>,
}

fn target_of(schema: &TaskSchema, category: &str) -> Option<Target> {
    if category == GENERAL {
        Some(Target::General)
    } else {
        schema.index_of(category).map(Target::Category)
    }
}

impl Corpus {
    /// Loads a corpus file. A declared `embedding_store` is resolved relative
    /// to the corpus file and backs the embeddings; otherwise responses are
    /// embedded with the default synthetic embedder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let doc = Self::parse_document(&text)?;
        let provider = match &doc.embedding_store {
            Some(rel) => {
                let store_path = store_path(path, rel);
                EmbeddingProvider::FileBacked(Arc::new(EmbeddingStore::from_path(&store_path)?))
            }
            None => EmbeddingProvider::synthetic(),
        };
        Self::from_document(doc, provider)
    }

    /// Like [`Corpus::load`], additionally requiring the embedded schema to
    /// equal `schema`.
    pub fn load_with_schema(path: impl AsRef<Path>, schema: &TaskSchema) -> Result<Self, CorpusError> {
        let corpus = Self::load(path)?;
        if corpus.schema() != schema {
            return Err(CorpusError::MalformedCorpus(format!(
                "corpus schema {} does not match {}",
                corpus.schema(),
                schema
            )));
        }
        Ok(corpus)
    }

    pub fn parse_document(text: &str) -> Result<CorpusDocument, CorpusError> {
        // Schema errors surface with their own variant rather than as a
        // generic parse failure.
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CorpusError::MalformedCorpus(e.to_string()))?;
        if let Some(schema) = raw.get("schema") {
            TaskSchema::from_json_str(&schema.to_string())?;
        }
        serde_json::from_value(raw).map_err(|e| CorpusError::MalformedCorpus(e.to_string()))
    }

    pub fn from_json_str(text: &str, provider: EmbeddingProvider) -> Result<Self, CorpusError> {
        Self::from_document(Self::parse_document(text)?, provider)
    }

    pub fn from_document(doc: CorpusDocument, provider: EmbeddingProvider) -> Result<Self, CorpusError> {
        let schema = doc.schema.clone();
        let bad = |m: String| CorpusError::MalformedCorpus(m);

        if doc.strategies.is_empty() {
            return Err(bad("no strategies declared".into()));
        }
        let mut seen = HashSet::new();
        for s in &doc.strategies {
            if !seen.insert(s.as_str()) {
                return Err(bad(format!("duplicate strategy `{s}`")));
            }
        }
        let strategy_rank: HashMap<&str, usize> =
            doc.strategies.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let mut templates: HashMap<(String, Target), QuestionTemplate> = HashMap::new();
        for t in &doc.templates {
            if !strategy_rank.contains_key(t.strategy.as_str()) {
                return Err(bad(format!("template uses unknown strategy `{}`", t.strategy)));
            }
            let target = target_of(&schema, &t.category)
                .ok_or_else(|| bad(format!("template uses unknown category `{}`", t.category)))?;
            t.placeholder_count()
                .map_err(|e| bad(format!("template {}/{}: {e}", t.strategy, t.category)))?;
            if templates.insert((t.strategy.clone(), target), t.clone()).is_some() {
                return Err(bad(format!("duplicate template {}/{}", t.strategy, t.category)));
            }
        }

        let mut ids = HashSet::new();
        let mut entries = Vec::with_capacity(doc.ladders.len());
        for ladder in &doc.ladders {
            let target = target_of(&schema, &ladder.category)
                .ok_or_else(|| bad(format!("ladder uses unknown category `{}`", ladder.category)))?;
            if !strategy_rank.contains_key(ladder.strategy.as_str()) {
                return Err(bad(format!("ladder uses unknown strategy `{}`", ladder.strategy)));
            }
            if ladder.rungs.is_empty() {
                return Err(CorpusError::EmptyLadder {
                    strategy: ladder.strategy.clone(),
                    category: ladder.category.clone(),
                });
            }
            let key = (ladder.strategy.clone(), target);
            let template = templates
                .remove(&key)
                .ok_or_else(|| bad(format!("ladder {}/{} has no template (or is duplicated)", ladder.strategy, ladder.category)))?;

            let mut rungs = Vec::with_capacity(ladder.rungs.len());
            for r in &ladder.rungs {
                if !ids.insert(r.id.clone()) {
                    return Err(bad(format!("duplicate response id `{}`", r.id)));
                }
                let mut gains = Vec::with_capacity(r.gains.len());
                for (name, &g) in &r.gains {
                    let idx = schema.index_of(name).ok_or_else(|| CorpusError::UnknownCategoryInGains {
                        response: r.id.clone(),
                        category: name.clone(),
                    })?;
                    if !(0.0..=1.0).contains(&g) {
                        return Err(bad(format!("response `{}` gain {g} for `{name}` outside [0, 1]", r.id)));
                    }
                    gains.push((idx, g));
                }
                let embedding = match &provider {
                    EmbeddingProvider::FileBacked(store) => {
                        store
                            .get(r.key())
                            .map_err(|_| CorpusError::DanglingEmbeddingKey {
                                response: r.id.clone(),
                                key: r.key().to_string(),
                            })?
                            .clone()
                    }
                    EmbeddingProvider::Synthetic(s) => s.embed(&r.text)?,
                };
                rungs.push(Rung {
                    response: r.clone(),
                    gains,
                    embedding,
                });
            }
            check_ladder_shape(&ladder.strategy, &ladder.category, target, &rungs).map_err(bad)?;
            entries.push(Entry {
                action: Action {
                    strategy: ladder.strategy.clone(),
                    target,
                },
                template,
                rungs,
            });
        }
        if let Some(((s, t), _)) = templates.into_iter().next() {
            return Err(bad(format!("template {s}/{} has no ladder", t.label(&schema))));
        }

        // Strategy-major, then schema order, general last.
        entries.sort_by_key(|e| {
            let cat = match e.action.target {
                Target::Category(i) => i,
                Target::General => usize::MAX,
            };
            (strategy_rank[e.action.strategy.as_str()], cat)
        });
        let lookup = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.action.strategy.clone(), e.action.target), i))
            .collect();
        Ok(Corpus {
            schema,
            strategies: doc.strategies.clone(),
            entries,
            lookup,
            provider,
            document: Arc::new(doc),
        })
    }

    pub fn schema(&self) -> &TaskSchema {
        &self.schema
    }

    pub fn strategies(&self) -> &[String] {
        &self.strategies
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn document(&self) -> &CorpusDocument {
        &self.document
    }

    pub fn num_actions(&self) -> usize {
        self.entries.len()
    }

    pub fn num_responses(&self) -> usize {
        self.entries.iter().map(|e| e.rungs.len()).sum()
    }

    pub fn enumerate_actions(&self) -> Vec<Action> {
        self.entries.iter().map(|e| e.action.clone()).collect()
    }

    pub fn action(&self, idx: usize) -> Option<&Action> {
        self.entries.get(idx).map(|e| &e.action)
    }

    pub fn action_index(&self, strategy: &str, category: &str) -> Result<usize, CorpusError> {
        let unknown = || CorpusError::UnknownAction(format!("{strategy}/{category}"));
        let target = target_of(&self.schema, category).ok_or_else(unknown)?;
        self.lookup
            .get(&(strategy.to_string(), target))
            .copied()
            .ok_or_else(unknown)
    }

    pub fn template(&self, idx: usize) -> Result<&QuestionTemplate, CorpusError> {
        self.entry(idx).map(|e| &e.template)
    }

    pub fn ladder_len(&self, idx: usize) -> Result<usize, CorpusError> {
        self.entry(idx).map(|e| e.rungs.len())
    }

    /// Rung `min(visit_count, ladder length)`; visit counts start at 1.
    pub fn respond(&self, idx: usize, visit_count: usize) -> Result<&Rung, CorpusError> {
        let e = self.entry(idx)?;
        let rung = visit_count.clamp(1, e.rungs.len()) - 1;
        Ok(&e.rungs[rung])
    }

    pub fn respond_by_name(&self, strategy: &str, category: &str, visit_count: usize) -> Result<&Rung, CorpusError> {
        self.respond(self.action_index(strategy, category)?, visit_count)
    }

    fn entry(&self, idx: usize) -> Result<&Entry, CorpusError> {
        self.entries
            .get(idx)
            .ok_or_else(|| CorpusError::UnknownAction(format!("#{idx}")))
    }
}

fn store_path(corpus_path: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        corpus_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Target gain of a rung; general ladders use the largest gain of any category.
fn rung_gain(target: Target, rung: &Rung) -> f64 {
    match target {
        Target::Category(i) => rung.gains.iter().filter(|(c, _)| *c == i).map(|(_, g)| g).sum(),
        Target::General => rung.gains.iter().map(|(_, g)| *g).fold(0.0, f64::max),
    }
}

fn check_ladder_shape(strategy: &str, category: &str, target: Target, rungs: &[Rung]) -> Result<(), String> {
    let gains: Vec<f64> = rungs.iter().map(|r| rung_gain(target, r)).collect();
    for w in gains.windows(2).skip(1) {
        if w[1] > w[0] + 1e-12 {
            return Err(format!(
                "ladder {strategy}/{category}: gains must not increase from rung 2 onward ({:?})",
                gains
            ));
        }
    }
    let last = *gains.last().expect("non-empty ladder");
    if last > TERMINAL_GAIN_MAX {
        return Err(format!(
            "ladder {strategy}/{category}: terminal rung gain {last} exceeds {TERMINAL_GAIN_MAX}"
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_json(extra_gain: &str) -> String {
        format!(
            r#"{{
  "schema": {{"categories": [{{"name": "a", "weight": 1.0}}, {{"name": "b", "weight": 0.5}}]}},
  "strategies": ["ASK", "RECALL"],
  "templates": [
    {{"strategy": "RECALL", "category": "general", "text": "Tell me everything."}},
    {{"strategy": "ASK", "category": "b", "text": "About {{0}}?", "fills": ["b-thing"]}},
    {{"strategy": "ASK", "category": "a", "text": "About a?"}}
  ],
  "ladders": [
    {{"strategy": "RECALL", "category": "general", "rungs": [
      {{"id": "g1", "text": "all of it", "gains": {{"a": 0.1, "b": 0.2}}}},
      {{"id": "g2", "text": "same again", "gains": {{}}}}]}},
    {{"strategy": "ASK", "category": "b", "rungs": [
      {{"id": "b1", "text": "b fact", "gains": {{"b": 0.6}}}},
      {{"id": "b2", "text": "b more", "gains": {{"b": 0.2}}}},
      {{"id": "b3", "text": "b nothing", "gains": {{"b": 0.0}}}}]}},
    {{"strategy": "ASK", "category": "a", "rungs": [
      {{"id": "a1", "text": "a fact", "gains": {{"a": 0.7{extra_gain}}}}},
      {{"id": "a2", "text": "a nothing", "gains": {{"a": 0.01}}}}]}}
  ]
}}"#
        )
    }

    fn small() -> Corpus {
        Corpus::from_json_str(&doc_json(""), EmbeddingProvider::synthetic()).unwrap()
    }

    #[test]
    fn enumeration_order_and_lookup() {
        let c = small();
        let labels: Vec<String> = c.enumerate_actions().iter().map(|a| a.label(c.schema())).collect();
        assert_eq!(labels, ["ASK/a", "ASK/b", "RECALL/general"]);
        assert_eq!(c.enumerate_actions(), c.enumerate_actions());
        assert_eq!(c.action_index("ASK", "b").unwrap(), 1);
        assert!(matches!(c.action_index("ASK", "general"), Err(CorpusError::UnknownAction(_))));
        assert_eq!(c.num_responses(), 7);
    }

    #[test]
    fn respond_walks_and_clamps() {
        let c = small();
        let b = c.action_index("ASK", "b").unwrap();
        assert_eq!(c.respond(b, 1).unwrap().response.id, "b1");
        assert_eq!(c.respond(b, 2).unwrap().response.id, "b2");
        assert_eq!(c.respond(b, 9).unwrap().response.id, "b3");
        assert!(matches!(c.respond(42, 1), Err(CorpusError::UnknownAction(_))));
    }

    #[test]
    fn unknown_gain_category_is_rejected() {
        let err = Corpus::from_json_str(&doc_json(r#", "zzz": 0.1"#), EmbeddingProvider::synthetic()).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownCategoryInGains { .. }), "{err}");
    }

    #[test]
    fn dangling_embedding_key() {
        let mut store = EmbeddingStore::new(384).unwrap();
        let emb = crate::SyntheticEmbedder::default();
        store.insert("a1", emb.embed("x").unwrap()).unwrap();
        let err = Corpus::from_json_str(&doc_json(""), EmbeddingProvider::FileBacked(Arc::new(store))).unwrap_err();
        assert!(matches!(err, CorpusError::DanglingEmbeddingKey { .. }), "{err}");
    }

    #[test]
    fn empty_ladder_and_shape_rules() {
        let text = doc_json("").replace(
            r#"{"id": "a1", "text": "a fact", "gains": {"a": 0.7}},
      {"id": "a2", "text": "a nothing", "gains": {"a": 0.01}}"#,
            "",
        );
        let err = Corpus::from_json_str(&text, EmbeddingProvider::synthetic()).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyLadder { .. }), "{err}");

        let text = doc_json("").replace(r#""a": 0.01"#, r#""a": 0.2"#);
        let err = Corpus::from_json_str(&text, EmbeddingProvider::synthetic()).unwrap_err();
        assert!(err.to_string().contains("terminal"), "{err}");

        let text = doc_json("")
            .replace(r#""b more", "gains": {"b": 0.2}"#, r#""b more", "gains": {"b": 0.02}"#)
            .replace(r#""b nothing", "gains": {"b": 0.0}"#, r#""b nothing", "gains": {"b": 0.03}"#);
        let err = Corpus::from_json_str(&text, EmbeddingProvider::synthetic()).unwrap_err();
        assert!(err.to_string().contains("must not increase"), "{err}");
    }

    #[test]
    fn templates_realize_and_validate() {
        let c = small();
        let b = c.action_index("ASK", "b").unwrap();
        assert_eq!(c.template(b).unwrap().realize(&[]), "About b-thing?");
        assert_eq!(c.template(b).unwrap().realize(&["x"]), "About x?");
        assert!(placeholders("oops {a}").is_err());
        assert!(placeholders("oops }").is_err());
        assert!(placeholders("open {1").is_err());
        assert_eq!(placeholders("{0} and {1}").unwrap(), vec![0, 1]);
    }
}
