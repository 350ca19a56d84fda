//! Task schema: the knowledge categories an interview must cover, their
//! importance weights, and the prerequisite edges used by the dependency gate.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Completeness every prerequisite must reach before a gated category opens.
pub const GATE_THRESHOLD: f64 = 0.3;

/// Gate value while at least one prerequisite is below [`GATE_THRESHOLD`].
pub const GATE_CLOSED: f64 = 0.5;

const SAR_SCHEMA: &str = include_str!("../fixtures/sar_schema.json");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    MalformedDocument(String),
    #[error("schema must declare at least one category")]
    Empty,
    #[error("duplicate category `{0}`")]
    DuplicateCategory(String),
    #[error("category `{name}` has weight {weight} outside [0, 1]")]
    WeightOutOfRange { name: String, weight: f64 },
    #[error("category `{category}` depends on unknown category `{target}`")]
    UnknownDependencyTarget { category: String, target: String },
    #[error("cyclic dependency: {}", .0.join(" -> "))]
    CyclicDependency(Vec<String>),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("completeness vector has {got} entries, schema has {expected}")]
    CompletenessLength { expected: usize, got: usize },
    #[error("cannot read schema `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub weight: f64,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaDocument {
    categories: Vec<Category>,
}

/// Validated, immutable task schema.
///
/// Construction rejects duplicate names, out-of-range weights, dangling
/// prerequisites and dependency cycles, so every accessor can index freely.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SchemaDocument", into = "SchemaDocument")]
pub struct TaskSchema {
    categories: Vec<Category>,
    index: HashMap<String, usize>,
    prerequisites: Vec<Vec<usize>>,
}

impl PartialEq for TaskSchema {
    fn eq(&self, other: &Self) -> bool {
        self.categories == other.categories
    }
}

impl TryFrom<SchemaDocument> for TaskSchema {
    type Error = SchemaError;

    fn try_from(doc: SchemaDocument) -> Result<Self, Self::Error> {
        TaskSchema::new(doc.categories)
    }
}

impl From<TaskSchema> for SchemaDocument {
    fn from(schema: TaskSchema) -> Self {
        SchemaDocument {
            categories: schema.categories,
        }
    }
}

impl TaskSchema {
    pub fn new(categories: Vec<Category>) -> Result<Self, SchemaError> {
        if categories.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut index = HashMap::with_capacity(categories.len());
        for (i, c) in categories.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.weight) || !c.weight.is_finite() {
                return Err(SchemaError::WeightOutOfRange {
                    name: c.name.clone(),
                    weight: c.weight,
                });
            }
            if index.insert(c.name.clone(), i).is_some() {
                return Err(SchemaError::DuplicateCategory(c.name.clone()));
            }
        }
        let mut prerequisites = Vec::with_capacity(categories.len());
        for c in &categories {
            let mut deps = Vec::with_capacity(c.depends_on.len());
            for target in &c.depends_on {
                let j = *index
                    .get(target)
                    .ok_or_else(|| SchemaError::UnknownDependencyTarget {
                        category: c.name.clone(),
                        target: target.clone(),
                    })?;
                deps.push(j);
            }
            prerequisites.push(deps);
        }
        let schema = TaskSchema {
            categories,
            index,
            prerequisites,
        };
        schema.check_acyclic()?;
        Ok(schema)
    }

    /// The eight-category search-and-rescue witness schema.
    pub fn sar() -> Self {
        Self::from_json_str(SAR_SCHEMA).expect("bundled SAR schema is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        // Parse into the raw document first so validation errors keep their
        // variant instead of being flattened into a serde message.
        let doc: SchemaDocument = serde_json::from_str(text)
            .map_err(|e| SchemaError::MalformedDocument(e.to_string()))?;
        TaskSchema::new(doc.categories)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn check_acyclic(&self) -> Result<(), SchemaError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit(
            node: usize,
            deps: &[Vec<usize>],
            marks: &mut [Mark],
            path: &mut Vec<usize>,
        ) -> Option<Vec<usize>> {
            match marks[node] {
                Mark::Done => return None,
                Mark::Active => {
                    let start = path.iter().position(|&n| n == node).unwrap_or(0);
                    let mut cycle = path[start..].to_vec();
                    cycle.push(node);
                    return Some(cycle);
                }
                Mark::New => {}
            }
            marks[node] = Mark::Active;
            path.push(node);
            for &next in &deps[node] {
                if let Some(cycle) = visit(next, deps, marks, path) {
                    return Some(cycle);
                }
            }
            path.pop();
            marks[node] = Mark::Done;
            None
        }

        let mut marks = vec![Mark::New; self.categories.len()];
        for start in 0..self.categories.len() {
            let mut path = Vec::new();
            if let Some(cycle) = visit(start, &self.prerequisites, &mut marks, &mut path) {
                return Err(SchemaError::CyclicDependency(
                    cycle
                        .into_iter()
                        .map(|i| self.categories[i].name.clone())
                        .collect(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize, SchemaError> {
        self.index_of(name)
            .ok_or_else(|| SchemaError::UnknownCategory(name.to_string()))
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.categories[idx].name
    }

    pub fn weight(&self, idx: usize) -> f64 {
        self.categories[idx].weight
    }

    pub fn prerequisites(&self, idx: usize) -> &[usize] {
        &self.prerequisites[idx]
    }

    /// Dependency gate for `category` given the current completeness vector.
    pub fn dependency_gate(&self, completeness: &[f64], category: &str) -> Result<f64, SchemaError> {
        let idx = self.require(category)?;
        if completeness.len() != self.len() {
            return Err(SchemaError::CompletenessLength {
                expected: self.len(),
                got: completeness.len(),
            });
        }
        Ok(self.gate_at(idx, completeness))
    }

    /// Soft gate: 1 when every prerequisite has some grounding, 0.5 otherwise.
    pub fn gate_at(&self, idx: usize, completeness: &[f64]) -> f64 {
        let deps = &self.prerequisites[idx];
        if deps.is_empty() {
            return 1.0;
        }
        let open = deps.iter().all(|&j| completeness[j] >= GATE_THRESHOLD);
        if open {
            1.0
        } else {
            GATE_CLOSED
        }
    }
}

impl fmt::Display for TaskSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.names().collect();
        write!(f, "TaskSchema[{}]", names.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(name: &str, weight: f64, deps: &[&str]) -> Category {
        Category {
            name: name.into(),
            weight,
            depends_on: deps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn sar_schema_weights() {
        let s = TaskSchema::sar();
        assert_eq!(s.len(), 8);
        let expected = [
            ("location", 0.9),
            ("time", 0.8),
            ("medical", 0.8),
            ("description", 0.7),
            ("intentions", 0.7),
            ("equipment", 0.6),
            ("companions", 0.6),
            ("weather", 0.5),
        ];
        for (name, w) in expected {
            let i = s.index_of(name).unwrap();
            assert_eq!(s.weight(i), w, "{name}");
        }
        assert_eq!(s.prerequisites(s.index_of("intentions").unwrap()).len(), 1);
    }

    #[test]
    fn single_category_is_valid() {
        let s = TaskSchema::new(vec![cat("only", 1.0, &[])]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.dependency_gate(&[0.0], "only").unwrap(), 1.0);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = TaskSchema::new(vec![cat("a", 0.5, &["b"]), cat("b", 0.5, &["a"])]).unwrap_err();
        assert!(matches!(err, SchemaError::CyclicDependency(_)), "{err}");
    }

    #[test]
    fn self_loop_is_rejected() {
        let err = TaskSchema::new(vec![cat("a", 0.5, &["a"])]).unwrap_err();
        assert!(matches!(err, SchemaError::CyclicDependency(_)));
    }

    #[test]
    fn dangling_dependency_and_bad_weight() {
        let err = TaskSchema::new(vec![cat("a", 0.5, &["ghost"])]).unwrap_err();
        assert!(matches!(err, SchemaError::UnknownDependencyTarget { .. }));
        let err = TaskSchema::new(vec![cat("a", 1.5, &[])]).unwrap_err();
        assert!(matches!(err, SchemaError::WeightOutOfRange { .. }));
        let err = TaskSchema::new(vec![cat("a", 0.5, &[]), cat("a", 0.5, &[])]).unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateCategory(_)));
        assert!(matches!(TaskSchema::new(vec![]), Err(SchemaError::Empty)));
    }

    #[test]
    fn malformed_document() {
        let err = TaskSchema::from_json_str("{\"categories\": [{\"name\": \"a\", \"weight\": \"high\"}]}")
            .unwrap_err();
        assert!(matches!(err, SchemaError::MalformedDocument(_)));
    }

    #[test]
    fn intentions_gate_follows_location() {
        let s = TaskSchema::sar();
        let mut c = vec![0.0; s.len()];
        assert_eq!(s.dependency_gate(&c, "intentions").unwrap(), 0.5);
        c[s.index_of("location").unwrap()] = 0.9;
        assert_eq!(s.dependency_gate(&c, "intentions").unwrap(), 1.0);
        assert_eq!(s.dependency_gate(&c, "location").unwrap(), 1.0);
        assert!(matches!(
            s.dependency_gate(&c, "nope"),
            Err(SchemaError::UnknownCategory(_))
        ));
    }

    #[test]
    fn load_serialize_load_is_stable() {
        let s = TaskSchema::sar();
        let again = TaskSchema::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(s, again);
        assert_eq!(again.prerequisites(again.index_of("companions").unwrap()), &[2]);
    }
}
