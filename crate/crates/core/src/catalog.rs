//! Entity catalogs and the candidate sets drawn from them or from table schemas.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{casefold, normalize_name};
use crate::preprocess::MentionInstance;

/// Joins a table name to a column name in schema-linking targets.
pub const SCHEMA_JOINER: &str = " # ";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: empty name for id {id:?}")]
    EmptyName { line: usize, id: String },
    #[error("instance {0:?} has no candidates and the catalog is empty")]
    NoCandidates(String),
    #[error("candidate set for {0:?} is empty")]
    EmptyCandidateSet(String),
    #[error("duplicate candidate {candidate:?} in {mention_id:?}")]
    DuplicateCandidate { mention_id: String, candidate: String },
    #[error("no table schemas given")]
    NoSchemas,
    #[error("table {index} has an empty name")]
    EmptyTableName { index: usize },
    #[error("table {table:?} has an empty column name")]
    EmptyColumnName { table: String },
    #[error("duplicate column {table:?}.{column:?}")]
    DuplicateColumn { table: String, column: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// An immutable, ordered set of entity records.
#[derive(Clone, Debug, Default)]
pub struct EntityCatalog {
    entries: Vec<EntityRecord>,
    by_id: HashMap<String, usize>,
    by_name: HashMap<String, Vec<usize>>,
    by_folded_name: HashMap<String, Vec<usize>>,
}

impl EntityCatalog {
    /// Builds a catalog from `(source line, record)` pairs, normalizing names
    /// and aliases.
    fn from_records(
        records: impl IntoIterator<Item = (usize, EntityRecord)>,
    ) -> Result<Self, CatalogError> {
        let mut cat = EntityCatalog::default();
        for (line, mut rec) in records {
            rec.name = normalize_name(&rec.name);
            if rec.name.is_empty() {
                return Err(CatalogError::EmptyName { line, id: rec.id });
            }
            rec.aliases = rec.aliases.iter().map(|a| normalize_name(a)).filter(|a| !a.is_empty()).collect();
            if cat.by_id.contains_key(&rec.id) {
                return Err(CatalogError::DuplicateId { line, id: rec.id });
            }
            let idx = cat.entries.len();
            cat.by_id.insert(rec.id.clone(), idx);
            cat.by_name.entry(rec.name.clone()).or_default().push(idx);
            cat.by_folded_name.entry(casefold(&rec.name)).or_default().push(idx);
            cat.entries.push(rec);
        }
        Ok(cat)
    }

    pub fn from_entries(records: Vec<EntityRecord>) -> Result<Self, CatalogError> {
        Self::from_records(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Parses catalog JSONL, one record per line; blank lines are skipped.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, CatalogError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EntityRecord = serde_json::from_str(&line)
                .map_err(|e| CatalogError::Malformed { line: i + 1, message: e.to_string() })?;
            records.push((i + 1, rec));
        }
        Self::from_records(records)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.entries {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EntityRecord] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    /// All records whose canonical name equals `name` (case-sensitive).
    pub fn lookup_name(&self, name: &str) -> Vec<&EntityRecord> {
        self.by_name
            .get(&normalize_name(name))
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    /// Case-insensitive lookup, for diagnostics only.
    pub fn lookup_name_folded(&self, name: &str) -> Vec<&EntityRecord> {
        self.by_folded_name
            .get(&casefold(&normalize_name(name)))
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    /// Distinct canonical names in catalog order.
    pub fn names(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries.iter().filter(|e| seen.insert(e.name.as_str())).map(|e| e.name.clone()).collect()
    }
}

/// Candidate entity names for one mention, in retrieval order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub mention_id: String,
    candidates: Vec<String>,
    pub allows_nil: bool,
}

impl CandidateSet {
    /// Normalizes candidates and rejects empty or duplicate sets.
    pub fn new(mention_id: impl Into<String>, candidates: Vec<String>, allows_nil: bool) -> Result<Self, CatalogError> {
        let mention_id = mention_id.into();
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(candidates.len());
        for c in candidates {
            let c = normalize_name(&c);
            if !seen.insert(c.clone()) {
                return Err(CatalogError::DuplicateCandidate { mention_id, candidate: c });
            }
            out.push(c);
        }
        if out.is_empty() || out.iter().any(String::is_empty) {
            return Err(CatalogError::EmptyCandidateSet(mention_id));
        }
        Ok(CandidateSet { mention_id, candidates: out, allows_nil })
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        let name = normalize_name(name);
        self.candidates.iter().any(|c| *c == name)
    }
}

/// The instance's explicit candidates, or every catalog name when it has none.
pub fn candidate_set_for(instance: &MentionInstance, catalog: &EntityCatalog) -> Result<CandidateSet, CatalogError> {
    match &instance.candidates {
        Some(c) => CandidateSet::new(instance.id.clone(), c.clone(), true),
        None if catalog.is_empty() => Err(CatalogError::NoCandidates(instance.id.clone())),
        None => CandidateSet::new(instance.id.clone(), catalog.names(), true),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    #[serde(rename = "table")]
    pub table_name: String,
    pub columns: Vec<String>,
}

/// Reads the schema JSON format: `[{"table": .., "columns": [..]}, ..]`.
pub fn load_schemas(path: impl AsRef<Path>) -> Result<Vec<TableSchema>, CatalogError> {
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| CatalogError::Malformed { line: e.line(), message: e.to_string() })
}

/// `"<table> # <column>"` for every column of every table, in schema order.
pub fn schema_candidates(mention_id: &str, schemas: &[TableSchema]) -> Result<CandidateSet, CatalogError> {
    if schemas.is_empty() {
        return Err(CatalogError::NoSchemas);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (index, schema) in schemas.iter().enumerate() {
        let table = normalize_name(&schema.table_name);
        if table.is_empty() {
            return Err(CatalogError::EmptyTableName { index });
        }
        for col in &schema.columns {
            let col = normalize_name(col);
            if col.is_empty() {
                return Err(CatalogError::EmptyColumnName { table });
            }
            if !seen.insert((table.clone(), col.clone())) {
                return Err(CatalogError::DuplicateColumn { table, column: col });
            }
            out.push(format!("{table}{SCHEMA_JOINER}{col}"));
        }
    }
    CandidateSet::new(mention_id, out, true)
}
