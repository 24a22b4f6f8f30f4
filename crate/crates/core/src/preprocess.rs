//! Model-facing input assembly.
//!
//! An instance becomes one token stream: an optional task prefix, the text
//! with `[M_START]`/`[M_END]` around the mention, and the flattened table
//!
//! ```text
//! [HEAD] col_1 .. col_M [ROW] 1 cell_11 .. cell_1M [ROW] 2 ..
//! ```
//!
//! The image reference is carried through untouched for external scorers.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenId, TokenSeq, Vocabulary, HEAD, M_END, M_START, ROW};

/// Default cap on flattened table tokens before rows are dropped.
pub const DEFAULT_TABLE_TOKEN_CAP: usize = 1024;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("table has no columns")]
    NoColumns,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("mention span {start}..{end} is invalid for text of {len} bytes")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("every modality of instance {0} is masked")]
    AllModalitiesMasked(String),
    #[error("unknown modality {0:?} (expected L, V or U)")]
    UnknownModality(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate instance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    EntityLinking,
    SchemaLinking,
}

impl Task {
    /// The literal prefix prepended in task-prefix mode.
    pub fn prefix(self) -> &'static str {
        match self {
            Task::EntityLinking => "entity linking",
            Task::SchemaLinking => "schema linking",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::EntityLinking => "entity_linking",
            Task::SchemaLinking => "schema_linking",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.headers.is_empty() {
            return Err(PreprocessError::NoColumns);
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.headers.len() {
                return Err(PreprocessError::RaggedRow { row: i + 1, found: row.len(), expected: self.headers.len() });
            }
        }
        Ok(())
    }
}

/// One linking problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionInstance {
    pub id: String,
    pub text: String,
    pub mention: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    /// `None` is the nil label.
    #[serde(default)]
    pub gold: Option<String>,
    #[serde(default)]
    pub task: Task,
}

impl MentionInstance {
    pub fn validate_span(&self) -> Result<(), PreprocessError> {
        let Span { start, end } = self.mention;
        let len = self.text.len();
        if start >= end || end > len || !self.text.is_char_boundary(start) || !self.text.is_char_boundary(end) {
            return Err(PreprocessError::SpanOutOfBounds { start, end, len });
        }
        Ok(())
    }

    pub fn mention_text(&self) -> Option<&str> {
        self.text.get(self.mention.start..self.mention.end)
    }
}

/// Reads instance JSONL. Blank lines are skipped; ids must be unique.
pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<MentionInstance>, PreprocessError> {
    read_instances(BufReader::new(File::open(path)?))
}

pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<MentionInstance>, PreprocessError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: MentionInstance =
            serde_json::from_str(&line).map_err(|e| PreprocessError::Parse { line: lineno, message: e.to_string() })?;
        inst.validate_span().map_err(|e| PreprocessError::Parse { line: lineno, message: e.to_string() })?;
        if let Some(t) = &inst.table {
            t.validate().map_err(|e| PreprocessError::Parse { line: lineno, message: e.to_string() })?;
        }
        if !ids.insert(inst.id.clone()) {
            return Err(PreprocessError::DuplicateId { line: lineno, id: inst.id });
        }
        out.push(inst);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Text (L).
    Text,
    /// Image (V).
    Image,
    /// Table (U).
    Table,
}

impl Modality {
    fn bit(self) -> u8 {
        match self {
            Modality::Text => 1,
            Modality::Image => 2,
            Modality::Table => 4,
        }
    }

    fn letter(self) -> char {
        match self {
            Modality::Text => 'L',
            Modality::Image => 'V',
            Modality::Table => 'U',
        }
    }
}

/// A subset of {L, V, U}, written as e.g. `"L,V"`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const EMPTY: ModalitySet = ModalitySet(0);

    pub fn of(modalities: &[Modality]) -> Self {
        ModalitySet(modalities.iter().fold(0, |acc, m| acc | m.bit()))
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn insert(&mut self, m: Modality) {
        self.0 |= m.bit();
    }

    pub fn without(self, other: ModalitySet) -> Self {
        ModalitySet(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letters: Vec<String> = [Modality::Text, Modality::Image, Modality::Table]
            .into_iter()
            .filter(|m| self.contains(*m))
            .map(|m| m.letter().to_string())
            .collect();
        f.write_str(&letters.join(","))
    }
}

impl fmt::Debug for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

impl FromStr for ModalitySet {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = ModalitySet::EMPTY;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            set.insert(match part {
                "L" | "l" => Modality::Text,
                "V" | "v" => Modality::Image,
                "U" | "u" => Modality::Table,
                other => return Err(PreprocessError::UnknownModality(other.to_owned())),
            });
        }
        Ok(set)
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub task_prefix: bool,
    /// Modalities to drop.
    pub mask: ModalitySet,
    pub table_token_cap: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { task_prefix: false, mask: ModalitySet::EMPTY, table_token_cap: DEFAULT_TABLE_TOKEN_CAP }
    }
}

/// The assembled encoder input.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatInput {
    pub tokens: TokenSeq,
    pub image_ref: Option<String>,
    pub modalities: ModalitySet,
    /// Table rows dropped by the token cap.
    pub truncated_rows: usize,
}

impl FlatInput {
    /// A text-only input around an already tokenized context.
    pub fn from_tokens(tokens: TokenSeq) -> Self {
        FlatInput { tokens, image_ref: None, modalities: ModalitySet::of(&[Modality::Text]), truncated_rows: 0 }
    }
}

/// Flattens `table` with no token cap.
pub fn flatten_table(table: &Table, vocab: &Vocabulary) -> Result<TokenSeq, PreprocessError> {
    let mut ids = Vec::new();
    flatten_table_into(table, vocab, usize::MAX, &mut ids)?;
    Ok(TokenSeq::new(ids, vocab.hash()))
}

/// Appends the flattened table to `out`, dropping trailing rows once the
/// table's tokens would exceed `cap`. Headers are always kept. Returns the
/// number of rows dropped.
pub fn flatten_table_into(
    table: &Table,
    vocab: &Vocabulary,
    cap: usize,
    out: &mut Vec<TokenId>,
) -> Result<usize, PreprocessError> {
    table.validate()?;
    let start = out.len();
    out.push(HEAD);
    for h in &table.headers {
        vocab.tokenize_into(h, out);
    }
    let mut row_buf = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        row_buf.clear();
        row_buf.push(ROW);
        vocab.tokenize_into(&(i + 1).to_string(), &mut row_buf);
        for cell in row {
            vocab.tokenize_into(cell, &mut row_buf);
        }
        if out.len() - start + row_buf.len() > cap {
            return Ok(table.rows.len() - i);
        }
        out.extend_from_slice(&row_buf);
    }
    Ok(0)
}

pub fn assemble_input(
    instance: &MentionInstance,
    vocab: &Vocabulary,
    options: &AssembleOptions,
) -> Result<FlatInput, PreprocessError> {
    instance.validate_span()?;
    let mut present = ModalitySet::of(&[Modality::Text]);
    if instance.image_ref.is_some() {
        present.insert(Modality::Image);
    }
    if instance.table.is_some() {
        present.insert(Modality::Table);
    }
    let modalities = present.without(options.mask);
    if modalities.is_empty() {
        return Err(PreprocessError::AllModalitiesMasked(instance.id.clone()));
    }

    let mut ids = Vec::new();
    if options.task_prefix {
        vocab.tokenize_into(instance.task.prefix(), &mut ids);
    }
    if modalities.contains(Modality::Text) {
        let Span { start, end } = instance.mention;
        vocab.tokenize_into(&instance.text[..start], &mut ids);
        ids.push(M_START);
        vocab.tokenize_into(&instance.text[start..end], &mut ids);
        ids.push(M_END);
        vocab.tokenize_into(&instance.text[end..], &mut ids);
    }
    let mut truncated_rows = 0;
    if let (true, Some(table)) = (modalities.contains(Modality::Table), &instance.table) {
        truncated_rows = flatten_table_into(table, vocab, options.table_token_cap, &mut ids)?;
    }
    let image_ref = if modalities.contains(Modality::Image) { instance.image_ref.clone() } else { None };
    Ok(FlatInput { tokens: TokenSeq::new(ids, vocab.hash()), image_ref, modalities, truncated_rows })
}
