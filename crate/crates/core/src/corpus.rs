//! Document ingestion, tokenization and the inverted n-gram index.
//!
//! The index is the fact base for the rule engine: the predicates
//! `onegram` .. `fivegram` are answered directly from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Largest n-gram arity the rule language can talk about.
pub const MAX_NGRAM: usize = 5;
/// Arity indexed when nothing else is configured.
pub const DEFAULT_MAX_N: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("document {0:?} has empty text")]
    EmptyText(String),
    #[error("duplicate document ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("corpus source {0} contains no documents")]
    Empty(PathBuf),
    #[error("cannot index an empty corpus")]
    EmptyIndex,
    #[error("n-gram arity must be within 1..={MAX_NGRAM}, got {0}")]
    Arity(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Strip diacritics after lowercasing ("unanimità" becomes "unanimita").
    pub fold_accents: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { fold_accents: true }
    }
}

/// A normalized token with its character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        text: impl Into<String>,
        config: &TokenizerConfig,
    ) -> Self {
        let text = text.into();
        let tokens = tokenize(&text, config);
        Self {
            id: id.into(),
            source: source.into(),
            text,
            tokens,
        }
    }

    /// Substring by character offsets, clamped to the text.
    pub fn char_slice(&self, start: usize, end: usize) -> &str {
        char_slice(&self.text, start, end)
    }
}

pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain([text.len()]);
    let total = text.chars().count();
    let (start, end) = (start.min(total), end.min(total).max(start.min(total)));
    let from = indices.nth(start).unwrap_or(text.len());
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1).unwrap_or(text.len())
    };
    &text[from..to]
}

/// Documents ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus from `(id, text)` pairs, enforcing id uniqueness
    /// and non-empty text.
    pub fn from_texts<I, S, T>(items: I, config: &TokenizerConfig) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let docs = items
            .into_iter()
            .map(|(id, text)| {
                let id = id.into();
                (id.clone(), id, text.into())
            })
            .collect::<Vec<_>>();
        Self::from_records(docs, config)
    }

    fn from_records(
        records: Vec<(String, String, String)>,
        config: &TokenizerConfig,
    ) -> Result<Self, CorpusError> {
        if let Some((id, _, _)) = records.iter().find(|(_, _, text)| text.trim().is_empty()) {
            return Err(CorpusError::EmptyText(id.clone()));
        }
        let mut seen = BTreeSet::new();
        let duplicates: BTreeSet<String> = records
            .iter()
            .filter(|(id, _, _)| !seen.insert(id.as_str()))
            .map(|(id, _, _)| id.clone())
            .collect();
        if !duplicates.is_empty() {
            return Err(CorpusError::DuplicateIds(duplicates.into_iter().collect()));
        }
        let mut documents: Vec<Document> = records
            .into_par_iter()
            .map(|(id, source, text)| Document::new(id, source, text, config))
            .collect();
        documents.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    /// SHA-256 over ids and texts in corpus order, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for doc in &self.documents {
            hasher.update((doc.id.len() as u64).to_le_bytes());
            hasher.update(doc.id.as_bytes());
            hasher.update((doc.text.len() as u64).to_le_bytes());
            hasher.update(doc.text.as_bytes());
        }
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    text: String,
}

/// Loads a corpus from a directory of `.txt` files (id = file stem) or
/// from a file with one JSON record `{"id": .., "text": ..}` per line.
pub fn ingest_corpus(source: &Path, config: &TokenizerConfig) -> Result<Corpus, CorpusError> {
    let meta = fs::metadata(source).map_err(|e| CorpusError::Io {
        path: source.to_path_buf(),
        source: e,
    })?;
    let records = if meta.is_dir() {
        read_directory(source)?
    } else {
        read_record_file(source)?
    };
    if records.is_empty() {
        return Err(CorpusError::Empty(source.to_path_buf()));
    }
    Corpus::from_records(records, config)
}

fn read_directory(dir: &Path) -> Result<Vec<(String, String, String)>, CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let mut records = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        records.push((stem.to_string(), path.display().to_string(), text));
    }
    Ok(records)
}

fn read_record_file(path: &Path) -> Result<Vec<(String, String, String)>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let id = match raw.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(bad(format!("id must be a string or number, got {other}"))),
        };
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        records.push((id, format!("{}#{}", path.display(), i + 1), raw.text));
    }
    Ok(records)
}

fn normalize_token(raw: &str, config: &TokenizerConfig) -> String {
    let lower = raw.to_lowercase();
    if config.fold_accents {
        lower.nfd().filter(|c| !is_combining_mark(*c)).nfc().collect()
    } else {
        lower.nfc().collect()
    }
}

/// Splits `text` into maximal runs of letters and digits.
///
/// Spans are character offsets into `text`; token text is lowercased and,
/// when configured, accent-folded.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run: Option<(usize, usize)> = None; // (char start, byte start)
    let mut char_count = 0;
    for (ci, (bi, ch)) in text.char_indices().enumerate() {
        char_count = ci + 1;
        // Combining marks continue a word ("e" + U+0301).
        let word = ch.is_alphanumeric() || (run.is_some() && is_combining_mark(ch));
        match (word, run) {
            (true, None) => run = Some((ci, bi)),
            (false, Some((cs, bs))) => {
                push_token(&mut tokens, &text[bs..bi], cs, ci, config);
                run = None;
            }
            _ => {}
        }
    }
    if let Some((cs, bs)) = run {
        push_token(&mut tokens, &text[bs..], cs, char_count, config);
    }
    tokens
}

fn push_token(tokens: &mut Vec<Token>, raw: &str, start: usize, end: usize, config: &TokenizerConfig) {
    let text = normalize_token(raw, config);
    if !text.is_empty() {
        tokens.push(Token { text, start, end });
    }
}

/// Normalizes free text the same way documents are tokenized and joins
/// the tokens with single spaces.
pub fn normalize_gram(text: &str, config: &TokenizerConfig) -> String {
    tokenize(text, config)
        .into_iter()
        .map(|t| t.text)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NGramOccurrence {
    pub doc_id: String,
    pub n: usize,
    pub text: String,
    pub token_pos: usize,
    pub char_start: usize,
    pub char_end: usize,
}

/// Every contiguous token window of length 1..=`max_n`, grouped by n.
pub fn extract_ngrams(doc: &Document, max_n: usize) -> Result<Vec<NGramOccurrence>, CorpusError> {
    check_arity(max_n)?;
    let tokens = &doc.tokens;
    let mut out = Vec::new();
    for n in 1..=max_n {
        for (pos, window) in tokens.windows(n).enumerate() {
            out.push(NGramOccurrence {
                doc_id: doc.id.clone(),
                n,
                text: window
                    .iter()
                    .map(|t| t.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                token_pos: pos,
                char_start: window[0].start,
                char_end: window[n - 1].end,
            });
        }
    }
    Ok(out)
}

fn check_arity(n: usize) -> Result<(), CorpusError> {
    if (1..=MAX_NGRAM).contains(&n) {
        Ok(())
    } else {
        Err(CorpusError::Arity(n))
    }
}

/// Inverted index from `(n, gram)` to its occurrences.
///
/// Occurrence lists are sorted by `(doc_id, token_pos)`, so per-document
/// access is a binary search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "IndexRepr", from = "IndexRepr")]
pub struct NGramIndex {
    max_n: usize,
    tokenizer: TokenizerConfig,
    grams: BTreeMap<(usize, String), Vec<NGramOccurrence>>,
    token_counts: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexRepr {
    max_n: usize,
    tokenizer: TokenizerConfig,
    token_counts: BTreeMap<String, usize>,
    grams: Vec<GramEntry>,
}

#[derive(Serialize, Deserialize)]
struct GramEntry {
    n: usize,
    text: String,
    occurrences: Vec<(String, usize, usize, usize)>,
}

impl From<NGramIndex> for IndexRepr {
    fn from(index: NGramIndex) -> Self {
        let grams = index
            .grams
            .into_iter()
            .map(|((n, text), occs)| GramEntry {
                n,
                text,
                occurrences: occs
                    .into_iter()
                    .map(|o| (o.doc_id, o.token_pos, o.char_start, o.char_end))
                    .collect(),
            })
            .collect();
        Self {
            max_n: index.max_n,
            tokenizer: index.tokenizer,
            token_counts: index.token_counts,
            grams,
        }
    }
}

impl From<IndexRepr> for NGramIndex {
    fn from(repr: IndexRepr) -> Self {
        let grams = repr
            .grams
            .into_iter()
            .map(|entry| {
                let occs = entry
                    .occurrences
                    .into_iter()
                    .map(|(doc_id, token_pos, char_start, char_end)| NGramOccurrence {
                        doc_id,
                        n: entry.n,
                        text: entry.text.clone(),
                        token_pos,
                        char_start,
                        char_end,
                    })
                    .collect();
                ((entry.n, entry.text), occs)
            })
            .collect();
        Self {
            max_n: repr.max_n,
            tokenizer: repr.tokenizer,
            grams,
            token_counts: repr.token_counts,
        }
    }
}

impl NGramIndex {
    /// Builds the index over every document of `corpus`, with grams up to
    /// `max_n` tokens. `tokenizer` must be the configuration the corpus was
    /// tokenized with; lookups normalize their query with it.
    pub fn build(
        corpus: &Corpus,
        max_n: usize,
        tokenizer: TokenizerConfig,
    ) -> Result<Self, CorpusError> {
        check_arity(max_n)?;
        if corpus.is_empty() {
            return Err(CorpusError::EmptyIndex);
        }
        let per_doc: Vec<Vec<NGramOccurrence>> = corpus
            .documents
            .par_iter()
            .map(|doc| extract_ngrams(doc, max_n))
            .collect::<Result<_, _>>()?;
        let mut grams: BTreeMap<(usize, String), Vec<NGramOccurrence>> = BTreeMap::new();
        // Documents are id-sorted and windows position-sorted, so each list
        // comes out in (doc_id, token_pos) order.
        for occ in per_doc.into_iter().flatten() {
            grams.entry((occ.n, occ.text.clone())).or_default().push(occ);
        }
        let token_counts = corpus
            .documents
            .iter()
            .map(|d| (d.id.clone(), d.tokens.len()))
            .collect();
        Ok(Self {
            max_n,
            tokenizer,
            grams,
            token_counts,
        })
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.token_counts.len()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.token_counts.keys().map(String::as_str)
    }

    pub fn token_count(&self, doc_id: &str) -> Option<usize> {
        self.token_counts.get(doc_id).copied()
    }

    /// Occurrences of the gram after normalizing `text` like a document.
    pub fn lookup(&self, n: usize, text: &str) -> &[NGramOccurrence] {
        let key = normalize_gram(text, &self.tokenizer);
        self.lookup_normalized(n, &key)
    }

    /// Occurrences of an already-normalized gram.
    pub fn lookup_normalized(&self, n: usize, text: &str) -> &[NGramOccurrence] {
        self.grams
            .get(&(n, text.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Occurrences of the gram restricted to one document.
    pub fn lookup_in_doc<'a>(&'a self, n: usize, text: &str, doc_id: &str) -> &'a [NGramOccurrence] {
        let occs = self.lookup_normalized(n, text);
        let lo = occs.partition_point(|o| o.doc_id.as_str() < doc_id);
        let hi = lo + occs[lo..].partition_point(|o| o.doc_id.as_str() == doc_id);
        &occs[lo..hi]
    }

    pub fn contains(&self, doc_id: &str, n: usize, text: &str) -> bool {
        !self.lookup_in_doc(n, text, doc_id).is_empty()
    }

    /// Number of distinct documents containing the gram.
    pub fn df(&self, n: usize, text: &str) -> usize {
        let occs = self.lookup_normalized(n, text);
        let mut count = 0;
        let mut last: Option<&str> = None;
        for o in occs {
            if last != Some(o.doc_id.as_str()) {
                count += 1;
                last = Some(o.doc_id.as_str());
            }
        }
        count
    }

    /// All indexed grams of arity `n`, in lexicographic order.
    pub fn grams(&self, n: usize) -> impl Iterator<Item = (&str, &[NGramOccurrence])> {
        self.grams
            .range((n, String::new())..(n + 1, String::new()))
            .map(|((_, text), occs)| (text.as_str(), occs.as_slice()))
    }

    /// Every occurrence belonging to `doc_id`, ordered by (n, gram).
    pub fn doc_occurrences<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a NGramOccurrence> + 'a {
        self.grams
            .values()
            .flat_map(move |occs| {
                let lo = occs.partition_point(|o| o.doc_id.as_str() < doc_id);
                occs[lo..].iter().take_while(move |o| o.doc_id == doc_id)
            })
    }

    /// Deterministic JSON rendering of the whole index.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }
}
