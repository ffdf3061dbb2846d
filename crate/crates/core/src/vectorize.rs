//! The attribute matrix: documents by unigram features, TF-IDF weighted.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_gram, Corpus, NGramIndex};

#[derive(Debug, Error, PartialEq)]
pub enum VectorizeError {
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("feature selection kept no terms (min_df={min_df}, max_df_ratio={max_df_ratio}); loosen the thresholds")]
    NoFeatures { min_df: usize, max_df_ratio: f64 },
    #[error("every document has an all-zero feature vector")]
    AllDegenerate,
    #[error("vector dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Minimum number of documents a term must appear in.
    pub min_df: usize,
    /// Maximum fraction of documents a term may appear in.
    pub max_df_ratio: f64,
    /// Keep at most this many terms, ranked by corpus-wide TF-IDF mass.
    pub max_features: Option<usize>,
    pub stopwords: BTreeSet<String>,
    /// Per-term multipliers applied on top of TF-IDF.
    pub feature_weights: BTreeMap<String, f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            min_df: 1,
            max_df_ratio: 1.0,
            max_features: None,
            stopwords: BTreeSet::new(),
            feature_weights: BTreeMap::new(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), VectorizeError> {
        if self.min_df < 1 {
            return Err(VectorizeError::Config("min_df must be at least 1".into()));
        }
        if !(self.max_df_ratio > 0.0 && self.max_df_ratio <= 1.0) {
            return Err(VectorizeError::Config(format!(
                "max_df_ratio must be in (0, 1], got {}",
                self.max_df_ratio
            )));
        }
        if let Some((term, w)) = self
            .feature_weights
            .iter()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(VectorizeError::Config(format!(
                "multiplier for {term:?} must be positive, got {w}"
            )));
        }
        Ok(())
    }

    fn multiplier(&self, term: &str) -> f64 {
        self.feature_weights.get(term).copied().unwrap_or(1.0)
    }
}

fn term_weight(count: usize, df: usize, n_docs: usize) -> f64 {
    if count == 0 || df == 0 {
        return 0.0;
    }
    (1.0 + (count as f64).ln()) * (n_docs as f64 / df as f64).ln()
}

/// Unigram term counts per document, read off the index.
fn unigram_counts(index: &NGramIndex) -> BTreeMap<&str, Vec<(&str, usize)>> {
    let mut out: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for (term, occs) in index.grams(1) {
        let mut i = 0;
        while i < occs.len() {
            let doc = occs[i].doc_id.as_str();
            let run = occs[i..].iter().take_while(|o| o.doc_id == doc).count();
            out.entry(term).or_default().push((doc, run));
            i += run;
        }
    }
    out
}

/// Keeps unigrams within the document-frequency band, minus stopwords,
/// capped by `max_features`. The result is sorted lexicographically.
pub fn select_features(index: &NGramIndex, config: &FeatureConfig) -> Result<Vec<String>, VectorizeError> {
    config.validate()?;
    let n_docs = index.doc_count();
    let stopwords: BTreeSet<String> = config
        .stopwords
        .iter()
        .map(|s| normalize_gram(s, index.tokenizer()))
        .collect();
    let mut kept: Vec<(&str, f64)> = Vec::new();
    for (term, postings) in unigram_counts(index) {
        let df = postings.len();
        if df < config.min_df || df as f64 / n_docs as f64 > config.max_df_ratio {
            continue;
        }
        if stopwords.contains(term) {
            continue;
        }
        let mass: f64 = postings
            .iter()
            .map(|&(_, c)| term_weight(c, df, n_docs) * config.multiplier(term))
            .sum();
        kept.push((term, mass));
    }
    if let Some(cap) = config.max_features {
        if kept.len() > cap {
            kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            kept.truncate(cap);
        }
    }
    if kept.is_empty() {
        return Err(VectorizeError::NoFeatures {
            min_df: config.min_df,
            max_df_ratio: config.max_df_ratio,
        });
    }
    let mut features: Vec<String> = kept.into_iter().map(|(t, _)| t.to_string()).collect();
    features.sort();
    Ok(features)
}

/// Dense TF-IDF vector of one document over `features`.
pub fn tfidf_weight(
    index: &NGramIndex,
    features: &[String],
    doc_id: &str,
    config: &FeatureConfig,
) -> Vec<f64> {
    let n_docs = index.doc_count();
    features
        .iter()
        .map(|term| {
            let count = index.lookup_in_doc(1, term, doc_id).len();
            term_weight(count, index.df(1, term), n_docs) * config.multiplier(term)
        })
        .collect()
}

/// `1 - cos(u, v)`. A zero vector is at distance 1 from everything.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, VectorizeError> {
    if u.len() != v.len() {
        return Err(VectorizeError::Dimension(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sparse row: `(feature index, weight)` pairs sorted by index, zeros omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow(pub Vec<(usize, f64)>);

impl SparseRow {
    pub fn from_dense(dense: &[f64]) -> Self {
        Self(
            dense
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i, *w))
                .collect(),
        )
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, w) in &self.0 {
            out[i] = w;
        }
        out
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.0.iter().map(|&(i, w)| w * dense[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub doc_ids: Vec<String>,
    pub features: Vec<String>,
    pub rows: Vec<SparseRow>,
    pub row_norm: Vec<f64>,
    /// Ids of documents whose row is all zeros.
    pub degenerate: Vec<String>,
}

impl FeatureMatrix {
    /// Matrix from explicit dense rows; zero rows are flagged degenerate.
    pub fn from_dense(doc_ids: Vec<String>, features: Vec<String>, dense: &[Vec<f64>]) -> Self {
        let rows: Vec<SparseRow> = dense.iter().map(|r| SparseRow::from_dense(r)).collect();
        let row_norm = dense.iter().map(|r| norm(r)).collect::<Vec<_>>();
        let degenerate = doc_ids
            .iter()
            .zip(&row_norm)
            .filter(|(_, n)| **n == 0.0)
            .map(|(d, _)| d.clone())
            .collect();
        Self {
            doc_ids,
            features,
            rows,
            row_norm,
            degenerate,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row_of(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn dense_row(&self, row: usize) -> Vec<f64> {
        self.rows[row].to_dense(self.dim())
    }

    /// Row scaled to unit length (zero rows stay zero).
    pub fn unit_row(&self, row: usize) -> SparseRow {
        let n = self.row_norm[row];
        if n == 0.0 {
            return SparseRow(Vec::new());
        }
        SparseRow(self.rows[row].0.iter().map(|&(i, w)| (i, w / n)).collect())
    }

    /// Writes `doc_id,term,weight` triplets for every non-zero cell.
    pub fn write_triplets<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["doc_id", "term", "weight"])?;
        for (doc, row) in self.doc_ids.iter().zip(&self.rows) {
            for &(i, w) in &row.0 {
                writer.write_record([doc.as_str(), self.features[i].as_str(), &w.to_string()])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Selects features and weights every document, rows in corpus order.
pub fn build_feature_matrix(
    corpus: &Corpus,
    index: &NGramIndex,
    config: &FeatureConfig,
) -> Result<FeatureMatrix, VectorizeError> {
    let features = select_features(index, config)?;
    let column: BTreeMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let n_docs = index.doc_count();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); corpus.len()];
    let row_of: BTreeMap<&str, usize> = corpus.ids().enumerate().map(|(i, d)| (d, i)).collect();
    for (term, postings) in unigram_counts(index) {
        let Some(&col) = column.get(term) else { continue };
        let df = postings.len();
        for (doc, count) in postings {
            if let Some(&r) = row_of.get(doc) {
                let w = term_weight(count, df, n_docs) * config.multiplier(term);
                if w != 0.0 {
                    rows[r].push((col, w));
                }
            }
        }
    }
    let rows: Vec<SparseRow> = rows
        .into_iter()
        .map(|mut r| {
            r.sort_by_key(|e| e.0);
            SparseRow(r)
        })
        .collect();
    let row_norm: Vec<f64> = rows
        .iter()
        .map(|r| r.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt())
        .collect();
    let doc_ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    let degenerate: Vec<String> = doc_ids
        .iter()
        .zip(&row_norm)
        .filter(|(_, n)| **n == 0.0)
        .map(|(d, _)| d.clone())
        .collect();
    if degenerate.len() == doc_ids.len() {
        return Err(VectorizeError::AllDegenerate);
    }
    Ok(FeatureMatrix {
        doc_ids,
        features,
        rows,
        row_norm,
        degenerate,
    })
}
