//! Project files and the end-to-end pipeline.
//!
//! A project stores its inputs (corpus reference, parameters, edit log,
//! rules) and the artifacts derived from them (typology, latest
//! classification). The ontology is never stored: it is replayed from the
//! typology and the edit log on load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{build_typology, recluster_subtree, ClusterError, ClusterParams, Typology};
use crate::corpus::{hex, ingest_corpus, Corpus, CorpusError, NGramIndex, TokenizerConfig, DEFAULT_MAX_N};
use crate::rules::{
    assemble_program, classify_corpus, evaluate, ngram_arity, parse_manual_rules, AssembledProgram, CategoryRuleSpec,
    Classification, Rule, RuleError, Term, POSITIVE, SUCCESS,
};
use crate::schema::{init_from_typology, replay, EditError, EditRecord, Ontology};
use crate::vectorize::{build_feature_matrix, FeatureConfig, FeatureMatrix, VectorizeError};

pub const FORMAT_VERSION: u32 = 1;
/// Characters of context on each side of a snippet's match.
pub const SNIPPET_RADIUS: usize = 40;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: project format version {found} is not supported (expected {FORMAT_VERSION}); migration needed")]
    Version { path: PathBuf, found: u64 },
    #[error("no typology: run `cluster` first")]
    NoTypology,
    #[error("ingest: {0}")]
    Corpus(#[from] CorpusError),
    #[error("vectorize: {0}")]
    Vectorize(#[from] VectorizeError),
    #[error("cluster: {0}")]
    Cluster(#[from] ClusterError),
    #[error("edit: {0}")]
    Edit(#[from] EditError),
    #[error("rules: {0}")]
    Rules(#[from] RuleError),
    #[error("nothing to undo")]
    EmptyLog,
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRef {
    /// Directory or JSONL file; relative paths resolve against the project
    /// file's directory.
    pub source: PathBuf,
    pub content_hash: String,
    pub documents: usize,
}

/// Everything needed to rebuild a project from its corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub name: String,
    pub tokenizer: TokenizerConfig,
    pub max_n: usize,
    pub features: FeatureConfig,
    pub cluster: ClusterParams,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            name: "project".into(),
            tokenizer: TokenizerConfig::default(),
            max_n: DEFAULT_MAX_N,
            features: FeatureConfig::default(),
            cluster: ClusterParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub format_version: u32,
    pub name: String,
    pub corpus: CorpusRef,
    pub tokenizer: TokenizerConfig,
    pub max_n: usize,
    pub features: FeatureConfig,
    pub cluster: ClusterParams,
    pub typology: Option<Typology>,
    pub edit_log: Vec<EditRecord>,
    pub rule_specs: BTreeMap<String, CategoryRuleSpec>,
    pub manual_rules: String,
    pub parent_child: bool,
    pub classification: Option<Classification>,
    /// Rules or ontology changed after the last classification.
    pub classification_stale: bool,
    /// Incremented by every accepted mutation.
    pub revision: u64,
    #[serde(skip)]
    ontology: Option<Ontology>,
}

/// Corpus-derived structures that are rebuilt rather than stored.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub corpus: Corpus,
    pub index: NGramIndex,
    matrix: OnceLock<FeatureMatrix>,
}

impl Artifacts {
    pub fn build(corpus: Corpus, tokenizer: TokenizerConfig, max_n: usize) -> Result<Self, ProjectError> {
        let index = NGramIndex::build(&corpus, max_n, tokenizer)?;
        Ok(Self {
            corpus,
            index,
            matrix: OnceLock::new(),
        })
    }

    /// Feature matrix, built on first use.
    pub fn matrix(&self, config: &FeatureConfig) -> Result<&FeatureMatrix, ProjectError> {
        if let Some(m) = self.matrix.get() {
            return Ok(m);
        }
        let m = build_feature_matrix(&self.corpus, &self.index, config)?;
        Ok(self.matrix.get_or_init(|| m))
    }
}

/// A document assigned to a category, with the context of a gram that
/// supports the assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentHit {
    pub doc_id: String,
    pub scores: Vec<[i64; 3]>,
    pub gram: Option<String>,
    pub snippet: String,
}

/// Ingests, indexes, vectorizes and clusters a corpus into a fresh
/// project with an empty edit log and no rules.
pub fn run_pipeline(source: &Path, settings: &PipelineSettings) -> Result<(Project, Artifacts), ProjectError> {
    let corpus = ingest_corpus(source, &settings.tokenizer)?;
    let mut project = Project::new(settings, source, &corpus);
    let artifacts = Artifacts::build(corpus, settings.tokenizer, settings.max_n)?;
    project.recluster_all(&artifacts)?;
    Ok((project, artifacts))
}

impl Project {
    pub fn new(settings: &PipelineSettings, source: &Path, corpus: &Corpus) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            name: settings.name.clone(),
            corpus: CorpusRef {
                source: source.to_path_buf(),
                content_hash: corpus.content_hash(),
                documents: corpus.len(),
            },
            tokenizer: settings.tokenizer,
            max_n: settings.max_n,
            features: settings.features.clone(),
            cluster: settings.cluster.clone(),
            typology: None,
            edit_log: Vec::new(),
            rule_specs: BTreeMap::new(),
            manual_rules: String::new(),
            parent_child: false,
            classification: None,
            classification_stale: false,
            revision: 0,
            ontology: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("project serializes")
    }

    /// SHA-256 of the serialized project.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ProjectError> {
        let io = |source| ProjectError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json() + "\n").map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ProjectError> {
        let text = fs::read_to_string(path).map_err(|source| ProjectError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Parses project JSON; `path` is used in error messages.
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ProjectError> {
        let parse_err = |e: serde_json::Error| ProjectError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        let found = value.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
        if found != u64::from(FORMAT_VERSION) {
            return Err(ProjectError::Version {
                path: path.to_path_buf(),
                found,
            });
        }
        // Re-parse from text so type errors carry a position.
        let mut project: Project = serde_json::from_str(text).map_err(parse_err)?;
        project.refresh_ontology()?;
        Ok(project)
    }

    fn refresh_ontology(&mut self) -> Result<(), ProjectError> {
        self.ontology = match &self.typology {
            Some(t) => Some(replay(t, &self.edit_log)?),
            None => None,
        };
        Ok(())
    }

    /// Corpus source resolved against the directory holding the project.
    pub fn corpus_path(&self, project_path: &Path) -> PathBuf {
        if self.corpus.source.is_absolute() {
            self.corpus.source.clone()
        } else {
            project_path.parent().unwrap_or(Path::new(".")).join(&self.corpus.source)
        }
    }

    /// Re-reads the corpus. A changed content hash is reported as a warning.
    pub fn load_artifacts(&self, project_path: &Path) -> Result<(Artifacts, Vec<String>), ProjectError> {
        let corpus = ingest_corpus(&self.corpus_path(project_path), &self.tokenizer)?;
        let mut warnings = Vec::new();
        let hash = corpus.content_hash();
        if hash != self.corpus.content_hash {
            warnings.push(format!(
                "corpus content changed since the project was built (hash {} != {})",
                &hash[..12],
                &self.corpus.content_hash[..12.min(self.corpus.content_hash.len())]
            ));
        }
        Ok((Artifacts::build(corpus, self.tokenizer, self.max_n)?, warnings))
    }

    pub fn typology(&self) -> Result<&Typology, ProjectError> {
        self.typology.as_ref().ok_or(ProjectError::NoTypology)
    }

    pub fn ontology(&self) -> Result<&Ontology, ProjectError> {
        self.ontology.as_ref().ok_or(ProjectError::NoTypology)
    }

    fn touched(&mut self) {
        self.revision += 1;
        if self.classification.is_some() {
            self.classification_stale = true;
        }
    }

    /// Rebuilds the whole typology. The edit log is kept only if it still
    /// replays on the new typology; otherwise it is discarded and reported.
    pub fn recluster_all(&mut self, artifacts: &Artifacts) -> Result<Vec<String>, ProjectError> {
        let typology = build_typology(artifacts.matrix(&self.features)?, &self.cluster)?;
        let mut warnings = Vec::new();
        let ontology = match replay(&typology, &self.edit_log) {
            Ok(o) => o,
            Err(e) => {
                warnings.push(format!("discarded {} edits: {e}", self.edit_log.len()));
                self.edit_log.clear();
                init_from_typology(&typology)
            }
        };
        self.typology = Some(typology);
        self.ontology = Some(ontology);
        self.touched();
        Ok(warnings)
    }

    /// Rebuilds one subtree; fails without changes if the edit log no
    /// longer replays.
    pub fn recluster(&mut self, artifacts: &Artifacts, code: &str, params: &ClusterParams) -> Result<(), ProjectError> {
        let typology = recluster_subtree(self.typology()?, artifacts.matrix(&self.features)?, code, params)?;
        let ontology = replay(&typology, &self.edit_log)?;
        self.typology = Some(typology);
        self.ontology = Some(ontology);
        self.touched();
        Ok(())
    }

    pub fn apply_edit(&mut self, record: EditRecord) -> Result<&Ontology, ProjectError> {
        let next = self.ontology()?.apply(record.clone())?;
        self.edit_log.push(record);
        self.ontology = Some(next);
        self.touched();
        self.ontology()
    }

    /// Pops the last edit and replays the rest.
    pub fn undo(&mut self) -> Result<EditRecord, ProjectError> {
        let typology = self.typology()?;
        let Some((last, rest)) = self.edit_log.split_last() else {
            return Err(ProjectError::EmptyLog);
        };
        let ontology = replay(typology, rest)?;
        let last = last.clone();
        self.edit_log.pop();
        self.ontology = Some(ontology);
        self.touched();
        Ok(last)
    }

    /// Stores a spec after checking that it compiles. An empty spec reverts
    /// the category to its default match rule.
    pub fn set_rule_spec(&mut self, spec: CategoryRuleSpec) -> Result<(), ProjectError> {
        crate::rules::compile_spec(&spec, &self.tokenizer)?;
        if spec.is_empty() {
            self.rule_specs.remove(&spec.category);
        } else {
            self.rule_specs.insert(spec.category.clone(), spec);
        }
        self.touched();
        Ok(())
    }

    pub fn set_manual_rules(&mut self, text: &str) -> Result<(), ProjectError> {
        parse_manual_rules(text)?;
        self.manual_rules = text.to_string();
        self.touched();
        Ok(())
    }

    pub fn set_parent_child(&mut self, enabled: bool) {
        self.parent_child = enabled;
        self.touched();
    }

    /// Looks a category up by node id or label and returns its label.
    pub fn category_label(&self, key: &str) -> Result<String, ProjectError> {
        let ontology = self.ontology()?;
        ontology
            .find(key)
            .or_else(|| ontology.root.walk().into_iter().find(|n| n.label == key))
            .map(|n| n.label.clone())
            .ok_or_else(|| ProjectError::UnknownCategory(key.to_string()))
    }

    pub fn program(&self) -> Result<AssembledProgram, ProjectError> {
        Ok(assemble_program(
            self.ontology()?,
            &self.rule_specs,
            &self.manual_rules,
            self.parent_child,
            &self.tokenizer,
        )?)
    }

    /// Evaluates the current program and stores the result. Not a revision
    /// change: the output is derived from the current revision.
    pub fn classify(&mut self, index: &NGramIndex) -> Result<&Classification, ProjectError> {
        let program = self.program()?;
        let facts = evaluate(&program.rules, index)?;
        let mut classification = classify_corpus(&facts, Some(self.ontology()?));
        let mut warnings = program.warnings;
        warnings.append(&mut classification.warnings);
        classification.warnings = warnings;
        self.classification = Some(classification);
        self.classification_stale = false;
        Ok(self.classification.as_ref().expect("set above"))
    }

    /// Documents assigned to `category` in the stored classification, each
    /// with a snippet around the first gram of the category's rules found
    /// in it.
    pub fn category_documents(&self, category: &str, artifacts: &Artifacts) -> Result<Vec<DocumentHit>, ProjectError> {
        let label = self.category_label(category)?;
        let Some(classification) = &self.classification else {
            return Ok(Vec::new());
        };
        let program = self.program()?;
        let own = trigger_grams(&program.rules, Some(&label));
        let any = trigger_grams(&program.rules, None);
        let mut hits: BTreeMap<&str, Vec<[i64; 3]>> = BTreeMap::new();
        for a in classification.assignments.iter().filter(|a| a.category == label) {
            hits.entry(a.doc_id.as_str()).or_default().push(a.scores);
        }
        Ok(hits
            .into_iter()
            .map(|(doc_id, scores)| {
                let found = own
                    .iter()
                    .chain(&any)
                    .find_map(|(n, g)| artifacts.index.lookup_in_doc(*n, g, doc_id).first().map(|o| (g, o)));
                let text = artifacts.corpus.get(doc_id).map(|d| d.text.as_str()).unwrap_or("");
                let (gram, snippet) = match found {
                    Some((g, o)) => (Some(g.clone()), snippet(text, o.char_start, o.char_end, SNIPPET_RADIUS)),
                    None => (None, snippet(text, 0, 0, 2 * SNIPPET_RADIUS)),
                };
                DocumentHit {
                    doc_id: doc_id.to_string(),
                    scores,
                    gram,
                    snippet,
                }
            })
            .collect())
    }
}

/// Constant grams of positive n-gram literals, restricted to rules about
/// `category` when given.
fn trigger_grams(rules: &[Rule], category: Option<&str>) -> Vec<(usize, String)> {
    let mut seen = BTreeSet::new();
    rules
        .iter()
        .filter(|r| r.head.predicate == POSITIVE || r.head.predicate == SUCCESS)
        .filter(|r| category.is_none_or(|c| r.head.args.first() == Some(&Term::Str(c.to_string()))))
        .flat_map(|r| r.body.iter().filter(|l| !l.negated))
        .filter_map(|l| match (ngram_arity(&l.atom.predicate), l.atom.args.get(1)) {
            (Some(n), Some(Term::Str(g))) => Some((n, g.clone())),
            _ => None,
        })
        .filter(|g| seen.insert(g.clone()))
        .collect()
}

/// Characters `start..end` of `text` with up to `radius` characters of
/// context on each side, whitespace collapsed.
pub fn snippet(text: &str, start: usize, end: usize, radius: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    let lo = start.saturating_sub(radius);
    let hi = (end + radius).min(chars.len());
    let body: String = chars[lo.min(hi)..hi].iter().collect();
    let body = body.split_whitespace().collect::<Vec<_>>().join(" ");
    let pre = if lo > 0 { "…" } else { "" };
    let post = if hi < chars.len() { "…" } else { "" };
    format!("{pre}{body}{post}")
}
