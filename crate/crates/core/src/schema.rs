//! Ontology editing: the typology is turned into a category tree by an
//! append-only log of edit operations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Typology, TypologyNode};

pub const ROOT_ID: &str = "root";

/// Default ratio of a synthesis node's extension to its sibling median
/// above which `validate` warns.
pub const DEFAULT_BALANCE_RATIO: f64 = 3.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EditError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("the root cannot be reduced")]
    ReduceRoot,
    #[error("the root cannot be {0}")]
    RootTarget(&'static str),
    #[error("targets are not siblings: {}", .0.join(", "))]
    NotSiblings(Vec<String>),
    #[error("{op} needs at least {min} distinct target(s)")]
    TooFewTargets { op: &'static str, min: usize },
    #[error("node id {0:?} already exists")]
    DuplicateId(String),
    #[error("label must not be empty")]
    EmptyLabel,
    #[error("edit log belongs to typology {expected}, current typology is {found}")]
    StaleLog { expected: String, found: String },
    #[error("edit #{index} failed: {source}")]
    Replay {
        index: usize,
        #[source]
        source: Box<EditError>,
    },
    #[error("unknown export format {0:?} (expected tree-json, dot or csv)")]
    UnknownFormat(String),
    #[error("invalid tree document: {0}")]
    Import(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Cluster,
    Synthesis,
    Generalization,
    Specialization,
    Residual,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Cluster => "cluster",
            NodeKind::Synthesis => "synthesis",
            NodeKind::Generalization => "generalization",
            NodeKind::Specialization => "specialization",
            NodeKind::Residual => "residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaNode {
    pub id: String,
    pub label: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_code: Option<String>,
    /// Representative terms of the originating cluster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    pub extension: BTreeSet<String>,
    /// Dividing criterion for this node's children.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fundamentum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_index: Option<i64>,
    #[serde(default)]
    pub children: Vec<SchemaNode>,
}

impl SchemaNode {
    fn new(id: String, label: String, kind: NodeKind) -> Self {
        Self {
            id,
            label,
            kind,
            origin_code: None,
            hint: None,
            extension: BTreeSet::new(),
            fundamentum: None,
            order_index: None,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&SchemaNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    /// Pre-order `(parent id, node)` pairs, excluding `self`.
    pub fn edges(&self) -> Vec<(&SchemaNode, &SchemaNode)> {
        let mut out = Vec::new();
        for c in &self.children {
            out.push((self, c));
            out.extend(c.edges());
        }
        out
    }

    pub fn find(&self, id: &str) -> Option<&SchemaNode> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    fn path_to(&self, id: &str) -> Option<Vec<usize>> {
        if self.id == id {
            return Some(Vec::new());
        }
        self.children.iter().enumerate().find_map(|(i, c)| {
            c.path_to(id).map(|mut p| {
                p.insert(0, i);
                p
            })
        })
    }

    fn at_mut(&mut self, path: &[usize]) -> &mut SchemaNode {
        path.iter().fold(self, |node, &i| &mut node.children[i])
    }

    fn from_typology(node: &TypologyNode) -> Self {
        let (id, label) = if node.code.is_empty() {
            (ROOT_ID.to_string(), ROOT_ID.to_string())
        } else {
            (node.code.clone(), node.code.clone())
        };
        let terms: Vec<&str> = node.top_terms.iter().take(3).map(|(t, _)| t.as_str()).collect();
        Self {
            id,
            label,
            kind: NodeKind::Cluster,
            origin_code: Some(node.code.clone()),
            hint: (!terms.is_empty()).then(|| terms.join(", ")),
            extension: node.members.iter().cloned().collect(),
            fundamentum: None,
            order_index: None,
            children: node.children.iter().map(Self::from_typology).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    /// Drops a subtree; its documents become unassigned.
    Reduce { target: String },
    /// Replaces sibling nodes with one synthesis node.
    Aggregate {
        targets: Vec<String>,
        new_label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_id: Option<String>,
    },
    /// Inserts a generalization node above sibling nodes.
    Generalize {
        targets: Vec<String>,
        new_label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_id: Option<String>,
    },
    /// Adds an empty child category.
    Specialize {
        parent: String,
        new_label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_id: Option<String>,
    },
    Rename { target: String, new_label: String },
    MarkResidual { target: String },
    /// Sets the dividing criterion and/or sibling order of a node.
    Annotate {
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fundamentum: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order_index: Option<i64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    #[serde(flatten)]
    pub op: EditOp,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub timestamp: String,
}

impl From<EditOp> for EditRecord {
    fn from(op: EditOp) -> Self {
        Self {
            op,
            author: String::new(),
            timestamp: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub root: SchemaNode,
    pub edit_log: Vec<EditRecord>,
    pub source_typology_hash: String,
    /// Documents removed from the tree by `Reduce`.
    pub unassigned: BTreeSet<String>,
}

/// One node per typology node, all of kind `cluster`, with an empty log.
pub fn init_from_typology(typology: &Typology) -> Ontology {
    Ontology {
        root: SchemaNode::from_typology(&typology.root),
        edit_log: Vec::new(),
        source_typology_hash: typology.fingerprint(),
        unassigned: BTreeSet::new(),
    }
}

/// Rebuilds the ontology produced by `log` on top of `typology`.
pub fn replay(typology: &Typology, log: &[EditRecord]) -> Result<Ontology, EditError> {
    let mut ontology = init_from_typology(typology);
    for (index, record) in log.iter().enumerate() {
        ontology = ontology.apply(record.clone()).map_err(|e| EditError::Replay {
            index,
            source: Box::new(e),
        })?;
    }
    Ok(ontology)
}

/// Replays `log` after checking that it was recorded against `typology`.
pub fn replay_checked(typology: &Typology, expected_hash: &str, log: &[EditRecord]) -> Result<Ontology, EditError> {
    let found = typology.fingerprint();
    if found != expected_hash {
        return Err(EditError::StaleLog {
            expected: expected_hash.to_string(),
            found,
        });
    }
    replay(typology, log)
}

impl Ontology {
    pub fn find(&self, id: &str) -> Option<&SchemaNode> {
        self.root.find(id)
    }

    pub fn node_count(&self) -> usize {
        self.root.walk().len()
    }

    fn ids(&self) -> BTreeSet<&str> {
        self.root.walk().into_iter().map(|n| n.id.as_str()).collect()
    }

    fn fresh_id(&self, requested: Option<&str>, label: &str) -> Result<String, EditError> {
        let ids = self.ids();
        if let Some(id) = requested {
            if id.is_empty() || ids.contains(id) {
                return Err(EditError::DuplicateId(id.to_string()));
            }
            return Ok(id.to_string());
        }
        if !ids.contains(label) {
            return Ok(label.to_string());
        }
        (2..)
            .map(|i| format!("{label}~{i}"))
            .find(|c| !ids.contains(c.as_str()))
            .ok_or(EditError::DuplicateId(label.to_string()))
    }

    fn path(&self, id: &str) -> Result<Vec<usize>, EditError> {
        self.root
            .path_to(id)
            .ok_or_else(|| EditError::UnknownNode(id.to_string()))
    }

    /// Resolves sibling targets to their common parent path and their
    /// child indices in the parent's order.
    fn siblings(&self, op: &'static str, targets: &[String], min: usize) -> Result<(Vec<usize>, Vec<usize>), EditError> {
        let distinct: BTreeSet<&String> = targets.iter().collect();
        if distinct.len() < min || distinct.len() != targets.len() {
            return Err(EditError::TooFewTargets { op, min });
        }
        let mut parent: Option<Vec<usize>> = None;
        let mut indices = Vec::new();
        for t in targets {
            let mut p = self.path(t)?;
            let Some(i) = p.pop() else {
                return Err(EditError::RootTarget(op));
            };
            match &parent {
                None => parent = Some(p),
                Some(q) if *q == p => {}
                Some(_) => return Err(EditError::NotSiblings(targets.to_vec())),
            }
            indices.push(i);
        }
        indices.sort_unstable();
        Ok((parent.expect("at least one target"), indices))
    }

    /// Applies one edit, returning the next revision with the edit logged.
    pub fn apply(&self, record: impl Into<EditRecord>) -> Result<Ontology, EditError> {
        let record = record.into();
        let mut next = self.clone();
        match &record.op {
            EditOp::Reduce { target } => {
                let mut path = self.path(target)?;
                let Some(i) = path.pop() else {
                    return Err(EditError::ReduceRoot);
                };
                let removed = next.root.at_mut(&path).children.remove(i);
                // ancestors keep a document only if another child still holds it
                for depth in (0..=path.len()).rev() {
                    let node = next.root.at_mut(&path[..depth]);
                    let kept: BTreeSet<String> = node
                        .children
                        .iter()
                        .flat_map(|c| c.extension.iter().cloned())
                        .collect();
                    node.extension
                        .retain(|d| !removed.extension.contains(d) || kept.contains(d));
                }
                let still_held = next.root.extension.clone();
                next.unassigned.extend(
                    removed
                        .extension
                        .into_iter()
                        .filter(|d| !still_held.contains(d)),
                );
            }
            EditOp::Aggregate {
                targets,
                new_label,
                new_id,
            } => {
                check_label(new_label)?;
                let (parent, indices) = self.siblings("aggregate", targets, 2)?;
                let id = self.fresh_id(new_id.as_deref(), new_label)?;
                let mut node = SchemaNode::new(id, new_label.clone(), NodeKind::Synthesis);
                let parent_node = next.root.at_mut(&parent);
                for &i in indices.iter().rev() {
                    let mut t = parent_node.children.remove(i);
                    node.extension.append(&mut t.extension);
                    let mut kids = std::mem::take(&mut t.children);
                    kids.append(&mut node.children);
                    node.children = kids;
                }
                parent_node.children.insert(indices[0], node);
            }
            EditOp::Generalize {
                targets,
                new_label,
                new_id,
            } => {
                check_label(new_label)?;
                let (parent, indices) = self.siblings("generalize", targets, 1)?;
                let id = self.fresh_id(new_id.as_deref(), new_label)?;
                let mut node = SchemaNode::new(id, new_label.clone(), NodeKind::Generalization);
                let parent_node = next.root.at_mut(&parent);
                for &i in indices.iter().rev() {
                    let t = parent_node.children.remove(i);
                    node.extension.extend(t.extension.iter().cloned());
                    node.children.insert(0, t);
                }
                parent_node.children.insert(indices[0], node);
            }
            EditOp::Specialize {
                parent,
                new_label,
                new_id,
            } => {
                check_label(new_label)?;
                let path = self.path(parent)?;
                let id = self.fresh_id(new_id.as_deref(), new_label)?;
                next.root
                    .at_mut(&path)
                    .children
                    .push(SchemaNode::new(id, new_label.clone(), NodeKind::Specialization));
            }
            EditOp::Rename { target, new_label } => {
                check_label(new_label)?;
                let path = self.path(target)?;
                next.root.at_mut(&path).label = new_label.clone();
            }
            EditOp::MarkResidual { target } => {
                let path = self.path(target)?;
                if path.is_empty() {
                    return Err(EditError::RootTarget("marked residual"));
                }
                next.root.at_mut(&path).kind = NodeKind::Residual;
            }
            EditOp::Annotate {
                target,
                fundamentum,
                order_index,
            } => {
                let path = self.path(target)?;
                let node = next.root.at_mut(&path);
                if fundamentum.is_some() {
                    node.fundamentum = fundamentum.clone();
                }
                if order_index.is_some() {
                    node.order_index = *order_index;
                }
            }
        }
        next.edit_log.push(record);
        debug_assert_eq!(next.check_structure(), Ok(()));
        Ok(next)
    }

    /// Structural invariants: unique ids and children's extensions
    /// contained in their parent's.
    pub fn check_structure(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for node in self.root.walk() {
            if !seen.insert(node.id.as_str()) {
                return Err(format!("duplicate id {:?}", node.id));
            }
            if node.kind == NodeKind::Cluster && node.origin_code.is_none() {
                return Err(format!("cluster node {:?} lacks an origin code", node.id));
            }
            for c in &node.children {
                if let Some(d) = c.extension.iter().find(|d| !node.extension.contains(*d)) {
                    return Err(format!("{:?} holds {d:?} but its parent {:?} does not", c.id, node.id));
                }
            }
        }
        Ok(())
    }

    /// Multiset of leaf extensions, sorted.
    pub fn leaf_extensions(&self) -> Vec<BTreeSet<String>> {
        let mut out: Vec<BTreeSet<String>> = self
            .root
            .walk()
            .into_iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.extension.clone())
            .collect();
        out.sort();
        out
    }

    pub fn export(&self, format: &str) -> Result<String, EditError> {
        match format {
            "tree-json" | "json" => Ok(serde_json::to_string_pretty(self).expect("ontology serializes")),
            "dot" => Ok(self.to_dot()),
            "csv" => Ok(self.to_csv()),
            other => Err(EditError::UnknownFormat(other.to_string())),
        }
    }

    pub fn import_tree_json(text: &str) -> Result<Ontology, EditError> {
        let ontology: Ontology = serde_json::from_str(text).map_err(|e| EditError::Import(e.to_string()))?;
        ontology.check_structure().map_err(EditError::Import)?;
        Ok(ontology)
    }

    fn to_dot(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("digraph ontology {\n  node [shape=box];\n");
        for node in self.root.walk() {
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\\n{} ({})\"];",
                esc(&node.id),
                esc(&node.label),
                node.kind.as_str(),
                node.extension.len()
            );
        }
        for (parent, child) in self.root.edges() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", esc(&parent.id), esc(&child.id));
        }
        out.push_str("}\n");
        out
    }

    fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let _ = writer.write_record(["id", "parent_id", "label", "kind"]);
        let _ = writer.write_record([&self.root.id, "", &self.root.label, self.root.kind.as_str()]);
        for (parent, child) in self.root.edges() {
            let _ = writer.write_record([&child.id, &parent.id, &child.label, child.kind.as_str()]);
        }
        String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }
}

fn check_label(label: &str) -> Result<(), EditError> {
    if label.trim().is_empty() {
        Err(EditError::EmptyLabel)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusivityViolation {
    pub doc_id: String,
    pub parent: String,
    pub nodes: (String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiblingGroup {
    pub parent: String,
    pub sizes: Vec<(String, usize)>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceWarning {
    pub node: String,
    pub size: usize,
    pub sibling_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub exclusivity: Vec<ExclusivityViolation>,
    /// Corpus documents in no leaf and not removed by a reduction.
    pub gaps: Vec<String>,
    pub unassigned: Vec<String>,
    pub balance: Vec<SiblingGroup>,
    pub balance_warnings: Vec<BalanceWarning>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.exclusivity.is_empty() && self.gaps.is_empty()
    }
}

fn median(sizes: &[usize]) -> f64 {
    let mut s = sizes.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

/// Reports overlap between siblings, uncovered documents and sibling
/// balance. Nothing is repaired.
pub fn validate<'a>(ontology: &Ontology, corpus_ids: impl IntoIterator<Item = &'a str>, balance_ratio: f64) -> ValidationReport {
    let mut exclusivity = Vec::new();
    let mut balance = Vec::new();
    let mut balance_warnings = Vec::new();
    for node in ontology.root.walk() {
        let kids = &node.children;
        for (i, a) in kids.iter().enumerate() {
            for b in &kids[i + 1..] {
                for d in a.extension.intersection(&b.extension) {
                    exclusivity.push(ExclusivityViolation {
                        doc_id: d.clone(),
                        parent: node.id.clone(),
                        nodes: (a.id.clone(), b.id.clone()),
                    });
                }
            }
        }
        if kids.len() >= 2 {
            let sizes: Vec<(String, usize)> = kids.iter().map(|c| (c.id.clone(), c.extension.len())).collect();
            let med = median(&sizes.iter().map(|s| s.1).collect::<Vec<_>>());
            for c in kids {
                if c.kind == NodeKind::Synthesis && med > 0.0 && c.extension.len() as f64 > balance_ratio * med {
                    balance_warnings.push(BalanceWarning {
                        node: c.id.clone(),
                        size: c.extension.len(),
                        sibling_median: med,
                    });
                }
            }
            balance.push(SiblingGroup {
                parent: node.id.clone(),
                sizes,
                median: med,
            });
        }
    }
    let in_leaf: BTreeSet<&str> = ontology
        .root
        .walk()
        .into_iter()
        .filter(|n| n.is_leaf())
        .flat_map(|n| n.extension.iter().map(String::as_str))
        .collect();
    let gaps = corpus_ids
        .into_iter()
        .filter(|d| !in_leaf.contains(d) && !ontology.unassigned.contains(*d))
        .map(str::to_string)
        .collect();
    ValidationReport {
        exclusivity,
        gaps,
        unassigned: ontology.unassigned.iter().cloned().collect(),
        balance,
        balance_warnings,
    }
}

/// Parses a line-delimited edit log; blank lines and `//` comments are skipped.
pub fn parse_edit_log(text: &str) -> Result<Vec<EditRecord>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with("//"))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

pub fn write_edit_log(log: &[EditRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("edit serializes") + "\n")
        .collect()
}

/// Extension sizes of every node keyed by id.
pub fn extension_sizes(ontology: &Ontology) -> BTreeMap<String, usize> {
    ontology
        .root
        .walk()
        .into_iter()
        .map(|n| (n.id.clone(), n.extension.len()))
        .collect()
}
