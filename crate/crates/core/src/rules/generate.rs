use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{ngram_predicate, Atom, Literal, Rule, Term, NEGATIVE, POSITIVE, SUCCESS};
use super::parser::parse_program;
use super::stratify::{check_manual_heads, check_program, stratify};
use super::RuleError;
use crate::corpus::{normalize_gram, TokenizerConfig, MAX_NGRAM};
use crate::schema::{Ontology, SchemaNode, ROOT_ID};

/// Document variable used by every generated rule.
pub const DOC_VAR: &str = "IdDoc";
/// Score triple emitted by generated success rules.
pub const DEFAULT_SCORE: i64 = 100;

/// Evidence for one category. Each clause is a conjunction of grams;
/// clauses within a list are alternatives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRuleSpec {
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub positives: Vec<Vec<String>>,
    #[serde(default)]
    pub negatives: Vec<Vec<String>>,
}

impl CategoryRuleSpec {
    /// Builds a spec from bullet strings where commas separate the grams
    /// of one conjunctive clause (`"render vacante, seguito concorso"`).
    pub fn from_bullets(category: &str, positives: &[&str], negatives: &[&str]) -> Self {
        let split = |bullets: &[&str]| -> Vec<Vec<String>> {
            bullets
                .iter()
                .map(|b| b.split(',').map(|g| g.trim().to_string()).filter(|g| !g.is_empty()).collect())
                .collect()
        };
        Self {
            category: category.to_string(),
            positives: split(positives),
            negatives: split(negatives),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// Labels starting with `#` are cluster placeholders, not categories.
pub fn is_category(node: &SchemaNode) -> bool {
    node.id != ROOT_ID && !node.label.trim().is_empty() && !node.label.starts_with('#')
}

fn doc() -> Term {
    Term::var(DOC_VAR)
}

fn gram_atom(gram: &str, tokenizer: &TokenizerConfig) -> Result<Atom, RuleError> {
    let text = normalize_gram(gram, tokenizer);
    let n = if text.is_empty() { 0 } else { text.split(' ').count() };
    let predicate = ngram_predicate(n).ok_or_else(|| RuleError::Gram {
        gram: gram.to_string(),
        tokens: n,
    })?;
    Ok(Atom::new(
        predicate,
        vec![doc(), Term::Str(text), Term::Anon, Term::Anon, Term::Anon],
    ))
}

fn evidence_rule(head: &str, category: &str, clause: &[String], tokenizer: &TokenizerConfig) -> Result<Rule, RuleError> {
    if clause.is_empty() {
        return Err(RuleError::EmptyClause {
            category: category.to_string(),
        });
    }
    Ok(Rule {
        head: Atom::new(head, vec![Term::str(category), doc()]),
        body: clause
            .iter()
            .map(|g| gram_atom(g, tokenizer).map(Literal::pos))
            .collect::<Result<_, _>>()?,
    })
}

/// `success(C, IdDoc, 100, 100, 100) :- positive(C, IdDoc), not negative(C, IdDoc).`
pub fn default_success_rule(category: &str) -> Rule {
    let score = || Term::Int(DEFAULT_SCORE);
    Rule {
        head: Atom::new(SUCCESS, vec![Term::str(category), doc(), score(), score(), score()]),
        body: vec![
            Literal::pos(Atom::new(POSITIVE, vec![Term::str(category), doc()])),
            Literal::neg(Atom::new(NEGATIVE, vec![Term::str(category), doc()])),
        ],
    }
}

/// One rule per positive clause, one per negative clause, then the
/// success rule.
pub fn compile_spec(spec: &CategoryRuleSpec, tokenizer: &TokenizerConfig) -> Result<Vec<Rule>, RuleError> {
    let mut rules = Vec::new();
    for clause in &spec.positives {
        rules.push(evidence_rule(POSITIVE, &spec.category, clause, tokenizer)?);
    }
    for clause in &spec.negatives {
        rules.push(evidence_rule(NEGATIVE, &spec.category, clause, tokenizer)?);
    }
    rules.push(default_success_rule(&spec.category));
    Ok(rules)
}

/// Match rule for one category: the document contains the label itself.
pub fn match_rule(category: &str, tokenizer: &TokenizerConfig) -> Result<Rule, RuleError> {
    evidence_rule(POSITIVE, category, &[category.to_string()], tokenizer)
}

/// Match rule plus default success rule for every labeled category.
/// Labels that do not fit an n-gram are skipped with a warning.
pub fn generate_match_rules(ontology: &Ontology, tokenizer: &TokenizerConfig) -> (Vec<Rule>, Vec<String>) {
    let mut rules = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for node in ontology.root.walk().into_iter().filter(|n| is_category(n)) {
        if !seen.insert(node.label.as_str()) {
            continue;
        }
        match match_rule(&node.label, tokenizer) {
            Ok(rule) => {
                rules.push(rule);
                rules.push(default_success_rule(&node.label));
            }
            Err(e) => warnings.push(format!("category {:?} ({}) has no match rule: {e}", node.label, node.id)),
        }
    }
    (rules, warnings)
}

fn collect_edges<'a>(node: &'a SchemaNode, ancestor: Option<&'a str>, out: &mut Vec<(&'a str, &'a str)>) {
    let here = if is_category(node) {
        if let Some(parent) = ancestor {
            if parent != node.label {
                out.push((parent, node.label.as_str()));
            }
        }
        Some(node.label.as_str())
    } else {
        ancestor
    };
    for c in &node.children {
        collect_edges(c, here, out);
    }
}

/// `success(P, IdDoc, S1, S2, S3) :- success(F, IdDoc, S1, S2, S3).` for
/// every category F and its nearest category ancestor P.
pub fn generate_parent_child_rules(ontology: &Ontology) -> Vec<Rule> {
    let mut edges = Vec::new();
    collect_edges(&ontology.root, None, &mut edges);
    edges.sort();
    edges.dedup();
    let scores = || vec![Term::var("S1"), Term::var("S2"), Term::var("S3")];
    edges
        .into_iter()
        .map(|(parent, child)| {
            let mut head = vec![Term::str(parent), doc()];
            head.extend(scores());
            let mut body = vec![Term::str(child), doc()];
            body.extend(scores());
            Rule {
                head: Atom::new(SUCCESS, head),
                body: vec![Literal::pos(Atom::new(SUCCESS, body))],
            }
        })
        .collect()
}

/// Parses and checks hand-written rules.
pub fn parse_manual_rules(text: &str) -> Result<Vec<Rule>, RuleError> {
    let rules = parse_program(text)?;
    check_manual_heads(&rules)?;
    check_program(&rules)?;
    stratify(&rules)?;
    Ok(rules)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssembledProgram {
    pub rules: Vec<Rule>,
    pub warnings: Vec<String>,
}

/// The full classification program of a project: per category either its
/// compiled spec or the default match rule, optional parent-child
/// propagation, then manual rules.
pub fn assemble_program(
    ontology: &Ontology,
    specs: &BTreeMap<String, CategoryRuleSpec>,
    manual: &str,
    parent_child: bool,
    tokenizer: &TokenizerConfig,
) -> Result<AssembledProgram, RuleError> {
    let mut rules = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for node in ontology.root.walk().into_iter().filter(|n| is_category(n)) {
        if !seen.insert(node.label.clone()) {
            continue;
        }
        match specs.get(&node.label).filter(|s| !s.is_empty()) {
            Some(spec) => rules.extend(compile_spec(spec, tokenizer)?),
            None => match match_rule(&node.label, tokenizer) {
                Ok(rule) => {
                    rules.push(rule);
                    rules.push(default_success_rule(&node.label));
                }
                Err(e) => warnings.push(format!("category {:?} has no match rule: {e}", node.label)),
            },
        }
    }
    for (category, spec) in specs {
        if !seen.contains(category) && !spec.is_empty() {
            warnings.push(format!("rule spec for {category:?} matches no ontology category"));
            rules.extend(compile_spec(spec, tokenizer)?);
        }
    }
    if parent_child {
        rules.extend(generate_parent_child_rules(ontology));
    }
    rules.extend(parse_manual_rules(manual)?);
    check_program(&rules)?;
    stratify(&rules)?;
    Ok(AssembledProgram { rules, warnings })
}

/// Upper bound on tokens per gram, re-exported for callers validating input.
pub const MAX_GRAM_TOKENS: usize = MAX_NGRAM;
