//! Rule language: parsing, checking, evaluation over the n-gram index,
//! rule generation from an ontology and document classification.

mod ast;
mod classify;
mod eval;
mod generate;
mod parser;
mod stratify;

use thiserror::Error;

pub use ast::{
    known_arity, ngram_arity, ngram_predicate, print_program, Atom, Literal, Rule, Term, NEGATIVE, NGRAM_PREDICATES,
    POSITIVE, SUCCESS,
};
pub use classify::{classify_corpus, write_assignments_csv, Assignment, Classification};
pub use eval::{evaluate, DerivedFacts, Tuple, Value};
pub use generate::{
    assemble_program, compile_spec, default_success_rule, generate_match_rules, generate_parent_child_rules,
    is_category, match_rule, parse_manual_rules, AssembledProgram, CategoryRuleSpec, DEFAULT_SCORE, DOC_VAR,
    MAX_GRAM_TOKENS,
};
pub use parser::parse_program;
pub use stratify::{check_manual_heads, check_program, stratify, Strata};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("line {line}, column {col}: {atom} has {found} arguments, expected {expected}")]
    Arity {
        atom: String,
        expected: usize,
        found: usize,
        line: usize,
        col: usize,
    },
    #[error("variable {variable} is not bound by a positive literal in `{rule}`")]
    Unsafe { rule: String, variable: String },
    #[error("`{predicate}` cannot be negated in `{rule}`")]
    ForbiddenNegation { rule: String, predicate: String },
    #[error("rules may not define `{predicate}`: `{rule}`")]
    HeadPredicate { rule: String, predicate: String },
    #[error("negation inside a recursive cycle through {}", cycle.join(", "))]
    NegationCycle { cycle: Vec<String> },
    #[error("gram {gram:?} has {tokens} tokens, expected 1 to 5")]
    Gram { gram: String, tokens: usize },
    #[error("empty evidence clause for category {category:?}")]
    EmptyClause { category: String },
}

impl RuleError {
    /// Source position for parse errors.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            RuleError::Syntax { line, col, .. } | RuleError::Arity { line, col, .. } => Some((*line, *col)),
            _ => None,
        }
    }
}
