use std::fmt;

use serde::{Deserialize, Serialize};

/// Predicates answered by the n-gram index, indexed by arity - 1.
pub const NGRAM_PREDICATES: [&str; 5] = ["onegram", "twogram", "threegram", "fourgram", "fivegram"];

pub const POSITIVE: &str = "positive";
pub const NEGATIVE: &str = "negative";
pub const SUCCESS: &str = "success";

/// Number of tokens matched by an n-gram predicate.
pub fn ngram_arity(predicate: &str) -> Option<usize> {
    NGRAM_PREDICATES.iter().position(|p| *p == predicate).map(|i| i + 1)
}

pub fn ngram_predicate(n: usize) -> Option<&'static str> {
    NGRAM_PREDICATES.get(n.wrapping_sub(1)).copied()
}

/// Fixed argument count of the built-in predicates.
pub fn known_arity(predicate: &str) -> Option<usize> {
    match predicate {
        POSITIVE | NEGATIVE => Some(2),
        SUCCESS => Some(5),
        p if ngram_arity(p).is_some() => Some(5),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Str(String),
    Int(i64),
    Var(String),
    Anon,
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    pub fn str(s: &str) -> Self {
        Term::Str(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Self {
            predicate: predicate.to_string(),
            args,
        }
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub negated: bool,
    pub atom: Atom,
}

impl Literal {
    pub fn pos(atom: Atom) -> Self {
        Self { negated: false, atom }
    }

    pub fn neg(atom: Atom) -> Self {
        Self { negated: true, atom }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Literal>,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Str(s) => write!(f, "\"{s}\""),
            Term::Int(i) => write!(f, "{i}"),
            Term::Var(v) => f.write_str(v),
            Term::Anon => f.write_str("_"),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("not ")?;
        }
        write!(f, "{}", self.atom)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        for (i, lit) in self.body.iter().enumerate() {
            f.write_str(if i == 0 { " :- " } else { ", " })?;
            write!(f, "{lit}")?;
        }
        f.write_str(".")
    }
}

/// Canonical text: one rule per line.
pub fn print_program(rules: &[Rule]) -> String {
    rules.iter().map(|r| format!("{r}\n")).collect()
}
