//! Stratified bottom-up evaluation with semi-naive iteration.
//!
//! N-gram atoms are never materialized: each is answered from the index
//! with whatever arguments are bound at the time it is reached.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{ngram_arity, Atom, Literal, Rule, Term};
use super::stratify::{check_program, stratify};
use super::RuleError;
use crate::corpus::{normalize_gram, NGramIndex};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "\"{s}\""),
            Value::Int(i) => write!(f, "{i}"),
        }
    }
}

pub type Tuple = Vec<Value>;

/// Every derived fact, with the index of the rule that first produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DerivedFacts {
    relations: BTreeMap<String, BTreeMap<Tuple, usize>>,
}

impl DerivedFacts {
    pub fn relation(&self, predicate: &str) -> impl Iterator<Item = &Tuple> {
        self.relations.get(predicate).into_iter().flat_map(|r| r.keys())
    }

    pub fn contains(&self, predicate: &str, tuple: &[Value]) -> bool {
        self.relations
            .get(predicate)
            .is_some_and(|r| r.contains_key(tuple))
    }

    /// Index (into the evaluated program) of the rule that derived `tuple`.
    pub fn derivation(&self, predicate: &str, tuple: &[Value]) -> Option<usize> {
        self.relations.get(predicate)?.get(tuple).copied()
    }

    pub fn len(&self) -> usize {
        self.relations.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Facts of every predicate, as printable ground atoms.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tuple)> {
        self.relations
            .iter()
            .flat_map(|(p, r)| r.keys().map(move |t| (p.as_str(), t)))
    }
}

type Bindings = BTreeMap<String, Value>;
/// Facts per predicate, each with the index of the rule that derived it.
type Relations = BTreeMap<String, BTreeMap<Tuple, usize>>;

fn term_value(term: &Term, bindings: &Bindings) -> Option<Value> {
    match term {
        Term::Str(s) => Some(Value::Str(s.clone())),
        Term::Int(i) => Some(Value::Int(*i)),
        Term::Var(v) => bindings.get(v).cloned(),
        Term::Anon => None,
    }
}

/// Extends `bindings` so that `atom` matches `tuple`.
fn unify(atom: &Atom, tuple: &[Value], bindings: &Bindings) -> Option<Bindings> {
    if atom.args.len() != tuple.len() {
        return None;
    }
    let mut out = bindings.clone();
    for (term, value) in atom.args.iter().zip(tuple) {
        match term {
            Term::Anon => {}
            Term::Var(v) => match out.get(v) {
                Some(bound) if bound != value => return None,
                Some(_) => {}
                None => {
                    out.insert(v.clone(), value.clone());
                }
            },
            constant => {
                if term_value(constant, bindings).as_ref() != Some(value) {
                    return None;
                }
            }
        }
    }
    Some(out)
}

struct Evaluator<'a> {
    index: &'a NGramIndex,
    /// Normalized form of every string constant used as gram text.
    gram_cache: BTreeMap<String, String>,
}

impl Evaluator<'_> {
    fn normalized(&mut self, text: &str) -> String {
        if let Some(hit) = self.gram_cache.get(text) {
            return hit.clone();
        }
        let norm = normalize_gram(text, self.index.tokenizer());
        self.gram_cache.insert(text.to_string(), norm.clone());
        norm
    }

    /// Tuples of an n-gram relation compatible with the bound arguments.
    fn ngram_tuples(&mut self, n: usize, atom: &Atom, bindings: &Bindings) -> Vec<Tuple> {
        let doc = term_value(&atom.args[0], bindings);
        let text = term_value(&atom.args[1], bindings);
        // Positions that are neither bound nor named only need one witness per doc.
        let positions_free = atom.args[2..]
            .iter()
            .all(|t| matches!(t, Term::Anon));
        let doc_filter = match &doc {
            Some(Value::Str(d)) => Some(d.as_str()),
            Some(Value::Int(_)) => return Vec::new(),
            None => None,
        };
        let grams: Vec<(String, &[crate::corpus::NGramOccurrence])> = match text {
            Some(Value::Str(t)) => {
                let key = self.normalized(&t);
                let occs = match doc_filter {
                    Some(d) => self.index.lookup_in_doc(n, &key, d),
                    None => self.index.lookup_normalized(n, &key),
                };
                vec![(t, occs)]
            }
            Some(Value::Int(_)) => return Vec::new(),
            None => self
                .index
                .grams(n)
                .map(|(g, occs)| (g.to_string(), occs))
                .collect(),
        };
        let mut out = Vec::new();
        for (text, occs) in grams {
            let mut last_doc: Option<&str> = None;
            for occ in occs {
                if doc_filter.is_some_and(|d| d != occ.doc_id) {
                    continue;
                }
                if positions_free && last_doc == Some(occ.doc_id.as_str()) {
                    continue;
                }
                last_doc = Some(occ.doc_id.as_str());
                out.push(vec![
                    Value::Str(occ.doc_id.clone()),
                    Value::Str(text.clone()),
                    Value::Int(occ.token_pos as i64),
                    Value::Int(occ.char_start as i64),
                    Value::Int(occ.char_end as i64),
                ]);
            }
        }
        out
    }

    fn matches(
        &mut self,
        atom: &Atom,
        bindings: &Bindings,
        facts: &BTreeMap<String, BTreeMap<Tuple, usize>>,
    ) -> Vec<Bindings> {
        if let Some(n) = ngram_arity(&atom.predicate) {
            return self
                .ngram_tuples(n, atom, bindings)
                .iter()
                .filter_map(|t| unify(atom, t, bindings))
                .collect();
        }
        facts
            .get(&atom.predicate)
            .into_iter()
            .flat_map(|r| r.keys())
            .filter_map(|t| unify(atom, t, bindings))
            .collect()
    }

    /// Evaluates one rule body. When `delta` is given, the positive literal
    /// at that position reads only the newest facts.
    fn fire(
        &mut self,
        rule: &Rule,
        total: &Relations,
        delta: Option<(usize, &Relations)>,
    ) -> Vec<Tuple> {
        // Positive literals in order, negations once everything is bound.
        let order: Vec<(usize, &Literal)> = rule
            .body
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.negated)
            .chain(rule.body.iter().enumerate().filter(|(_, l)| l.negated))
            .collect();
        let mut frontier = vec![Bindings::new()];
        for (pos, lit) in order {
            let source = match delta {
                Some((d, facts)) if d == pos => facts,
                _ => total,
            };
            let mut next = Vec::new();
            for b in &frontier {
                let found = self.matches(&lit.atom, b, source);
                if lit.negated {
                    if found.is_empty() {
                        next.push(b.clone());
                    }
                } else {
                    next.extend(found);
                }
            }
            frontier = next;
            if frontier.is_empty() {
                break;
            }
        }
        frontier
            .iter()
            .filter_map(|b| rule.head.args.iter().map(|t| term_value(t, b)).collect())
            .collect()
    }
}

/// Computes every `positive`, `negative`, `success` (and other defined)
/// fact of `rules` over the n-gram facts of `index`.
pub fn evaluate(rules: &[Rule], index: &NGramIndex) -> Result<DerivedFacts, RuleError> {
    check_program(rules)?;
    let strata = stratify(rules)?;
    let mut ev = Evaluator {
        index,
        gram_cache: BTreeMap::new(),
    };
    let mut total: BTreeMap<String, BTreeMap<Tuple, usize>> = BTreeMap::new();
    for level in 1..=strata.max() {
        let layer: Vec<(usize, &Rule)> = rules
            .iter()
            .enumerate()
            .filter(|(_, r)| strata.of(&r.head.predicate) == level)
            .collect();
        let in_layer: BTreeSet<&str> = layer.iter().map(|(_, r)| r.head.predicate.as_str()).collect();

        let mut delta: BTreeMap<String, BTreeMap<Tuple, usize>> = BTreeMap::new();
        for &(i, rule) in &layer {
            for tuple in ev.fire(rule, &total, None) {
                insert_new(&mut delta, &total, &rule.head.predicate, tuple, i);
            }
        }
        merge(&mut total, &delta);

        while !delta.is_empty() {
            let mut fresh: BTreeMap<String, BTreeMap<Tuple, usize>> = BTreeMap::new();
            for &(i, rule) in &layer {
                for (pos, lit) in rule.body.iter().enumerate() {
                    if lit.negated || !in_layer.contains(lit.atom.predicate.as_str()) {
                        continue;
                    }
                    for tuple in ev.fire(rule, &total, Some((pos, &delta))) {
                        insert_new(&mut fresh, &total, &rule.head.predicate, tuple, i);
                    }
                }
            }
            merge(&mut total, &fresh);
            delta = fresh;
        }
    }
    Ok(DerivedFacts { relations: total })
}

fn insert_new(
    into: &mut BTreeMap<String, BTreeMap<Tuple, usize>>,
    total: &BTreeMap<String, BTreeMap<Tuple, usize>>,
    predicate: &str,
    tuple: Tuple,
    rule: usize,
) {
    if total.get(predicate).is_some_and(|r| r.contains_key(&tuple)) {
        return;
    }
    into.entry(predicate.to_string())
        .or_default()
        .entry(tuple)
        .or_insert(rule);
}

fn merge(total: &mut BTreeMap<String, BTreeMap<Tuple, usize>>, delta: &BTreeMap<String, BTreeMap<Tuple, usize>>) {
    for (p, facts) in delta {
        let rel = total.entry(p.clone()).or_default();
        for (t, r) in facts {
            rel.entry(t.clone()).or_insert(*r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, TokenizerConfig};
    use crate::rules::parse_program;

    fn index(docs: &[(&str, &str)]) -> NGramIndex {
        let cfg = TokenizerConfig::default();
        let corpus = Corpus::from_texts(docs.iter().copied(), &cfg).unwrap();
        NGramIndex::build(&corpus, 3, cfg).unwrap()
    }

    fn s(x: &str) -> Value {
        Value::Str(x.to_string())
    }

    #[test]
    fn transitive_closure_through_recursion() {
        let idx = index(&[("d1", "x")]);
        let rules = parse_program(
            "success(\"a\",D,X,Y,Z) :- success(\"b\",D,X,Y,Z).\n\
             success(\"b\",D,X,Y,Z) :- success(\"c\",D,X,Y,Z).\n\
             success(\"c\",D,7,8,9) :- onegram(D,\"x\",_,_,_).",
        )
        .unwrap();
        let facts = evaluate(&rules, &idx).unwrap();
        for c in ["a", "b", "c"] {
            assert!(facts.contains("success", &[s(c), s("d1"), Value::Int(7), Value::Int(8), Value::Int(9)]));
        }
        assert_eq!(facts.len(), 3);
        assert_eq!(facts.derivation("success", &[s("a"), s("d1"), Value::Int(7), Value::Int(8), Value::Int(9)]), Some(0));
    }

    #[test]
    fn positions_bind_when_named() {
        let idx = index(&[("d1", "lsu x lsu")]);
        let rules = parse_program("positive(\"c\",D) :- onegram(D,\"lsu\",P,_,_), onegram(D,\"x\",1,_,_), positive2(D, P).\npositive2(D,P) :- onegram(D,\"lsu\",P,S,E).").unwrap();
        let facts = evaluate(&rules, &idx).unwrap();
        assert_eq!(facts.relation("positive2").count(), 2);
        assert!(facts.contains("positive", &[s("c"), s("d1")]));
    }

    #[test]
    fn unbound_gram_text_scans_index() {
        let idx = index(&[("d1", "alfa beta"), ("d2", "gamma")]);
        let rules = parse_program("positive(\"any\",D) :- twogram(D,T,_,_,_).").unwrap();
        let facts = evaluate(&rules, &idx).unwrap();
        let docs: Vec<&Tuple> = facts.relation("positive").collect();
        assert_eq!(docs, [&vec![s("any"), s("d1")]]);
    }

    #[test]
    fn negated_ngram_atom() {
        let idx = index(&[("d1", "lsu"), ("d2", "lsu inail")]);
        let rules = parse_program("positive(\"c\",D) :- onegram(D,\"lsu\",_,_,_), not onegram(D,\"inail\",_,_,_).").unwrap();
        let facts = evaluate(&rules, &idx).unwrap();
        assert!(facts.contains("positive", &[s("c"), s("d1")]));
        assert!(!facts.contains("positive", &[s("c"), s("d2")]));
    }

    #[test]
    fn empty_program_derives_nothing() {
        let idx = index(&[("d1", "x")]);
        assert!(evaluate(&[], &idx).unwrap().is_empty());
    }

    #[test]
    fn unstratifiable_program_is_rejected() {
        let idx = index(&[("d1", "x")]);
        let rules = parse_program("negative(\"c\",D) :- onegram(D,_,_,_,_), not positive(\"c\",D).\npositive(\"c\",D) :- onegram(D,_,_,_,_), not negative(\"c\",D).").unwrap();
        assert!(matches!(evaluate(&rules, &idx), Err(RuleError::NegationCycle { .. })));
    }
}
