use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ast::SUCCESS;
use super::eval::{DerivedFacts, Value};
use crate::schema::Ontology;

/// One derived `success` fact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub category: String,
    pub doc_id: String,
    pub scores: [i64; 3],
    /// Index of the rule that first derived the fact, if known.
    pub rule: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    /// Sorted by category, then document.
    pub assignments: Vec<Assignment>,
    /// Distinct documents per category.
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl Classification {
    pub fn documents_of(&self, category: &str) -> BTreeSet<&str> {
        self.assignments
            .iter()
            .filter(|a| a.category == category)
            .map(|a| a.doc_id.as_str())
            .collect()
    }

    pub fn categories_of(&self, doc_id: &str) -> BTreeSet<&str> {
        self.assignments
            .iter()
            .filter(|a| a.doc_id == doc_id)
            .map(|a| a.category.as_str())
            .collect()
    }
}

fn text(v: &Value) -> String {
    match v {
        Value::Str(s) => s.clone(),
        Value::Int(i) => i.to_string(),
    }
}

/// Reads the `success` relation. Categories unknown to `ontology` are kept
/// but reported.
pub fn classify_corpus(facts: &DerivedFacts, ontology: Option<&Ontology>) -> Classification {
    let mut out = Classification::default();
    let mut docs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut malformed = 0usize;
    for tuple in facts.relation(SUCCESS) {
        let scores: Vec<i64> = tuple[2..]
            .iter()
            .filter_map(|v| match v {
                Value::Int(i) => Some(*i),
                Value::Str(_) => None,
            })
            .collect();
        let Ok(scores) = <[i64; 3]>::try_from(scores) else {
            malformed += 1;
            continue;
        };
        let a = Assignment {
            category: text(&tuple[0]),
            doc_id: text(&tuple[1]),
            scores,
            rule: facts.derivation(SUCCESS, tuple),
        };
        docs.entry(a.category.clone()).or_default().insert(a.doc_id.clone());
        out.assignments.push(a);
    }
    out.assignments.sort();
    out.counts = docs.iter().map(|(c, d)| (c.clone(), d.len())).collect();
    if malformed > 0 {
        out.warnings.push(format!("{malformed} success facts with non-integer scores ignored"));
    }
    if let Some(o) = ontology {
        let labels: BTreeSet<&str> = o.root.walk().into_iter().map(|n| n.label.as_str()).collect();
        for c in docs.keys().filter(|c| !labels.contains(c.as_str())) {
            out.warnings.push(format!("category {c:?} is not in the ontology"));
        }
    }
    out
}

/// CSV with header `category,doc_id,s1,s2,s3`.
pub fn write_assignments_csv<W: Write>(assignments: &[Assignment], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "doc_id", "s1", "s2", "s3"])?;
    for a in assignments {
        let s = a.scores.map(|x| x.to_string());
        w.write_record([a.category.as_str(), a.doc_id.as_str(), &s[0], &s[1], &s[2]])?;
    }
    w.flush()?;
    Ok(())
}
