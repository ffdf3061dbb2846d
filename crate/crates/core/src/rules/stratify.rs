use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::ast::{ngram_arity, Rule, NEGATIVE, POSITIVE, SUCCESS};
use super::RuleError;

/// Stratum of every predicate mentioned by a program. Extensional
/// predicates (the n-gram relations and anything never defined by a rule)
/// sit in stratum 0; defined predicates start at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strata {
    pub levels: BTreeMap<String, usize>,
}

impl Strata {
    pub fn of(&self, predicate: &str) -> usize {
        self.levels.get(predicate).copied().unwrap_or(0)
    }

    pub fn max(&self) -> usize {
        self.levels.values().copied().max().unwrap_or(0)
    }
}

/// Safety and negation checks shared by every program.
///
/// Each named variable of the head or of a negated literal must occur in a
/// positive body literal, and negation may only wrap `positive`,
/// `negative` or n-gram atoms.
pub fn check_program(rules: &[Rule]) -> Result<(), RuleError> {
    for rule in rules {
        let bound: BTreeSet<&str> = rule
            .body
            .iter()
            .filter(|l| !l.negated)
            .flat_map(|l| l.atom.variables())
            .collect();
        let unsafe_var = rule
            .head
            .variables()
            .chain(rule.body.iter().filter(|l| l.negated).flat_map(|l| l.atom.variables()))
            .find(|v| !bound.contains(v));
        if let Some(v) = unsafe_var {
            return Err(RuleError::Unsafe {
                rule: rule.to_string(),
                variable: v.to_string(),
            });
        }
        for lit in rule.body.iter().filter(|l| l.negated) {
            let p = lit.atom.predicate.as_str();
            if !(p == POSITIVE || p == NEGATIVE || ngram_arity(p).is_some()) {
                return Err(RuleError::ForbiddenNegation {
                    rule: rule.to_string(),
                    predicate: p.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Hand-written rules may only define the classification predicates.
pub fn check_manual_heads(rules: &[Rule]) -> Result<(), RuleError> {
    for rule in rules {
        let p = rule.head.predicate.as_str();
        if !matches!(p, POSITIVE | NEGATIVE | SUCCESS) {
            return Err(RuleError::HeadPredicate {
                rule: rule.to_string(),
                predicate: p.to_string(),
            });
        }
    }
    Ok(())
}

/// Assigns strata, rejecting programs with negation inside a recursive
/// cycle.
pub fn stratify(rules: &[Rule]) -> Result<Strata, RuleError> {
    let defined: BTreeSet<&str> = rules.iter().map(|r| r.head.predicate.as_str()).collect();
    let mut graph = DiGraph::<String, bool>::new();
    let mut nodes: BTreeMap<&str, NodeIndex> = BTreeMap::new();
    for rule in rules {
        let atoms = std::iter::once(&rule.head).chain(rule.body.iter().map(|l| &l.atom));
        for atom in atoms {
            nodes
                .entry(atom.predicate.as_str())
                .or_insert_with(|| graph.add_node(atom.predicate.clone()));
        }
        let head = nodes[rule.head.predicate.as_str()];
        for lit in &rule.body {
            graph.add_edge(nodes[lit.atom.predicate.as_str()], head, lit.negated);
        }
    }
    for scc in tarjan_scc(&graph) {
        let members: BTreeSet<_> = scc.iter().copied().collect();
        let negative_inside = graph.edge_indices().any(|e| {
            let (a, b) = graph.edge_endpoints(e).expect("edge exists");
            graph[e] && members.contains(&a) && members.contains(&b)
        });
        if negative_inside {
            let mut cycle: Vec<String> = members.iter().map(|n| graph[*n].clone()).collect();
            cycle.sort();
            return Err(RuleError::NegationCycle { cycle });
        }
    }
    // Longest-path relaxation; terminates because negative edges are acyclic.
    let mut levels: BTreeMap<String, usize> = nodes
        .keys()
        .map(|p| (p.to_string(), usize::from(defined.contains(p))))
        .collect();
    loop {
        let mut changed = false;
        for rule in rules {
            let mut need = levels[&rule.head.predicate];
            for lit in &rule.body {
                let dep = levels[&lit.atom.predicate];
                need = need.max(if lit.negated { dep + 1 } else { dep });
            }
            if need > levels[&rule.head.predicate] {
                levels.insert(rule.head.predicate.clone(), need);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Strata { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_program;

    const CONCORSO: &str = r#"
positive("concorso interno",IdDoc) :- twogram(IdDoc,"concorso interno",_ ,_ ,_ ).
negative("concorso interno",IdDoc) :- twogram(IdDoc,"render vacante",_ ,_ ,_ ), twogram(IdDoc,"seguito concorso",_ ,_ ,_ ).
success("concorso interno",IdDoc,100,100,100) :- positive("concorso interno",IdDoc), not negative("concorso interno",IdDoc).
"#;

    #[test]
    fn classification_program_strata() {
        let strata = stratify(&parse_program(CONCORSO).unwrap()).unwrap();
        let expected: BTreeMap<String, usize> = [("twogram", 0), ("positive", 1), ("negative", 1), ("success", 2)]
            .into_iter()
            .map(|(p, s)| (p.to_string(), s))
            .collect();
        assert_eq!(strata.levels, expected);
    }

    #[test]
    fn negation_cycle_rejected() {
        let rules = parse_program("negative(\"c\",D) :- onegram(D,_,_,_,_), not positive(\"c\",D).\npositive(\"c\",D) :- onegram(D,_,_,_,_), not negative(\"c\",D).").unwrap();
        assert_eq!(
            stratify(&rules),
            Err(RuleError::NegationCycle { cycle: vec!["negative".into(), "positive".into()] })
        );
    }

    #[test]
    fn positive_recursion_is_one_stratum() {
        let rules = parse_program(
            "success(\"a\",D,X,Y,Z) :- success(\"b\",D,X,Y,Z).\nsuccess(\"b\",D,1,1,1) :- positive(\"b\",D).\npositive(\"b\",D) :- onegram(D,\"x\",_,_,_).",
        )
        .unwrap();
        let s = stratify(&rules).unwrap();
        assert_eq!(s.of("success"), 1);
        assert_eq!(s.of("positive"), 1);
        assert_eq!(s.max(), 1);
    }

    #[test]
    fn safety() {
        let unsafe_head = parse_program("positive(\"c\",D) :- onegram(E,\"x\",_,_,_).").unwrap();
        assert!(matches!(check_program(&unsafe_head), Err(RuleError::Unsafe { ref variable, .. }) if variable == "D"));
        let unsafe_neg = parse_program("positive(\"c\",D) :- onegram(D,\"x\",_,_,_), not negative(\"c\",E).").unwrap();
        assert!(matches!(check_program(&unsafe_neg), Err(RuleError::Unsafe { .. })));
        let fact = parse_program("positive(\"c\",D).").unwrap();
        assert!(check_program(&fact).is_err());
        let neg_success = parse_program("positive(\"c\",D) :- onegram(D,\"x\",_,_,_), not success(\"c\",D,1,1,1).").unwrap();
        assert!(matches!(check_program(&neg_success), Err(RuleError::ForbiddenNegation { .. })));
        assert!(check_program(&parse_program(CONCORSO).unwrap()).is_ok());
        let bad_head = parse_program("label(\"c\",D) :- positive(\"c\",D).").unwrap();
        assert!(matches!(check_manual_heads(&bad_head), Err(RuleError::HeadPredicate { .. })));
    }
}
