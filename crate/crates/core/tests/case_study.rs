//! The municipal-personnel schema built on a synthetic two-level typology
//! with codes `#0#0 .. #9#9`.

use std::collections::BTreeMap;

use ontodesign_core::cluster::{ClusterParams, Typology, TypologyNode};
use ontodesign_core::corpus::{Corpus, NGramIndex, TokenizerConfig};
use ontodesign_core::rules::{assemble_program, classify_corpus, evaluate, generate_match_rules, print_program};
use ontodesign_core::schema::{init_from_typology, replay, validate, EditOp, EditRecord, NodeKind, Ontology};
use ontodesign_core::vectorize::SparseRow;

const EXCLUDED: &[&str] = &[
    "#0#3", "#0#6", "#0#7", "#0#8", "#0#9", "#1#2", "#1#3", "#1#5", "#1#7", "#1#9", "#2#0", "#2#3", "#2#4", "#2#6",
    "#2#9", "#3", "#4#0", "#4#2", "#4#7", "#5#0", "#5#1", "#6", "#7#0", "#7#2", "#7#3", "#8#1", "#8#2", "#8#3", "#8#4",
    "#8#5", "#8#6", "#8#7", "#8#8", "#8#9", "#9#0", "#9#2", "#9#3", "#9#4", "#9#5", "#9#7", "#9#8", "#9#9",
];

const SYNTHESIS: &[(&str, &[&str])] = &[
    ("#A", &["#0#0", "#0#4"]),
    ("#B", &["#1#0", "#1#1", "#1#4", "#1#8"]),
    ("#C", &["#2#7", "#2#8"]),
    ("#D", &["#4#3", "#4#4", "#4#9"]),
    ("#E", &["#4#5", "#4#6", "#4#8"]),
    ("#F", &["#5#2", "#5#6"]),
    ("#G", &["#5#4", "#5#5", "#5#7", "#5#8", "#5#9"]),
    ("#H", &["#7#4", "#7#5", "#7#7"]),
    ("#I", &["#7#6", "#7#8"]),
];

const FIRST_LEVEL: &[&str] = &["#0", "#1", "#2", "#4", "#5", "#7", "#8", "#9"];

/// Representative class of the remaining nodes.
const CLASSES: &[(&str, &[&str])] = &[
    ("concorso", &["#A", "#2#5", "#8#0"]),
    ("categorie personale", &["#0#1", "#4#1"]),
    ("lpu ed lsu", &["#0#2", "#C", "#D"]),
    ("compensi a commissioni", &["#0#5"]),
    ("rimborso spese", &["#B", "#I", "#9#6"]),
    ("retribuzione ordinaria", &["#1#6", "#2#2"]),
    ("consulenti", &["#2#1", "#7#9"]),
    ("straordinari", &["#E", "#9#1"]),
    ("sciopero", &["#F"]),
    ("trattenimento in servizio", &["#5#3"]),
    ("esodo", &["#G"]),
    ("compensi ad amministratori", &["#7#1"]),
    ("compensi a liberi professionisti", &["#H"]),
];

const GENERALIZATIONS: &[(&str, &[&str])] = &[
    ("misure contro la disoccupazione", &["lpu ed lsu", "esodo", "trattenimento in servizio"]),
    ("trattamento economico", &["compensi a commissioni", "compensi a liberi professionisti", "compensi ad amministratori"]),
    ("altre voci di retribuzione", &["rimborso spese", "straordinari"]),
    ("controversie del lavoro", &["sciopero"]),
    ("ordinamento del personale", &["concorso", "categorie personale"]),
    ("tipi di lavoro", &["consulenti"]),
    ("giurisdizione e normativa del lavoro", &["controversie del lavoro", "ordinamento del personale", "tipi di lavoro"]),
    ("retribuzione", &["retribuzione ordinaria", "altre voci di retribuzione"]),
];

const SPECIALIZATIONS: &[(&str, &str)] = &[
    ("tipi di lavoro", "lavoratori dipendenti"),
    ("tipi di lavoro", "lavoro atipico"),
    ("tipi di lavoro", "lavoratori stagionali e temporanei"),
    ("misure contro la disoccupazione", "mobilita dei lavoratori"),
    ("controversie del lavoro", "sindacati"),
];

fn node(code: String, members: Vec<String>, children: Vec<TypologyNode>) -> TypologyNode {
    TypologyNode {
        code,
        members,
        centroid: SparseRow(vec![]),
        top_terms: vec![],
        objective: 0.0,
        children,
    }
}

/// Two documents per second-level cluster.
fn typology() -> Typology {
    let children = (0..10)
        .map(|i| {
            let leaves: Vec<TypologyNode> = (0..10)
                .map(|j| node(format!("#{i}#{j}"), vec![format!("d{i}{j}a"), format!("d{i}{j}b")], vec![]))
                .collect();
            let members = leaves.iter().flat_map(|l| l.members.clone()).collect();
            node(format!("#{i}"), members, leaves)
        })
        .collect::<Vec<_>>();
    let mut all: Vec<String> = children.iter().flat_map(|c| c.members.clone()).collect();
    all.sort();
    Typology {
        root: node(String::new(), all, children),
        params: ClusterParams { k: 10, depth: 2, ..ClusterParams::default() },
        features: vec![],
        warnings: vec![],
    }
}

fn ids(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn step_reduce() -> Vec<EditOp> {
    EXCLUDED.iter().map(|c| EditOp::Reduce { target: c.to_string() }).collect()
}

fn step_aggregate() -> Vec<EditOp> {
    let mut ops: Vec<EditOp> = SYNTHESIS
        .iter()
        .map(|(label, targets)| EditOp::Aggregate { targets: ids(targets), new_label: label.to_string(), new_id: None })
        .collect();
    ops.push(EditOp::Aggregate { targets: ids(FIRST_LEVEL), new_label: "#L".into(), new_id: None });
    for (label, targets) in CLASSES {
        ops.push(if targets.len() == 1 {
            EditOp::Rename { target: targets[0].to_string(), new_label: label.to_string() }
        } else {
            EditOp::Aggregate { targets: ids(targets), new_label: label.to_string(), new_id: Some(label.to_string()) }
        });
    }
    ops
}

fn step_generalize() -> Vec<EditOp> {
    GENERALIZATIONS
        .iter()
        .map(|(label, targets)| {
            // renamed singletons keep their cluster code as id
            let targets = targets
                .iter()
                .map(|t| match CLASSES.iter().find(|(l, c)| l == t && c.len() == 1) {
                    Some((_, codes)) => codes[0].to_string(),
                    None => t.to_string(),
                })
                .collect();
            EditOp::Generalize { targets, new_label: label.to_string(), new_id: Some(label.to_string()) }
        })
        .collect()
}

fn step_specialize() -> Vec<EditOp> {
    SPECIALIZATIONS
        .iter()
        .map(|(parent, label)| EditOp::Specialize { parent: parent.to_string(), new_label: label.to_string(), new_id: None })
        .collect()
}

fn apply_all(mut o: Ontology, ops: Vec<EditOp>) -> Ontology {
    for op in ops {
        o = o.apply(op.clone()).unwrap_or_else(|e| panic!("{op:?}: {e}"));
    }
    o
}

fn full_log() -> Vec<EditRecord> {
    [step_reduce(), step_aggregate(), step_generalize(), step_specialize()]
        .concat()
        .into_iter()
        .map(EditRecord::from)
        .collect()
}

fn sorted_leaf_extensions(o: &Ontology) -> Vec<Vec<String>> {
    let mut v: Vec<Vec<String>> = o.leaf_extensions().into_iter().map(|s| s.into_iter().collect()).collect();
    v.sort();
    v
}

#[test]
fn reduction_leaves_clean_partition() {
    let t = typology();
    let fresh = init_from_typology(&t);
    let report = validate(&fresh, t.root.members.iter().map(String::as_str), 3.0);
    assert!(report.exclusivity.is_empty() && report.gaps.is_empty());

    let reduced = apply_all(fresh, step_reduce());
    // 40 second-level codes plus two whole first-level subtrees
    assert_eq!(reduced.unassigned.len(), (EXCLUDED.len() - 2 + 20) * 2);
    let report = validate(&reduced, t.root.members.iter().map(String::as_str), 3.0);
    assert!(report.exclusivity.is_empty());
    assert!(report.gaps.is_empty());
    assert_eq!(report.unassigned.len(), reduced.unassigned.len());
    assert!(reduced.find("#3").is_none() && reduced.find("#6#4").is_none());
}

#[test]
fn synthesis_nodes_take_the_union() {
    let o = apply_all(init_from_typology(&typology()), [step_reduce(), step_aggregate()[..SYNTHESIS.len()].to_vec()].concat());
    let a = o.find("#A").unwrap();
    assert_eq!(a.kind, NodeKind::Synthesis);
    assert_eq!(a.extension.iter().collect::<Vec<_>>(), ["d00a", "d00b", "d04a", "d04b"]);
    assert_eq!(o.find("#G").unwrap().extension.len(), 10);
    assert!(o.find("#0#0").is_none());
}

#[test]
fn generalization_keeps_leaves() {
    let t = typology();
    let before = apply_all(init_from_typology(&t), [step_reduce(), step_aggregate()].concat());
    let after = apply_all(before.clone(), step_generalize());
    assert_eq!(sorted_leaf_extensions(&before), sorted_leaf_extensions(&after));
    let g = after.find("giurisdizione e normativa del lavoro").unwrap();
    assert_eq!(g.kind, NodeKind::Generalization);
    let children: Vec<&str> = g.children.iter().map(|c| c.label.as_str()).collect();
    // sibling order, not argument order
    assert_eq!(children, ["ordinamento del personale", "tipi di lavoro", "controversie del lavoro"]);
    let union: std::collections::BTreeSet<String> = g.children.iter().flat_map(|c| c.extension.clone()).collect();
    assert_eq!(g.extension, union);
}

#[test]
fn final_schema_replays() {
    let t = typology();
    let log = full_log();
    let incremental = apply_all(init_from_typology(&t), log.iter().map(|r| r.op.clone()).collect());
    let a = replay(&t, &log).unwrap();
    let b = replay(&t, &log).unwrap();
    assert_eq!(a.export("tree-json").unwrap(), b.export("tree-json").unwrap());
    assert_eq!(a, incremental);
    a.check_structure().unwrap();

    let top = a.find("#L").unwrap();
    let labels: Vec<&str> = top.children.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(
        labels,
        ["giurisdizione e normativa del lavoro", "misure contro la disoccupazione", "trattamento economico", "retribuzione"]
    );
    let residual = a.find("lavoro atipico").unwrap();
    assert!(residual.extension.is_empty());
    let report = validate(&a, t.root.members.iter().map(String::as_str), 3.0);
    assert!(report.exclusivity.is_empty() && report.gaps.is_empty());
}

#[test]
fn final_schema_classifies_upward() {
    let o = replay(&typology(), &full_log()).unwrap();
    let cfg = TokenizerConfig::default();
    let (rules, warnings) = generate_match_rules(&o, &cfg);
    assert!(warnings.is_empty(), "{warnings:?}");
    let text = print_program(&rules);
    assert!(text.contains("fourgram(IdDoc, \"misure contro la disoccupazione\""));
    assert!(!text.contains("\"#"));

    let corpus = Corpus::from_texts(
        [
            ("x1", "liquidazione degli straordinari di maggio"),
            ("x2", "adesione allo sciopero generale"),
            ("x3", "nessuna categoria"),
        ],
        &cfg,
    )
    .unwrap();
    let index = NGramIndex::build(&corpus, 5, cfg).unwrap();
    let program = assemble_program(&o, &BTreeMap::new(), "", true, &cfg).unwrap();
    let c = classify_corpus(&evaluate(&program.rules, &index).unwrap(), Some(&o));
    let of = |d: &str| c.categories_of(d).into_iter().collect::<Vec<_>>();
    assert_eq!(of("x1"), ["altre voci di retribuzione", "retribuzione", "straordinari"]);
    assert_eq!(of("x2"), ["controversie del lavoro", "giurisdizione e normativa del lavoro", "sciopero"]);
    assert!(of("x3").is_empty());
}
