//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ontodesign_core::cluster::{kmeans, ClusterParams};
use ontodesign_core::corpus::{Corpus, NGramIndex, TokenizerConfig};
use ontodesign_core::project::{run_pipeline, PipelineSettings};
use ontodesign_core::rules::{
    assemble_program, classify_corpus, compile_spec, evaluate, generate_parent_child_rules, parse_program,
    print_program, CategoryRuleSpec, Rule, Term, NEGATIVE, POSITIVE, SUCCESS,
};
use ontodesign_core::schema::{init_from_typology, replay, validate, EditOp, EditRecord, Ontology, DEFAULT_BALANCE_RATIO};
use ontodesign_core::synth::{random_program, random_spec, random_texts, synthetic_corpus, to_jsonl, vocabulary};
use ontodesign_core::vectorize::FeatureMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONCORSO: &str = include_str!("../../core/tests/fixtures/concorso_interno.rules");

type Outcome = Result<(), String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Outcome {
    let spent = start.elapsed();
    ensure!(spent < limit, "took {spent:?}, limit {limit:?}");
    Ok(())
}

fn cfg() -> TokenizerConfig {
    TokenizerConfig::default()
}

fn index_of(texts: &[(String, String)]) -> NGramIndex {
    let corpus = Corpus::from_texts(texts.iter().cloned(), &cfg()).unwrap();
    NGramIndex::build(&corpus, 5, cfg()).unwrap()
}

fn contains(text: &str, gram: &str) -> bool {
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    let g: Vec<String> = gram.split_whitespace().map(|w| w.to_lowercase()).collect();
    !g.is_empty() && words.windows(g.len()).any(|w| w == g.as_slice())
}

fn oracle(spec: &CategoryRuleSpec, texts: &[(String, String)]) -> BTreeSet<String> {
    let holds = |text: &str, clause: &Vec<String>| clause.iter().all(|g| contains(text, g));
    texts
        .iter()
        .filter(|(_, t)| spec.positives.iter().any(|c| holds(t, c)) && !spec.negatives.iter().any(|c| holds(t, c)))
        .map(|(id, _)| id.clone())
        .collect()
}

fn success_docs(rules: &[Rule], index: &NGramIndex, category: &str) -> Result<BTreeSet<String>, String> {
    let facts = evaluate(rules, index).map_err(|e| e.to_string())?;
    Ok(classify_corpus(&facts, None).documents_of(category).into_iter().map(String::from).collect())
}

fn concorso_spec() -> CategoryRuleSpec {
    CategoryRuleSpec::from_bullets(
        "concorso interno",
        &["concorso interno", "selezione interna verticale", "selezione interna orizzontale"],
        &["render vacante, seguito concorso", "liquidazione compenso"],
    )
}

fn fixture_fidelity() -> Outcome {
    let start = Instant::now();
    let fixture = parse_program(CONCORSO).map_err(|e| e.to_string())?;
    let count = |p: &str| fixture.iter().filter(|r| r.head.predicate == p).count();
    ensure!(
        (fixture.len(), count(POSITIVE), count(NEGATIVE), count(SUCCESS)) == (6, 3, 2, 1),
        "fixture has {} rules",
        fixture.len()
    );
    let compiled = compile_spec(&concorso_spec(), &cfg()).map_err(|e| e.to_string())?;
    let words: Vec<String> =
        "concorso interno selezione interna verticale orizzontale render vacante seguito liquidazione compenso il"
            .split(' ')
            .map(String::from)
            .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let texts = random_texts(&mut rng, &words, 30, 12);
        let index = index_of(&texts);
        let a = success_docs(&fixture, &index, "concorso interno")?;
        let b = success_docs(&compiled, &index, "concorso interno")?;
        ensure!(a == b, "corpus {case}: fixture {a:?} vs compiled {b:?}");
    }
    within(start, Duration::from_secs(1))
}

fn semantics_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let vocab = vocabulary(rng.random_range(3..=8));
        let texts = random_texts(&mut rng, &vocab, 50, 10);
        let spec = random_spec(&mut rng, "c", &vocab, &texts, 6);
        let rules = compile_spec(&spec, &cfg()).map_err(|e| e.to_string())?;
        if success_docs(&rules, &index_of(&texts), "c")? != oracle(&spec, &texts) {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches");
    within(start, Duration::from_secs(30))
}

fn hand_traced() -> Outcome {
    let texts: Vec<(String, String)> = [
        ("verticale", "avviso di selezione interna verticale per istruttore"),
        ("compenso", "concorso interno e liquidazione compenso commissione"),
        ("vacante", "posto da render vacante con concorso interno"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let rules = parse_program(CONCORSO).map_err(|e| e.to_string())?;
    let got = success_docs(&rules, &index_of(&texts), "concorso interno")?;
    let want: BTreeSet<String> = ["vacante", "verticale"].iter().map(|s| s.to_string()).collect();
    ensure!(got == want, "success set {got:?}");
    Ok(())
}

/// Three top-level categories under the root, then `nodes - 3` specializations.
fn random_ontology(rng: &mut impl Rng, nodes: usize) -> Ontology {
    let typology = planted_typology(3, 1);
    let mut o = init_from_typology(&typology);
    let mut ids = vec![];
    for i in 0..3 {
        o = o.apply(EditOp::Rename { target: format!("#{i}"), new_label: format!("cat{i}") }).unwrap();
        ids.push(format!("#{i}"));
    }
    for i in 3..nodes {
        let parent = ids.choose(rng).unwrap().clone();
        let id = format!("n{i}");
        o = o
            .apply(EditOp::Specialize { parent, new_label: format!("cat{i}"), new_id: Some(id.clone()) })
            .unwrap();
        ids.push(id);
    }
    o
}

fn parent_child_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let o = random_ontology(&mut rng, 20);
    let vocab: Vec<String> = (0..20).map(|i| format!("cat{i}")).chain(["x".into()]).collect();
    let texts = random_texts(&mut rng, &vocab, 50, 4);
    let program = assemble_program(&o, &BTreeMap::new(), "", true, &cfg()).map_err(|e| e.to_string())?;
    let facts = evaluate(&program.rules, &index_of(&texts)).map_err(|e| e.to_string())?;
    let c = classify_corpus(&facts, Some(&o));
    let label = |t: &Term| match t {
        Term::Str(s) => s.clone(),
        other => format!("{other:?}"),
    };
    let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in generate_parent_child_rules(&o) {
        children.entry(label(&r.head.args[0])).or_default().push(label(&r.body[0].atom.args[0]));
    }
    ensure!(children.values().map(Vec::len).sum::<usize>() == 17, "expected 17 edges, got {children:?}");
    for (parent, kids) in &children {
        let up = c.documents_of(parent);
        let mut max_child = 0;
        for kid in kids {
            let down = c.documents_of(kid);
            ensure!(down.is_subset(&up), "{kid} not contained in {parent}");
            max_child = max_child.max(down.len());
        }
        ensure!(up.len() >= max_child, "{parent}: {} < {max_child}", up.len());
    }
    Ok(())
}

/// Pairs of items grouped together (or apart) in both labelings, chance corrected.
fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let choose2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len());
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn planted_points(rng: &mut impl Rng, clusters: usize, per: usize) -> (FeatureMatrix, Vec<usize>) {
    let dim = clusters * 10;
    let mut dense = vec![];
    let mut truth = vec![];
    for c in 0..clusters {
        for _ in 0..per {
            let row: Vec<f64> = (0..dim)
                .map(|f| if f / 10 == c { 1.0 + rng.random::<f64>() * 0.5 } else { rng.random::<f64>() * 0.1 })
                .collect();
            dense.push(row);
            truth.push(c);
        }
    }
    let ids = (0..dense.len()).map(|i| format!("p{i}")).collect();
    let features = (0..dim).map(|f| format!("f{f}")).collect();
    (FeatureMatrix::from_dense(ids, features, &dense), truth)
}

fn kmeans_criteria() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let (matrix, truth) = planted_points(&mut rng, 3, 20);
        let rows: Vec<usize> = (0..matrix.len()).collect();
        let params = ClusterParams { k: 3, restarts: 5, ..ClusterParams::default() };
        let result = kmeans(&matrix, &rows, &params, seed).map_err(|e| e.to_string())?;
        ensure!(result.runs.iter().all(|r| r.is_monotone()), "seed {seed}: objective increased");
        let ari = adjusted_rand_index(&result.assignment, &truth);
        ensure!(ari >= 0.99, "seed {seed}: ARI {ari}");
    }
    for n in [5, 12, 30] {
        let dense: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
        let ids = (0..n).map(|i| format!("q{i}")).collect();
        let matrix = FeatureMatrix::from_dense(ids, (0..8).map(|f| format!("f{f}")).collect(), &dense);
        let rows: Vec<usize> = (0..n).collect();
        let params = ClusterParams { k: n, restarts: 3, ..ClusterParams::default() };
        let result = kmeans(&matrix, &rows, &params, 9).map_err(|e| e.to_string())?;
        ensure!(result.runs.iter().all(|r| r.is_monotone()), "k=N={n}: objective increased");
        ensure!(result.objective.abs() < 1e-9, "k=N={n}: objective {}", result.objective);
    }
    within(start, Duration::from_secs(10))
}

fn planted_typology(k: usize, depth: usize) -> ontodesign_core::cluster::Typology {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("corpus.jsonl");
    std::fs::write(&src, to_jsonl(&synthetic_corpus(200, 6))).unwrap();
    let settings = PipelineSettings {
        cluster: ClusterParams { k, depth, restarts: 3, seed: 1, min_split: Some(k), ..ClusterParams::default() },
        ..PipelineSettings::default()
    };
    let (project, _) = run_pipeline(&src, &settings).unwrap();
    project.typology().unwrap().clone()
}

fn edit_algebra() -> Outcome {
    let typology = planted_typology(5, 2);
    let fresh = init_from_typology(&typology);
    let doc_ids: Vec<String> = typology.root.members.clone();
    let report = validate(&fresh, doc_ids.iter().map(String::as_str), DEFAULT_BALANCE_RATIO);
    ensure!(
        report.exclusivity.is_empty() && report.gaps.is_empty(),
        "fresh typology: {} violations, {} gaps",
        report.exclusivity.len(),
        report.gaps.len()
    );

    let members = |code: &str| -> Result<BTreeSet<String>, String> {
        Ok(typology.root.find(code).ok_or(format!("no cluster {code}"))?.members.iter().cloned().collect())
    };
    let log: Vec<EditRecord> = vec![
        EditOp::Aggregate { targets: vec!["#0#0".into(), "#0#4".into()], new_label: "#A".into(), new_id: None }.into(),
        EditOp::Generalize { targets: vec!["#1#0".into(), "#1#1".into()], new_label: "lavoro".into(), new_id: None }.into(),
        EditOp::Rename { target: "#2".into(), new_label: "sciopero".into() }.into(),
    ];
    let first = replay(&typology, &log).map_err(|e| e.to_string())?;
    let second = replay(&typology, &log).map_err(|e| e.to_string())?;
    let bytes = |o: &Ontology| serde_json::to_string(o).unwrap();
    ensure!(bytes(&first) == bytes(&second), "replay is not byte-identical");

    let union: BTreeSet<String> = members("#0#0")?.union(&members("#0#4")?).cloned().collect();
    let a = first.find("#A").ok_or("no #A node")?;
    ensure!(a.extension == union, "#A extension differs from the union");

    let multiset = |o: &Ontology| {
        let mut v: Vec<Vec<String>> = o.leaf_extensions().into_iter().map(|s| s.into_iter().collect()).collect();
        v.sort();
        v
    };
    let before = fresh.apply(log[0].clone()).map_err(|e| e.to_string())?;
    let after = before.apply(log[1].clone()).map_err(|e| e.to_string())?;
    ensure!(multiset(&before) == multiset(&after), "generalize changed the leaf extensions");
    Ok(())
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ontodesign"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(d.join("corpus.jsonl"), to_jsonl(&synthetic_corpus(200, 8))).map_err(|e| e.to_string())?;
    std::fs::write(
        d.join("edits.jsonl"),
        [
            r##"{"op":"rename","target":"#0","new_label":"concorsi"}"##,
            r##"{"op":"specialize","parent":"#0","new_label":"concorso interno"}"##,
            r##"{"op":"generalize","targets":["#1","#2"],"new_label":"personale"}"##,
        ]
        .join("\n"),
    )
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    run_cli(d, &["ingest", "corpus.jsonl"])?;
    run_cli(d, &["cluster", "--k", "6", "--depth", "2", "--seed", "3"])?;
    run_cli(d, &["edit", "apply", "edits.jsonl"])?;
    run_cli(d, &["rules", "set", "concorso interno", "-p", "concorso interno", "-p", "selezione interna", "-n", "liquidazione compenso"])?;
    run_cli(d, &["rules", "parent-child", "on"])?;
    let program = run_cli(d, &["rules", "compile"])?;
    ensure!(program.contains("success(\"concorsi\", IdDoc"), "default rules missing:\n{program}");
    let counts = run_cli(d, &["classify"])?;
    within(start, Duration::from_secs(10))?;
    let count = |label: &str| {
        counts.lines().find_map(|l| l.strip_prefix(&format!("{label}\t"))).and_then(|n| n.parse::<usize>().ok())
    };
    ensure!(count("concorso interno").is_some() && count("personale").is_some(), "counts missing:\n{counts}");
    ensure!(count("concorsi") >= count("concorso interno"), "propagation failed:\n{counts}");
    ensure!(count("concorsi") > Some(0), "nothing classified:\n{counts}");
    Ok(())
}

fn grammar_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..500 {
        let program = random_program(&mut rng, 8);
        let text = print_program(&program);
        let parsed = parse_program(&text).map_err(|e| format!("case {case}: {e}\n{text}"))?;
        ensure!(parsed == program, "case {case} differs:\n{text}");
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("fixture fidelity", fixture_fidelity),
        ("rule semantics oracle", semantics_oracle),
        ("hand-traced cases", hand_traced),
        ("parent-child closure", parent_child_closure),
        ("k-means", kmeans_criteria),
        ("edit algebra", edit_algebra),
        ("end-to-end desk-scale run", end_to_end),
        ("grammar round-trip", grammar_round_trip),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    println!("{} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
