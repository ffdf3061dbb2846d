use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::Request;
use ontodesign_cli::service::{router, AppState};
use ontodesign_core::project::Project;
use ontodesign_core::synth::{synthetic_corpus, to_jsonl};
use tower::ServiceExt;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/concorso_interno.rules");

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn new(docs: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("corpus.jsonl"), to_jsonl(&synthetic_corpus(docs, 5))).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ontodesign"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let w = Workdir::new(10);
    assert_eq!(code(&w.run(&["frobnicate"])), 2);
    assert_eq!(code(&w.run(&[])), 2);
    assert_eq!(code(&w.run(&["cluster", "--k", "many"])), 2);
    let help = w.run(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("classify"));
}

#[test]
fn rules_check_reports_positions() {
    let w = Workdir::new(10);
    let out = w.ok(&["rules", "check", FIXTURE]);
    assert!(out.contains("6 rules (3 positive, 2 negative, 1 success)"), "{out}");
    fs::write(w.path("bad.rules"), "positive(\"c\",D) :-\n  twogram(D,\"x\",_,_,_)").unwrap();
    let out = w.run(&["rules", "check", "bad.rules"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2, column 23"), "{err}");
    fs::write(w.path("cycle.rules"), "positive(\"c\",D) :- onegram(D,_,_,_,_), not negative(\"c\",D).\nnegative(\"c\",D) :- onegram(D,_,_,_,_), not positive(\"c\",D).").unwrap();
    assert_eq!(code(&w.run(&["rules", "check", "cycle.rules"])), 1);
}

#[test]
fn ordering_guards() {
    let w = Workdir::new(20);
    assert_eq!(code(&w.run(&["classify"])), 1);
    w.ok(&["ingest", "corpus.jsonl"]);
    let out = w.run(&["classify"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no typology"));
    fs::create_dir(w.path("empty")).unwrap();
    let out = w.run(&["--project", "other.json", "ingest", "empty"]);
    assert_eq!(code(&out), 1);
    assert!(!w.path("other.json").exists());
}

#[test]
fn pipeline_through_the_binary() {
    let w = Workdir::new(80);
    w.ok(&["ingest", "corpus.jsonl", "--name", "demo"]);
    let top = w.ok(&["cluster", "--k", "4", "--depth", "2", "--seed", "7", "--restarts", "3"]);
    assert_eq!(top.lines().count(), 4);
    assert_eq!(w.ok(&["cluster", "--k", "4", "--depth", "2", "--seed", "7", "--restarts", "3"]), top);

    fs::write(
        w.path("edits.jsonl"),
        "// first pass\n{\"op\":\"rename\",\"target\":\"#0\",\"new_label\":\"concorso\"}\n{\"op\":\"specialize\",\"parent\":\"#0\",\"new_label\":\"concorso interno\"}\n",
    )
    .unwrap();
    assert!(w.ok(&["edit", "apply", "edits.jsonl"]).starts_with("2 edits in log"));
    fs::write(w.path("broken.jsonl"), "{\"op\":\"reduce\",\"target\":\"#9\"}\n").unwrap();
    assert_eq!(code(&w.run(&["edit", "apply", "broken.jsonl"])), 1);
    let report: serde_json::Value = serde_json::from_str(&w.ok(&["edit", "validate"])).unwrap();
    assert!(report["exclusivity"].as_array().unwrap().is_empty());

    let defaults = w.ok(&["rules", "gen-defaults", "--parent-child"]);
    assert!(defaults.contains("success(\"concorso\", IdDoc, S1, S2, S3) :- success(\"concorso interno\", IdDoc, S1, S2, S3)."));
    w.ok(&["rules", "set", "concorso interno", "-p", "concorso interno", "-p", "selezione", "-n", "bando, prova"]);
    w.ok(&["rules", "manual", FIXTURE]);
    w.ok(&["rules", "parent-child", "on"]);
    let program = w.ok(&["rules", "compile"]);
    assert!(program.contains("negative(\"concorso interno\", IdDoc) :- onegram(IdDoc, \"bando\", _, _, _), onegram(IdDoc, \"prova\", _, _, _)."));

    let counts = w.ok(&["classify", "--csv", "out.csv"]);
    let count = |label: &str| -> usize {
        counts.lines().find_map(|l| l.strip_prefix(&format!("{label}\t"))).unwrap().parse().unwrap()
    };
    assert!(count("concorso") >= count("concorso interno"));
    assert!(fs::read_to_string(w.path("out.csv")).unwrap().starts_with("category,doc_id,s1,s2,s3\n"));

    let tree = w.ok(&["export", "tree-json"]);
    assert!(tree.contains("\"concorso interno\""));
    w.ok(&["export", "dot", "-o", "o.dot"]);
    assert!(fs::read_to_string(w.path("o.dot")).unwrap().starts_with("digraph"));
    assert_eq!(code(&w.run(&["export", "pdf"])), 1);

    assert!(w.ok(&["edit", "undo"]).contains("specialize"));
    assert!(w.ok(&["cluster", "--code", "#1", "--k", "2", "--depth", "1"]).lines().count() == 4);
}

async fn post(state: &std::sync::Arc<AppState>, method: &str, uri: &str, body: String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let res = router(state.clone()).oneshot(req).await.unwrap();
    assert!(res.status().is_success(), "{uri}: {}", res.status());
}

fn normalized(path: &Path) -> String {
    Project::load(path).unwrap().to_json()
}

#[tokio::test]
async fn api_and_cli_converge() {
    let w = Workdir::new(60);
    w.ok(&["ingest", "corpus.jsonl"]);
    w.ok(&["cluster", "--k", "3", "--depth", "1", "--seed", "2", "--restarts", "2"]);
    fs::copy(w.path("ontodesign.json"), w.path("api.json")).unwrap();

    let edits = [
        r##"{"op":"rename","target":"#0","new_label":"sciopero"}"##,
        r##"{"op":"generalize","targets":["#1","#2"],"new_label":"personale"}"##,
    ];
    fs::write(w.path("edits.jsonl"), edits.join("\n")).unwrap();
    w.ok(&["edit", "apply", "edits.jsonl"]);
    w.ok(&["rules", "set", "sciopero", "-p", "sciopero", "-n", "adesione, assemblea"]);
    w.ok(&["rules", "manual", FIXTURE]);
    w.ok(&["classify"]);

    let api_path = w.path("api.json");
    let project = Project::load(&api_path).unwrap();
    let (artifacts, _) = project.load_artifacts(&api_path).unwrap();
    let state = AppState::new(project, artifacts, Some(api_path.clone()));
    for e in edits {
        post(&state, "POST", "/api/edits", e.to_string()).await;
    }
    post(&state, "PUT", "/api/rules/sciopero", r#"{"positives":[["sciopero"]],"negatives":[["adesione","assemblea"]]}"#.into()).await;
    post(&state, "PUT", "/api/rules/manual", fs::read_to_string(FIXTURE).unwrap()).await;
    post(&state, "POST", "/api/classify", String::new()).await;

    assert_eq!(normalized(&api_path), normalized(&w.path("ontodesign.json")));
}
