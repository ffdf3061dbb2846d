//! Seeded generators for synthetic corpora, rule specs and rule programs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::rules::{known_arity, Atom, CategoryRuleSpec, Literal, Rule, Term, NGRAM_PREDICATES};

/// Topic vocabularies of a municipal document collection.
pub const THEMES: [(&str, &[&str]); 8] = [
    ("concorsi", &["concorso", "interno", "selezione", "graduatoria", "candidati", "bando", "prova", "commissione", "idonei", "verticale", "vincitore", "ammissione"]),
    ("straordinari", &["straordinari", "ore", "lavoro", "prestazioni", "eccedenti", "compenso", "liquidazione", "orario", "festivo", "notturno", "turni", "maggiorazione"]),
    ("ferie", &["ferie", "congedo", "permessi", "assenza", "malattia", "maternita", "giorni", "retribuiti", "recupero", "riposo", "fruizione", "residue"]),
    ("sciopero", &["sciopero", "sindacali", "adesione", "astensione", "rsu", "assemblea", "trattenute", "vertenza", "mobilitazione", "sindacato", "proclamazione", "relazioni"]),
    ("lsu", &["lsu", "lpu", "socialmente", "utili", "progetti", "inps", "sussidio", "stabilizzazione", "inail", "convenzione", "impiego", "regione"]),
    ("appalti", &["appalto", "gara", "offerta", "aggiudicazione", "ribasso", "ditta", "fornitura", "capitolato", "lavori", "cig", "contratto", "preventivo"]),
    ("tributi", &["tributi", "ici", "tarsu", "imposta", "accertamento", "rimborso", "contribuente", "riscossione", "aliquota", "sanzioni", "ruolo", "versamento"]),
    ("urbanistica", &["urbanistica", "piano", "regolatore", "variante", "lottizzazione", "edilizia", "concessione", "permesso", "costruire", "suolo", "zona", "catasto"]),
];

/// Function words shared by every theme.
pub const FILLER: [&str; 16] = [
    "il", "comune", "di", "delibera", "giunta", "visto", "la", "del", "per", "con", "dirigente", "settore", "determina",
    "si", "approva", "atto",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntheticDoc {
    pub id: String,
    /// Index into [`THEMES`].
    pub theme: usize,
    pub text: String,
}

/// `n_docs` documents cycling through the themes, each 40 to 80 tokens of
/// which roughly two thirds come from the document's theme.
pub fn synthetic_corpus(n_docs: usize, seed: u64) -> Vec<SyntheticDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let theme = i % THEMES.len();
            let len = rng.random_range(40..=80);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.random_bool(0.65) {
                        *THEMES[theme].1.choose(&mut rng).expect("non-empty theme")
                    } else {
                        *FILLER.choose(&mut rng).expect("non-empty filler")
                    }
                })
                .collect();
            SyntheticDoc {
                id: format!("doc{i:04}"),
                theme,
                text: words.join(" "),
            }
        })
        .collect()
}

/// One `{"id": .., "text": ..}` object per line.
pub fn to_jsonl(docs: &[SyntheticDoc]) -> String {
    docs.iter()
        .map(|d| serde_json::json!({ "id": d.id, "text": d.text }).to_string() + "\n")
        .collect()
}

/// Vocabulary `w0 .. w{size-1}`.
pub fn vocabulary(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("w{i}")).collect()
}

/// Up to `max_docs` short documents over `vocab`.
pub fn random_texts(rng: &mut impl Rng, vocab: &[String], max_docs: usize, max_len: usize) -> Vec<(String, String)> {
    let n = rng.random_range(1..=max_docs.max(1));
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=max_len.max(1));
            let words: Vec<&str> = (0..len).map(|_| vocab.choose(rng).expect("vocabulary").as_str()).collect();
            (format!("d{i}"), words.join(" "))
        })
        .collect()
}

fn random_gram(rng: &mut impl Rng, vocab: &[String], texts: &[(String, String)]) -> String {
    let n = rng.random_range(1..=3);
    if rng.random_bool(0.7) {
        let (_, text) = texts.choose(rng).expect("texts");
        let words: Vec<&str> = text.split(' ').collect();
        if words.len() >= n {
            let start = rng.random_range(0..=words.len() - n);
            return words[start..start + n].join(" ");
        }
    }
    (0..n).map(|_| vocab.choose(rng).expect("vocabulary").as_str()).collect::<Vec<_>>().join(" ")
}

fn random_clause(rng: &mut impl Rng, vocab: &[String], texts: &[(String, String)]) -> Vec<String> {
    let len = rng.random_range(1..=3);
    (0..len).map(|_| random_gram(rng, vocab, texts)).collect()
}

/// Spec with at most `max_clauses` clauses in total and at least one
/// positive clause. Grams are mostly windows of `texts`, so they hit.
pub fn random_spec(
    rng: &mut impl Rng,
    category: &str,
    vocab: &[String],
    texts: &[(String, String)],
    max_clauses: usize,
) -> CategoryRuleSpec {
    let total = rng.random_range(1..=max_clauses.max(1));
    let positives = rng.random_range(1..=total);
    CategoryRuleSpec {
        category: category.to_string(),
        positives: (0..positives).map(|_| random_clause(rng, vocab, texts)).collect(),
        negatives: (positives..total).map(|_| random_clause(rng, vocab, texts)).collect(),
    }
}

const STRING_CHARS: &[char] = &[
    'a', 'b', 'c', 'e', 'i', 'n', 'o', 'r', 's', 't', 'z', 'à', 'è', 'ò', '0', '7', '-', '\'', '#', 'Q',
];
const IDENT_TAIL: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";

fn random_word(rng: &mut impl Rng, first: &[u8]) -> String {
    let mut s = String::from(*first.choose(rng).expect("alphabet") as char);
    for _ in 0..rng.random_range(0..6) {
        s.push(*IDENT_TAIL.choose(rng).expect("alphabet") as char);
    }
    s
}

fn random_term(rng: &mut impl Rng) -> Term {
    match rng.random_range(0..4) {
        0 => {
            let words: Vec<String> = (0..rng.random_range(0..4))
                .map(|_| {
                    let len = rng.random_range(1..6);
                    (0..len)
                        .map(|_| *STRING_CHARS.choose(rng).expect("alphabet"))
                        .collect()
                })
                .collect();
            Term::Str(words.join(" "))
        }
        1 => Term::Int(rng.random_range(-1_000_000..=1_000_000)),
        2 => Term::Var(random_word(rng, b"ABCDEFGHIJKLMNOPQRSTUVWXYZ")),
        _ => Term::Anon,
    }
}

fn random_atom(rng: &mut impl Rng) -> Atom {
    let predicate = match rng.random_range(0..4) {
        0 => NGRAM_PREDICATES.choose(rng).expect("predicates").to_string(),
        1 => ["positive", "negative", "success", "not"].choose(rng).expect("predicates").to_string(),
        _ => random_word(rng, b"abcdefghijklmnopqrstuvwxyz"),
    };
    let arity = known_arity(&predicate).unwrap_or_else(|| rng.random_range(1..=6));
    Atom {
        predicate,
        args: (0..arity).map(|_| random_term(rng)).collect(),
    }
}

/// A syntactically valid program; safety and stratification are not
/// guaranteed.
pub fn random_program(rng: &mut impl Rng, max_rules: usize) -> Vec<Rule> {
    (0..rng.random_range(0..=max_rules))
        .map(|_| Rule {
            head: random_atom(rng),
            body: (0..rng.random_range(0..5))
                .map(|_| Literal {
                    negated: rng.random_bool(0.3),
                    atom: random_atom(rng),
                })
                .collect(),
        })
        .collect()
}
