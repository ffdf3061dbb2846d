//! Lexer and recursive-descent parser for rule programs.
//!
//! ```text
//! program := rule*
//! rule    := atom (":-" literal ("," literal)*)? "."
//! literal := ("not" ws)? atom
//! atom    := ident "(" term ("," term)* ")"
//! term    := string | integer | Variable | "_"
//! ```
//!
//! `%` starts a comment running to the end of the line. Whitespace inside a
//! string literal, line breaks included, collapses to a single space.

use super::ast::{known_arity, Atom, Literal, Rule, Term};
use super::RuleError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Anon,
    Str(String),
    Int(i64),
    Neck,
    LParen,
    RParen,
    Comma,
    Dot,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Var(s) => format!("variable `{s}`"),
            Tok::Anon => "`_`".into(),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Neck => "`:-`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
    /// Whitespace or a comment precedes the token.
    spaced: bool,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, col: usize, message: impl Into<String>) -> RuleError {
        RuleError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn word(&mut self, first: char) -> String {
        let mut s = String::from(first);
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, RuleError> {
        let mut out = Vec::new();
        let mut spaced = false;
        loop {
            let (line, col) = (self.line, self.col);
            let Some(c) = self.bump() else {
                out.push(Spanned { tok: Tok::Eof, line, col, spaced });
                return Ok(out);
            };
            let tok = match c {
                c if c.is_whitespace() => {
                    spaced = true;
                    continue;
                }
                '%' => {
                    while self.chars.peek().is_some_and(|&c| c != '\n') {
                        self.bump();
                    }
                    spaced = true;
                    continue;
                }
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '.' => Tok::Dot,
                ':' => {
                    if self.chars.peek() == Some(&'-') {
                        self.bump();
                        Tok::Neck
                    } else {
                        return Err(self.error(line, col, "expected `:-` after `:`"));
                    }
                }
                '"' => {
                    let mut s = String::new();
                    let mut in_space = false;
                    loop {
                        match self.bump() {
                            None => return Err(self.error(line, col, "unterminated string literal")),
                            Some('"') => break,
                            Some(c) if c.is_whitespace() => {
                                if !in_space {
                                    s.push(' ');
                                }
                                in_space = true;
                            }
                            Some(c) => {
                                s.push(c);
                                in_space = false;
                            }
                        }
                    }
                    Tok::Str(s)
                }
                '-' | '0'..='9' => {
                    let mut digits = String::from(c);
                    while let Some(&d) = self.chars.peek() {
                        if d.is_ascii_digit() {
                            digits.push(d);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    if digits == "-" {
                        return Err(self.error(line, col, "expected digits after `-`"));
                    }
                    let value = digits
                        .parse()
                        .map_err(|_| self.error(line, col, format!("integer {digits} out of range")))?;
                    Tok::Int(value)
                }
                '_' => {
                    self.word('_');
                    Tok::Anon
                }
                c if c.is_ascii_uppercase() => Tok::Var(self.word(c)),
                c if c.is_ascii_lowercase() => Tok::Ident(self.word(c)),
                other => return Err(self.error(line, col, format!("unexpected character {other:?}"))),
            };
            out.push(Spanned { tok, line, col, spaced });
            spaced = false;
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> RuleError {
        let t = self.peek();
        RuleError::Syntax {
            line: t.line,
            col: t.col,
            message: format!("expected {expected}, found {}", t.tok.describe()),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), RuleError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn program(&mut self) -> Result<Vec<Rule>, RuleError> {
        let mut rules = Vec::new();
        while self.peek().tok != Tok::Eof {
            rules.push(self.rule()?);
        }
        Ok(rules)
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        let head = self.atom()?;
        let mut body = Vec::new();
        if self.peek().tok == Tok::Neck {
            self.next();
            body.push(self.literal()?);
            while self.peek().tok == Tok::Comma {
                self.next();
                body.push(self.literal()?);
            }
        }
        self.expect(Tok::Dot, "`,` or `.`")?;
        Ok(Rule { head, body })
    }

    fn literal(&mut self) -> Result<Literal, RuleError> {
        let is_not = matches!(&self.peek().tok, Tok::Ident(s) if s == "not");
        let follower = self.toks.get(self.pos + 1);
        if is_not && follower.is_some_and(|f| matches!(f.tok, Tok::Ident(_)) && f.spaced) {
            self.next();
            return Ok(Literal::neg(self.atom()?));
        }
        Ok(Literal::pos(self.atom()?))
    }

    fn atom(&mut self) -> Result<Atom, RuleError> {
        let start = self.peek().clone();
        let Tok::Ident(predicate) = start.tok else {
            return Err(self.unexpected("a predicate name"));
        };
        self.next();
        self.expect(Tok::LParen, "`(`")?;
        let mut args = vec![self.term()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            args.push(self.term()?);
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        let atom = Atom { predicate, args };
        if let Some(expected) = known_arity(&atom.predicate) {
            if expected != atom.args.len() {
                return Err(RuleError::Arity {
                    atom: atom.to_string(),
                    expected,
                    found: atom.args.len(),
                    line: start.line,
                    col: start.col,
                });
            }
        }
        Ok(atom)
    }

    fn term(&mut self) -> Result<Term, RuleError> {
        let t = self.peek().tok.clone();
        let term = match t {
            Tok::Str(s) => Term::Str(s),
            Tok::Int(i) => Term::Int(i),
            Tok::Var(v) => Term::Var(v),
            Tok::Anon => Term::Anon,
            _ => return Err(self.unexpected("a string, integer, variable or `_`")),
        };
        self.next();
        Ok(term)
    }
}

/// Parses program text, checking the arity of built-in predicates.
pub fn parse_program(src: &str) -> Result<Vec<Rule>, RuleError> {
    let toks = Lexer::new(src).tokens()?;
    Parser { toks, pos: 0 }.program()
}
