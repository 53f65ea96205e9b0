use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{canonical_predicate, Atom, Fact, Number, Rule, RuleSet, Term};
use crate::lexer::{describe, Cursor, Pos};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("syntax error at {line}:{col}: expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("rule {rule}: head variable ?{var} is neither bound in the body nor declared fresh")]
    UnboundHeadVariable { rule: String, var: String },
    #[error("rule {rule}: fresh variable ?{var} also occurs in the body")]
    FreshVariableInBody { rule: String, var: String },
    #[error("rule {rule}: empty body")]
    EmptyBody { rule: String },
    #[error("duplicate rule id: {0}")]
    DuplicateRule(String),
    #[error("predicate {predicate} used with arity {found}, expected {expected}")]
    ArityMismatch {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid identifier: {0:?}")]
    InvalidIdent(String),
}

fn syntax(pos: Pos, expected: impl Into<String>) -> RuleError {
    RuleError::Syntax {
        line: pos.line,
        col: pos.col,
        expected: expected.into(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Position {
    Body,
    Head,
    Ground,
}

struct Parser<'a> {
    cur: Cursor<'a>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            cur: Cursor::new(text, Some('#')),
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), RuleError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        if self.cur.eat(s) {
            Ok(())
        } else {
            Err(syntax(
                pos,
                alloc::format!("`{s}`, found {}", describe(self.cur.peek())),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, RuleError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        self.cur.ident().map(str::to_string).ok_or_else(|| {
            syntax(
                pos,
                alloc::format!("{what}, found {}", describe(self.cur.peek())),
            )
        })
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        if !self.cur.eat_keyword("rule") {
            return Err(syntax(pos, "`rule`"));
        }
        let id = self.ident("rule identifier")?;
        self.expect(":")?;
        let mut fresh = BTreeSet::new();
        let body = self.atoms(Position::Body, &mut fresh)?;
        self.expect("=>")?;
        let head = self.atoms(Position::Head, &mut fresh)?;
        self.expect(".")?;
        let rule = Rule {
            id,
            body,
            head,
            fresh_vars: fresh,
        };
        rule.check()?;
        Ok(rule)
    }

    fn atoms(
        &mut self,
        position: Position,
        fresh: &mut BTreeSet<String>,
    ) -> Result<Vec<Atom>, RuleError> {
        let mut atoms = alloc::vec![self.atom(position, fresh)?];
        loop {
            self.cur.skip_trivia();
            if self.cur.eat(",") {
                atoms.push(self.atom(position, fresh)?);
            } else {
                return Ok(atoms);
            }
        }
    }

    fn atom(&mut self, position: Position, fresh: &mut BTreeSet<String>) -> Result<Atom, RuleError> {
        let predicate = self.ident("predicate name")?;
        self.expect("(")?;
        let mut terms = alloc::vec![self.term(position, fresh)?];
        loop {
            self.cur.skip_trivia();
            if self.cur.eat(",") {
                terms.push(self.term(position, fresh)?);
            } else {
                break;
            }
        }
        self.expect(")")?;
        Ok(Atom {
            predicate: canonical_predicate(&predicate).into(),
            terms,
        })
    }

    fn term(&mut self, position: Position, fresh: &mut BTreeSet<String>) -> Result<Term, RuleError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        match self.cur.peek() {
            Some('?') if position != Position::Ground => {
                self.cur.bump();
                let name = self.cur.ident().ok_or_else(|| syntax(self.cur.pos(), "variable name"))?;
                Ok(Term::Var(name.into()))
            }
            Some('"') => self
                .cur
                .string_lit()
                .map(Term::Str)
                .map_err(|(p, e)| syntax(p, e)),
            Some(c) if c == '-' || c.is_ascii_digit() => self
                .cur
                .number()
                .and_then(Number::new)
                .map(Term::Num)
                .ok_or_else(|| syntax(pos, "number")),
            Some(c) if crate::lexer::is_ident_start(c) => {
                let name = self.cur.ident().unwrap_or_default();
                self.cur.skip_trivia();
                if name == "fresh" && self.cur.peek() == Some('(') {
                    if position != Position::Head {
                        return Err(syntax(pos, "term (`fresh(...)` is only allowed in rule heads)"));
                    }
                    self.expect("(")?;
                    self.expect("?")?;
                    let var = self.cur.ident().ok_or_else(|| syntax(self.cur.pos(), "variable name"))?;
                    self.expect(")")?;
                    fresh.insert(var.into());
                    return Ok(Term::Var(var.into()));
                }
                Ok(Term::Const(name.into()))
            }
            other => Err(syntax(
                pos,
                alloc::format!(
                    "{}, found {}",
                    if position == Position::Ground {
                        "ground term"
                    } else {
                        "term"
                    },
                    describe(other)
                ),
            )),
        }
    }
}

/// Parses rule text into an ordered [`RuleSet`].
pub fn parse_rules(text: &str) -> Result<RuleSet, RuleError> {
    let mut p = Parser::new(text);
    let mut set = RuleSet::default();
    loop {
        p.cur.skip_trivia();
        if p.cur.is_eof() {
            return Ok(set);
        }
        let rule = p.rule()?;
        set.push(rule)?;
    }
}

/// Parses a sequence of ground atoms, each terminated by `.`.
pub fn parse_facts(text: &str) -> Result<Vec<Fact>, RuleError> {
    let mut p = Parser::new(text);
    let mut out = Vec::new();
    let mut none = BTreeSet::new();
    loop {
        p.cur.skip_trivia();
        if p.cur.is_eof() {
            return Ok(out);
        }
        let atom = p.atom(Position::Ground, &mut none)?;
        p.expect(".")?;
        out.push(Fact {
            predicate: atom.predicate,
            args: atom.terms,
        });
    }
}

/// Parses one ground atom; a trailing `.` is optional.
pub fn parse_fact(text: &str) -> Result<Fact, RuleError> {
    let mut p = Parser::new(text);
    let mut none = BTreeSet::new();
    let atom = p.atom(Position::Ground, &mut none)?;
    p.cur.skip_trivia();
    p.cur.eat(".");
    p.cur.skip_trivia();
    if !p.cur.is_eof() {
        return Err(syntax(p.cur.pos(), "end of input"));
    }
    Ok(Fact {
        predicate: atom.predicate,
        args: atom.terms,
    })
}
